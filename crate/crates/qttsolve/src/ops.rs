//! PDE-specific operator machinery: diagonal (Hadamard) MPOs, the discrete
//! periodic convolution MPO, penalized-system assembly, the finite-difference
//! baseline operator, and source/solution post-processing.
//!
//! The convolution operator realizes (a * psi)(k) = 2^(-Ld/2) sum_k' a(k-k')
//! psi(k') on the wrapped Fourier grid. Per coordinate the index relation
//! n' = n - n'' (mod 2^L) is binary addition with carry, an automaton whose
//! two-state register rides on the operator bond along that coordinate's
//! bits: the rank factor is 2 per concatenated block and 2^d when the bits
//! of all coordinates interleave. With the unitary transform convention the
//! assembled operator satisfies conv(F a) = F diag(a) F^H exactly, which is
//! what makes the sampled coercivity bounds carry over to the Fourier side.

use crate::layout::{Arity, Field, Format, LayoutError, QttLayout, Space};
use crate::qft::QftOperator;
use crate::scalar::Scalar;
use crate::tt::{Mpo, TensorTrain, TtError};
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum OpsError {
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("coefficient violates ellipticity: sampled value {0:.3e} is not positive")]
    NonElliptic(f64),
    #[error("mass parameter gamma must be positive for an invertible operator")]
    SingularMass,
    #[error("source has nonvanishing mean: |mean| = {0:.3e} exceeds {1:.3e}")]
    NonzeroMean(f64, f64),
    #[error(transparent)]
    LayoutErr(#[from] LayoutError),
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// Whether a coordinate's physical scales descend along the chain.
fn coord_descends(format: Format, c: usize) -> bool {
    match format {
        Format::X1X2Y1Y2 | Format::X1Y1 => false,
        Format::X1X2Y2Y1 => c % 2 == 1,
        Format::X2X1Y1Y2 => c % 2 == 0,
    }
}

/// Kronecker product of aligned spatial cores: bond pairing (alpha_a, alpha_b)
/// with alpha_a major.
fn kron_site<S: Scalar>(a: &Array3<S>, b: &Array3<S>) -> Array3<S> {
    let (a0, n, a1) = a.dim();
    let (b0, _, b1) = b.dim();
    let mut c = Array3::from_elem((a0 * b0, n, a1 * b1), S::ZERO);
    for ia in 0..a0 {
        for ib in 0..b0 {
            for x in 0..n {
                for ja in 0..a1 {
                    let av = a[[ia, x, ja]];
                    if av == S::ZERO {
                        continue;
                    }
                    for jb in 0..b1 {
                        c[[ia * b0 + ib, x, ja * b1 + jb]] = av * b[[ib, x, jb]];
                    }
                }
            }
        }
    }
    c
}

/// Pointwise product of a scalar field with a field of any arity.
pub fn mul_scalar_field<S: Scalar>(s: &Field<S>, v: &Field<S>) -> Result<Field<S>, OpsError> {
    if s.layout.arity != Arity::Scalar {
        return Err(OpsError::Layout("first factor must be scalar".into()));
    }
    if s.layout.with(s.layout.space, v.layout.arity) != v.layout {
        return Err(OpsError::Layout("pointwise product on mismatched grids".into()));
    }
    let off = usize::from(v.layout.has_value_site());
    let mut cores = Vec::with_capacity(v.tt.len());
    if off == 1 {
        // value core survives; its bond pairs with the scalar's boundary
        cores.push(v.tt.core(0).clone());
    }
    for (i, sb) in s.tt.cores().iter().enumerate() {
        cores.push(kron_site_swapped(v.tt.core(i + off), sb, off == 1 && i == 0));
    }
    Ok(Field::new(TensorTrain::new(cores)?, v.layout)?)
}

/// kron with b-major pairing on the left bond when the first factor carries
/// a value core whose right bond must stay leading.
fn kron_site_swapped<S: Scalar>(v: &Array3<S>, s: &Array3<S>, value_leading: bool) -> Array3<S> {
    let (v0, n, v1) = v.dim();
    let (s0, _, s1) = s.dim();
    let mut c = Array3::from_elem((v0 * s0, n, v1 * s1), S::ZERO);
    for iv in 0..v0 {
        for is in 0..s0 {
            let row = if value_leading && s0 == 1 { iv } else { iv * s0 + is };
            for x in 0..n {
                for jv in 0..v1 {
                    let vv = v[[iv, x, jv]];
                    if vv == S::ZERO {
                        continue;
                    }
                    for js in 0..s1 {
                        c[[row, x, jv * s1 + js]] = vv * s[[is, x, js]];
                    }
                }
            }
        }
    }
    c
}

/// Bilinear pointwise dot product of two vector fields -> scalar field.
pub fn dot_fields<S: Scalar>(a: &Field<S>, b: &Field<S>) -> Result<Field<S>, OpsError> {
    if a.layout.arity != Arity::Vector || b.layout.arity != Arity::Vector || a.layout != b.layout {
        return Err(OpsError::Layout("dot product needs two vector fields on one layout".into()));
    }
    let d = a.layout.d;
    let a0 = a.tt.core(0);
    let b0 = b.tt.core(0);
    let (ra, rb) = (a0.dim().2, b0.dim().2);
    let mut w = vec![S::ZERO; ra * rb];
    for i in 0..d {
        for x in 0..ra {
            for y in 0..rb {
                w[x * rb + y] += a0[[0, i, x]] * b0[[0, i, y]];
            }
        }
    }
    let k = a.tt.len();
    let mut cores = Vec::with_capacity(k - 1);
    for s in 1..k {
        cores.push(kron_site(a.tt.core(s), b.tt.core(s)));
    }
    // absorb the contracted value weights into the first spatial core
    let first = &cores[0];
    let (r0, n, r1) = first.dim();
    debug_assert_eq!(r0, ra * rb);
    let mut merged = Array3::from_elem((1, n, r1), S::ZERO);
    for a in 0..r0 {
        if w[a] == S::ZERO {
            continue;
        }
        for x in 0..n {
            for j in 0..r1 {
                merged[[0, x, j]] += w[a] * first[[a, x, j]];
            }
        }
    }
    cores[0] = merged;
    Ok(Field::new(
        TensorTrain::new(cores)?,
        a.layout.with(a.layout.space, Arity::Scalar),
    )?)
}

/// Pointwise matrix-vector product of a matrix field with a vector field.
pub fn matvec_fields<S: Scalar>(m: &Field<S>, v: &Field<S>) -> Result<Field<S>, OpsError> {
    if m.layout.arity != Arity::Matrix || v.layout.arity != Arity::Vector {
        return Err(OpsError::Layout("matvec needs a matrix and a vector field".into()));
    }
    if m.layout.with(m.layout.space, Arity::Vector) != v.layout {
        return Err(OpsError::Layout("matvec on mismatched grids".into()));
    }
    let d = m.layout.d;
    let m0 = m.tt.core(0);
    let v0 = v.tt.core(0);
    let (rm, rv) = (m0.dim().2, v0.dim().2);
    let mut value = Array3::from_elem((1, d, rm * rv), S::ZERO);
    for i in 0..d {
        for j in 0..d {
            for x in 0..rm {
                for y in 0..rv {
                    value[[0, i, x * rv + y]] += m0[[0, i * d + j, x]] * v0[[0, j, y]];
                }
            }
        }
    }
    let k = m.tt.len();
    let mut cores = vec![value];
    for s in 1..k {
        cores.push(kron_site(m.tt.core(s), v.tt.core(s)));
    }
    Ok(Field::new(TensorTrain::new(cores)?, v.layout)?)
}

/// Lift a scalar Fourier field to matrix arity as f * I.
pub fn lift_scalar_to_matrix(f: &Field<Complex64>) -> Result<Field<Complex64>, OpsError> {
    if f.layout.arity != Arity::Scalar {
        return Err(OpsError::Layout("lift expects a scalar field".into()));
    }
    let d = f.layout.d;
    let r = f.tt.core(0).dim().0; // 1
    debug_assert_eq!(r, 1);
    let r1 = f.tt.core(0).dim().0;
    let _ = r1;
    let first = f.tt.core(0);
    let mut value = Array3::from_elem((1, d * d, first.dim().0), Complex64::new(0.0, 0.0));
    for i in 0..d {
        value[[0, i * d + i, 0]] = Complex64::new(1.0, 0.0);
    }
    let mut cores = vec![value];
    cores.extend(f.tt.cores().iter().cloned());
    Ok(Field::new(
        TensorTrain::new(cores)?,
        f.layout.with(f.layout.space, Arity::Matrix),
    )?)
}

/// Diagonal (Hadamard) operator of a scalar field, acting on operands whose
/// value dimension is `operand_value_dim` (0 for scalar operands).
pub fn diag_mpo_scalar<S: Scalar>(f: &Field<S>, operand_value_dim: usize) -> Result<Mpo<S>, OpsError> {
    if f.layout.arity != Arity::Scalar {
        return Err(OpsError::Layout("diagonal of a non-scalar field".into()));
    }
    let mut cores: Vec<Array4<S>> = Vec::with_capacity(f.tt.len() + 1);
    if operand_value_dim > 0 {
        let mut v = Array4::from_elem((1, operand_value_dim, operand_value_dim, 1), S::ZERO);
        for i in 0..operand_value_dim {
            v[[0, i, i, 0]] = S::ONE;
        }
        cores.push(v);
    }
    for c in f.tt.cores() {
        let (r0, n, r1) = c.dim();
        let mut q = Array4::from_elem((r0, n, n, r1), S::ZERO);
        for a in 0..r0 {
            for x in 0..n {
                for b in 0..r1 {
                    q[[a, x, x, b]] = c[[a, x, b]];
                }
            }
        }
        cores.push(q);
    }
    Ok(Mpo::new(cores)?)
}

/// Diagonal operator of a matrix field acting blockwise on vector fields;
/// the operator rank equals the field rank.
pub fn diag_mpo_matrix<S: Scalar>(p: &Field<S>) -> Result<Mpo<S>, OpsError> {
    if p.layout.arity != Arity::Matrix {
        return Err(OpsError::Layout("blockwise diagonal needs a matrix field".into()));
    }
    let d = p.layout.d;
    let v = p.tt.core(0);
    let r1 = v.dim().2;
    let mut value = Array4::from_elem((1, d, d, r1), S::ZERO);
    for i in 0..d {
        for j in 0..d {
            for b in 0..r1 {
                value[[0, i, j, b]] = v[[0, i * d + j, b]];
            }
        }
    }
    let mut cores = vec![value];
    for c in p.tt.cores().iter().skip(1) {
        let (r0, n, r1) = c.dim();
        let mut q = Array4::from_elem((r0, n, n, r1), S::ZERO);
        for a in 0..r0 {
            for x in 0..n {
                for b in 0..r1 {
                    q[[a, x, x, b]] = c[[a, x, b]];
                }
            }
        }
        cores.push(q);
    }
    Ok(Mpo::new(cores)?)
}

/// Chain spans and carry-activity bookkeeping for per-coordinate automata.
struct CarryPlan {
    /// coordinate roles per spatial site
    roles: Vec<(usize, usize)>,
    /// first and last chain position of each coordinate
    span: Vec<(usize, usize)>,
}

impl CarryPlan {
    fn new(layout: &QttLayout) -> Self {
        let roles = layout.spatial_roles();
        let d = layout.d;
        let mut span = vec![(usize::MAX, 0usize); d];
        for (pos, &(c, _)) in roles.iter().enumerate() {
            span[c].0 = span[c].0.min(pos);
            span[c].1 = span[c].1.max(pos);
        }
        Self { roles, span }
    }

    /// Coordinates whose carry register crosses the cut before site `pos`.
    fn active_at_cut(&self, pos: usize) -> Vec<usize> {
        (0..self.span.len())
            .filter(|&c| self.span[c].0 < pos && pos <= self.span[c].1)
            .collect()
    }
}

/// Discrete periodic convolution with the matrix-valued Fourier train of the
/// coefficient: output = 2^(-Ld/2) sum_k' a(k - k') psi(k').
pub fn convolution_mpo(a_hat: &Field<Complex64>, _tol: f64) -> Result<Mpo<Complex64>, OpsError> {
    let lay = a_hat.layout;
    if lay.space != Space::Fourier || lay.arity != Arity::Matrix {
        return Err(OpsError::Layout("convolution needs a matrix-arity Fourier coefficient".into()));
    }
    let d = lay.d;
    let level = lay.level;
    let plan = CarryPlan::new(&lay);
    let fmt = lay.format;
    let scale = 2f64.powf(-(level as f64) * (d as f64) / 2.0);

    // value site: route (i, j) through the coefficient's merged value index
    let av = a_hat.tt.core(0);
    let r1 = av.dim().2;
    let mut value = Array4::from_elem((1, d, d, r1), Complex64::new(0.0, 0.0));
    for i in 0..d {
        for j in 0..d {
            for b in 0..r1 {
                value[[0, i, j, b]] = av[[0, i * d + j, b]].scale(scale);
            }
        }
    }
    let mut cores = vec![value];

    for (pos, &(c, scale_l)) in plan.roles.iter().enumerate() {
        let a_core = a_hat.tt.core(pos + 1);
        let (ra0, _, ra1) = a_core.dim();
        let bitpos = scale_l - 1; // Fourier bit significance
        let left_active = plan.active_at_cut(pos);
        let right_active = plan.active_at_cut(pos + 1);
        let nl = left_active.len();
        let nr = right_active.len();
        let l2r = !coord_descends(fmt, c); // carry direction along the chain
        let first = bitpos == 0;
        let last = bitpos == level - 1;
        let mut core = Array4::from_elem(
            (ra0 << nl, 2, 2, ra1 << nr),
            Complex64::new(0.0, 0.0),
        );
        for alpha in 0..ra0 {
            for beta in 0..ra1 {
                for cl in 0..(1usize << nl) {
                    // pass-through constraint for carries of other coordinates
                    for cr in 0..(1usize << nr) {
                        let mut ok = true;
                        for (li, &cc) in left_active.iter().enumerate() {
                            if cc == c {
                                continue;
                            }
                            let ri = right_active.iter().position(|&x| x == cc);
                            match ri {
                                Some(ri) => {
                                    if (cl >> li) & 1 != (cr >> ri) & 1 {
                                        ok = false;
                                        break;
                                    }
                                }
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if !ok {
                            continue;
                        }
                        for &cc in &right_active {
                            if cc == c {
                                continue;
                            }
                            if !left_active.contains(&cc) {
                                ok = false;
                                break;
                            }
                        }
                        if !ok {
                            continue;
                        }
                        // own-coordinate carry positions on each side
                        let li = left_active.iter().position(|&x| x == c);
                        let ri = right_active.iter().position(|&x| x == c);
                        for col in 0..2usize {
                            for row in 0..2usize {
                                let gamma_in = if first {
                                    0
                                } else if l2r {
                                    match li {
                                        Some(li) => (cl >> li) & 1,
                                        None => continue,
                                    }
                                } else {
                                    match ri {
                                        Some(ri) => (cr >> ri) & 1,
                                        None => continue,
                                    }
                                };
                                // row = a + col + gamma_in (mod 2) fixes a
                                let a_bit = (row + 2 - ((col + gamma_in) & 1)) & 1;
                                let t = a_bit + col + gamma_in;
                                debug_assert_eq!(t & 1, row);
                                let gamma_out = t >> 1;
                                if !last {
                                    let said = if l2r {
                                        ri.map(|ri| (cr >> ri) & 1)
                                    } else {
                                        li.map(|li| (cl >> li) & 1)
                                    };
                                    match said {
                                        Some(s) if s == gamma_out => {}
                                        _ => continue,
                                    }
                                } else {
                                    // outgoing carry dropped by the modulus;
                                    // own-coordinate slot must not appear on
                                    // the outgoing side
                                    let gone = if l2r { ri } else { li };
                                    if gone.is_some() {
                                        continue;
                                    }
                                }
                                // incoming side bookkeeping when first
                                if first {
                                    let come = if l2r { li } else { ri };
                                    if come.is_some() {
                                        continue;
                                    }
                                }
                                core[[(alpha << nl) | cl, row, col, (beta << nr) | cr]] +=
                                    a_core[[alpha, a_bit, beta]];
                            }
                        }
                    }
                }
            }
        }
        cores.push(core);
    }
    Ok(Mpo::new(cores)?)
}

/// Cyclic shift by `step` grid cells along one coordinate, on physical bits.
pub fn shift_mpo(layout: &QttLayout, coord: usize, step: i64) -> Result<Mpo<f64>, OpsError> {
    if layout.space != Space::Physical {
        return Err(OpsError::Layout("shift acts on physical layouts".into()));
    }
    let level = layout.level;
    let n = 1u64 << level;
    let addend = step.rem_euclid(n as i64) as u64;
    let plan = CarryPlan::new(layout);
    let fmt = layout.format;
    let mut cores = Vec::with_capacity(plan.roles.len());
    for (pos, &(c, scale_l)) in plan.roles.iter().enumerate() {
        let bitpos = level - scale_l; // physical bit significance
        // activity of this single automaton at the cuts
        let span = plan.span[coord];
        let active_l = c_active(span, pos);
        let active_r = c_active(span, pos + 1);
        if c != coord {
            // pass-through core (identity on the physical index)
            let b = usize::from(active_l) + 1;
            let bl = if active_l { 2 } else { 1 };
            let br = if active_r { 2 } else { 1 };
            let _ = b;
            let mut core = Array4::from_elem((bl, 2, 2, br), 0.0);
            for a in 0..bl.min(br) {
                core[[a, 0, 0, a]] = 1.0;
                core[[a, 1, 1, a]] = 1.0;
            }
            if bl != br {
                // the span boundary never falls strictly inside another
                // coordinate's block for the supported formats
                return Err(OpsError::Layout("shift span broken by foreign site".into()));
            }
            cores.push(core);
            continue;
        }
        let k_bit = ((addend >> bitpos) & 1) as usize;
        let first = bitpos == 0;
        let last = bitpos == level - 1;
        // carry direction: from LSB site to MSB site along the chain
        let l2r = coord_descends(fmt, c);
        let bl = if active_l { 2 } else { 1 };
        let br = if active_r { 2 } else { 1 };
        let mut core = Array4::from_elem((bl, 2, 2, br), 0.0);
        for cl in 0..bl {
            for cr in 0..br {
                for row in 0..2usize {
                    let gamma_in = if first {
                        0
                    } else if l2r {
                        cl
                    } else {
                        cr
                    };
                    let t = row + k_bit + gamma_in;
                    let col = t & 1;
                    let gamma_out = t >> 1;
                    if !last {
                        let said = if l2r { cr } else { cl };
                        if said != gamma_out {
                            continue;
                        }
                    } else {
                        let gone = if l2r { br } else { bl };
                        if gone != 1 {
                            continue;
                        }
                    }
                    if first {
                        let come = if l2r { bl } else { br };
                        if come != 1 {
                            continue;
                        }
                    }
                    core[[cl, row, col, cr]] = 1.0;
                }
            }
        }
        cores.push(core);
    }
    Ok(Mpo::new(cores)?)
}

fn c_active(span: (usize, usize), pos: usize) -> bool {
    span.0 < pos && pos <= span.1
}

/// Forward difference along one coordinate: (shift(+1) - id) / h.
pub fn forward_difference_mpo(layout: &QttLayout, coord: usize) -> Result<Mpo<f64>, OpsError> {
    let h = 2f64.powi(-(layout.level as i32));
    let shifted = shift_mpo(layout, coord, 1)?;
    let id = Mpo::<f64>::identity(&shifted.col_dims());
    let diff = shifted.add(&id.scaled(-1.0))?;
    let (r, _) = diff.round(1e-14, usize::MAX);
    Ok(r.scaled(1.0 / h))
}

/// First-order forward-difference gradient as one MPO (scalar in, vector
/// out; the leading site has row dimension d and column dimension 1).
pub fn gradient_mpo(layout: &QttLayout) -> Result<Mpo<f64>, OpsError> {
    let d = layout.d;
    let mut acc: Option<Mpo<f64>> = None;
    for c in 0..d {
        let dc = forward_difference_mpo(layout, c)?;
        let mut value = Array4::from_elem((1, d, 1, 1), 0.0);
        value[[0, c, 0, 0]] = 1.0;
        let mut cores = vec![value];
        cores.extend(dc.cores().iter().cloned());
        let lifted = Mpo::new(cores)?;
        acc = Some(match acc {
            None => lifted,
            Some(a) => a.add(&lifted)?,
        });
    }
    let (r, _) = acc.unwrap().round(1e-14, usize::MAX);
    Ok(r)
}

/// Apply the gradient MPO to a scalar physical field.
pub fn apply_gradient(grad: &Mpo<f64>, u: &Field<f64>) -> Result<Field<f64>, OpsError> {
    if u.layout.arity != Arity::Scalar {
        return Err(OpsError::Layout("gradient of a non-scalar field".into()));
    }
    let mut cores = vec![Array3::from_elem((1, 1, 1), 1.0)];
    cores.extend(u.tt.cores().iter().cloned());
    let lifted = TensorTrain::new(cores)?;
    let out = grad.apply(&lifted)?;
    Ok(Field::new(out, u.layout.with(u.layout.space, Arity::Vector))?)
}

/// Apply the adjoint gradient (negative divergence) to a vector field.
pub fn apply_divergence_adjoint(grad: &Mpo<f64>, g: &Field<f64>) -> Result<Field<f64>, OpsError> {
    if g.layout.arity != Arity::Vector {
        return Err(OpsError::Layout("adjoint gradient needs a vector field".into()));
    }
    let out = grad.adjoint().apply(&g.tt)?;
    // strip the leading unit site
    let cores = out.cores();
    let first = &cores[0];
    let second = &cores[1];
    let (r0, one, r1) = first.dim();
    debug_assert_eq!((r0, one), (1, 1));
    let (_, n, r2) = second.dim();
    let mut merged = Array3::from_elem((1, n, r2), 0.0);
    for b in 0..r1 {
        let w = first[[0, 0, b]];
        if w == 0.0 {
            continue;
        }
        for x in 0..n {
            for j in 0..r2 {
                merged[[0, x, j]] += w * second[[b, x, j]];
            }
        }
    }
    let mut new_cores = vec![merged];
    new_cores.extend(cores[2..].iter().cloned());
    Ok(Field::new(
        TensorTrain::new(new_cores)?,
        g.layout.with(g.layout.space, Arity::Scalar),
    )?)
}

/// Finite-difference operator D^T diag(a) D + gamma I on scalar physical
/// fields, with periodic wraparound.
pub fn fd_operator(a_phys: &Field<f64>, gamma: f64, tol: f64) -> Result<Mpo<f64>, OpsError> {
    if gamma <= 0.0 {
        return Err(OpsError::SingularMass);
    }
    if a_phys.layout.arity != Arity::Scalar || a_phys.layout.space != Space::Physical {
        return Err(OpsError::Layout("coefficient must be a scalar physical field".into()));
    }
    let lay = a_phys.layout;
    let diag_a = diag_mpo_scalar(a_phys, 0)?;
    let mut acc: Option<Mpo<f64>> = None;
    for c in 0..lay.d {
        let dc = forward_difference_mpo(&lay, c)?;
        let term = dc.adjoint().compose(&diag_a)?.compose(&dc)?;
        let (term, _) = term.round(tol, usize::MAX);
        acc = Some(match acc {
            None => term,
            Some(a) => {
                let s = a.add(&term)?;
                let (r, _) = s.round(tol, usize::MAX);
                r
            }
        });
    }
    let id = Mpo::<f64>::identity(&vec![2; lay.num_spatial_sites()]);
    let total = acc.unwrap().add(&id.scaled(gamma))?;
    let (r, _) = total.round(tol, usize::MAX);
    Ok(r)
}

/// Sampled ellipticity bounds: returns (lambda, Lambda) with
/// 1/lambda <= a <= Lambda over `n` quasi-random grid points.
pub fn estimate_bounds(a: &Field<f64>, n: usize) -> Result<(f64, f64), OpsError> {
    let lay = a.layout;
    let level = lay.level;
    let grid = 1u64 << level;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let primes = [2u64, 3, 5];
    for t in 0..n as u64 {
        let mut j = [0u64; 3];
        for c in 0..lay.d {
            // van der Corput radical inverse snapped to the grid
            let mut x = 0.0f64;
            let mut denom = 1.0;
            let mut v = t + 1;
            while v > 0 {
                denom *= primes[c] as f64;
                x += (v % primes[c]) as f64 / denom;
                v /= primes[c];
            }
            j[c] = ((x * grid as f64) as u64) % grid;
        }
        let p = crate::layout::GridPoint(j);
        match lay.arity {
            Arity::Scalar => {
                let v = a.evaluate_physical(&p).scalar();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            Arity::Matrix => {
                let m = a.evaluate_physical(&p).matrix().clone();
                let sym = ndarray::Array2::from_shape_fn(m.dim(), |(i, j)| 0.5 * (m[[i, j]] + m[[j, i]]));
                let ev = f64::eigh_values(sym.view());
                lo = lo.min(ev[0]);
                hi = hi.max(*ev.last().unwrap());
            }
            Arity::Vector => return Err(OpsError::Layout("coefficient cannot be vector-valued".into())),
        }
    }
    if lo <= 0.0 {
        return Err(OpsError::NonElliptic(lo));
    }
    Ok((1.0 / lo, hi))
}

/// The penalized Fourier-space linear system (a* + mu P.) psi = -g.
pub struct PenalizedSystem {
    pub operator: Mpo<Complex64>,
    /// Right-hand side -g_hat with the k=0 slot forced to zero.
    pub rhs: Field<Complex64>,
    pub mu: f64,
    pub lambda: f64,
    pub cap_lambda: f64,
    pub bounds_estimated: bool,
    pub conv_rank: usize,
    pub proj_rank: usize,
}

/// Subtract the k = 0 value so the field vanishes at the zero frequency.
pub fn force_zero_mean(field: &Field<Complex64>, tol: f64) -> Result<Field<Complex64>, OpsError> {
    let lay = field.layout;
    let zero_bits = vec![0usize; lay.num_spatial_sites()];
    let dims = lay.site_dims();
    let delta = match lay.arity {
        Arity::Scalar => {
            let v = field.tt.eval_bits(&zero_bits);
            TensorTrain::delta(&dims, &zero_bits, v)
        }
        Arity::Vector => {
            let mut idx = vec![0usize; dims.len()];
            let mut value = Array3::from_elem((1, lay.d, 1), Complex64::new(0.0, 0.0));
            for i in 0..lay.d {
                idx[0] = i;
                value[[0, i, 0]] = field.tt.eval_bits(&idx);
            }
            let mut cores = vec![value];
            for _ in 0..lay.num_spatial_sites() {
                let mut c = Array3::from_elem((1, 2, 1), Complex64::new(0.0, 0.0));
                c[[0, 0, 0]] = Complex64::new(1.0, 0.0);
                cores.push(c);
            }
            TensorTrain::new(cores)?
        }
        Arity::Matrix => return Err(OpsError::Layout("zero-mean fix for matrix fields unsupported".into())),
    };
    let out = field.tt.sub(&delta)?;
    let (r, _) = out.round(tol, usize::MAX);
    Ok(Field::new(r, lay)?)
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_system(
    a_phys: &Field<f64>,
    g_phys: &Field<f64>,
    mu: f64,
    projector: &Field<Complex64>,
    qft: &QftOperator,
    tol: f64,
    bounds: Option<(f64, f64)>,
) -> Result<PenalizedSystem, OpsError> {
    if g_phys.layout.arity != Arity::Vector {
        return Err(OpsError::Layout("source must be a vector field".into()));
    }
    let (lambda, cap_lambda, estimated) = match bounds {
        Some((l, c)) => (l, c, false),
        None => {
            let (l, c) = estimate_bounds(a_phys, 10_000)?;
            (l, c, true)
        }
    };
    // coefficient symbol in Fourier space, matrix arity
    let a_hat = match a_phys.layout.arity {
        Arity::Scalar => {
            let f = qft.forward_real(a_phys)?;
            lift_scalar_to_matrix(&f)?
        }
        Arity::Matrix => qft.forward_real(a_phys)?,
        Arity::Vector => return Err(OpsError::Layout("coefficient cannot be vector-valued".into())),
    };
    let (a_hat_tt, _) = a_hat.tt.round(tol, usize::MAX);
    let a_hat = Field::new(a_hat_tt, a_hat.layout)?;
    let conv = convolution_mpo(&a_hat, tol)?;
    let (conv, _) = conv.round(tol, usize::MAX);
    let conv_rank = conv.max_rank();
    let diag_p = diag_mpo_matrix(projector)?;
    let proj_rank = diag_p.max_rank();
    let sum = conv.add(&diag_p.scaled(Complex64::new(mu, 0.0)))?;
    let (operator, _) = sum.round(tol, usize::MAX);
    debug_assert!(operator.max_rank() <= conv_rank + proj_rank);

    let g_hat = qft.forward_real(g_phys)?;
    let minus_g = g_hat.scaled(Complex64::new(-1.0, 0.0));
    let rhs = force_zero_mean(&minus_g, tol)?;
    Ok(PenalizedSystem {
        operator,
        rhs,
        mu,
        lambda,
        cap_lambda,
        bounds_estimated: estimated,
        conv_rank,
        proj_rank,
    })
}

/// Right-hand side from a scalar source: g_hat = -q f_hat, with the
/// vanishing-mean compatibility check |mean f| <= tol_mean * rms(f).
pub fn source_from_f(
    f_phys: &Field<f64>,
    green: &Field<Complex64>,
    qft: &QftOperator,
    tol: f64,
    tol_mean: f64,
) -> Result<Field<Complex64>, OpsError> {
    if f_phys.layout.arity != Arity::Scalar {
        return Err(OpsError::Layout("source density must be scalar".into()));
    }
    let f_hat = qft.forward_real(f_phys)?;
    let lay = f_hat.layout;
    let half_weight = 2f64.powf(-(lay.level as f64) * (lay.d as f64) / 2.0);
    let mean = f_hat.tt.eval_bits(&vec![0usize; lay.num_spatial_sites()]).norm() * half_weight;
    let rms = f_hat.norm2() * half_weight;
    if mean > tol_mean * rms.max(1e-300) {
        return Err(OpsError::NonzeroMean(mean, tol_mean * rms));
    }
    let g = mul_scalar_field(&f_hat, green)?.scaled(Complex64::new(-1.0, 0.0));
    let g = force_zero_mean(&g, tol)?;
    Ok(g)
}

/// Recover the primal solution from the gradient iterate:
/// u_hat = -q . psi_hat (zero mean), u = inverse transform, real part.
pub struct RecoveredSolution {
    pub u_hat: Field<Complex64>,
    pub u_phys: Field<Complex64>,
    /// l2 norm of the imaginary part dropped from the physical field.
    pub imag_norm: f64,
}

pub fn recover_u(
    psi_hat: &Field<Complex64>,
    green: &Field<Complex64>,
    qft: &QftOperator,
    tol: f64,
) -> Result<RecoveredSolution, OpsError> {
    if psi_hat.layout.arity != Arity::Vector || psi_hat.layout.space != Space::Fourier {
        return Err(OpsError::Layout("gradient iterate must be a Fourier vector field".into()));
    }
    let u_hat = dot_fields(green, psi_hat)?.scaled(Complex64::new(-1.0, 0.0));
    let u_hat = force_zero_mean(&u_hat, tol)?;
    let u_full = qft.inverse(&u_hat)?;
    let (u_real, imag_norm) = u_full.tt.real_part(tol);
    Ok(RecoveredSolution {
        u_hat,
        u_phys: Field::new(u_real, u_full.layout)?,
        imag_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{FourierIndex, GridPoint};
    use crate::qft::assemble_qft;
    use crate::symbols::{projector_symbol, SymbolFilter};
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phys_layout(d: usize, l: usize, fmt: Format) -> QttLayout {
        QttLayout::new(d, l, fmt, Space::Physical, Arity::Scalar)
    }

    /// random low-rank real scalar physical field
    fn random_field(lay: QttLayout, rank: usize, seed: u64) -> Field<f64> {
        let tt = TensorTrain::<f64>::random(&lay.site_dims(), &vec![rank; lay.num_sites() - 1], seed).unwrap();
        Field::new(tt, lay).unwrap()
    }

    #[test]
    fn diag_mpo_matches_dense_products() {
        let lay = phys_layout(2, 3, Format::X1Y1);
        let f = random_field(lay, 3, 5);
        let op = diag_mpo_scalar(&f, 0).unwrap();
        assert_eq!(op.max_rank(), f.tt.max_rank());
        let x = random_field(lay, 4, 6);
        let y = op.apply(&x.tt).unwrap();
        let dense_f = f.tt.to_dense().unwrap();
        let dense_x = x.tt.to_dense().unwrap();
        let dense_y = y.to_dense().unwrap();
        for i in 0..dense_y.len() {
            assert!((dense_y[i] - dense_f[i] * dense_x[i]).abs() < 1e-12);
        }

        // constant scalar field gives c * identity
        let c = Field::new(TensorTrain::constant(&lay.site_dims(), 2.5), lay).unwrap();
        let idop = diag_mpo_scalar(&c, 0).unwrap();
        let z = idop.apply(&x.tt).unwrap();
        let dz = z.to_dense().unwrap();
        for i in 0..dz.len() {
            assert!((dz[i] - 2.5 * dense_x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_products_match_evaluation() {
        let lay = phys_layout(2, 3, Format::X1X2Y1Y2);
        let s = random_field(lay, 2, 1);
        let vlay = lay.with(Space::Physical, Arity::Vector);
        let vtt = TensorTrain::<f64>::random(&vlay.site_dims(), &vec![3; vlay.num_sites() - 1], 2).unwrap();
        let v = Field::new(vtt, vlay).unwrap();
        let prod = mul_scalar_field(&s, &v).unwrap();
        let wtt = TensorTrain::<f64>::random(&vlay.site_dims(), &vec![2; vlay.num_sites() - 1], 3).unwrap();
        let w = Field::new(wtt, vlay).unwrap();
        let dot = dot_fields(&v, &w).unwrap();
        for jx in 0..8u64 {
            for jy in 0..8u64 {
                let p = GridPoint([jx, jy, 0]);
                let sv = s.evaluate_physical(&p).scalar();
                let vv = v.evaluate_physical(&p).vector().to_vec();
                let pv = prod.evaluate_physical(&p).vector().to_vec();
                for i in 0..2 {
                    assert!((pv[i] - sv * vv[i]).abs() < 1e-12);
                }
                let wv = w.evaluate_physical(&p).vector().to_vec();
                let expect: f64 = (0..2).map(|i| vv[i] * wv[i]).sum();
                assert!((dot.evaluate_physical(&p).scalar() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_and_difference_are_exact() {
        for fmt in Format::ALL {
            let lay = phys_layout(2, 3, fmt);
            let f = random_field(lay, 3, 9);
            for coord in 0..2 {
                let sh = shift_mpo(&lay, coord, 1).unwrap();
                assert!(sh.max_rank() <= 2);
                let g = sh.apply(&f.tt).unwrap();
                let gf = Field::new(g, lay).unwrap();
                for jx in 0..8u64 {
                    for jy in 0..8u64 {
                        let p = GridPoint([jx, jy, 0]);
                        let mut q = [jx, jy, 0];
                        q[coord] = (q[coord] + 1) % 8;
                        let expect = f.evaluate_physical(&GridPoint(q)).scalar();
                        let got = gf.evaluate_physical(&p).scalar();
                        assert!((got - expect).abs() < 1e-12, "{fmt:?} coord {coord}");
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_rank_and_action() {
        let lay = phys_layout(2, 4, Format::X1X2Y1Y2);
        let grad = gradient_mpo(&lay).unwrap();
        assert!(grad.max_rank() <= 2 * 2 + 1, "rank {}", grad.max_rank());
        let f = random_field(lay, 3, 4);
        let g = apply_gradient(&grad, &f).unwrap();
        let h = 2f64.powi(-4);
        let n = 16u64;
        for jx in (0..n).step_by(3) {
            for jy in (0..n).step_by(5) {
                let p = GridPoint([jx, jy, 0]);
                let v = g.evaluate_physical(&p).vector().to_vec();
                let f0 = f.evaluate_physical(&p).scalar();
                let fx = f.evaluate_physical(&GridPoint([(jx + 1) % n, jy, 0])).scalar();
                let fy = f.evaluate_physical(&GridPoint([jx, (jy + 1) % n, 0])).scalar();
                assert!((v[0] - (fx - f0) / h).abs() < 1e-10);
                assert!((v[1] - (fy - f0) / h).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_operator_matches_dense() {
        let lay = phys_layout(2, 3, Format::X1Y1);
        // positive coefficient
        let base = random_field(lay, 2, 8);
        let ones = Field::new(TensorTrain::constant(&lay.site_dims(), 2.0), lay).unwrap();
        let a = Field::new(base.tt.scaled(0.3).add(&ones.tt).unwrap(), lay).unwrap();
        let gamma = 1e-2;
        let op = fd_operator(&a, gamma, 1e-13).unwrap();
        let dense = op.to_dense_matrix().unwrap();

        // dense reference: sum_c Dc^T diag(a) Dc + gamma I over the same layout
        let n = 64usize;
        let mut expect = Array2::<f64>::zeros((n, n));
        let h = 2f64.powi(-3);
        let asamp: Vec<f64> = (0..n)
            .map(|lin| {
                let bits: Vec<usize> = (0..6).map(|s| (lin >> (5 - s)) & 1).collect();
                a.evaluate_physical(&lay.decode_physical(&bits)).scalar()
            })
            .collect();
        for c in 0..2 {
            let mut dmat = Array2::<f64>::zeros((n, n));
            for lin in 0..n {
                let bits: Vec<usize> = (0..6).map(|s| (lin >> (5 - s)) & 1).collect();
                let p = lay.decode_physical(&bits);
                let mut q = p.0;
                q[c] = (q[c] + 1) % 8;
                let qbits = lay.encode_physical(&GridPoint(q));
                let qlin: usize = qbits.iter().fold(0, |acc, &b| (acc << 1) | b);
                dmat[[lin, qlin]] += 1.0 / h;
                dmat[[lin, lin]] -= 1.0 / h;
            }
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += dmat[[t, i]] * asamp[t] * dmat[[t, j]];
                    }
                    expect[[i, j]] += acc;
                }
            }
        }
        for i in 0..n {
            expect[[i, i]] += gamma;
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((dense[[i, j]] - expect[[i, j]]).abs());
            }
        }
        assert!(worst < 1e-11, "max entry deviation {worst}");

        // constant a applied to a constant field leaves gamma * constant
        let aconst = Field::new(TensorTrain::constant(&lay.site_dims(), 1.0), lay).unwrap();
        let opc = fd_operator(&aconst, gamma, 1e-13).unwrap();
        let cfield = TensorTrain::constant(&lay.site_dims(), 3.0);
        let out = opc.apply(&cfield).unwrap().to_dense().unwrap();
        for v in out.iter() {
            assert!((v - gamma * 3.0).abs() < 1e-11);
        }

        assert!(matches!(fd_operator(&a, 0.0, 1e-13), Err(OpsError::SingularMass)));
    }

    #[test]
    fn convolution_matches_dense_circular() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for fmt in Format::ALL {
            let lvl = 3usize;
            let lay = QttLayout::new(2, lvl, fmt, Space::Fourier, Arity::Matrix);
            let scalar_lay = lay.with(Space::Fourier, Arity::Scalar);
            // random low-rank scalar coefficient symbol, lifted to matrix
            let tt = TensorTrain::<Complex64>::random(
                &scalar_lay.site_dims(),
                &vec![3; scalar_lay.num_sites() - 1],
                rng.random(),
            )
            .unwrap();
            let a_hat = lift_scalar_to_matrix(&Field::new(tt, scalar_lay).unwrap()).unwrap();
            let op = convolution_mpo(&a_hat, 1e-12).unwrap();
            // rank factor: interleaved 4 + concatenated 2 per coordinate
            let factor = if fmt == Format::X1Y1 { 4 } else { 2 };
            assert!(
                op.max_rank() <= factor * a_hat.tt.max_rank(),
                "{fmt:?}: conv rank {} vs {} * {}",
                op.max_rank(),
                factor,
                a_hat.tt.max_rank()
            );
            let dense = op.to_dense_matrix().unwrap();
            // dense circular convolution over the same enumeration
            let n = 1i64 << lvl;
            let nn = (n * n) as usize;
            let scale = 2f64.powf(-(lvl as f64));
            let vlay = lay.with(Space::Fourier, Arity::Vector);
            let spatial = 2 * lvl;
            let row_of = |m: &FourierIndex, i: usize| -> usize {
                let bits = vlay.encode_fourier(m).unwrap();
                let spat: usize = bits.iter().fold(0, |acc, &b| (acc << 1) | b);
                i * (1usize << spatial) + spat
            };
            let mut worst = 0.0f64;
            for mx in -n / 2..n / 2 {
                for my in -n / 2..n / 2 {
                    let row_k = FourierIndex([mx, my, 0]);
                    for px in -n / 2..n / 2 {
                        for py in -n / 2..n / 2 {
                            let col_k = FourierIndex([px, py, 0]);
                            // wrapped difference back into the grid range
                            let wrap = |v: i64| {
                                let w = (v).rem_euclid(n);
                                if w >= n / 2 {
                                    w - n
                                } else {
                                    w
                                }
                            };
                            let diff = FourierIndex([wrap(mx - px), wrap(my - py), 0]);
                            let aval = a_hat
                                .evaluate_fourier(&diff)
                                .unwrap()
                                .matrix()[[0, 0]];
                            for i in 0..2 {
                                for j in 0..2 {
                                    let expect = if i == j { aval.scale(scale) } else { Complex64::new(0.0, 0.0) };
                                    let got = dense[[row_of(&row_k, i), row_of(&col_k, j)]];
                                    worst = worst.max((got - expect).norm());
                                }
                            }
                        }
                    }
                }
            }
            assert!(worst < 1e-10, "{fmt:?}: dense conv deviation {worst}");
            let _ = nn;
        }
    }

    #[test]
    fn convolution_of_constant_is_identity() {
        let lvl = 4usize;
        let play = phys_layout(2, lvl, Format::X1Y1);
        let qft = assemble_qft(&play, 1e-12);
        let c = 1.7;
        let aconst = Field::new(TensorTrain::constant(&play.site_dims(), c), play).unwrap();
        let a_hat = lift_scalar_to_matrix(&qft.forward_real(&aconst).unwrap()).unwrap();
        let op = convolution_mpo(&a_hat, 1e-12).unwrap();
        let vlay = play.with(Space::Fourier, Arity::Vector);
        let x = TensorTrain::<Complex64>::random(&vlay.site_dims(), &vec![4; vlay.num_sites() - 1], 3).unwrap();
        let y = op.apply(&x).unwrap();
        let err = y.distance(&x.scaled(Complex64::new(c, 0.0))).unwrap();
        assert!(err < 1e-10 * x.norm2(), "constant conv error {err}");
    }

    #[test]
    fn convolution_equals_transformed_multiplication() {
        // conv(F a) = F diag(a) F^H checked through dense matrices
        let lvl = 3usize;
        let play = phys_layout(2, lvl, Format::X1X2Y1Y2);
        let qft = assemble_qft(&play, 1e-12);
        let base = random_field(play, 2, 12);
        let ones = Field::new(TensorTrain::constant(&play.site_dims(), 1.5), play).unwrap();
        let a = Field::new(base.tt.scaled(0.25).add(&ones.tt).unwrap(), play).unwrap();
        let a_hat = lift_scalar_to_matrix(&qft.forward_real(&a).unwrap()).unwrap();
        let conv = convolution_mpo(&a_hat, 1e-12).unwrap();

        let vlay = play.with(Space::Physical, Arity::Vector);
        let xtt = TensorTrain::<Complex64>::random(&vlay.site_dims(), &vec![3; vlay.num_sites() - 1], 4).unwrap();
        let x = Field::new(xtt, vlay).unwrap();
        let x_hat = qft.forward(&x).unwrap();
        let conv_x = conv.apply(&x_hat.tt).unwrap();
        // reference: multiply pointwise in physical space, then transform
        let ax = {
            let a_c = Field::new(a.tt.to_complex(), play.with(Space::Physical, Arity::Scalar)).unwrap();
            mul_scalar_field(&a_c, &x).unwrap()
        };
        let ax_hat = qft.forward(&ax).unwrap();
        let err = conv_x.distance(&ax_hat.tt).unwrap() / ax_hat.norm2();
        assert!(err < 1e-9, "variational identity error {err}");
    }

    #[test]
    fn penalized_system_assembly() {
        let lvl = 4usize;
        let play = phys_layout(2, lvl, Format::X1Y1);
        let qft = assemble_qft(&play, 1e-12);
        let flay = QttLayout::new(2, lvl, Format::X1Y1, Space::Fourier, Arity::Matrix);
        let proj = projector_symbol(&flay, SymbolFilter::Spectral, 1e-10, 60, 2).unwrap();

        // a = 1, mu = 0: the operator acts as the identity
        let aconst = Field::new(TensorTrain::constant(&play.site_dims(), 1.0), play).unwrap();
        let vlay = play.with(Space::Physical, Arity::Vector);
        let gtt = TensorTrain::<f64>::random(&vlay.site_dims(), &vec![2; vlay.num_sites() - 1], 6).unwrap();
        let g = Field::new(gtt, vlay).unwrap();
        let sys = assemble_system(&aconst, &g, 0.0, &proj.field, &qft, 1e-12, Some((1.0, 1.0))).unwrap();
        let x = TensorTrain::<Complex64>::random(&sys.rhs.tt.site_dims(), &vec![3; sys.rhs.tt.len() - 1], 5).unwrap();
        let y = sys.operator.apply(&x).unwrap();
        let err = y.distance(&x).unwrap();
        assert!(err < 1e-9, "identity action error {err}");
        assert!(sys.operator.max_rank() <= sys.conv_rank + sys.proj_rank);

        // rhs has zero mean
        let k0 = sys.rhs.evaluate_fourier(&FourierIndex([0, 0, 0])).unwrap();
        for v in k0.vector() {
            assert!(v.norm() < 1e-10);
        }

        // ellipticity violation surfaces
        let bad = Field::new(TensorTrain::constant(&play.site_dims(), -1.0), play).unwrap();
        assert!(matches!(
            assemble_system(&bad, &g, 1.0, &proj.field, &qft, 1e-12, None),
            Err(OpsError::NonElliptic(_))
        ));
    }

    #[test]
    fn dense_equivalence_of_full_operator() {
        // at L <= 4, d = 2: MPO equals dense conv + mu blockdiag(p)
        let lvl = 3usize;
        let play = phys_layout(2, lvl, Format::X1X2Y2Y1);
        let qft = assemble_qft(&play, 1e-12);
        let flay = QttLayout::new(2, lvl, Format::X1X2Y2Y1, Space::Fourier, Arity::Matrix);
        let proj = projector_symbol(&flay, SymbolFilter::Spectral, 1e-11, 60, 7).unwrap();
        let base = random_field(play, 2, 21);
        let ones = Field::new(TensorTrain::constant(&play.site_dims(), 2.0), play).unwrap();
        let a = Field::new(base.tt.scaled(0.4).add(&ones.tt).unwrap(), play).unwrap();
        let vlay = play.with(Space::Physical, Arity::Vector);
        let gtt = TensorTrain::<f64>::random(&vlay.site_dims(), &vec![2; vlay.num_sites() - 1], 26).unwrap();
        let g = Field::new(gtt, vlay).unwrap();
        let mu = 37.5;
        let sys = assemble_system(&a, &g, mu, &proj.field, &qft, 1e-13, None).unwrap();
        assert!(sys.bounds_estimated);
        let dense = sys.operator.to_dense_matrix().unwrap();

        // dense reference built from the physical multiplication operator
        let n = 1usize << (2 * lvl);
        let fl = vlay.with(Space::Fourier, Arity::Vector);
        let mut fmat = Array2::<Complex64>::zeros((2 * n, 2 * n));
        // dense unitary DFT on the vector layout enumeration
        for i in 0..2usize {
            for spat in 0..n {
                let row = i * n + spat;
                let bits: Vec<usize> = (0..2 * lvl).map(|s| (spat >> (2 * lvl - 1 - s)) & 1).collect();
                let m = fl.decode_fourier(&bits);
                for spat_j in 0..n {
                    let jbits: Vec<usize> = (0..2 * lvl).map(|s| (spat_j >> (2 * lvl - 1 - s)) & 1).collect();
                    let p = play.decode_physical(&jbits);
                    let ang = -2.0 * std::f64::consts::PI
                        * (m.0[0] as f64 * p.0[0] as f64 + m.0[1] as f64 * p.0[1] as f64)
                        / (1u64 << lvl) as f64;
                    fmat[[row, i * n + spat_j]] = Complex64::new(0.0, ang).exp().scale((n as f64).powf(-0.5));
                }
            }
        }
        let mut worst = 0.0f64;
        // expected = F diag(a) F^H + mu blockdiag(p)
        let mut expect = Array2::<Complex64>::zeros((2 * n, 2 * n));
        let asamp: Vec<f64> = (0..n)
            .map(|spat| {
                let bits: Vec<usize> = (0..2 * lvl).map(|s| (spat >> (2 * lvl - 1 - s)) & 1).collect();
                a.evaluate_physical(&play.decode_physical(&bits)).scalar()
            })
            .collect();
        for i in 0..2 {
            for r in 0..n {
                for c in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..n {
                        acc += fmat[[i * n + r, i * n + t]]
                            * asamp[t]
                            * fmat[[i * n + c, i * n + t]].conj();
                    }
                    expect[[i * n + r, i * n + c]] = acc;
                }
            }
        }
        for spat in 0..n {
            let bits: Vec<usize> = (0..2 * lvl).map(|s| (spat >> (2 * lvl - 1 - s)) & 1).collect();
            let m = fl.decode_fourier(&bits);
            let pm = proj.field.evaluate_fourier(&m).unwrap().matrix().clone();
            for i in 0..2 {
                for j in 0..2 {
                    expect[[i * n + spat, j * n + spat]] += pm[[i, j]].scale(mu);
                }
            }
        }
        for r in 0..2 * n {
            for c in 0..2 * n {
                worst = worst.max((dense[[r, c]] - expect[[r, c]]).norm());
            }
        }
        assert!(worst < 1e-8, "dense operator deviation {worst}");
    }

    #[test]
    fn source_and_recovery_chain() {
        // f = cos(2 pi x) lifted to d=2: g_hat = -q f_hat has two modes,
        // div g recovers f, and u-recovery closes the sign chain
        let lvl = 6usize;
        let play = phys_layout(2, lvl, Format::X1Y1);
        let qft = assemble_qft(&play, 1e-12);
        let flay = QttLayout::new(2, lvl, Format::X1Y1, Space::Fourier, Arity::Vector);
        let green = crate::symbols::green_symbol(&flay, 1e-11, 60, 3).unwrap();

        let n = 1usize << lvl;
        let dense_f = Array1::from_iter((0..n * n).map(|lin| {
            let bits: Vec<usize> = (0..2 * lvl).map(|s| (lin >> (2 * lvl - 1 - s)) & 1).collect();
            let p = play.decode_physical(&bits);
            (2.0 * std::f64::consts::PI * p.0[0] as f64 / n as f64).cos()
        }));
        let (ftt, _) = TensorTrain::from_dense(&dense_f, &play.site_dims(), 1e-13, usize::MAX).unwrap();
        let f = Field::new(ftt, play).unwrap();
        let g_hat = source_from_f(&f, &green.field, &qft, 1e-12, 1e-8).unwrap();

        // two nonzero vector coefficients at k = (+-2pi, 0)
        let two_pi = 2.0 * std::f64::consts::PI;
        let amp = g_hat.evaluate_fourier(&FourierIndex([1, 0, 0])).unwrap().vector().to_vec();
        let scale = (n as f64 * n as f64).sqrt() / 2.0;
        // g = -q f: at k=(2pi,0): q = i k/|k|^2 -> component x = i/(2pi)
        let expect = Complex64::new(0.0, -1.0 / two_pi) * scale;
        assert!((amp[0] - expect).norm() < 1e-8 * scale, "got {:?} want {expect}", amp[0]);
        assert!(amp[1].norm() < 1e-9 * scale);
        for (mx, my) in [(0i64, 0i64), (2, 0), (1, 1), (-3, 2)] {
            let v = g_hat.evaluate_fourier(&FourierIndex([mx, my, 0])).unwrap();
            for c in v.vector() {
                assert!(c.norm() < 1e-8 * scale);
            }
        }

        // dense divergence of g equals f: sum_c i k_c g_c(k) = f_hat(k)
        let mut worst = 0.0f64;
        for (mx, my) in [(1i64, 0i64), (-1, 0), (2, 3), (0, 1)] {
            let gv = g_hat.evaluate_fourier(&FourierIndex([mx, my, 0])).unwrap().vector().to_vec();
            let div: Complex64 = (0..2)
                .map(|c| {
                    let k = two_pi * if c == 0 { mx } else { my } as f64;
                    Complex64::new(0.0, k) * gv[c]
                })
                .sum();
            let f_hat_val = if (mx, my) == (1, 0) || (mx, my) == (-1, 0) {
                Complex64::new(scale, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            worst = worst.max((div - f_hat_val).norm() / scale);
        }
        assert!(worst < 1e-9, "divergence chain error {worst}");

        // zero source maps to zero
        let zf = Field::new(TensorTrain::constant(&play.site_dims(), 0.0), play).unwrap();
        let zg = source_from_f(&zf, &green.field, &qft, 1e-12, 1e-8);
        assert!(zg.is_err() || zg.unwrap().norm2() < 1e-12);

        // recover_u sign chain: psi_hat = F grad v for v = sin(2pix)sin(2piy)
        let grad = gradient_mpo(&play).unwrap();
        let _ = grad;
        let dense_v = Array1::from_iter((0..n * n).map(|lin| {
            let bits: Vec<usize> = (0..2 * lvl).map(|s| (lin >> (2 * lvl - 1 - s)) & 1).collect();
            let p = play.decode_physical(&bits);
            let x = p.0[0] as f64 / n as f64;
            let y = p.0[1] as f64 / n as f64;
            (two_pi * x).sin() * (two_pi * y).sin()
        }));
        let (vtt, _) = TensorTrain::from_dense(&dense_v, &play.site_dims(), 1e-13, usize::MAX).unwrap();
        // spectral gradient: component c multiplies by i k_c in Fourier space
        let v_hat = qft.forward_real(&Field::new(vtt.clone(), play).unwrap()).unwrap();
        let psi_parts: Vec<Field<Complex64>> = (0..2)
            .map(|c| {
                let f = |bits: &[usize]| {
                    let m = v_hat.layout.decode_fourier(bits);
                    Complex64::new(0.0, two_pi * m.0[c] as f64)
                };
                let cfg = crate::tci::CrossConfig { tol: 1e-11, max_rank: 40, seed: 5 + c as u64, ..Default::default() };
                let (sym, _) = crate::tci::build_from_function(&f, &v_hat.tt.site_dims(), &cfg).unwrap();
                let prod = Field::new(sym, v_hat.layout).unwrap();
                let m = mul_scalar_field(&v_hat, &Field::new(prod.tt.clone(), v_hat.layout).unwrap()).unwrap();
                m.round(1e-12, usize::MAX)
            })
            .collect();
        let psi_hat = crate::layout::stack_components(&psi_parts).unwrap();
        let rec = recover_u(&psi_hat, &green.field, &qft, 1e-12).unwrap();
        assert!(rec.imag_norm < 1e-8 * rec.u_phys.norm2().max(1e-30));
        // u should equal v (v already has zero mean)
        let vden = vtt.to_dense().unwrap();
        let uden = rec.u_phys.tt.to_dense().unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..vden.len() {
            num += (uden[i].re - vden[i]).powi(2);
            den += vden[i].powi(2);
        }
        assert!((num / den).sqrt() < 1e-8, "u recovery error {}", (num / den).sqrt());

        // psi_hat = 0 -> u = 0
        let zero_psi = Field::new(
            TensorTrain::constant(&psi_hat.tt.site_dims(), Complex64::new(0.0, 0.0)),
            psi_hat.layout,
        )
        .unwrap();
        let rec0 = recover_u(&zero_psi, &green.field, &qft, 1e-12).unwrap();
        assert!(rec0.u_phys.norm2() < 1e-12);

        // solenoidal psi_hat maps to u = 0: psi = (d_y w, -d_x w)
        let psi_sol_parts: Vec<Field<Complex64>> = (0..2)
            .map(|c| {
                let f = |bits: &[usize]| {
                    let m = v_hat.layout.decode_fourier(bits);
                    let k = two_pi * m.0[1 - c] as f64;
                    let sign = if c == 0 { 1.0 } else { -1.0 };
                    Complex64::new(0.0, sign * k)
                };
                let cfg = crate::tci::CrossConfig { tol: 1e-11, max_rank: 40, seed: 15 + c as u64, ..Default::default() };
                let (sym, _) = crate::tci::build_from_function(&f, &v_hat.tt.site_dims(), &cfg).unwrap();
                let m = mul_scalar_field(&v_hat, &Field::new(sym, v_hat.layout).unwrap()).unwrap();
                m.round(1e-12, usize::MAX)
            })
            .collect();
        let psi_sol = crate::layout::stack_components(&psi_sol_parts).unwrap();
        let rec_sol = recover_u(&psi_sol, &green.field, &qft, 1e-12).unwrap();
        assert!(rec_sol.u_hat.norm2() < 1e-9 * psi_sol.norm2().max(1e-30));
    }
}
