//! Fourier multiplier symbols as quantized trains: the Helmholtz-Leray
//! projector p(k) = I - k k^T / (0+ + |k|^2), the Green multiplier
//! q(k) = i k / (0+ + |k|^2), and the deviation Gamma = p - I.
//!
//! Matrix symbols are built component-wise with cross interpolation (only
//! the d(d+1)/2 independent components, by symmetry) and stacked on the
//! leading value site.

use crate::layout::{Arity, Field, LayoutError, QttLayout, Space};
use crate::scalar::Scalar;
use crate::tci::{self, CrossConfig, TciError};
use crate::tt::{TensorTrain, TtError};
use ndarray::Array3;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SymbolError {
    #[error(transparent)]
    Tci(#[from] TciError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// Discretization of the gradient symbol inside the projector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolFilter {
    /// Spectral: the exact multiplier i k.
    Spectral,
    /// Forward finite differences: (exp(i k h) - 1) / h.
    ForwardDifference,
}

/// A built symbol with its cross-interpolation diagnostics.
#[derive(Clone, Debug)]
pub struct BuiltSymbol {
    pub field: Field<Complex64>,
    /// Monte-Carlo relative l2 error of the build, over the merged tensor.
    pub mc_error: f64,
    pub max_rank: usize,
    /// Set when cross interpolation stopped on the rank cap before tol.
    pub degraded: bool,
}

fn freq_of_bits(layout: &QttLayout, bits: &[usize]) -> [i64; 3] {
    layout.decode_fourier(bits).0
}

/// Per-component evaluators keyed by the merged value slot.
fn projector_entry(filter: SymbolFilter, level: usize, m: &[i64; 3], d: usize, i: usize, j: usize) -> Complex64 {
    match filter {
        SymbolFilter::Spectral => {
            let mut norm2 = 0.0;
            for c in 0..d {
                norm2 += (m[c] * m[c]) as f64;
            }
            if norm2 == 0.0 {
                return Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0);
            }
            let delta = if i == j { 1.0 } else { 0.0 };
            Complex64::new(delta - (m[i] * m[j]) as f64 / norm2, 0.0)
        }
        SymbolFilter::ForwardDifference => {
            let h = 2f64.powi(-(level as i32));
            let sym = |c: usize| {
                let ang = 2.0 * std::f64::consts::PI * m[c] as f64 * h;
                (Complex64::new(ang.cos(), ang.sin()) - Complex64::new(1.0, 0.0)).scale(1.0 / h)
            };
            let mut norm2 = 0.0;
            for c in 0..d {
                norm2 += sym(c).norm_sqr();
            }
            if norm2 == 0.0 {
                return Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0);
            }
            let delta = Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0);
            delta - sym(i) * sym(j).conj() / Complex64::new(norm2, 0.0)
        }
    }
}

/// Stack per-slot scalar trains onto a leading value site. `slot_of` maps a
/// value index to the part it reads (parts may be shared between slots).
fn stack_on_value_site(
    parts: &[TensorTrain<Complex64>],
    slot_of: &[usize],
    layout: QttLayout,
) -> Result<Field<Complex64>, SymbolError> {
    let value_dim = slot_of.len();
    let k = parts[0].len();
    // the value core routes each slot to its part's branch of the direct sum
    let n_parts = parts.len();
    let mut value = Array3::from_elem((1, value_dim, n_parts), Complex64::new(0.0, 0.0));
    for (slot, &part) in slot_of.iter().enumerate() {
        value[[0, slot, part]] = Complex64::new(1.0, 0.0);
    }
    let mut cores = vec![value];
    for s in 0..k {
        let blocks: Vec<&Array3<Complex64>> = parts.iter().map(|p| p.core(s)).collect();
        let n = blocks[0].dim().1;
        let last = s == k - 1;
        let r0t: usize = blocks.iter().map(|b| b.dim().0).sum();
        let r1t: usize = if last { 1 } else { blocks.iter().map(|b| b.dim().2).sum() };
        let mut c = Array3::from_elem((r0t, n, r1t), Complex64::new(0.0, 0.0));
        let (mut o0, mut o1) = (0usize, 0usize);
        for b in blocks {
            let (b0, _, b1) = b.dim();
            for a in 0..b0 {
                for x in 0..n {
                    for z in 0..b1 {
                        let col = if last { 0 } else { o1 + z };
                        c[[o0 + a, x, col]] += b[[a, x, z]];
                    }
                }
            }
            o0 += b0;
            o1 += b1;
        }
        cores.push(c);
    }
    Ok(Field::new(TensorTrain::new(cores)?, layout)?)
}

fn build_matrix_symbol(
    layout: &QttLayout,
    entry: impl Fn(&[i64; 3], usize, usize) -> Complex64 + Sync,
    symmetric: bool,
    tol: f64,
    max_rank: usize,
    seed: u64,
) -> Result<BuiltSymbol, SymbolError> {
    assert_eq!(layout.space, Space::Fourier);
    assert_eq!(layout.arity, Arity::Matrix);
    let d = layout.d;
    let scalar_layout = layout.with(Space::Fourier, Arity::Scalar);
    let dims = scalar_layout.site_dims();
    let mut parts = Vec::new();
    let mut part_of = vec![0usize; d * d];
    let mut degraded = false;
    let mut next = 0usize;
    for i in 0..d {
        for j in 0..d {
            if symmetric && j < i {
                continue;
            }
            let f = |bits: &[usize]| entry(&freq_of_bits(&scalar_layout, bits), i, j);
            let cfg = CrossConfig {
                tol: tol * 0.5,
                max_rank,
                seed: seed.wrapping_add((i * d + j) as u64),
                ..Default::default()
            };
            let (tt, report) = tci::build_from_function(&f, &dims, &cfg)?;
            degraded |= !report.converged;
            parts.push(tt);
            part_of[i * d + j] = next;
            if symmetric {
                part_of[j * d + i] = next;
            }
            next += 1;
        }
    }
    let stacked = stack_on_value_site(&parts, &part_of, *layout)?;
    let rounded = {
        let (tt, _) = stacked.tt.round(tol * 0.1, max_rank * d * (d + 1) / 2);
        Field::new(tt, *layout)?
    };
    // Monte-Carlo check over the merged tensor (value slot sampled too)
    let full_entry = |idx: &[usize]| {
        let slot = idx[0];
        let (i, j) = (slot / d, slot % d);
        entry(&freq_of_bits(&scalar_layout, &idx[1..]), i, j)
    };
    let mc_error = tci::monte_carlo_error(&rounded.tt, &full_entry, 1000, seed.wrapping_add(999))?;
    let max_rank = rounded.tt.max_rank();
    Ok(BuiltSymbol { field: rounded, mc_error, max_rank, degraded })
}

/// Helmholtz-Leray projector symbol on the layout's Fourier grid.
pub fn projector_symbol(
    layout: &QttLayout,
    filter: SymbolFilter,
    tol: f64,
    max_rank: usize,
    seed: u64,
) -> Result<BuiltSymbol, SymbolError> {
    let d = layout.d;
    let level = layout.level;
    // the spectral symbol is real symmetric; the difference filter is only
    // hermitian, so its off-diagonal components are built separately
    let symmetric = filter == SymbolFilter::Spectral;
    build_matrix_symbol(
        layout,
        |m, i, j| projector_entry(filter, level, m, d, i, j),
        symmetric,
        tol,
        max_rank,
        seed,
    )
}

/// Green multiplier q(k) = i k / (0+ + |k|^2) as a vector-valued train.
pub fn green_symbol(layout: &QttLayout, tol: f64, max_rank: usize, seed: u64) -> Result<BuiltSymbol, SymbolError> {
    assert_eq!(layout.space, Space::Fourier);
    assert_eq!(layout.arity, Arity::Vector);
    let d = layout.d;
    let scalar_layout = layout.with(Space::Fourier, Arity::Scalar);
    let dims = scalar_layout.site_dims();
    let two_pi = 2.0 * std::f64::consts::PI;
    let comp = |m: &[i64; 3], i: usize| {
        let mut norm2 = 0.0;
        for c in 0..d {
            norm2 += (m[c] * m[c]) as f64;
        }
        if norm2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            // i * (2 pi m_i) / (2 pi)^2 |m|^2
            Complex64::new(0.0, m[i] as f64 / (two_pi * norm2))
        }
    };
    let mut parts = Vec::new();
    let mut degraded = false;
    for i in 0..d {
        let f = |bits: &[usize]| comp(&freq_of_bits(&scalar_layout, bits), i);
        let cfg = CrossConfig {
            tol: tol * 0.5,
            max_rank,
            seed: seed.wrapping_add(i as u64),
            ..Default::default()
        };
        let (tt, report) = tci::build_from_function(&f, &dims, &cfg)?;
        degraded |= !report.converged;
        parts.push(tt);
    }
    let slot_of: Vec<usize> = (0..d).collect();
    let stacked = stack_on_value_site(&parts, &slot_of, *layout)?;
    let rounded = {
        let (tt, _) = stacked.tt.round(tol * 0.1, max_rank * d);
        Field::new(tt, *layout)?
    };
    let full_entry = |idx: &[usize]| comp(&freq_of_bits(&scalar_layout, &idx[1..]), idx[0]);
    let mc_error = tci::monte_carlo_error(&rounded.tt, &full_entry, 1000, seed.wrapping_add(998))?;
    let max_rank = rounded.tt.max_rank();
    Ok(BuiltSymbol { field: rounded, mc_error, max_rank, degraded })
}

/// Constant identity-matrix field on a Fourier layout.
pub fn identity_matrix_field(layout: &QttLayout) -> Field<Complex64> {
    assert_eq!(layout.arity, Arity::Matrix);
    let d = layout.d;
    let mut value = Array3::from_elem((1, d * d, 1), Complex64::new(0.0, 0.0));
    for i in 0..d {
        value[[0, i * d + i, 0]] = Complex64::new(1.0, 0.0);
    }
    let mut cores = vec![value];
    for _ in 0..layout.num_spatial_sites() {
        let mut c = Array3::from_elem((1, 2, 1), Complex64::new(0.0, 0.0));
        c[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        c[[0, 1, 0]] = Complex64::new(1.0, 0.0);
        cores.push(c);
    }
    Field::new(TensorTrain::new(cores).unwrap(), *layout).unwrap()
}

/// Gamma = p - I, the deviation of the projector from the identity.
pub fn gamma_from_projector(p: &Field<Complex64>, tol: f64) -> Result<Field<Complex64>, SymbolError> {
    let id = identity_matrix_field(&p.layout);
    let g = p.sub(&id)?;
    Ok(g.round(tol, usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Format, FourierIndex};
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fourier_layout(d: usize, l: usize, arity: Arity) -> QttLayout {
        QttLayout::new(d, l, Format::X1Y1, Space::Fourier, arity)
    }

    fn sample_freqs(d: usize, l: usize, n: usize, seed: u64) -> Vec<FourierIndex> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 1i64 << (l - 1);
        (0..n)
            .map(|_| {
                let mut m = [0i64; 3];
                for c in m.iter_mut().take(d) {
                    *c = rng.random_range(-half..half);
                }
                FourierIndex(m)
            })
            .collect()
    }

    #[test]
    fn projector_identity_at_zero_and_deflation() {
        let layout = fourier_layout(2, 6, Arity::Matrix);
        let p = projector_symbol(&layout, SymbolFilter::Spectral, 1e-10, 64, 7).unwrap();
        assert!(p.mc_error < 1e-9, "mc {}", p.mc_error);
        let at0 = p.field.evaluate_fourier(&FourierIndex([0, 0, 0])).unwrap();
        let m = at0.matrix();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m[[i, j]] - Complex64::new(expect, 0.0)).norm() < 1e-9);
            }
        }
        // k = (2 pi, 0): p = [[0,0],[0,1]]
        let at = p.field.evaluate_fourier(&FourierIndex([1, 0, 0])).unwrap();
        let m = at.matrix();
        let expect = [[0.0, 0.0], [0.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[[i, j]] - Complex64::new(expect[i][j], 0.0)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn projector_idempotent_annihilating_hermitian() {
        let layout = fourier_layout(2, 8, Arity::Matrix);
        let p = projector_symbol(&layout, SymbolFilter::Spectral, 1e-10, 80, 3).unwrap();
        for k in sample_freqs(2, 8, 1000, 50) {
            let m = p.field.evaluate_fourier(&k).unwrap().matrix().clone();
            // hermitian symmetry (real symmetric here)
            for i in 0..2 {
                for j in 0..2 {
                    assert!((m[[i, j]] - m[[j, i]].conj()).norm() < 1e-10);
                }
            }
            // idempotence
            let mut mm = Array2::from_elem((2, 2), Complex64::new(0.0, 0.0));
            for i in 0..2 {
                for j in 0..2 {
                    for t in 0..2 {
                        mm[[i, j]] += m[[i, t]] * m[[t, j]];
                    }
                }
            }
            let mut fro = 0.0f64;
            for i in 0..2 {
                for j in 0..2 {
                    fro += (mm[[i, j]] - m[[i, j]]).norm_sqr();
                }
            }
            assert!(fro.sqrt() < 1e-10, "idempotence defect {}", fro.sqrt());
            // annihilation of k
            let kv = [k.0[0] as f64, k.0[1] as f64];
            let kn = (kv[0] * kv[0] + kv[1] * kv[1]).sqrt();
            if kn > 0.0 {
                for i in 0..2 {
                    let r = m[[i, 0]] * kv[0] + m[[i, 1]] * kv[1];
                    assert!(r.norm() <= 1e-10 * kn, "pk = {r} at {k:?}");
                }
            }
        }
    }

    #[test]
    fn green_symbol_invariants() {
        let layout = fourier_layout(2, 7, Arity::Vector);
        let q = green_symbol(&layout, 1e-10, 64, 11).unwrap();
        assert!(q.mc_error < 1e-9);
        let v0 = q.field.evaluate_fourier(&FourierIndex([0, 0, 0])).unwrap();
        for c in v0.vector() {
            assert!(c.norm() < 1e-10);
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        for k in sample_freqs(2, 7, 200, 4) {
            if k.0[0] == 0 && k.0[1] == 0 {
                continue;
            }
            let v = q.field.evaluate_fourier(&k).unwrap().vector().to_vec();
            // purely imaginary entries
            for c in &v {
                assert!(c.re.abs() < 1e-10);
            }
            // k . q(k) = i
            let dot: Complex64 = (0..2).map(|c| Complex64::new(two_pi * k.0[c] as f64, 0.0) * v[c]).sum();
            assert!((dot - Complex64::new(0.0, 1.0)).norm() < 1e-9, "dot {dot} at {k:?}");
        }
    }

    #[test]
    fn gamma_annihilates_solenoidal() {
        let layout = fourier_layout(2, 6, Arity::Matrix);
        let p = projector_symbol(&layout, SymbolFilter::Spectral, 1e-10, 64, 9).unwrap();
        let g = gamma_from_projector(&p.field, 1e-12).unwrap();
        for k in sample_freqs(2, 6, 300, 21) {
            let m = g.evaluate_fourier(&k).unwrap().matrix().clone();
            let kv = [k.0[0] as f64, k.0[1] as f64];
            let kn = (kv[0] * kv[0] + kv[1] * kv[1]).sqrt();
            if kn == 0.0 {
                continue;
            }
            // solenoidal direction s = rot90(k): gamma s = (p - I) s = -(I - p)s
            let s = [-kv[1], kv[0]];
            for i in 0..2 {
                let r = m[[i, 0]] * s[0] + m[[i, 1]] * s[1];
                assert!(r.norm() <= 1e-9 * kn, "gamma s = {r}");
            }
        }
    }

    #[test]
    fn forward_difference_filter_variant() {
        let layout = fourier_layout(2, 5, Arity::Matrix);
        let p = projector_symbol(&layout, SymbolFilter::ForwardDifference, 1e-9, 90, 13).unwrap();
        assert!(p.mc_error < 1e-7, "mc {}", p.mc_error);
        // p(0) = I and idempotence at sampled frequencies
        let at0 = p.field.evaluate_fourier(&FourierIndex([0, 0, 0])).unwrap();
        assert!((at0.matrix()[[0, 0]] - Complex64::new(1.0, 0.0)).norm() < 1e-8);
        for k in sample_freqs(2, 5, 100, 2) {
            let m = p.field.evaluate_fourier(&k).unwrap().matrix().clone();
            let mut fro = 0.0f64;
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..2 {
                        acc += m[[i, t]] * m[[t, j]];
                    }
                    fro += (acc - m[[i, j]]).norm_sqr();
                }
            }
            assert!(fro.sqrt() < 1e-7);
        }
    }
}
