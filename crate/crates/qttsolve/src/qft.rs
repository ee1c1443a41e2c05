//! The discrete Fourier transform as a low-rank MPO on quantized indices,
//! with bit-reversed (per-coordinate scale-reversed) output ordering.
//!
//! Writing the DFT phase over site pairs (output bit a_s, input bit b_s)
//! gives exp(-2 pi i n j / 2^L) = prod_s exp(-i pi b_s (a_s + l_s)) where
//! l_s is the running fraction of the output bits already emitted:
//! l_1 = 0, l_{s+1} = (l_s + a_s)/2. Each bond carries a Chebyshev
//! interpolation of the dependence on l_s, which is a pure phase of
//! bandwidth at most 2 pi, so a few dozen nodes reach machine precision and
//! TT-rounding compresses the bond to a small L-independent rank.
//!
//! In dimension d the transform is the tensor product of 1-D factors. For
//! the concatenated formats the factor cores are placed block by block
//! (mirrored blocks use the mirrored core list), giving one explicit MPO.
//! For the interleaved format the operator is kept as the ordered list of
//! single-coordinate factors and applied sequentially with rounding.

use crate::layout::{Arity, Field, Format, LayoutError, QttLayout, Space};
use crate::scalar::Scalar;
use crate::tt::Mpo;
use ndarray::{Array2, Array4};
use num_complex::Complex64;
use std::f64::consts::PI;

const CHEB_NODES: usize = 24;

fn cheb_nodes() -> Vec<f64> {
    (0..CHEB_NODES)
        .map(|m| 0.5 * (1.0 + (PI * (2.0 * m as f64 + 1.0) / (2.0 * CHEB_NODES as f64)).cos()))
        .collect()
}

fn cheb_weights() -> Vec<f64> {
    (0..CHEB_NODES)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * (PI * (2.0 * m as f64 + 1.0) / (2.0 * CHEB_NODES as f64)).sin()
        })
        .collect()
}

/// Lagrange cardinal functions at `x` over the Chebyshev nodes.
fn cardinal(nodes: &[f64], weights: &[f64], x: f64) -> Vec<f64> {
    for (m, &t) in nodes.iter().enumerate() {
        if (x - t).abs() < 1e-15 {
            let mut v = vec![0.0; nodes.len()];
            v[m] = 1.0;
            return v;
        }
    }
    let terms: Vec<f64> = nodes
        .iter()
        .zip(weights)
        .map(|(&t, &w)| w / (x - t))
        .collect();
    let denom: f64 = terms.iter().sum();
    terms.iter().map(|t| t / denom).collect()
}

fn phase(x: f64) -> Complex64 {
    Complex64::new(0.0, -PI * x).exp()
}

/// One-dimensional unitary QFT MPO of length `level`, forward kernel
/// exp(-i k x), output bits in reversed scale order. Rank is bounded
/// independently of `level` (<= 16 at tol 1e-12).
pub fn build_qft_1d(level: usize, tol: f64) -> Mpo<Complex64> {
    assert!(level >= 1);
    let omega = Complex64::new(2f64.powf(-0.5), 0.0);
    if level == 1 {
        let mut c = Array4::from_elem((1, 2, 2, 1), Complex64::new(0.0, 0.0));
        for a in 0..2 {
            for b in 0..2 {
                c[[0, a, b, 0]] = omega * phase((a * b) as f64);
            }
        }
        return Mpo::new(vec![c]).unwrap();
    }
    let nodes = cheb_nodes();
    let weights = cheb_weights();
    let m = CHEB_NODES;
    let mut cores = Vec::with_capacity(level);
    // first site: l = 0
    let mut c0 = Array4::from_elem((1, 2, 2, m), Complex64::new(0.0, 0.0));
    for a in 0..2 {
        let card = cardinal(&nodes, &weights, a as f64 / 2.0);
        for b in 0..2 {
            let f = omega * phase((a * b) as f64);
            for (mi, &p) in card.iter().enumerate() {
                c0[[0, a, b, mi]] = f * p;
            }
        }
    }
    cores.push(c0);
    for _ in 1..level - 1 {
        let mut c = Array4::from_elem((m, 2, 2, m), Complex64::new(0.0, 0.0));
        for (mi, &t) in nodes.iter().enumerate() {
            for a in 0..2 {
                let card = cardinal(&nodes, &weights, (a as f64 + t) / 2.0);
                for b in 0..2 {
                    let f = omega * phase(b as f64 * (a as f64 + t));
                    for (mj, &p) in card.iter().enumerate() {
                        c[[mi, a, b, mj]] = f * p;
                    }
                }
            }
        }
        cores.push(c);
    }
    let mut cl = Array4::from_elem((m, 2, 2, 1), Complex64::new(0.0, 0.0));
    for (mi, &t) in nodes.iter().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                cl[[mi, a, b, 0]] = omega * phase(b as f64 * (a as f64 + t));
            }
        }
    }
    cores.push(cl);
    let raw = Mpo::new(cores).unwrap();
    let (rounded, _) = raw.round(tol.min(1e-12).max(1e-15), usize::MAX);
    rounded
}

/// Dense unitary DFT with reversed-scale output bit ordering, as an explicit
/// matrix over the site-major bit enumeration. Small levels only; used as
/// the independent construction cross-check.
pub fn dense_qft_matrix(level: usize) -> Array2<Complex64> {
    let n = 1usize << level;
    let mut f = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    let scale = (n as f64).powf(-0.5);
    for row in 0..n {
        // row bits: site s (0-based, slowest) carries output bit of weight 2^s
        let mut nk = 0usize;
        for s in 0..level {
            let bit = (row >> (level - 1 - s)) & 1;
            nk |= bit << s;
        }
        for j in 0..n {
            let ang = -2.0 * PI * (nk as f64) * (j as f64) / (n as f64);
            f[[row, j]] = Complex64::new(0.0, ang).exp() * scale;
        }
    }
    f
}

fn mirror_mpo<S: Scalar>(m: &Mpo<S>) -> Mpo<S> {
    let cores = m
        .cores()
        .iter()
        .rev()
        .map(|c| c.view().permuted_axes([3, 1, 2, 0]).as_standard_layout().into_owned())
        .collect();
    Mpo::new(cores).unwrap()
}

/// Identity-on-bond pass-through core of the given bond dimension.
fn passthrough_core<S: Scalar>(bond: usize, n: usize) -> Array4<S> {
    let mut c = Array4::from_elem((bond, n, n, bond), S::ZERO);
    for a in 0..bond {
        for i in 0..n {
            c[[a, i, i, a]] = S::ONE;
        }
    }
    c
}

/// d-dimensional QFT for one layout: forward maps a physical field to its
/// Fourier layout, inverse is the adjoint.
#[derive(Clone)]
pub struct QftOperator {
    /// Single-coordinate factors in application order. Concatenated formats
    /// collapse to one explicit factor.
    factors: Vec<Mpo<Complex64>>,
    base: QttLayout,
    round_tol: f64,
}

/// Whether each coordinate's scales ascend or descend along the chain.
fn coord_descends(format: Format, c: usize) -> bool {
    match format {
        Format::X1X2Y1Y2 | Format::X1Y1 => false,
        Format::X1X2Y2Y1 => c % 2 == 1,
        Format::X2X1Y1Y2 => c % 2 == 0,
    }
}

pub fn assemble_qft(layout: &QttLayout, tol: f64) -> QftOperator {
    assert_eq!(layout.space, Space::Physical, "assemble_qft expects a physical layout");
    let base = QttLayout { arity: Arity::Scalar, ..*layout };
    let l = layout.level;
    let d = layout.d;
    let qft = build_qft_1d(l, tol);
    let factors = if layout.format == Format::X1Y1 {
        // one factor per coordinate: QFT cores at the coordinate's sites,
        // pass-through cores elsewhere
        let roles = base.spatial_roles();
        (0..d)
            .map(|c| {
                let oriented = qft.clone();
                let mut cores = Vec::with_capacity(roles.len());
                let mut placed = 0usize;
                let mut bond = 1usize;
                for &(rc, _) in &roles {
                    if rc == c {
                        let core = oriented.cores()[placed].clone();
                        bond = core.dim().3;
                        cores.push(core);
                        placed += 1;
                    } else {
                        cores.push(passthrough_core(bond, 2));
                    }
                }
                Mpo::new(cores).unwrap()
            })
            .collect()
    } else {
        // concatenated blocks: direct tensor concatenation, mirrored where
        // the format mirrors the coordinate
        let mut cores = Vec::with_capacity(d * l);
        for c in 0..d {
            let block = if coord_descends(layout.format, c) {
                mirror_mpo(&qft)
            } else {
                qft.clone()
            };
            cores.extend(block.cores().iter().cloned());
        }
        vec![Mpo::new(cores).unwrap()]
    };
    QftOperator { factors, base, round_tol: tol }
}

impl QftOperator {
    pub fn factors(&self) -> &[Mpo<Complex64>] {
        &self.factors
    }

    pub fn max_factor_rank(&self) -> usize {
        self.factors.iter().map(|f| f.max_rank()).max().unwrap_or(1)
    }

    fn check(&self, layout: &QttLayout, space: Space) -> Result<(), LayoutError> {
        if layout.d != self.base.d || layout.level != self.base.level || layout.format != self.base.format {
            return Err(LayoutError::Incompatible(format!(
                "field layout {:?} does not match transform base {:?}",
                layout, self.base
            )));
        }
        if layout.space != space {
            return Err(LayoutError::Incompatible(format!(
                "expected {:?} space, got {:?}",
                space, layout.space
            )));
        }
        Ok(())
    }

    fn lift(&self, m: &Mpo<Complex64>, value_dim: usize) -> Mpo<Complex64> {
        if value_dim == 0 {
            return m.clone();
        }
        let mut cores = vec![passthrough_core(1, value_dim)];
        cores.extend(m.cores().iter().cloned());
        Mpo::new(cores).unwrap()
    }

    fn apply_factors(
        &self,
        field: &Field<Complex64>,
        adjoint: bool,
    ) -> Result<Field<Complex64>, LayoutError> {
        let vd = field.layout.value_dim();
        let mut tt = field.tt.clone();
        let factors: Vec<Mpo<Complex64>> = if adjoint {
            self.factors.iter().rev().map(|f| f.adjoint()).collect()
        } else {
            self.factors.clone()
        };
        for f in &factors {
            let lifted = self.lift(f, vd);
            tt = lifted.apply_zipup(&tt, self.round_tol, usize::MAX)?;
        }
        Field::new(tt, field.layout.transformed())
    }

    /// Physical -> Fourier.
    pub fn forward(&self, field: &Field<Complex64>) -> Result<Field<Complex64>, LayoutError> {
        self.check(&field.layout, Space::Physical)?;
        self.apply_factors(field, false)
    }

    /// Fourier -> physical (adjoint of the unitary forward map).
    pub fn inverse(&self, field: &Field<Complex64>) -> Result<Field<Complex64>, LayoutError> {
        self.check(&field.layout, Space::Fourier)?;
        self.apply_factors(field, true)
    }

    /// Forward transform of a real physical field.
    pub fn forward_real(&self, field: &Field<f64>) -> Result<Field<Complex64>, LayoutError> {
        let complex = Field::new(field.tt.to_complex(), field.layout)?;
        self.forward(&complex)
    }
}
