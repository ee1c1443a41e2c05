//! Dense small-grid reference implementations used as verification oracles:
//! explicit DFT matrices, the penalized system as a full matrix, its direct
//! and constrained solves, and the finite-difference matrix. Capped at a few
//! thousand unknowns; everything here is deliberately brute force.

use crate::layout::{Arity, Field, QttLayout, Space};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DenseError {
    #[error("dense oracle size cap exceeded: {0} unknowns")]
    TooLarge(usize),
}

pub const MAX_UNKNOWNS: usize = 1 << 16;

/// Spatial enumeration index (site 0 slowest) of a bitstring.
pub fn lin_of_bits(bits: &[usize]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b)
}

pub fn bits_of_lin(lin: usize, nsites: usize) -> Vec<usize> {
    (0..nsites).map(|s| (lin >> (nsites - 1 - s)) & 1).collect()
}

/// Sample a scalar field on the full grid in spatial enumeration order.
pub fn sample_scalar<S: Scalar>(f: &Field<S>) -> Array1<S> {
    assert_eq!(f.layout.arity, Arity::Scalar);
    let k = f.layout.num_spatial_sites();
    Array1::from_iter((0..1usize << k).map(|lin| f.tt.eval_bits(&bits_of_lin(lin, k))))
}

/// Sample a vector field as one dense vector, component-major.
pub fn sample_vector<S: Scalar>(f: &Field<S>) -> Array1<S> {
    assert_eq!(f.layout.arity, Arity::Vector);
    let d = f.layout.d;
    let k = f.layout.num_spatial_sites();
    let n = 1usize << k;
    let mut out = Array1::from_elem(d * n, S::ZERO);
    for i in 0..d {
        for lin in 0..n {
            let mut idx = vec![i];
            idx.extend(bits_of_lin(lin, k));
            out[i * n + lin] = f.tt.eval_bits(&idx);
        }
    }
    out
}

/// Frequencies (per coordinate integers) of every Fourier enumeration slot.
pub fn freq_table(layout: &QttLayout) -> Vec<[i64; 3]> {
    let lf = layout.with(Space::Fourier, Arity::Scalar);
    let k = lf.num_spatial_sites();
    (0..1usize << k)
        .map(|lin| lf.decode_fourier(&bits_of_lin(lin, k)).0)
        .collect()
}

/// Grid points of every physical enumeration slot.
pub fn grid_table(layout: &QttLayout) -> Vec<[u64; 3]> {
    let lp = layout.with(Space::Physical, Arity::Scalar);
    let k = lp.num_spatial_sites();
    (0..1usize << k)
        .map(|lin| lp.decode_physical(&bits_of_lin(lin, k)).0)
        .collect()
}

/// Dense unitary DFT over the layout's enumerations: rows indexed by the
/// Fourier enumeration, columns by the physical one.
pub fn dft_matrix(layout: &QttLayout) -> Array2<Complex64> {
    let freqs = freq_table(layout);
    let grids = grid_table(layout);
    let n = freqs.len();
    let cells = 1u64 << layout.level;
    let scale = (n as f64).powf(-0.5);
    let mut f = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for (r, m) in freqs.iter().enumerate() {
        for (c, j) in grids.iter().enumerate() {
            let mut ang = 0.0;
            for cdim in 0..layout.d {
                ang -= 2.0 * PI * m[cdim] as f64 * j[cdim] as f64 / cells as f64;
            }
            f[[r, c]] = Complex64::new(0.0, ang).exp().scale(scale);
        }
    }
    f
}

/// Exact spectral projector entries p(k) at one frequency.
pub fn projector_entries(m: &[i64; 3], d: usize) -> Array2<f64> {
    let mut norm2 = 0.0;
    for c in 0..d {
        norm2 += (m[c] * m[c]) as f64;
    }
    Array2::from_shape_fn((d, d), |(i, j)| {
        let delta = if i == j { 1.0 } else { 0.0 };
        if norm2 == 0.0 {
            delta
        } else {
            delta - (m[i] * m[j]) as f64 / norm2
        }
    })
}

/// The dense penalized operator conv(a) + mu blockdiag(p) over the
/// component-major Fourier enumeration, built as F diag(a) F^H + penalty.
pub fn penalized_matrix(
    a_samples: &Array1<f64>,
    layout: &QttLayout,
    mu: f64,
) -> Result<Array2<Complex64>, DenseError> {
    let d = layout.d;
    let n = a_samples.len();
    if d * n > MAX_UNKNOWNS {
        return Err(DenseError::TooLarge(d * n));
    }
    let f = dft_matrix(layout);
    // conv block: F diag(a) F^H, identical for every component
    let mut block = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..n {
                acc += f[[r, t]] * a_samples[t] * f[[c, t]].conj();
            }
            block[[r, c]] = acc;
        }
    }
    let freqs = freq_table(layout);
    let mut a = Array2::from_elem((d * n, d * n), Complex64::new(0.0, 0.0));
    for i in 0..d {
        for r in 0..n {
            for c in 0..n {
                a[[i * n + r, i * n + c]] = block[[r, c]];
            }
        }
    }
    for (slot, m) in freqs.iter().enumerate() {
        let p = projector_entries(m, d);
        for i in 0..d {
            for j in 0..d {
                a[[i * n + slot, j * n + slot]] += Complex64::new(mu * p[[i, j]], 0.0);
            }
        }
    }
    Ok(a)
}

pub struct DensePenalizedSolution {
    pub psi_hat: Array1<Complex64>,
    /// Condition number of the dense operator.
    pub condition: f64,
}

/// Direct dense solve of the penalized system (right-hand side -g_hat with
/// the zero-frequency slots cleared).
pub fn penalized_solve(
    a_samples: &Array1<f64>,
    g_hat: &Array1<Complex64>,
    layout: &QttLayout,
    mu: f64,
) -> Result<DensePenalizedSolution, DenseError> {
    let a = penalized_matrix(a_samples, layout, mu)?;
    let dim = a.nrows();
    let rhs = Array2::from_shape_fn((dim, 1), |(i, _)| -g_hat[i]);
    let sol = Complex64::solve_hermitian(a.view(), rhs.view());
    let ev = Complex64::eigh_values(a.view());
    Ok(DensePenalizedSolution {
        psi_hat: Array1::from_iter(sol.column(0).iter().copied()),
        condition: ev[dim - 1] / ev[0].max(1e-300),
    })
}

/// The exact discrete constrained minimizer: solve over the potential
/// subspace span{ m / |m| } at every nonzero frequency (the zero-frequency
/// slot is fixed to zero by the gauge).
pub fn constrained_solve(
    a_samples: &Array1<f64>,
    g_hat: &Array1<Complex64>,
    layout: &QttLayout,
) -> Result<Array1<Complex64>, DenseError> {
    let d = layout.d;
    let n = a_samples.len();
    if d * n > MAX_UNKNOWNS {
        return Err(DenseError::TooLarge(d * n));
    }
    let a = penalized_matrix(a_samples, layout, 0.0)?;
    let freqs = freq_table(layout);
    // basis of the potential subspace (unit direction per nonzero frequency)
    let active: Vec<usize> = (0..n).filter(|&s| freqs[s].iter().any(|&m| m != 0)).collect();
    let nb = active.len();
    let mut basis = Array2::from_elem((d * n, nb), Complex64::new(0.0, 0.0));
    for (col, &slot) in active.iter().enumerate() {
        let m = freqs[slot];
        let norm: f64 = (0..d).map(|c| (m[c] * m[c]) as f64).sum::<f64>().sqrt();
        for i in 0..d {
            basis[[i * n + slot, col]] = Complex64::new(m[i] as f64 / norm, 0.0);
        }
    }
    let ab = Complex64::matmul(a.view(), basis.view());
    let red = Complex64::matmul_adj_lhs(basis.view(), ab.view());
    let mut rhs = Array2::from_elem((nb, 1), Complex64::new(0.0, 0.0));
    for (col, &slot) in active.iter().enumerate() {
        let m = freqs[slot];
        let norm: f64 = (0..d).map(|c| (m[c] * m[c]) as f64).sum::<f64>().sqrt();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            acc += Complex64::new(m[i] as f64 / norm, 0.0) * (-g_hat[i * n + slot]);
        }
        rhs[[col, 0]] = acc;
    }
    let w = Complex64::solve_hermitian(red.view(), rhs.view());
    let psi = Complex64::matmul(basis.view(), w.view());
    Ok(Array1::from_iter(psi.column(0).iter().copied()))
}

/// Dense finite-difference operator sum_c Dc^T diag(a) Dc + gamma I over the
/// physical enumeration.
pub fn fd_matrix(a_samples: &Array1<f64>, layout: &QttLayout, gamma: f64) -> Result<Array2<f64>, DenseError> {
    let n = a_samples.len();
    if n > MAX_UNKNOWNS {
        return Err(DenseError::TooLarge(n));
    }
    let lp = layout.with(Space::Physical, Arity::Scalar);
    let k = lp.num_spatial_sites();
    let cells = 1u64 << layout.level;
    let h = (cells as f64).recip();
    let mut out = Array2::<f64>::zeros((n, n));
    for c in 0..layout.d {
        // D[r, col] = (delta_{col = r+e_c} - delta_{col = r}) / h
        let mut dmat = Array2::<f64>::zeros((n, n));
        for lin in 0..n {
            let p = lp.decode_physical(&bits_of_lin(lin, k));
            let mut q = p.0;
            q[c] = (q[c] + 1) % cells;
            let qlin = lin_of_bits(&lp.encode_physical(&crate::layout::GridPoint(q)));
            dmat[[lin, qlin]] += 1.0 / h;
            dmat[[lin, lin]] -= 1.0 / h;
        }
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += dmat[[t, i]] * a_samples[t] * dmat[[t, j]];
                }
                out[[i, j]] += acc;
            }
        }
    }
    for i in 0..n {
        out[[i, i]] += gamma;
    }
    Ok(out)
}

/// Relative l2 distance of two dense vectors.
pub fn rel_l2(a: &Array1<Complex64>, b: &Array1<Complex64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y).norm_sqr();
        den += y.norm_sqr();
    }
    (num / den.max(1e-300)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Format;
    use crate::qft::assemble_qft;
    use crate::tt::TensorTrain;

    #[test]
    fn dense_dft_matches_mpo_transform() {
        let layout = QttLayout::new(2, 3, Format::X1X2Y2Y1, Space::Physical, Arity::Scalar);
        let qft = assemble_qft(&layout, 1e-12);
        let tt = TensorTrain::<Complex64>::random(&layout.site_dims(), &vec![3; layout.num_sites() - 1], 5).unwrap();
        let f = Field::new(tt, layout).unwrap();
        let fw = qft.forward(&f).unwrap();
        let dense_in = sample_scalar(&f);
        let fmat = dft_matrix(&layout);
        let expect = {
            let m = Complex64::matmul(
                fmat.view(),
                Array2::from_shape_fn((dense_in.len(), 1), |(i, _)| dense_in[i]).view(),
            );
            Array1::from_iter(m.column(0).iter().copied())
        };
        let got = sample_scalar(&fw);
        assert!(rel_l2(&got, &expect) < 1e-10);
    }

    #[test]
    fn identity_coefficient_case_dense() {
        // a = 1, large mu, g = -grad v: psi recovers grad v directly
        let layout = QttLayout::new(2, 4, Format::X1Y1, Space::Physical, Arity::Scalar);
        let n = 1usize << 8;
        let cells = 16u64;
        let a = Array1::from_elem(n, 1.0);
        let lp = layout;
        let two_pi = 2.0 * PI;
        // v = sin(2 pi x) cos(2 pi y): grad v known in closed form
        let mut gradv = Array1::from_elem(2 * n, Complex64::new(0.0, 0.0));
        for lin in 0..n {
            let p = lp.decode_physical(&bits_of_lin(lin, 8));
            let x = p.0[0] as f64 / cells as f64;
            let y = p.0[1] as f64 / cells as f64;
            gradv[lin] = Complex64::new(two_pi * (two_pi * x).cos() * (two_pi * y).cos(), 0.0);
            gradv[n + lin] = Complex64::new(-two_pi * (two_pi * x).sin() * (two_pi * y).sin(), 0.0);
        }
        let fmat = dft_matrix(&layout);
        let mut g_hat = Array1::from_elem(2 * n, Complex64::new(0.0, 0.0));
        for i in 0..2 {
            for r in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    acc += fmat[[r, c]] * (-gradv[i * n + c]);
                }
                g_hat[i * n + r] = acc;
            }
        }
        let sol = penalized_solve(&a, &g_hat, &layout, 1e8).unwrap();
        // psi_hat should equal F grad v
        let mut expect = Array1::from_elem(2 * n, Complex64::new(0.0, 0.0));
        for i in 0..2 {
            for r in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    acc += fmat[[r, c]] * gradv[i * n + c];
                }
                expect[i * n + r] = acc;
            }
        }
        assert!(rel_l2(&sol.psi_hat, &expect) < 2e-8, "err {}", rel_l2(&sol.psi_hat, &expect));
        // condition bounded by lambda (mu + Lambda) = 1e8 + 1
        assert!(sol.condition <= 1e8 + 1.0 + 1e4);
    }
}
