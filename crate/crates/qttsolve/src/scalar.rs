//! Scalar abstraction over `f64` and `Complex<f64>` plus the dense kernels
//! (GEMM, QR, SVD, Hermitian solves, eigenvalues) used by the tensor-train
//! machinery. Dense factorizations are delegated to `faer`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Solve, SolveCore};
use faer::{Accum, Mat, MatRef, Par, Side};
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Element type of tensor trains: real in physical space, complex in Fourier
/// space. Bundles the dense linear-algebra entry points so the TT code stays
/// generic without carrying trait bounds from the backend.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + Display
    + PartialEq
    + Sum
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const IS_COMPLEX: bool;

    fn from_re(x: f64) -> Self;
    fn from_complex(z: Complex64) -> Self;
    fn into_complex(self) -> Complex64;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    /// |x|^2
    fn abs2(self) -> f64;
    fn abs(self) -> f64 {
        self.abs2().sqrt()
    }
    fn scale(self, s: f64) -> Self;
    fn is_finite(self) -> bool;
    fn sample_uniform<R: Rng>(rng: &mut R) -> Self;

    /// c = a * b
    fn matmul(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self>;
    /// c = a^H * b
    fn matmul_adj_lhs(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self>;
    /// Thin QR: a (m x n) -> (q (m x k), r (k x n)), k = min(m, n).
    fn qr_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array2<Self>);
    /// Thin SVD: a (m x n) -> (u (m x k), s (k), vh (k x n)).
    fn svd_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array1<f64>, Array2<Self>);
    /// Solve a x = b for Hermitian positive definite a; falls back to a
    /// symmetric indefinite factorization when Cholesky fails.
    fn solve_hermitian(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self>;
    /// Eigenvalues of a Hermitian matrix, ascending.
    fn eigh_values(a: ArrayView2<Self>) -> Vec<f64>;
}

fn nd_to_faer<S: Scalar>(a: ArrayView2<S>) -> Mat<Complex64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]].into_complex())
}

fn faer_to_nd_c(m: MatRef<'_, Complex64>) -> Array2<Complex64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn faer_to_nd_r(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

macro_rules! faer_real_impl {
    () => {
        fn matmul(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
            gemm_f64(a, b, false)
        }
        fn matmul_adj_lhs(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
            gemm_f64(a, b, true)
        }
    };
}

/// Sequential below this flop count: thread dispatch dwarfs small products.
fn par_for(m: usize, n: usize, k: usize) -> Par {
    if m * n * k >= (1 << 24) {
        Par::rayon(0)
    } else {
        Par::Seq
    }
}

fn gemm_f64(a: ArrayView2<f64>, b: ArrayView2<f64>, adj_lhs: bool) -> Array2<f64> {
    let (m, k) = if adj_lhs {
        (a.ncols(), a.nrows())
    } else {
        (a.nrows(), a.ncols())
    };
    let n = b.ncols();
    assert_eq!(k, b.nrows(), "gemm shape mismatch");
    let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
    let fb = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]);
    let mut c = Mat::<f64>::zeros(m, n);
    let par = par_for(m, n, k);
    if adj_lhs {
        matmul(c.as_mut(), Accum::Replace, fa.transpose(), fb.as_ref(), 1.0, par);
    } else {
        matmul(c.as_mut(), Accum::Replace, fa.as_ref(), fb.as_ref(), 1.0, par);
    }
    faer_to_nd_r(c.as_ref())
}

fn gemm_c64(a: ArrayView2<Complex64>, b: ArrayView2<Complex64>, adj_lhs: bool) -> Array2<Complex64> {
    let (m, k) = if adj_lhs {
        (a.ncols(), a.nrows())
    } else {
        (a.nrows(), a.ncols())
    };
    let n = b.ncols();
    assert_eq!(k, b.nrows(), "gemm shape mismatch");
    let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
    let fb = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]);
    let mut c = Mat::<Complex64>::zeros(m, n);
    let one = Complex64::new(1.0, 0.0);
    let par = par_for(m, n, k);
    if adj_lhs {
        matmul(c.as_mut(), Accum::Replace, fa.adjoint(), fb.as_ref(), one, par);
    } else {
        matmul(c.as_mut(), Accum::Replace, fa.as_ref(), fb.as_ref(), one, par);
    }
    faer_to_nd_c(c.as_ref())
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const IS_COMPLEX: bool = false;

    fn from_re(x: f64) -> Self {
        x
    }
    fn from_complex(z: Complex64) -> Self {
        z.re
    }
    fn into_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn sample_uniform<R: Rng>(rng: &mut R) -> Self {
        rng.random::<f64>() * 2.0 - 1.0
    }

    faer_real_impl!();

    fn qr_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array2<Self>) {
        let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        let qr = fa.qr();
        (faer_to_nd_r(qr.compute_thin_Q().as_ref()), faer_to_nd_r(qr.thin_R().as_ref()))
    }

    fn svd_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array1<f64>, Array2<Self>) {
        let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        let svd = fa.thin_svd().expect("svd failed to converge");
        let s = Array1::from_iter(svd.S().column_vector().iter().map(|x| *x));
        let u = faer_to_nd_r(svd.U().as_ref());
        let vh = faer_to_nd_r(svd.V().transpose());
        (u, s, vh)
    }

    fn solve_hermitian(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
        let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        let fb = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]);
        match fa.llt(Side::Lower) {
            Ok(llt) => faer_to_nd_r(llt.solve(&fb).as_ref()),
            Err(_) => {
                let lblt = fa.lblt(Side::Lower);
                let mut x = fb.clone();
                lblt.solve_in_place_with_conj(faer::Conj::No, x.as_mut());
                faer_to_nd_r(x.as_ref())
            }
        }
    }

    fn eigh_values(a: ArrayView2<Self>) -> Vec<f64> {
        let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        fa.self_adjoint_eigenvalues(Side::Lower).expect("eigh failed")
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);
    const IS_COMPLEX: bool = true;

    fn from_re(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn from_complex(z: Complex64) -> Self {
        z
    }
    fn into_complex(self) -> Complex64 {
        self
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn abs2(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
    fn scale(self, s: f64) -> Self {
        Complex64::new(self.re * s, self.im * s)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn sample_uniform<R: Rng>(rng: &mut R) -> Self {
        Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
    }

    fn matmul(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
        gemm_c64(a, b, false)
    }
    fn matmul_adj_lhs(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
        gemm_c64(a, b, true)
    }

    fn qr_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array2<Self>) {
        let fa = nd_to_faer(a);
        let qr = fa.qr();
        (faer_to_nd_c(qr.compute_thin_Q().as_ref()), faer_to_nd_c(qr.thin_R().as_ref()))
    }

    fn svd_thin(a: ArrayView2<Self>) -> (Array2<Self>, Array1<f64>, Array2<Self>) {
        let fa = nd_to_faer(a);
        let svd = fa.thin_svd().expect("svd failed to converge");
        let s = Array1::from_iter(svd.S().column_vector().iter().map(|x| x.re));
        let u = faer_to_nd_c(svd.U().as_ref());
        let vh = faer_to_nd_c(svd.V().adjoint().to_owned().as_ref());
        (u, s, vh)
    }

    fn solve_hermitian(a: ArrayView2<Self>, b: ArrayView2<Self>) -> Array2<Self> {
        let fa = nd_to_faer(a);
        let fb = nd_to_faer(b);
        match fa.llt(Side::Lower) {
            Ok(llt) => faer_to_nd_c(llt.solve(&fb).as_ref()),
            Err(_) => {
                let lblt = fa.lblt(Side::Lower);
                let mut x = fb.clone();
                lblt.solve_in_place_with_conj(faer::Conj::No, x.as_mut());
                faer_to_nd_c(x.as_ref())
            }
        }
    }

    fn eigh_values(a: ArrayView2<Self>) -> Vec<f64> {
        let fa = nd_to_faer(a);
        fa.self_adjoint_eigenvalues(Side::Lower).expect("eigh failed")
    }
}

/// Hermitian extreme eigenvalues (min, max) via Lanczos with full
/// reorthogonalization, given only the matrix action. Used for local ALS
/// systems too large for a dense factorization. Stops early once both Ritz
/// ends stabilize; the estimates approach the extremes from inside.
pub fn lanczos_extremes<S: Scalar>(
    dim: usize,
    mut apply: impl FnMut(&[S]) -> Vec<S>,
    iters: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = iters.min(dim);
    let mut basis: Vec<Vec<S>> = Vec::with_capacity(m);
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);

    let mut v: Vec<S> = (0..dim).map(|_| S::sample_uniform(&mut rng)).collect();
    let nrm = v.iter().map(|x| x.abs2()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x = x.scale(1.0 / nrm));

    let mut prev = (f64::INFINITY, f64::NEG_INFINITY);
    let mut stable = 0usize;
    for it in 0..m {
        let mut w = apply(&v);
        let alpha: S = v.iter().zip(&w).map(|(a, b)| a.conj() * *b).sum();
        alphas.push(alpha.re());
        // full reorthogonalization for numerical robustness
        basis.push(v.clone());
        for q in &basis {
            let c: S = q.iter().zip(&w).map(|(a, b)| a.conj() * *b).sum();
            w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * *qi);
        }
        let beta = w.iter().map(|x| x.abs2()).sum::<f64>().sqrt();
        if beta < 1e-14 {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x = x.scale(1.0 / beta));
        v = w;
        if it >= 6 && it % 2 == 1 {
            let (lo, hi) = tridiag_extremes(&alphas, &betas[..alphas.len() - 1]);
            let dl = (lo - prev.0).abs() / lo.abs().max(1e-300);
            let dh = (hi - prev.1).abs() / hi.abs().max(1e-300);
            prev = (lo, hi);
            if dl < 1e-7 && dh < 1e-7 {
                stable += 1;
                if stable >= 2 {
                    break;
                }
            } else {
                stable = 0;
            }
        }
    }
    let k = alphas.len();
    tridiag_extremes(&alphas, &betas[..k - 1])
}

fn tridiag_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    let mut t = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        t[[i, i]] = alphas[i];
        if i + 1 < k {
            t[[i, i + 1]] = betas[i];
            t[[i + 1, i]] = betas[i];
        }
    }
    let ev = f64::eigh_values(t.view());
    (ev[0], ev[k - 1])
}

/// Extreme eigenvalues of an assembled Hermitian matrix: the exact full
/// decomposition up to a moderate dimension (cheaper and exact where Lanczos
/// struggles with clustered bottom spectra), Lanczos over an allocation-free
/// matvec beyond it.
pub fn dense_matrix_extremes<S: Scalar>(b: &Array2<S>, seed: u64) -> (f64, f64) {
    let n = b.nrows();
    if n <= 1200 {
        let ev = S::eigh_values(b.view());
        return (ev[0], ev[n - 1]);
    }
    let data = b.as_standard_layout();
    let slice = data.as_slice().expect("standard layout");
    lanczos_extremes(
        n,
        |v: &[S]| {
            let mut out = vec![S::ZERO; n];
            for (i, row) in slice.chunks_exact(n).enumerate() {
                let mut acc = S::ZERO;
                for (aij, vj) in row.iter().zip(v) {
                    acc += *aij * *vj;
                }
                out[i] = acc;
            }
            out
        },
        256.min(n),
        seed,
    )
}
