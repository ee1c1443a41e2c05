//! Tensor trains (MPS) and matrix product operators (MPO): construction,
//! evaluation, arithmetic, rounding and norms.
//!
//! A train stores cores of shape (r_{l-1}, n_l, r_l) with boundary ranks 1,
//! encoding a prod(n_l)-entry tensor as a chained matrix product. Rounding is
//! TT-SVD: left-orthogonalization followed by a right-to-left truncation
//! sweep with the tolerance split evenly across bonds.

use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TtError {
    #[error("rank chain mismatch at bond {0}: {1} vs {2}")]
    RankChain(usize, usize, usize),
    #[error("boundary ranks must be 1, got ({0}, {1})")]
    Boundary(usize, usize),
    #[error("site dimension mismatch: {0:?} vs {1:?}")]
    SiteDims(Vec<usize>, Vec<usize>),
    #[error("empty train")]
    Empty,
    #[error("dense size {0} exceeds cap {1}")]
    DenseTooLarge(u128, usize),
    #[error("invalid rank chain: {0}")]
    InvalidRanks(String),
    #[error("{0}")]
    Other(String),
}

/// Report of the weight discarded by a rounding pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct TruncInfo {
    /// l2 norm of the discarded singular values (absolute).
    pub discarded_abs: f64,
    /// l2 norm of the input train.
    pub input_norm: f64,
    /// true if some bond hit the hard rank cap.
    pub rank_capped: bool,
}

impl TruncInfo {
    pub fn discarded_rel(&self) -> f64 {
        if self.input_norm == 0.0 {
            0.0
        } else {
            self.discarded_abs / self.input_norm
        }
    }
}

fn mat_left<S: Scalar>(core: &Array3<S>) -> Array2<S> {
    let (r0, n, r1) = core.dim();
    core.as_standard_layout()
        .into_owned()
        .into_shape_with_order((r0 * n, r1))
        .unwrap()
}

fn mat_right<S: Scalar>(core: &Array3<S>) -> Array2<S> {
    let (r0, n, r1) = core.dim();
    core.as_standard_layout()
        .into_owned()
        .into_shape_with_order((r0, n * r1))
        .unwrap()
}

/// Conjugate transpose in guaranteed standard layout.
fn adj2<S: Scalar>(m: &Array2<S>) -> Array2<S> {
    Array2::from_shape_fn((m.ncols(), m.nrows()), |(i, j)| m[[j, i]].conj())
}

fn unmat_left<S: Scalar>(m: Array2<S>, r0: usize, n: usize) -> Array3<S> {
    let r1 = m.ncols();
    m.into_shape_with_order((r0, n, r1)).unwrap()
}

fn unmat_right<S: Scalar>(m: Array2<S>, n: usize, r1: usize) -> Array3<S> {
    let r0 = m.nrows();
    m.into_shape_with_order((r0, n, r1)).unwrap()
}

/// Number of kept singular values for truncation budget `delta` (absolute l2)
/// under a hard `max_rank` cap. Returns (k, discarded_sq, capped).
fn trunc_rank(s: &Array1<f64>, delta: f64, max_rank: usize) -> (usize, f64, bool) {
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut keep = s.len();
    let mut tail = 0.0;
    while keep > 1 {
        let cand = tail + s[keep - 1] * s[keep - 1];
        if cand.sqrt() > delta {
            break;
        }
        tail = cand;
        keep -= 1;
    }
    let mut capped = false;
    if keep > max_rank {
        capped = true;
        for i in max_rank..keep {
            tail += s[i] * s[i];
        }
        keep = max_rank;
    }
    let _ = total;
    (keep.max(1), tail, capped)
}

/// Tensor train over scalar type `S`.
#[derive(Clone, Debug)]
pub struct TensorTrain<S: Scalar> {
    cores: Vec<Array3<S>>,
    /// Site index of the orthogonality center, if the train is in
    /// mixed-canonical form.
    ortho_center: Option<usize>,
}

impl<S: Scalar> TensorTrain<S> {
    pub fn new(cores: Vec<Array3<S>>) -> Result<Self, TtError> {
        if cores.is_empty() {
            return Err(TtError::Empty);
        }
        let k = cores.len();
        if cores[0].dim().0 != 1 || cores[k - 1].dim().2 != 1 {
            return Err(TtError::Boundary(cores[0].dim().0, cores[k - 1].dim().2));
        }
        for i in 0..k - 1 {
            if cores[i].dim().2 != cores[i + 1].dim().0 {
                return Err(TtError::RankChain(i, cores[i].dim().2, cores[i + 1].dim().0));
            }
        }
        Ok(Self { cores, ortho_center: None })
    }

    pub fn cores(&self) -> &[Array3<S>] {
        &self.cores
    }

    pub fn core(&self, i: usize) -> &Array3<S> {
        &self.cores[i]
    }

    pub fn set_core(&mut self, i: usize, core: Array3<S>) {
        self.cores[i] = core;
        self.ortho_center = None;
    }

    /// Declare the orthogonality center. The caller asserts that every core
    /// left of `center` is left-orthogonal and every core right of it is
    /// right-orthogonal (as maintained by sweep algorithms).
    pub fn set_center_hint(&mut self, center: usize) {
        debug_assert!(center < self.cores.len());
        self.ortho_center = Some(center);
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn site_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().1).collect()
    }

    /// Bond ranks r_0..r_K (length len()+1, boundary entries 1).
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.dim().0).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.ortho_center
    }

    /// Constant-1 train.
    pub fn ones(dims: &[usize]) -> Self {
        let cores = dims
            .iter()
            .map(|&n| Array3::from_elem((1, n, 1), S::ONE))
            .collect();
        Self { cores, ortho_center: None }
    }

    pub fn constant(dims: &[usize], value: S) -> Self {
        let mut t = Self::ones(dims);
        t.cores[0].mapv_inplace(|x| x * value);
        t
    }

    /// Unit vector at a single multi-index.
    pub fn delta(dims: &[usize], index: &[usize], value: S) -> Self {
        assert_eq!(dims.len(), index.len());
        let cores = dims
            .iter()
            .zip(index)
            .enumerate()
            .map(|(s, (&n, &i))| {
                let mut c = Array3::from_elem((1, n, 1), S::ZERO);
                c[[0, i, 0]] = if s == 0 { value } else { S::ONE };
                c
            })
            .collect();
        Self { cores, ortho_center: None }
    }

    /// Largest representable rank at each interior bond.
    pub fn bond_caps(dims: &[usize]) -> Vec<usize> {
        let k = dims.len();
        let mut caps = Vec::with_capacity(k.saturating_sub(1));
        let cap_of = |prod: u128| prod.min(1 << 62) as usize;
        for b in 1..k {
            let left: u128 = dims[..b].iter().map(|&d| d as u128).product();
            let right: u128 = dims[b..].iter().map(|&d| d as u128).product();
            caps.push(cap_of(left).min(cap_of(right)));
        }
        caps
    }

    /// Deterministic random train with requested interior ranks (clipped to
    /// the representable maximum), normalized to unit l2 norm.
    pub fn random(dims: &[usize], ranks: &[usize], seed: u64) -> Result<Self, TtError> {
        let k = dims.len();
        if k == 0 {
            return Err(TtError::Empty);
        }
        if ranks.len() != k.saturating_sub(1) {
            return Err(TtError::InvalidRanks(format!(
                "expected {} interior ranks, got {}",
                k - 1,
                ranks.len()
            )));
        }
        let caps = Self::bond_caps(dims);
        let r: Vec<usize> = ranks
            .iter()
            .zip(&caps)
            .map(|(&want, &cap)| want.clamp(1, cap))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cores = Vec::with_capacity(k);
        for s in 0..k {
            let r0 = if s == 0 { 1 } else { r[s - 1] };
            let r1 = if s == k - 1 { 1 } else { r[s] };
            let mut c = Array3::from_elem((r0, dims[s], r1), S::ZERO);
            for x in c.iter_mut() {
                *x = S::sample_uniform(&mut rng);
            }
            cores.push(c);
        }
        let mut t = Self { cores, ortho_center: None };
        let n = t.norm2();
        if n > 0.0 {
            t.scale_inplace(S::from_re(1.0 / n));
        }
        Ok(t)
    }

    /// Evaluate at one multi-index by chaining core slices.
    pub fn eval_bits(&self, idx: &[usize]) -> S {
        debug_assert_eq!(idx.len(), self.cores.len());
        let mut v: Vec<S> = {
            let c = &self.cores[0];
            (0..c.dim().2).map(|b| c[[0, idx[0], b]]).collect()
        };
        for (s, core) in self.cores.iter().enumerate().skip(1) {
            let (r0, _, r1) = core.dim();
            let mut next = vec![S::ZERO; r1];
            for a in 0..r0 {
                let va = v[a];
                if va == S::ZERO {
                    continue;
                }
                for (b, slot) in next.iter_mut().enumerate() {
                    *slot += va * core[[a, idx[s], b]];
                }
            }
            v = next;
        }
        v[0]
    }

    /// Full reconstruction, site 0 slowest. Guarded by an entry cap.
    pub fn to_dense(&self) -> Result<Array1<S>, TtError> {
        let total: u128 = self.site_dims().iter().map(|&d| d as u128).product();
        const CAP: usize = 1 << 22;
        if total > CAP as u128 {
            return Err(TtError::DenseTooLarge(total, CAP));
        }
        let first = &self.cores[0];
        let mut acc: Array2<S> = mat_right(first)
            .into_shape_with_order((first.dim().1, first.dim().2))
            .unwrap();
        for core in self.cores.iter().skip(1) {
            let (_, n, r1) = core.dim();
            let m = mat_right(core);
            let prod = S::matmul(acc.view(), m.view());
            let rows = prod.nrows() * n;
            acc = prod.into_shape_with_order((rows, r1)).unwrap();
        }
        Ok(acc.into_shape_with_order(total as usize).unwrap().into_dimensionality().unwrap())
    }

    /// TT-SVD of a dense tensor (site 0 slowest).
    pub fn from_dense(
        values: &Array1<S>,
        dims: &[usize],
        tol: f64,
        max_rank: usize,
    ) -> Result<(Self, TruncInfo), TtError> {
        let total: usize = dims.iter().product();
        if values.len() != total {
            return Err(TtError::Other(format!(
                "dense length {} does not match dims {:?}",
                values.len(),
                dims
            )));
        }
        let norm = values.iter().map(|x| x.abs2()).sum::<f64>().sqrt();
        let k = dims.len();
        let nb = (k.saturating_sub(1)).max(1) as f64;
        let delta = tol * norm / nb.sqrt();
        let mut info = TruncInfo { input_norm: norm, ..Default::default() };
        let mut cores = Vec::with_capacity(k);
        let mut rest = values.clone().into_shape_with_order((1, total)).unwrap();
        let mut r0 = 1usize;
        for (s, &n) in dims.iter().enumerate().take(k - 1) {
            let cols = rest.len() / (r0 * n);
            let m = rest.into_shape_with_order((r0 * n, cols)).unwrap();
            let (u, sv, vh) = S::svd_thin(m.view());
            let (keep, disc, capped) = trunc_rank(&sv, delta, max_rank);
            info.discarded_abs = (info.discarded_abs.powi(2) + disc).sqrt();
            info.rank_capped |= capped;
            let ucut = u.slice(ndarray::s![.., ..keep]).to_owned();
            cores.push(unmat_left(ucut, r0, n));
            let mut sv_vh = vh.slice(ndarray::s![..keep, ..]).to_owned();
            for (i, svi) in sv.iter().take(keep).enumerate() {
                sv_vh.row_mut(i).mapv_inplace(|x| x.scale(*svi));
            }
            r0 = keep;
            rest = sv_vh;
            let _ = s;
        }
        let n_last = dims[k - 1];
        cores.push(rest.into_shape_with_order((r0, n_last, 1)).unwrap());
        Ok((Self { cores, ortho_center: Some(k - 1) }, info))
    }

    pub fn scale_inplace(&mut self, value: S) {
        self.cores[0].mapv_inplace(|x| x * value);
    }

    pub fn scaled(&self, value: S) -> Self {
        let mut t = self.clone();
        t.scale_inplace(value);
        t
    }

    pub fn conj(&self) -> Self {
        let cores = self.cores.iter().map(|c| c.mapv(|x| x.conj())).collect();
        Self { cores, ortho_center: self.ortho_center }
    }

    /// Entrywise sum; ranks add.
    pub fn add(&self, other: &Self) -> Result<Self, TtError> {
        if self.site_dims() != other.site_dims() {
            return Err(TtError::SiteDims(self.site_dims(), other.site_dims()));
        }
        let k = self.len();
        if k == 1 {
            let c = &self.cores[0] + &other.cores[0];
            return Ok(Self { cores: vec![c], ortho_center: None });
        }
        let mut cores = Vec::with_capacity(k);
        for s in 0..k {
            let a = &self.cores[s];
            let b = &other.cores[s];
            let (a0, n, a1) = a.dim();
            let (b0, _, b1) = b.dim();
            let core = if s == 0 {
                let mut c = Array3::from_elem((1, n, a1 + b1), S::ZERO);
                c.slice_mut(ndarray::s![.., .., ..a1]).assign(a);
                c.slice_mut(ndarray::s![.., .., a1..]).assign(b);
                c
            } else if s == k - 1 {
                let mut c = Array3::from_elem((a0 + b0, n, 1), S::ZERO);
                c.slice_mut(ndarray::s![..a0, .., ..]).assign(a);
                c.slice_mut(ndarray::s![a0.., .., ..]).assign(b);
                c
            } else {
                let mut c = Array3::from_elem((a0 + b0, n, a1 + b1), S::ZERO);
                c.slice_mut(ndarray::s![..a0, .., ..a1]).assign(a);
                c.slice_mut(ndarray::s![a0.., .., a1..]).assign(b);
                c
            };
            cores.push(core);
        }
        Ok(Self { cores, ortho_center: None })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TtError> {
        self.add(&other.scaled(-S::ONE))
    }

    /// Entrywise product; ranks multiply.
    pub fn hadamard(&self, other: &Self) -> Result<Self, TtError> {
        if self.site_dims() != other.site_dims() {
            return Err(TtError::SiteDims(self.site_dims(), other.site_dims()));
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
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
            })
            .collect();
        Ok(Self { cores, ortho_center: None })
    }

    /// Hermitian inner product, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> Result<S, TtError> {
        if self.site_dims() != other.site_dims() {
            return Err(TtError::SiteDims(self.site_dims(), other.site_dims()));
        }
        // env[alpha, beta] contracts conj(self) against other from the left
        let mut env = Array2::from_elem((1, 1), S::ONE);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let (_, n, b1) = b.dim();
            let bm = mat_right(b);
            let t = S::matmul(env.view(), bm.view()); // (a0, n*b1)
            let a0 = a.dim().0;
            let t3 = t.into_shape_with_order((a0, n, b1)).unwrap();
            let tm = t3.to_shape((a0 * n, b1)).unwrap().to_owned();
            let am = mat_left(a);
            env = S::matmul_adj_lhs(am.view(), tm.view()); // (a1, b1)
        }
        Ok(env[[0, 0]])
    }

    pub fn norm2(&self) -> f64 {
        // mixed-canonical trains expose the norm at the center core
        if let Some(c) = self.ortho_center {
            return self.cores[c].iter().map(|x| x.abs2()).sum::<f64>().sqrt();
        }
        let ip = self.inner(self).expect("self inner");
        ip.re().max(0.0).sqrt()
    }

    /// Left-orthogonalize cores [0, center) and right-orthogonalize (center, K).
    pub fn canonicalize(&mut self, center: usize) {
        let k = self.len();
        assert!(center < k);
        for s in 0..center {
            let (r0, n, _) = self.cores[s].dim();
            let (q, r) = S::qr_thin(mat_left(&self.cores[s]).view());
            self.cores[s] = unmat_left(q, r0, n);
            let next = mat_right(&self.cores[s + 1]);
            let (_, n1, r1) = self.cores[s + 1].dim();
            self.cores[s + 1] = unmat_right(S::matmul(r.view(), next.view()), n1, r1);
        }
        for s in (center + 1..k).rev() {
            let (_, n, r1) = self.cores[s].dim();
            // QR of the transposed right unfolding gives the right-orthogonal factor
            let m = mat_right(&self.cores[s]);
            let mt = adj2(&m);
            let (q, r) = S::qr_thin(mt.view());
            let qt = adj2(&q);
            self.cores[s] = unmat_right(qt, n, r1);
            let prev = mat_left(&self.cores[s - 1]);
            let rt = adj2(&r);
            let (r0, n0, _) = self.cores[s - 1].dim();
            self.cores[s - 1] = unmat_left(S::matmul(prev.view(), rt.view()), r0, n0);
        }
        self.ortho_center = Some(center);
    }

    /// TT-SVD rounding at relative tolerance `tol` with hard rank cap.
    /// The result is in canonical form with the center at site 0.
    pub fn round(&self, tol: f64, max_rank: usize) -> (Self, TruncInfo) {
        let mut t = self.clone();
        let k = t.len();
        if k == 1 {
            let norm = t.norm2();
            t.ortho_center = Some(0);
            return (t, TruncInfo { input_norm: norm, ..Default::default() });
        }
        // left-orthogonalize fully
        t.canonicalize(k - 1);
        let norm = t.norm2();
        let delta = tol * norm / ((k - 1) as f64).sqrt();
        let mut info = TruncInfo { input_norm: norm, ..Default::default() };
        for s in (1..k).rev() {
            let (_, n, r1) = t.cores[s].dim();
            let m = mat_right(&t.cores[s]);
            let (u, sv, vh) = S::svd_thin(m.view());
            let (keep, disc, capped) = trunc_rank(&sv, delta, max_rank);
            info.discarded_abs = (info.discarded_abs.powi(2) + disc).sqrt();
            info.rank_capped |= capped;
            t.cores[s] = unmat_right(vh.slice(ndarray::s![..keep, ..]).to_owned(), n, r1);
            let mut us = u.slice(ndarray::s![.., ..keep]).to_owned();
            for (j, svj) in sv.iter().take(keep).enumerate() {
                us.column_mut(j).mapv_inplace(|x| x.scale(*svj));
            }
            let prev = mat_left(&t.cores[s - 1]);
            let (p0, pn, _) = t.cores[s - 1].dim();
            t.cores[s - 1] = unmat_left(S::matmul(prev.view(), us.view()), p0, pn);
        }
        t.ortho_center = Some(0);
        (t, info)
    }

    /// l2 distance to another train, computed through canonicalization of
    /// the stacked difference. Unlike `sub(..).norm2()` via inner products
    /// this stays accurate below the sqrt(machine-eps) cancellation floor.
    pub fn distance(&self, other: &Self) -> Result<f64, TtError> {
        let mut diff = self.sub(other)?;
        diff.canonicalize(diff.len() - 1);
        Ok(diff.norm2())
    }

    /// Max deviation from the orthogonality identity at every site != center.
    pub fn ortho_defect(&self) -> f64 {
        let Some(center) = self.ortho_center else {
            return f64::INFINITY;
        };
        let mut worst: f64 = 0.0;
        for (s, core) in self.cores.iter().enumerate() {
            if s == center {
                continue;
            }
            let g = if s < center {
                let m = mat_left(core);
                S::matmul_adj_lhs(m.view(), m.view())
            } else {
                let m = mat_right(core);
                let mt = m.t().mapv(|x| x.conj());
                S::matmul_adj_lhs(mt.view(), mt.view())
            };
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let expect = if i == j { S::ONE } else { S::ZERO };
                    worst = worst.max((g[[i, j]] - expect).abs());
                }
            }
        }
        worst
    }
}

impl TensorTrain<f64> {
    pub fn to_complex(&self) -> TensorTrain<num_complex::Complex64> {
        let cores = self
            .cores
            .iter()
            .map(|c| c.mapv(|x| num_complex::Complex64::new(x, 0.0)))
            .collect();
        TensorTrain { cores, ortho_center: self.ortho_center }
    }
}

impl TensorTrain<num_complex::Complex64> {
    /// Real part as a train: (x + conj(x)) / 2, rounded at `tol`. Also
    /// returns the l2 norm of the dropped imaginary part, measured through
    /// canonicalization so it stays accurate near zero.
    pub fn real_part(&self, tol: f64) -> (TensorTrain<num_complex::Complex64>, f64) {
        let sym = self.add(&self.conj()).unwrap().scaled(num_complex::Complex64::new(0.5, 0.0));
        let mut anti = self.sub(&self.conj()).unwrap().scaled(num_complex::Complex64::new(0.5, 0.0));
        anti.canonicalize(anti.len() - 1);
        let imag_norm = anti.norm2();
        let (r, _) = sym.round(tol, usize::MAX);
        (r, imag_norm)
    }
}

/// Matrix product operator with cores (r_{l-1}, n_l, n'_l, r_l); `n` indexes
/// rows (output) and `n'` columns (input).
#[derive(Clone, Debug)]
pub struct Mpo<S: Scalar> {
    cores: Vec<Array4<S>>,
}

impl<S: Scalar> Mpo<S> {
    pub fn new(cores: Vec<Array4<S>>) -> Result<Self, TtError> {
        if cores.is_empty() {
            return Err(TtError::Empty);
        }
        let k = cores.len();
        if cores[0].dim().0 != 1 || cores[k - 1].dim().3 != 1 {
            return Err(TtError::Boundary(cores[0].dim().0, cores[k - 1].dim().3));
        }
        for i in 0..k - 1 {
            if cores[i].dim().3 != cores[i + 1].dim().0 {
                return Err(TtError::RankChain(i, cores[i].dim().3, cores[i + 1].dim().0));
            }
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[Array4<S>] {
        &self.cores
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn row_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().1).collect()
    }

    pub fn col_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().2).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.dim().0).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn identity(dims: &[usize]) -> Self {
        let cores = dims
            .iter()
            .map(|&n| {
                let mut c = Array4::from_elem((1, n, n, 1), S::ZERO);
                for i in 0..n {
                    c[[0, i, i, 0]] = S::ONE;
                }
                c
            })
            .collect();
        Self { cores }
    }

    pub fn scaled(&self, value: S) -> Self {
        let mut m = self.clone();
        m.cores[0].mapv_inplace(|x| x * value);
        m
    }

    /// Operator adjoint: swap row/col indices and conjugate.
    pub fn adjoint(&self) -> Self {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let v = c.view().permuted_axes([0, 2, 1, 3]);
                v.to_owned().mapv(|x| x.conj())
            })
            .collect();
        Self { cores }
    }

    /// Apply to a train; output ranks are products of input ranks.
    pub fn apply(&self, x: &TensorTrain<S>) -> Result<TensorTrain<S>, TtError> {
        if self.col_dims() != x.site_dims() {
            return Err(TtError::SiteDims(self.col_dims(), x.site_dims()));
        }
        let mut cores = Vec::with_capacity(self.len());
        for (w, c) in self.cores.iter().zip(x.cores()) {
            let (a0, n, np, a1) = w.dim();
            let (l0, _, l1) = c.dim();
            // y[(a0 l0), n, (a1 l1)] = sum_np w[a0,n,np,a1] x[l0,np,l1]
            let wm = w
                .view()
                .permuted_axes([0, 1, 3, 2])
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((a0 * n * a1, np))
                .unwrap();
            let xm = c
                .view()
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((np, l0 * l1))
                .unwrap();
            let prod = S::matmul(wm.view(), xm.view()); // (a0 n a1, l0 l1)
            let t5 = prod.into_shape_with_order((a0, n, a1, l0, l1)).unwrap();
            let y = t5
                .permuted_axes([0, 3, 1, 2, 4])
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((a0 * l0, n, a1 * l1))
                .unwrap();
            cores.push(y);
        }
        TensorTrain::new(cores)
    }

    /// Apply with interleaved truncation (zip-up sweep): the product is
    /// truncated site by site at relative tolerance `tol`, which avoids ever
    /// materializing the full product ranks. A final exact rounding pass at
    /// `tol` leaves the result canonical. Quasi-optimal rather than optimal,
    /// but orders of magnitude cheaper when both ranks are large.
    pub fn apply_zipup(&self, x: &TensorTrain<S>, tol: f64, max_rank: usize) -> Result<TensorTrain<S>, TtError> {
        if self.col_dims() != x.site_dims() {
            return Err(TtError::SiteDims(self.col_dims(), x.site_dims()));
        }
        let k = self.len();
        let local_tol = tol / (2.0 * (k as f64).sqrt());
        // carry[t, (a_w a_x)] starts as the trivial boundary
        let mut carry = Array2::from_elem((1, 1), S::ONE);
        let mut cores: Vec<Array3<S>> = Vec::with_capacity(k);
        for s in 0..k {
            let w = &self.cores[s];
            let xc = x.core(s);
            let (aw, n, m, bw) = w.dim();
            let (ax, _, bx) = xc.dim();
            let tprev = carry.nrows();
            // carry[t, (aw ax)] * x[ax, m, bx] -> t1[(t aw), (m bx)]
            let c2 = carry.into_shape_with_order((tprev * aw, ax)).unwrap();
            let x2 = xc
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((ax, m * bx))
                .unwrap();
            let t1 = S::matmul(c2.view(), x2.view()); // (t aw, m bx)
            // t1 * w[aw, n, m, bw] over (aw, m) -> t2[(t bx), (n bw)]
            let t1 = t1.into_shape_with_order((tprev, aw, m, bx)).unwrap();
            let t1p = t1
                .permuted_axes([0, 3, 1, 2])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((tprev * bx, aw * m))
                .unwrap();
            let w2 = w
                .view()
                .permuted_axes([0, 2, 1, 3])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((aw * m, n * bw))
                .unwrap();
            let t2raw = S::matmul(t1p.view(), w2.view()); // (t bx, n bw)
            let t2raw = t2raw.into_shape_with_order((tprev, bx, n, bw)).unwrap();
            let bpair = bw * bx;
            let t2 = t2raw
                .permuted_axes([0, 2, 3, 1])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((tprev * n, bpair))
                .unwrap();
            if s == k - 1 {
                cores.push(t2.into_shape_with_order((tprev, n, bpair)).unwrap());
                break;
            }
            let (u, sv, vh) = S::svd_thin(t2.view());
            let frob: f64 = sv.iter().map(|v| v * v).sum::<f64>();
            let delta = local_tol * frob.sqrt();
            let (keep, _, _) = trunc_rank(&sv, delta, max_rank);
            cores.push(
                u.slice(ndarray::s![.., ..keep])
                    .to_owned()
                    .into_shape_with_order((tprev, n, keep))
                    .unwrap(),
            );
            let mut sv_vh = vh.slice(ndarray::s![..keep, ..]).to_owned();
            for (i, svi) in sv.iter().take(keep).enumerate() {
                sv_vh.row_mut(i).mapv_inplace(|v| v.scale(*svi));
            }
            carry = sv_vh;
        }
        let out = TensorTrain::new(cores)?;
        let (rounded, _) = out.round(tol, max_rank);
        Ok(rounded)
    }

    /// Operator sum; ranks add.
    pub fn add(&self, other: &Self) -> Result<Self, TtError> {
        let a = self.as_train();
        let b = other.as_train();
        let sum = a.add(&b)?;
        Ok(Self::from_train(&sum, &self.row_dims(), &self.col_dims()))
    }

    /// Operator product self * other (apply `other` first); ranks multiply.
    pub fn compose(&self, other: &Self) -> Result<Self, TtError> {
        if self.col_dims() != other.row_dims() {
            return Err(TtError::SiteDims(self.col_dims(), other.row_dims()));
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
                let (a0, n, m, a1) = a.dim();
                let (b0, _, p, b1) = b.dim();
                let mut c = Array4::from_elem((a0 * b0, n, p, a1 * b1), S::ZERO);
                for ia in 0..a0 {
                    for ib in 0..b0 {
                        for i in 0..n {
                            for j in 0..p {
                                for ja in 0..a1 {
                                    for jb in 0..b1 {
                                        let mut acc = S::ZERO;
                                        for t in 0..m {
                                            acc += a[[ia, i, t, ja]] * b[[ib, t, j, jb]];
                                        }
                                        c[[ia * b0 + ib, i, j, ja * b1 + jb]] = acc;
                                    }
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(Self { cores })
    }

    /// View as a train by merging (row, col) per site.
    pub fn as_train(&self) -> TensorTrain<S> {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let (r0, n, m, r1) = c.dim();
                c.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((r0, n * m, r1))
                    .unwrap()
            })
            .collect();
        TensorTrain { cores, ortho_center: None }
    }

    pub fn from_train(t: &TensorTrain<S>, row_dims: &[usize], col_dims: &[usize]) -> Self {
        let cores = t
            .cores()
            .iter()
            .enumerate()
            .map(|(s, c)| {
                let (r0, nm, r1) = c.dim();
                assert_eq!(nm, row_dims[s] * col_dims[s]);
                c.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((r0, row_dims[s], col_dims[s], r1))
                    .unwrap()
            })
            .collect();
        Self { cores }
    }

    /// TT-SVD rounding on the merged-index train.
    pub fn round(&self, tol: f64, max_rank: usize) -> (Self, TruncInfo) {
        let (t, info) = self.as_train().round(tol, max_rank);
        (Self::from_train(&t, &self.row_dims(), &self.col_dims()), info)
    }

    /// Dense matrix (row index from row bits, site 0 slowest). Guarded.
    pub fn to_dense_matrix(&self) -> Result<Array2<S>, TtError> {
        let rows: u128 = self.row_dims().iter().map(|&d| d as u128).product();
        let cols: u128 = self.col_dims().iter().map(|&d| d as u128).product();
        if rows * cols > (1 << 24) {
            return Err(TtError::DenseTooLarge(rows * cols, 1 << 24));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        // mat[(rows so far), (cols so far), bond], grown core by core
        let mut mat = ndarray::Array3::from_elem((1, 1, 1), S::ONE);
        for core in &self.cores {
            let (r0, n, m, r1) = core.dim();
            let (pr, pc, _) = mat.dim();
            let mut next = ndarray::Array3::from_elem((pr * n, pc * m, r1), S::ZERO);
            for i in 0..pr {
                for j in 0..pc {
                    for a in 0..r0 {
                        let v = mat[[i, j, a]];
                        if v == S::ZERO {
                            continue;
                        }
                        for x in 0..n {
                            for y in 0..m {
                                for b in 0..r1 {
                                    next[[i * n + x, j * m + y, b]] += v * core[[a, x, y, b]];
                                }
                            }
                        }
                    }
                }
            }
            mat = next;
        }
        Ok(mat.into_shape_with_order((rows, cols)).unwrap())
    }

    /// Lift a dense matrix into MPO form by TT-SVD (site 0 slowest for both
    /// row and column bit groups).
    pub fn from_dense_matrix(
        m: ArrayView2<S>,
        row_dims: &[usize],
        col_dims: &[usize],
        tol: f64,
    ) -> Result<Self, TtError> {
        assert_eq!(row_dims.len(), col_dims.len());
        let k = row_dims.len();
        let rows: usize = row_dims.iter().product();
        let cols: usize = col_dims.iter().product();
        assert_eq!((m.nrows(), m.ncols()), (rows, cols));
        // reorder entries to site-major interleaved (r1 c1 r2 c2 ...) ordering
        let total = rows * cols;
        let mut data = Array1::from_elem(total, S::ZERO);
        let mut strides_r = vec![1usize; k];
        let mut strides_c = vec![1usize; k];
        for s in (0..k.saturating_sub(1)).rev() {
            strides_r[s] = strides_r[s + 1] * row_dims[s + 1];
            strides_c[s] = strides_c[s + 1] * col_dims[s + 1];
        }
        for i in 0..rows {
            for j in 0..cols {
                let mut pos = 0usize;
                for s in 0..k {
                    let ri = (i / strides_r[s]) % row_dims[s];
                    let ci = (j / strides_c[s]) % col_dims[s];
                    pos = pos * (row_dims[s] * col_dims[s]) + ri * col_dims[s] + ci;
                }
                data[pos] = m[[i, j]];
            }
        }
        let merged: Vec<usize> = row_dims.iter().zip(col_dims).map(|(r, c)| r * c).collect();
        let (t, _) = TensorTrain::from_dense(&data, &merged, tol, usize::MAX)?;
        Ok(Self::from_train(&t, row_dims, col_dims))
    }
}
