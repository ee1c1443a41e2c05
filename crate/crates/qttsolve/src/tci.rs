//! Tensor cross interpolation: builds a train approximating a black-box
//! function of bitstring indices by sampling it on adaptively chosen crosses.
//!
//! Two-site sweeps: at each bond the function is sampled on the cross formed
//! by the neighboring pivot sets, and a rank-revealing complete-pivot LU of
//! that slice selects the new pivots (on these small dense slices a complete
//! search is the exhaustive limit of rook pivoting). Pivot sets stay nested
//! by construction. The returned train reproduces the function exactly on
//! every selected cross; global quality is estimated on a held-out random
//! sample and by `monte_carlo_error`.

use crate::scalar::Scalar;
use crate::tt::{TensorTrain, TtError};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TciError {
    #[error("function returned a non-finite value at {0:?}")]
    NonFinite(Vec<usize>),
    #[error("relative error undefined: all sampled function values are zero")]
    DegenerateSamples,
    #[error(transparent)]
    Tt(#[from] TtError),
}

#[derive(Clone, Debug)]
pub struct CrossConfig {
    /// Target relative error (validated on a random sample).
    pub tol: f64,
    /// Hard cap on every bond rank.
    pub max_rank: usize,
    /// Cap on full sweeps.
    pub max_sweeps: usize,
    /// Held-out validation sample size.
    pub n_error_samples: usize,
    /// Random global pivots seeding the first sweep.
    pub n_seed_pivots: usize,
    pub seed: u64,
}

impl Default for CrossConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_rank: 200,
            max_sweeps: 24,
            n_error_samples: 1000,
            n_seed_pivots: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrossReport {
    /// Validation-sample relative l2 error of the returned train.
    pub est_error: f64,
    /// Whether `est_error <= tol` was reached.
    pub converged: bool,
    /// Number of black-box evaluations.
    pub evals: usize,
    pub sweeps: usize,
    pub max_rank: usize,
}

struct Sampler<'a, S> {
    f: &'a dyn Fn(&[usize]) -> S,
    evals: usize,
    bad: Option<Vec<usize>>,
}

impl<'a, S: Scalar> Sampler<'a, S> {
    fn eval(&mut self, idx: &[usize]) -> S {
        self.evals += 1;
        let v = (self.f)(idx);
        if !v.is_finite() && self.bad.is_none() {
            self.bad = Some(idx.to_vec());
        }
        v
    }
}

/// Complete-pivot rank-revealing LU. Returns pivot (row, col) pairs kept,
/// stopping when the residual pivot drops below `rtol` times the first one
/// or `max_rank` is reached.
fn full_pivot_lu<S: Scalar>(a: &Array2<S>, rtol: f64, max_rank: usize) -> Vec<(usize, usize)> {
    let (m, n) = a.dim();
    let mut res = a.clone();
    let mut pivots = Vec::new();
    let mut first = 0.0f64;
    for _ in 0..max_rank.min(m.min(n)) {
        let mut best = 0.0;
        let mut bi = 0;
        let mut bj = 0;
        for i in 0..m {
            for j in 0..n {
                let v = res[[i, j]].abs2();
                if v > best {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        let best = best.sqrt();
        if pivots.is_empty() {
            first = best;
        }
        if best <= rtol * first || best == 0.0 {
            break;
        }
        pivots.push((bi, bj));
        let piv = res[[bi, bj]];
        let col: Vec<S> = (0..m).map(|i| res[[i, bj]]).collect();
        let row: Vec<S> = (0..n).map(|j| res[[bi, j]]).collect();
        for i in 0..m {
            let ci = col[i] / piv;
            if ci == S::ZERO {
                continue;
            }
            for j in 0..n {
                res[[i, j]] -= ci * row[j];
            }
        }
    }
    pivots
}

/// Monte-Carlo relative l2 error between a train and the function it should
/// represent. Sampling is uniform over the index set and deterministic per
/// seed; when `n_samples` covers the whole grid the sweep is exhaustive and
/// the result is the exact dense relative error.
pub fn monte_carlo_error<S: Scalar>(
    tt: &TensorTrain<S>,
    f: &dyn Fn(&[usize]) -> S,
    n_samples: usize,
    seed: u64,
) -> Result<f64, TciError> {
    let dims = tt.site_dims();
    let total: u128 = dims.iter().map(|&d| d as u128).product();
    let mut num = 0.0;
    let mut den = 0.0;
    if (n_samples as u128) >= total {
        let mut idx = vec![0usize; dims.len()];
        loop {
            let fv = f(&idx);
            if !fv.is_finite() {
                return Err(TciError::NonFinite(idx.clone()));
            }
            let tv = tt.eval_bits(&idx);
            num += (tv - fv).abs2();
            den += fv.abs2();
            // odometer increment
            let mut s = dims.len();
            loop {
                if s == 0 {
                    break;
                }
                s -= 1;
                idx[s] += 1;
                if idx[s] < dims[s] {
                    break;
                }
                idx[s] = 0;
                if s == 0 {
                    s = usize::MAX;
                    break;
                }
            }
            if s == usize::MAX {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_samples.max(1) {
            let idx: Vec<usize> = dims.iter().map(|&d| rng.random_range(0..d)).collect();
            let fv = f(&idx);
            if !fv.is_finite() {
                return Err(TciError::NonFinite(idx.clone()));
            }
            let tv = tt.eval_bits(&idx);
            num += (tv - fv).abs2();
            den += fv.abs2();
        }
    }
    if den == 0.0 {
        return Err(TciError::DegenerateSamples);
    }
    Ok((num / den).sqrt())
}

/// Build a train for `f` on the index set `dims` by cross interpolation.
pub fn build_from_function<S: Scalar>(
    f: &dyn Fn(&[usize]) -> S,
    dims: &[usize],
    cfg: &CrossConfig,
) -> Result<(TensorTrain<S>, CrossReport), TciError> {
    let k = dims.len();
    assert!(k >= 1);
    let mut sampler = Sampler { f, evals: 0, bad: None };
    if k == 1 {
        let vals: Vec<S> = (0..dims[0]).map(|x| sampler.eval(&[x])).collect();
        if let Some(bad) = sampler.bad {
            return Err(TciError::NonFinite(bad));
        }
        let mut c = Array3::from_elem((1, dims[0], 1), S::ZERO);
        for (x, v) in vals.iter().enumerate() {
            c[[0, x, 0]] = *v;
        }
        let tt = TensorTrain::new(vec![c])?;
        let report = CrossReport { est_error: 0.0, converged: true, evals: sampler.evals, sweeps: 0, max_rank: 1 };
        return Ok((tt, report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // seed pivots: random bitstrings plus the all-zero and all-max strings
    let mut seeds: Vec<Vec<usize>> = vec![
        vec![0; k],
        dims.iter().map(|&d| d - 1).collect(),
    ];
    for _ in 0..cfg.n_seed_pivots {
        seeds.push(dims.iter().map(|&d| rng.random_range(0..d)).collect());
    }
    // held-out validation sample
    let validation: Vec<Vec<usize>> = (0..cfg.n_error_samples)
        .map(|_| dims.iter().map(|&d| rng.random_range(0..d)).collect())
        .collect();

    // prefix pivots I[p] over sites 0..=p and suffix pivots J[p] over p+1..k
    let mut prefixes: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k - 1);
    let mut suffixes: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k - 1);
    for p in 0..k - 1 {
        let mut pre: Vec<Vec<usize>> = seeds.iter().map(|s| s[..=p].to_vec()).collect();
        let mut suf: Vec<Vec<usize>> = seeds.iter().map(|s| s[p + 1..].to_vec()).collect();
        pre.sort();
        pre.dedup();
        suf.sort();
        suf.dedup();
        prefixes.push(pre);
        suffixes.push(suf);
    }

    let lu_rtol = (cfg.tol * 0.1).max(1e-15);
    let mut prev_est = f64::INFINITY;
    let mut est = f64::INFINITY;
    let mut sweeps = 0usize;
    let mut converged = false;

    for sweep in 0..cfg.max_sweeps {
        sweeps = sweep + 1;
        for half in 0..2 {
            let bonds: Vec<usize> = if half == 0 {
                (0..k - 1).collect()
            } else {
                (0..k - 1).rev().collect()
            };
            for &p in &bonds {
                let left: Vec<Vec<usize>> = if p == 0 {
                    vec![vec![]]
                } else {
                    prefixes[p - 1].clone()
                };
                let right: Vec<Vec<usize>> = if p + 1 == k - 1 {
                    vec![vec![]]
                } else {
                    suffixes[p + 1].clone()
                };
                let n_a = dims[p];
                let n_b = dims[p + 1];
                let rows = left.len() * n_a;
                let cols = n_b * right.len();
                let mut pi = Array2::from_elem((rows, cols), S::ZERO);
                let mut idx = Vec::with_capacity(k);
                for (li, l) in left.iter().enumerate() {
                    for xa in 0..n_a {
                        for xb in 0..n_b {
                            for (ri, r) in right.iter().enumerate() {
                                idx.clear();
                                idx.extend_from_slice(l);
                                idx.push(xa);
                                idx.push(xb);
                                idx.extend_from_slice(r);
                                pi[[li * n_a + xa, xb * right.len() + ri]] = sampler.eval(&idx);
                            }
                        }
                    }
                }
                if let Some(bad) = sampler.bad.take() {
                    return Err(TciError::NonFinite(bad));
                }
                let piv = full_pivot_lu(&pi, lu_rtol, cfg.max_rank);
                if piv.is_empty() {
                    // keep a single pivot to preserve connectivity
                    prefixes[p] = vec![{
                        let mut v = left[0].clone();
                        v.push(0);
                        v
                    }];
                    suffixes[p] = vec![{
                        let mut v = vec![0];
                        v.extend_from_slice(&right[0]);
                        v
                    }];
                    continue;
                }
                let mut new_pre = Vec::with_capacity(piv.len());
                let mut new_suf = Vec::with_capacity(piv.len());
                for &(ri, ci) in &piv {
                    let li = ri / n_a;
                    let xa = ri % n_a;
                    let xb = ci / right.len();
                    let rj = ci % right.len();
                    let mut pre = left[li].clone();
                    pre.push(xa);
                    new_pre.push(pre);
                    let mut suf = vec![xb];
                    suf.extend_from_slice(&right[rj]);
                    new_suf.push(suf);
                }
                prefixes[p] = new_pre;
                suffixes[p] = new_suf;
            }
            // estimate on the validation sample after each half sweep
            let tt = assemble(&mut sampler, dims, &prefixes, &suffixes)?;
            prev_est = est;
            est = {
                let mut num = 0.0;
                let mut den = 0.0;
                for v in &validation {
                    let fv = sampler.eval(v);
                    let tv = tt.eval_bits(v);
                    num += (tv - fv).abs2();
                    den += fv.abs2();
                }
                if den == 0.0 {
                    0.0
                } else {
                    (num / den).sqrt()
                }
            };
            if est <= cfg.tol {
                converged = true;
                break;
            }
            let rel_change = (est - prev_est).abs() / est.max(1e-300);
            if rel_change < cfg.tol * 0.1 {
                break;
            }
        }
        if converged {
            break;
        }
        let rel_change = (est - prev_est).abs() / est.max(1e-300);
        if rel_change < 0.02 && sweep >= 2 {
            // stagnated: rank cap or intrinsic limit reached
            break;
        }
    }

    let tt = assemble(&mut sampler, dims, &prefixes, &suffixes)?;
    if let Some(bad) = sampler.bad.take() {
        return Err(TciError::NonFinite(bad));
    }
    let max_rank = tt.max_rank();
    let report = CrossReport { est_error: est, converged: est <= cfg.tol, evals: sampler.evals, sweeps, max_rank };
    Ok((tt, report))
}

/// Assemble the interpolation train T_s P_s^{-1} from the current pivots.
fn assemble<S: Scalar>(
    sampler: &mut Sampler<'_, S>,
    dims: &[usize],
    prefixes: &[Vec<Vec<usize>>],
    suffixes: &[Vec<Vec<usize>>],
) -> Result<TensorTrain<S>, TtError> {
    let k = dims.len();
    let mut cores = Vec::with_capacity(k);
    let mut idx = Vec::with_capacity(k);
    for s in 0..k {
        let left: Vec<Vec<usize>> = if s == 0 { vec![vec![]] } else { prefixes[s - 1].clone() };
        let right: Vec<Vec<usize>> = if s == k - 1 { vec![vec![]] } else { suffixes[s].clone() };
        let (r0, n, r1) = (left.len(), dims[s], right.len());
        let mut t = Array2::from_elem((r0 * n, r1), S::ZERO);
        for (li, l) in left.iter().enumerate() {
            for x in 0..n {
                for (ri, r) in right.iter().enumerate() {
                    idx.clear();
                    idx.extend_from_slice(l);
                    idx.push(x);
                    idx.extend_from_slice(r);
                    t[[li * n + x, ri]] = sampler.eval(&idx);
                }
            }
        }
        let core_mat = if s == k - 1 {
            t
        } else {
            // T_s P_s^{-1} with P the pivot cross matrix at bond s
            let pre = &prefixes[s];
            let suf = &suffixes[s];
            let rp = pre.len();
            debug_assert_eq!(rp, suf.len());
            debug_assert_eq!(rp, r1);
            let mut pmat = Array2::from_elem((rp, rp), S::ZERO);
            for (i, l) in pre.iter().enumerate() {
                for (j, r) in suf.iter().enumerate() {
                    idx.clear();
                    idx.extend_from_slice(l);
                    idx.extend_from_slice(r);
                    pmat[[i, j]] = sampler.eval(&idx);
                }
            }
            // solve X P = T  <=>  P^T X^T = T^T
            let pt = Array2::from_shape_fn((rp, rp), |(i, j)| pmat[[j, i]]);
            let tt_mat = Array2::from_shape_fn((r1, r0 * n), |(i, j)| t[[j, i]]);
            let xt = solve_square(&pt, &tt_mat);
            Array2::from_shape_fn((r0 * n, r1), |(i, j)| xt[[j, i]])
        };
        cores.push(core_mat.into_shape_with_order((r0, n, r1)).unwrap());
    }
    TensorTrain::new(cores)
}

/// Dense square solve through LU with partial pivoting.
fn solve_square<S: Scalar>(a: &Array2<S>, b: &Array2<S>) -> Array2<S> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut best = col;
        let mut bv = lu[[col, col]].abs2();
        for i in col + 1..n {
            let v = lu[[i, col]].abs2();
            if v > bv {
                bv = v;
                best = i;
            }
        }
        if best != col {
            perm.swap(col, best);
            for j in 0..n {
                let tmp = lu[[col, j]];
                lu[[col, j]] = lu[[best, j]];
                lu[[best, j]] = tmp;
            }
        }
        let piv = lu[[col, col]];
        if piv == S::ZERO {
            continue;
        }
        for i in col + 1..n {
            let f = lu[[i, col]] / piv;
            lu[[i, col]] = f;
            for j in col + 1..n {
                let v = lu[[col, j]];
                lu[[i, j]] -= f * v;
            }
        }
    }
    let m = b.ncols();
    let mut x = Array2::from_elem((n, m), S::ZERO);
    for rhs in 0..m {
        // forward substitution on permuted rhs
        let mut y = vec![S::ZERO; n];
        for i in 0..n {
            let mut acc = b[[perm[i], rhs]];
            for j in 0..i {
                acc -= lu[[i, j]] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= lu[[i, j]] * x[[j, rhs]];
            }
            let d = lu[[i, i]];
            x[[i, rhs]] = if d == S::ZERO { S::ZERO } else { acc / d };
        }
    }
    x
}
