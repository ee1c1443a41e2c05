//! Benchmark problem generators: analytic trigonometric trains, the
//! manufactured heterogeneous case, the random-inclusion multiscale case
//! (random sequential adsorption packing plus a Gaussian bump field), and
//! the periodic cell-problem pipeline defining the homogenized coefficient.

use crate::layout::{Arity, Field, Format, LayoutError, QttLayout, Space};
use crate::ops::{self, OpsError};
use crate::scalar::Scalar;
use crate::tci::{self, CrossConfig, TciError};
use crate::tt::{TensorTrain, TtError};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("packing infeasible: placed {placed} of {want} spheres within the attempt budget")]
    PackingInfeasible { placed: usize, want: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Tci(#[from] TciError),
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// cos(2 pi m x_c + phase) as an exact rank-2 train on the layout.
pub fn cos_field(layout: &QttLayout, coord: usize, mode: i64, phase: f64) -> Field<f64> {
    assert_eq!(layout.arity, Arity::Scalar);
    assert_eq!(layout.space, Space::Physical);
    let l = layout.level;
    let roles = layout.spatial_roles();
    // rotation-matrix cores: product of R(theta_l) equals R(sum theta_l)
    let rot = |theta: f64| {
        let (s, c) = theta.sin_cos();
        [[c, -s], [s, c]]
    };
    let span: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter(|(_, &(rc, _))| rc == coord)
        .map(|(pos, _)| pos)
        .collect();
    let first_pos = *span.first().unwrap();
    let last_pos = *span.last().unwrap();
    let mut cores: Vec<Array3<f64>> = Vec::with_capacity(roles.len());
    for (pos, &(rc, scale)) in roles.iter().enumerate() {
        if rc != coord {
            // pass the 2-dimensional rotation bond through unchanged
            let inside = pos > first_pos && pos < last_pos;
            let b = if inside { 2 } else { 1 };
            let mut c = Array3::from_elem((b, 2, b), 0.0);
            for a in 0..b {
                c[[a, 0, a]] = 1.0;
                c[[a, 1, a]] = 1.0;
            }
            cores.push(c);
            continue;
        }
        let theta_of = |bit: usize| {
            2.0 * std::f64::consts::PI * mode as f64 * bit as f64 * 2f64.powi(-(scale as i32))
        };
        let single = span.len() == 1;
        let (bl, br) = if single {
            (1, 1)
        } else if pos == first_pos {
            (1, 2)
        } else if pos == last_pos {
            (2, 1)
        } else {
            (2, 2)
        };
        let mut c = Array3::from_elem((bl, 2, br), 0.0);
        for bit in 0..2 {
            let m = rot(theta_of(bit));
            if single {
                // cos(phase + theta)
                let mp = rot(phase + theta_of(bit));
                c[[0, bit, 0]] = mp[0][0];
            } else if pos == first_pos {
                // row vector e1^T R(phase) R(theta)
                let p = rot(phase);
                for j in 0..2 {
                    c[[0, bit, j]] = p[0][0] * m[0][j] + p[0][1] * m[1][j];
                }
            } else if pos == last_pos {
                for i in 0..2 {
                    c[[i, bit, 0]] = m[i][0];
                }
            } else {
                for i in 0..2 {
                    for j in 0..2 {
                        c[[i, bit, j]] = m[i][j];
                    }
                }
            }
        }
        cores.push(c);
    }
    let _ = l;
    Field::new(TensorTrain::new(cores).unwrap(), *layout).unwrap()
}

/// sin(2 pi m x_c) as a rank-2 train.
pub fn sin_field(layout: &QttLayout, coord: usize, mode: i64) -> Field<f64> {
    cos_field(layout, coord, mode, -std::f64::consts::FRAC_PI_2)
}

pub fn constant_field<S: Scalar>(layout: &QttLayout, value: S) -> Field<S> {
    Field::new(TensorTrain::constant(&layout.site_dims(), value), *layout).unwrap()
}

/// The manufactured heterogeneous benchmark: oscillating separable
/// coefficient, prescribed solution, and a divergence-free offset that
/// keeps the penalization active.
pub struct ManufacturedCase {
    pub layout: QttLayout,
    pub a: Field<f64>,
    pub g: Field<f64>,
    /// gamma u, the mass source of the difference-scheme variant.
    pub f: Field<f64>,
    pub u_exact: Field<f64>,
    pub grad_u_exact: Field<f64>,
    /// u_exact minus its mean (the zero-mean gauge of the projector route).
    pub u_exact_zero_mean: Field<f64>,
    pub lambda: f64,
    pub cap_lambda: f64,
    pub gamma: f64,
}

pub fn manufactured(level: usize, format: Format, gamma: f64) -> Result<ManufacturedCase, BenchError> {
    assert!(level >= 4);
    let nu = 3.0 / 7.0;
    let layout = QttLayout::new(2, level, format, Space::Physical, Arity::Scalar);
    let one = constant_field(&layout, 1.0);
    let round = |f: Field<f64>| f.round(1e-13, usize::MAX);

    // a(x, y) = (1 + nu sin 4 pi x)(1 + nu sin 8 pi y)
    let ax = one.add(&sin_field(&layout, 0, 2).scaled(nu))?;
    let ay = one.add(&sin_field(&layout, 1, 4).scaled(nu))?;
    let a = round(Field::new(ax.tt.hadamard(&ay.tt)?, layout)?);

    // u = C sin^2(6 pi x) sin^2(12 pi y), C = 1 / (6 pi sqrt 5)
    let c0 = 1.0 / (6.0 * std::f64::consts::PI * 5f64.sqrt());
    let sx2 = one.add(&cos_field(&layout, 0, 6, 0.0).scaled(-1.0))?.scaled(0.5);
    let sy2 = one.add(&cos_field(&layout, 1, 12, 0.0).scaled(-1.0))?.scaled(0.5);
    let u_exact = round(Field::new(sx2.tt.hadamard(&sy2.tt)?, layout)?.scaled(c0));
    let u_exact_zero_mean = u_exact.add(&constant_field(&layout, -c0 * 0.25))?;

    // grad u = (6 pi C sin(12 pi x) sin^2(12 pi y), 12 pi C sin^2(6 pi x) sin(24 pi y))
    let pi = std::f64::consts::PI;
    let dux = round(Field::new(
        sin_field(&layout, 0, 6).tt.hadamard(&sy2.tt)?,
        layout,
    )?
    .scaled(6.0 * pi * c0));
    let duy = round(Field::new(
        sx2.tt.hadamard(&sin_field(&layout, 1, 12).tt)?,
        layout,
    )?
    .scaled(12.0 * pi * c0));
    let grad_u_exact = crate::layout::stack_components(&[dux, duy])?;

    // g = -a grad u - g_tilde, with div g_tilde = 0
    let gt_x = one.add(&sin_field(&layout, 1, 1))?;
    let gt_y = constant_field(&layout, 2.0).add(&sin_field(&layout, 0, 2))?;
    let g_tilde = crate::layout::stack_components(&[gt_x, gt_y])?;
    let a_grad = ops::mul_scalar_field(&a, &grad_u_exact)?;
    let g = a_grad.scaled(-1.0).add(&g_tilde.scaled(-1.0))?.round(1e-13, usize::MAX);

    let f = u_exact.scaled(gamma);
    Ok(ManufacturedCase {
        layout,
        a,
        g,
        f,
        u_exact,
        grad_u_exact,
        u_exact_zero_mean,
        lambda: (1.0 - nu).powi(-2),
        cap_lambda: (1.0 + nu) * (1.0 + nu),
        gamma,
    })
}

/// Random sequential adsorption: `n` centers in the periodic cube with
/// pairwise periodic distance at least 4r (non-intersecting radius-2r
/// spheres). Deterministic per seed; errors out when the budget runs dry.
pub fn rsa_pack(n: usize, radius: f64, d: usize, seed: u64, attempt_budget: usize) -> Result<Vec<[f64; 3]>, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(n);
    let min_dist = 4.0 * radius;
    let mut attempts = 0usize;
    while centers.len() < n {
        if attempts >= attempt_budget {
            return Err(BenchError::PackingInfeasible { placed: centers.len(), want: n });
        }
        attempts += 1;
        let mut x = [0.0f64; 3];
        for c in x.iter_mut().take(d) {
            *c = rng.random::<f64>();
        }
        let ok = centers.iter().all(|y| periodic_distance(&x, y, d) >= min_dist);
        if ok {
            centers.push(x);
        }
    }
    Ok(centers)
}

pub fn periodic_distance(a: &[f64; 3], b: &[f64; 3], d: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..d {
        let mut dx = (a[c] - b[c]).abs();
        if dx > 0.5 {
            dx = 1.0 - dx;
        }
        acc += dx * dx;
    }
    acc.sqrt()
}

#[derive(Clone, Debug)]
pub struct MultiscaleParams {
    pub d: usize,
    pub radius: f64,
    pub n_inclusions: usize,
    /// Amplitude of the Gaussian sum (the paper-scale default is 5).
    pub nu: f64,
    pub format: Format,
    pub l0: usize,
    pub l_eps: usize,
    pub seed: u64,
    pub cell_tol: f64,
    pub cell_max_rank: usize,
}

pub struct MultiscaleCase {
    pub params: MultiscaleParams,
    pub centers: Vec<[f64; 3]>,
    /// Microstructure on the unit cell (level l0).
    pub c_cell: Field<f64>,
    /// Modulation on the global grid (level l0 + l_eps).
    pub b: Field<f64>,
    /// Full coefficient b(x) c(x/eps) on the global grid.
    pub a_eps: Field<f64>,
    /// Source on the global grid.
    pub g: Field<f64>,
    pub cell_build_error: f64,
    pub cell_rank: usize,
}

/// Evaluate the periodized Gaussian-sum microstructure at a cell point.
pub fn cell_coefficient(centers: &[[f64; 3]], nu: f64, radius: f64, d: usize, x: &[f64]) -> f64 {
    let mut acc = 1.0;
    let two_r2 = 2.0 * radius * radius;
    // images of adjacent cells; Gaussians at the benchmark radii decay far
    // below machine precision beyond one cell width
    let offsets: [f64; 3] = [-1.0, 0.0, 1.0];
    for cen in centers {
        if d == 2 {
            for ox in offsets {
                for oy in offsets {
                    let dx = x[0] - cen[0] - ox;
                    let dy = x[1] - cen[1] - oy;
                    acc += nu * (-(dx * dx + dy * dy) / two_r2).exp();
                }
            }
        } else {
            for ox in offsets {
                for oy in offsets {
                    for oz in offsets {
                        let dx = x[0] - cen[0] - ox;
                        let dy = x[1] - cen[1] - oy;
                        let dz = x[2] - cen[2] - oz;
                        acc += nu * (-(dx * dx + dy * dy + dz * dz) / two_r2).exp();
                    }
                }
            }
        }
    }
    acc
}

pub fn multiscale(params: &MultiscaleParams) -> Result<MultiscaleCase, BenchError> {
    let d = params.d;
    let centers = rsa_pack(params.n_inclusions, params.radius, d, params.seed, 200_000)?;
    let cell_layout = QttLayout::new(d, params.l0, params.format, Space::Physical, Arity::Scalar);
    let h = 2f64.powi(-(params.l0 as i32));
    let eval = |bits: &[usize]| {
        let p = cell_layout.decode_physical(bits);
        let x: Vec<f64> = (0..d).map(|c| p.0[c] as f64 * h).collect();
        cell_coefficient(&centers, params.nu, params.radius, d, &x)
    };
    let cfg = CrossConfig {
        tol: params.cell_tol,
        max_rank: params.cell_max_rank,
        seed: params.seed.wrapping_add(101),
        ..Default::default()
    };
    let (c_tt, report) = tci::build_from_function(&eval, &cell_layout.site_dims(), &cfg)?;
    let (c_tt, _) = c_tt.round(params.cell_tol * 0.3, params.cell_max_rank);
    let c_cell = Field::new(c_tt, cell_layout)?;

    let global_layout = QttLayout::new(d, params.l0 + params.l_eps, params.format, Space::Physical, Arity::Scalar);
    let c_per = crate::layout::periodize(&c_cell, params.l_eps)?;
    let b = modulation_field(&global_layout);
    let a_eps = Field::new(b.tt.hadamard(&c_per.tt)?, global_layout)?.round(params.cell_tol * 0.1, usize::MAX);
    let g = source_field(&global_layout)?;
    Ok(MultiscaleCase {
        params: params.clone(),
        centers,
        c_cell,
        b,
        a_eps,
        g,
        cell_build_error: report.est_error,
        cell_rank: report.max_rank,
    })
}

/// Slow modulation b: 1 + 0.5 cos(2 pi x1) cos(2 pi x2) in d=2 and
/// 1 + 0.5 cos(2 pi x1) in d=3.
pub fn modulation_field(layout: &QttLayout) -> Field<f64> {
    let one = constant_field(layout, 1.0);
    if layout.d == 2 {
        let c1 = cos_field(layout, 0, 1, 0.0);
        let c2 = cos_field(layout, 1, 1, 0.0);
        let prod = Field::new(c1.tt.hadamard(&c2.tt).unwrap(), *layout).unwrap();
        one.add(&prod.scaled(0.5)).unwrap().round(1e-13, usize::MAX)
    } else {
        one.add(&cos_field(layout, 0, 1, 0.0).scaled(0.5)).unwrap().round(1e-13, usize::MAX)
    }
}

/// Source components g_i = cos((4 + 2i) pi x_i), i = 1..d.
pub fn source_field(layout: &QttLayout) -> Result<Field<f64>, BenchError> {
    let comps: Vec<Field<f64>> = (0..layout.d)
        .map(|i| cos_field(layout, i, (2 + (i as i64 + 1)) as i64, 0.0))
        .collect();
    Ok(crate::layout::stack_components(&comps)?)
}

/// Mean value of a scalar field over its grid.
pub fn field_mean<S: Scalar>(f: &Field<S>) -> S {
    let lay = f.layout;
    let ones = TensorTrain::<S>::ones(&lay.site_dims());
    let total = 2f64.powi((lay.level * lay.d) as i32);
    let ip = ones.inner(&f.tt).expect("mean");
    ip.scale(1.0 / total)
}

/// Effective cell tensor int c (e_i + grad phi_i) columns from solved
/// corrector gradients.
pub fn cell_tensor(
    c_cell: &Field<num_complex::Complex64>,
    corrector_grads: &[Field<num_complex::Complex64>],
) -> Result<Array2<f64>, BenchError> {
    let d = c_cell.layout.d;
    let mut t = Array2::<f64>::zeros((d, d));
    let mean_c = field_mean(c_cell).re;
    for (i, grad) in corrector_grads.iter().enumerate() {
        let flux = ops::mul_scalar_field(c_cell, grad)?;
        for j in 0..d {
            let comp = flux.component(j);
            t[[j, i]] = field_mean(&comp).re + if i == j { mean_c } else { 0.0 };
        }
    }
    Ok(t)
}

/// The homogenized coefficient field b(x) T as a matrix-arity train.
pub fn homogenized_coefficient(b: &Field<f64>, tensor: &Array2<f64>) -> Result<Field<f64>, BenchError> {
    let d = b.layout.d;
    let lay = b.layout.with(Space::Physical, Arity::Matrix);
    let mut value = Array3::from_elem((1, d * d, 1), 0.0);
    for i in 0..d {
        for j in 0..d {
            value[[0, i * d + j, 0]] = 0.5 * (tensor[[i, j]] + tensor[[j, i]]);
        }
    }
    let mut cores = vec![value];
    for _ in 0..lay.num_spatial_sites() {
        let mut c = Array3::from_elem((1, 2, 1), 0.0);
        c[[0, 0, 0]] = 1.0;
        c[[0, 1, 0]] = 1.0;
        cores.push(c);
    }
    let tensor_field = Field::new(TensorTrain::new(cores)?, lay)?;
    Ok(ops::mul_scalar_field(b, &tensor_field)?)
}
