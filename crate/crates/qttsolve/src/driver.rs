//! End-to-end orchestration: build the transform and symbol context for a
//! layout, assemble the penalized system, run the sweep solver, recover the
//! primal solution, and evaluate the estimators. The context owns everything
//! that is reusable across solves on one grid.

use crate::als::{self, AlsError, SolveConfig, SolveReport};
use crate::estimators::{self, ErrorReport, EstimatorError};
use crate::layout::{Arity, Field, Format, LayoutError, QttLayout, Space};
use crate::ops::{self, OpsError, PenalizedSystem};
use crate::qft::{assemble_qft, QftOperator};
use crate::symbols::{self, BuiltSymbol, SymbolError, SymbolFilter};
use crate::tt::Mpo;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DriverError {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Als(#[from] AlsError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Tt(#[from] crate::tt::TtError),
}

/// Reusable per-grid context: transform, projector, Green multiplier, and
/// the diagonal operators derived from them.
pub struct SolverContext {
    pub layout: QttLayout,
    pub qft: QftOperator,
    pub projector: BuiltSymbol,
    pub green: BuiltSymbol,
    pub p_diag: Mpo<Complex64>,
    pub gamma_diag: Mpo<Complex64>,
}

#[derive(Clone, Debug)]
pub struct ContextConfig {
    pub projector_tol: f64,
    pub projector_max_rank: usize,
    pub filter: SymbolFilter,
    pub qft_tol: f64,
    pub seed: u64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            projector_tol: 1e-9,
            projector_max_rank: 150,
            filter: SymbolFilter::Spectral,
            qft_tol: 1e-12,
            seed: 17,
        }
    }
}

impl SolverContext {
    pub fn build(d: usize, level: usize, format: Format, cfg: &ContextConfig) -> Result<Self, DriverError> {
        let layout = QttLayout::new(d, level, format, Space::Physical, Arity::Scalar);
        let qft = assemble_qft(&layout, cfg.qft_tol);
        let flay_m = layout.with(Space::Fourier, Arity::Matrix);
        let projector = symbols::projector_symbol(
            &flay_m,
            cfg.filter,
            cfg.projector_tol,
            cfg.projector_max_rank,
            cfg.seed,
        )?;
        let flay_v = layout.with(Space::Fourier, Arity::Vector);
        let green = symbols::green_symbol(&flay_v, cfg.projector_tol, cfg.projector_max_rank, cfg.seed + 1)?;
        Self::from_parts(layout, qft, projector, green)
    }

    /// Assemble a context from prebuilt (possibly cached) symbols.
    pub fn from_parts(
        layout: QttLayout,
        qft: QftOperator,
        projector: BuiltSymbol,
        green: BuiltSymbol,
    ) -> Result<Self, DriverError> {
        let p_diag = ops::diag_mpo_matrix(&projector.field)?;
        let gamma = symbols::gamma_from_projector(&projector.field, 1e-13)?;
        let gamma_diag = ops::diag_mpo_matrix(&gamma)?;
        Ok(Self { layout, qft, projector, green, p_diag, gamma_diag })
    }
}

/// Everything produced by one projector-route solve.
pub struct HlRun {
    pub system: PenalizedSystem,
    pub conv: Mpo<Complex64>,
    pub psi_hat: Field<Complex64>,
    pub psi_phys: Field<Complex64>,
    pub u_hat: Field<Complex64>,
    pub u_phys: Field<Complex64>,
    pub imag_norm: f64,
    pub solve_report: SolveReport,
    pub error_report: ErrorReport,
}

#[allow(clippy::too_many_arguments)]
pub fn run_hl(
    ctx: &SolverContext,
    a_phys: &Field<f64>,
    g_phys: &Field<f64>,
    mu: f64,
    bounds: Option<(f64, f64)>,
    solve_cfg: &SolveConfig,
    round_tol: f64,
) -> Result<HlRun, DriverError> {
    let system = ops::assemble_system(a_phys, g_phys, mu, &ctx.projector.field, &ctx.qft, round_tol, bounds)?;
    // the convolution part alone drives the flux-residual estimator
    let conv = {
        let a_hat = match a_phys.layout.arity {
            Arity::Scalar => ops::lift_scalar_to_matrix(&ctx.qft.forward_real(a_phys)?)?,
            _ => ctx.qft.forward_real(a_phys)?,
        };
        let a_hat = a_hat.round(round_tol, usize::MAX);
        let c = ops::convolution_mpo(&a_hat, round_tol)?;
        let (c, _) = c.round(round_tol, usize::MAX);
        c
    };
    let (psi_tt, solve_report) = als::solve(&system.operator, &system.rhs.tt, solve_cfg)?;
    let psi_hat = Field::new(psi_tt, system.rhs.layout)?;
    let g_hat = system.rhs.scaled(Complex64::new(-1.0, 0.0));
    let error_report = estimators::a_posteriori(
        &psi_hat,
        &conv,
        &ctx.p_diag,
        &ctx.gamma_diag,
        &g_hat,
        system.lambda,
        system.cap_lambda,
        mu,
        round_tol,
    )?;
    let rec = ops::recover_u(&psi_hat, &ctx.green.field, &ctx.qft, round_tol)?;
    let psi_full = ctx.qft.inverse(&psi_hat)?;
    let (psi_real, _) = psi_full.tt.real_part(round_tol);
    Ok(HlRun {
        system,
        conv,
        psi_hat,
        psi_phys: Field::new(psi_real, psi_full.layout)?,
        u_hat: rec.u_hat,
        u_phys: rec.u_phys,
        imag_norm: rec.imag_norm,
        solve_report,
        error_report,
    })
}

/// One finite-difference-route solve (gamma u - div(a grad u) = f + div g).
pub struct FdRun {
    pub operator: Mpo<f64>,
    pub u: Field<f64>,
    pub solve_report: SolveReport,
    pub cond_bound: f64,
}

pub fn run_fd(
    layout: &QttLayout,
    a_phys: &Field<f64>,
    g_phys: &Field<f64>,
    f_phys: &Field<f64>,
    gamma: f64,
    cap_lambda: f64,
    solve_cfg: &SolveConfig,
    round_tol: f64,
) -> Result<FdRun, DriverError> {
    let operator = ops::fd_operator(a_phys, gamma, round_tol)?;
    let grad = ops::gradient_mpo(layout)?;
    let div_g = ops::apply_divergence_adjoint(&grad, g_phys)?;
    // rhs = f + div g = f - D* g
    let rhs = f_phys.tt.sub(&div_g.tt)?;
    let (rhs, _) = rhs.round(round_tol, usize::MAX);
    let (u_tt, solve_report) = als::solve(&operator, &rhs, solve_cfg)?;
    let cond_bound = estimators::fd_cond_bound(cap_lambda, gamma, layout.level)
        .expect("gamma checked positive by fd_operator");
    Ok(FdRun {
        operator,
        u: Field::new(u_tt, *layout)?,
        solve_report,
        cond_bound,
    })
}

/// Corrector solves on the unit cell and the effective tensor they define.
pub struct Homogenized {
    pub corrector_grads: Vec<Field<Complex64>>,
    pub correctors: Vec<Field<Complex64>>,
    pub tensor: ndarray::Array2<f64>,
    pub reports: Vec<SolveReport>,
    pub error_reports: Vec<ErrorReport>,
}

pub fn homogenize(
    ctx_cell: &SolverContext,
    c_cell: &Field<f64>,
    mu: f64,
    solve_cfg: &SolveConfig,
    round_tol: f64,
) -> Result<Homogenized, DriverError> {
    let d = c_cell.layout.d;
    let mut corrector_grads = Vec::with_capacity(d);
    let mut correctors = Vec::with_capacity(d);
    let mut reports = Vec::with_capacity(d);
    let mut error_reports = Vec::with_capacity(d);
    for i in 0..d {
        // cell problem -div(c(e_i + grad phi)) = 0 as problem form with
        // source g = c e_i
        let zero = crate::bench::constant_field(&c_cell.layout, 0.0);
        let comps: Vec<Field<f64>> = (0..d)
            .map(|j| if j == i { c_cell.clone() } else { zero.clone() })
            .collect();
        let g = crate::layout::stack_components(&comps)?;
        let run = run_hl(ctx_cell, c_cell, &g, mu, None, solve_cfg, round_tol)?;
        corrector_grads.push(run.psi_phys.clone());
        correctors.push(run.u_phys.clone());
        reports.push(run.solve_report.clone());
        error_reports.push(run.error_report.clone());
    }
    let c_complex = Field::new(c_cell.tt.to_complex(), c_cell.layout)?;
    let tensor = crate::bench::cell_tensor(&c_complex, &corrector_grads)
        .map_err(|e| match e {
            crate::bench::BenchError::Layout(l) => DriverError::Layout(l),
            crate::bench::BenchError::Ops(o) => DriverError::Ops(o),
            crate::bench::BenchError::Tt(t) => DriverError::Tt(t),
            other => panic!("unexpected: {other}"),
        })?;
    Ok(Homogenized { corrector_grads, correctors, tensor, reports, error_reports })
}
