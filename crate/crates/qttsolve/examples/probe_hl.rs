use qttsolve::als::SolveConfig;
use qttsolve::bench::manufactured;
use qttsolve::driver::{run_hl, ContextConfig, SolverContext};
use qttsolve::layout::Format;
use std::time::Instant;

fn main() {
    let level: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let fmt_s = std::env::args().nth(2).unwrap_or_else(|| "x1y1".into());
    let format = Format::parse(&fmt_s).unwrap();
    let mu = 1e4;
    let t0 = Instant::now();
    let ctx = SolverContext::build(2, level, format, &ContextConfig::default()).unwrap();
    println!(
        "ctx: {:.1}s proj rank {} mc {:.2e} qft rank {}",
        t0.elapsed().as_secs_f64(),
        ctx.projector.max_rank,
        ctx.projector.mc_error,
        ctx.qft.max_factor_rank()
    );
    let case = manufactured(level, format, 0.0).unwrap();
    println!("a rank {} g rank {} gradu rank {}", case.a.tt.max_rank(), case.g.tt.max_rank(), case.grad_u_exact.tt.max_rank());
    let t1 = Instant::now();
    let measure = std::env::var("MEASURE").map(|v| v == "1").unwrap_or(true);
    let rank: usize = std::env::var("RANK").ok().and_then(|v| v.parse().ok()).unwrap_or(12);
    let cfg = SolveConfig { tol: 1e-6, max_sweeps: 30, max_rank: rank, seed: 3, measure_condition: measure, ..Default::default() };
    let run = run_hl(&ctx, &case.a, &case.g, mu, Some((case.lambda, case.cap_lambda)), &cfg, 1e-12).unwrap();
    println!(
        "solve: {:.1}s sweeps {} converged {} deltas {:?}",
        t1.elapsed().as_secs_f64(),
        run.solve_report.sweeps,
        run.solve_report.converged,
        run.solve_report.delta_history
    );
    println!(
        "op rank {} (conv {} + proj {}) max local cond {:.3e} bound {:.3e} relerr {:.2e}",
        run.system.operator.max_rank(),
        run.system.conv_rank,
        run.system.proj_rank,
        run.solve_report.max_local_condition,
        run.error_report.cond_bound,
        run.solve_report.max_local_rel_err
    );
    // errors vs analytic
    let err_grad = run.psi_phys.tt.distance(&case.grad_u_exact.tt.to_complex()).unwrap()
        / case.grad_u_exact.norm2();
    let err_u = run.u_phys.tt.distance(&case.u_exact_zero_mean.tt.to_complex()).unwrap()
        / case.u_exact_zero_mean.norm2();
    println!(
        "Err_u {:.3e} Err_grad {:.3e} E_min {:.3e} E_max {:.3e} E_P {:.3e} E_G {:.3e}",
        err_u, err_grad, run.error_report.e_min, run.error_report.e_max, run.error_report.e_p, run.error_report.e_gamma
    );
    let apriori = qttsolve::estimators::a_priori_mu(
        case.lambda,
        case.cap_lambda,
        mu,
        run.system.rhs.norm2(),
        run.error_report.normalization,
    );
    println!("E_apriori {:.3e} imag {:.2e} total {:.1}s", apriori, run.imag_norm, t0.elapsed().as_secs_f64());
}
