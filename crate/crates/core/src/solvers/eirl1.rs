use super::{numerical, solve, AlphaSchedule, IterateState, SolveResult, SolverConfig, SolverKind};
use crate::error::Result;
use crate::math::{compute_weights, extrapolate, prox_weighted_l1, DenseVector};
use crate::problems::ProblemInstance;

/// One extrapolated reweighted-l1 step:
/// weights at `x^k`, momentum point `y^k`, weighted soft-thresholding of the
/// gradient step at `y^k`, then `eps^{k+1} = max(mu eps^k, EPS_FLOOR)`.
pub fn eirl1_step(
    state: &IterateState,
    problem: &ProblemInstance,
    config: &SolverConfig,
    alpha_k: f64,
) -> Result<IterateState> {
    let reg = problem.reg();
    let w = compute_weights(&state.x, &state.eps, reg)?;
    let y = extrapolate(&state.x, &state.x_prev, alpha_k)?;
    let grad = DenseVector::new(problem.smooth().gradient(&y)).map_err(numerical)?;
    let x_next = prox_weighted_l1(&grad, &y, &w, config.beta, reg.lambda()).map_err(numerical)?;
    Ok(IterateState { x: x_next, x_prev: state.x.clone(), eps: state.eps.decayed(config.mu), k: state.k + 1 })
}

pub fn solve_eirl1(problem: &ProblemInstance, x0: &DenseVector, config: &SolverConfig) -> Result<SolveResult> {
    solve(SolverKind::Eirl1, problem, x0, config, None)
}

/// Reweighted l1 without extrapolation (`alpha^k = 0` for every `k`).
pub fn solve_irl1(problem: &ProblemInstance, x0: &DenseVector, config: &SolverConfig) -> Result<SolveResult> {
    let config = SolverConfig { alpha_schedule: AlphaSchedule::Constant(0.0), ..config.clone() };
    solve(SolverKind::Irl1, problem, x0, &config, None)
}
