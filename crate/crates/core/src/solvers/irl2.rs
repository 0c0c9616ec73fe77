use ndarray::{Array1, Zip};

use super::{numerical, solve, IterateState, SolveResult, SolverConfig, SolverKind};
use crate::error::{Error, Result};
use crate::math::{extrapolate, DenseVector, EpsilonVector, RegParams, W_MAX};
use crate::problems::ProblemInstance;

/// `v_i = min((p/2) (x_i^2 + eps_i)^(p/2 - 1), W_MAX)`, the curvature of the
/// quadratic majorizer of `(x_i^2 + eps_i)^(p/2)` at `x`.
pub fn irl2_weights(x: &DenseVector, eps: &EpsilonVector, reg: RegParams) -> Result<Array1<f64>> {
    if x.len() != eps.len() {
        return Err(Error::Usage(format!("x has length {}, eps has length {}", x.len(), eps.len())));
    }
    let p = reg.p();
    Ok(Zip::from(x.view())
        .and(eps.view())
        .map_collect(|xi, ei| (0.5 * p * (xi * xi + ei).powf(0.5 * p - 1.0)).min(W_MAX)))
}

/// Minimizer of `beta/2 (x_i - z_i)^2 + lambda v_i x_i^2`: `beta z_i / (beta + 2 lambda v_i)`.
pub fn irl2_update(z: &Array1<f64>, v: &Array1<f64>, beta: f64, lambda: f64) -> Array1<f64> {
    Zip::from(z).and(v).map_collect(|zi, vi| beta * zi / (beta + 2.0 * lambda * vi))
}

pub fn irl2_step(
    state: &IterateState,
    problem: &ProblemInstance,
    config: &SolverConfig,
    alpha_k: f64,
) -> Result<IterateState> {
    let reg = problem.reg();
    let v = irl2_weights(&state.x, &state.eps, reg)?;
    let y = extrapolate(&state.x, &state.x_prev, alpha_k)?;
    let grad = problem.smooth().gradient(&y);
    let z = y.as_array() - &(grad / config.beta);
    let x_next = DenseVector::new(irl2_update(&z, &v, config.beta, reg.lambda())).map_err(numerical)?;
    Ok(IterateState { x: x_next, x_prev: state.x.clone(), eps: state.eps.decayed(config.mu), k: state.k + 1 })
}

pub fn solve_irl2(problem: &ProblemInstance, x0: &DenseVector, config: &SolverConfig) -> Result<SolveResult> {
    solve(SolverKind::Irl2, problem, x0, config, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::LeastSquaresProblem;
    use ndarray::{array, Array2};

    #[test]
    fn zero_lambda_is_a_gradient_step() {
        let z = array![1.0, -2.0, 0.0];
        assert_eq!(irl2_update(&z, &array![5.0, 1.0, 3.0], 1.5, 0.0), z);
    }

    #[test]
    fn capped_weight_drives_coordinate_to_zero() {
        let out = irl2_update(&array![3.0], &array![W_MAX], 1.0, 0.05);
        assert!(out[0].abs() < 1e-12);
    }

    #[test]
    fn single_step_on_scalar_quadratic() {
        // v = 0.25, z = 1, x = 1 / (1 + 2 * 0.1 * 0.25)
        let ls = LeastSquaresProblem::new(Array2::eye(1), array![1.0]).unwrap();
        let prob = ProblemInstance::new(ls, RegParams::new(0.5, 0.1).unwrap()).unwrap();
        let state = IterateState::new(DenseVector::zeros(1), EpsilonVector::uniform(1, 1.0).unwrap()).unwrap();
        let next = irl2_step(&state, &prob, &SolverConfig::default(), 0.0).unwrap();
        let x = next.x.as_slice()[0];
        assert!((x - 1.0 / 1.05).abs() < 1e-15);
        // stationarity of g x + 1/2 (x - y)^2 + lambda v x^2 with g = -1, y = 0
        assert!((-1.0 + x + 2.0 * 0.1 * 0.25 * x).abs() < 1e-15);
    }

    #[test]
    fn converges_on_identity_problem() {
        let ls = LeastSquaresProblem::new(Array2::eye(3), array![2.0, 0.0, -1.0]).unwrap();
        let prob = ProblemInstance::new(ls, RegParams::new(0.5, 0.05).unwrap()).unwrap();
        let x0 = DenseVector::from_vec(vec![0.5, 0.5, 0.5]).unwrap();
        let res = solve_irl2(&prob, &x0, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.x_final.as_slice()[0] - 2.0).abs() < 0.05);
        assert!(res.x_final.as_slice()[1].abs() < 1e-3);
    }
}
