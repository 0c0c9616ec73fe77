//! Iterative jumping thresholding: proximal gradient with the exact prox of
//! `tau |x|^p`, available in closed form for `p = 1/2` and `p = 2/3`.

use std::f64::consts::PI;

use super::{numerical, solve, IterateState, SolveResult, SolverConfig, SolverKind};
use crate::error::{Error, Result};
use crate::math::DenseVector;
use crate::problems::ProblemInstance;

/// Exponents with a closed-form scalar proximal map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IjtExponent {
    Half,
    TwoThirds,
}

impl IjtExponent {
    pub fn from_p(p: f64) -> Result<Self> {
        if (p - 0.5).abs() < 1e-12 {
            Ok(IjtExponent::Half)
        } else if (p - 2.0 / 3.0).abs() < 1e-12 {
            Ok(IjtExponent::TwoThirds)
        } else {
            Err(Error::config("p", format!("ijt supports only p = 1/2 or p = 2/3, got {p}")))
        }
    }
}

/// Global minimizer of `1/2 (x - z)^2 + tau |x|^(1/2)`.
///
/// Nonzero iff `|z| > 3/2 tau^(2/3)`; then
/// `x = 2/3 z (1 + cos(2 pi / 3 - 2/3 phi))`, `phi = arccos(tau/4 (|z|/3)^(-3/2))`.
pub fn half_threshold(z: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return z;
    }
    let a = z.abs();
    if a <= 1.5 * tau.powf(2.0 / 3.0) {
        return 0.0;
    }
    let phi = ((tau / 4.0) * (a / 3.0).powf(-1.5)).clamp(-1.0, 1.0).acos();
    (2.0 / 3.0) * z * (1.0 + (2.0 * PI / 3.0 - 2.0 * phi / 3.0).cos())
}

/// Global minimizer of `1/2 (x - z)^2 + tau |x|^(2/3)`.
///
/// With `u = |x|^(1/3)` the nonzero branch solves `u^4 - |z| u + 2 tau / 3 = 0`,
/// done here by Ferrari's reduction through the resolvent cubic
/// `t^3 - (8 tau / 3) t - z^2 = 0` (hyperbolic form of its single real root).
pub fn two_thirds_threshold(z: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return z;
    }
    let a = z.abs();
    // in terms of the unscaled weight c = 2 tau: threshold 2/3 (3 c^3)^(1/4)
    let c = 2.0 * tau;
    if a <= (2.0 / 3.0) * (3.0 * c * c * c).powf(0.25) {
        return 0.0;
    }
    let phi = (27.0 * z * z / (16.0 * c.powf(1.5))).acosh();
    let big_a = (2.0 / 3.0f64.sqrt()) * c.powf(0.25) * (phi / 3.0).cosh().sqrt();
    let u = 0.5 * (big_a + (2.0 * a / big_a - big_a * big_a).max(0.0).sqrt());
    (u * u * u).copysign(z)
}

/// Scalar prox of `tau |x|^p` for the supported exponents.
pub fn lp_prox(z: f64, tau: f64, exponent: IjtExponent) -> f64 {
    match exponent {
        IjtExponent::Half => half_threshold(z, tau),
        IjtExponent::TwoThirds => two_thirds_threshold(z, tau),
    }
}

/// `x^{k+1} = prox_{(lambda/beta) ||.||_p^p}(x^k - grad f(x^k) / beta)`.
pub fn ijt_step(state: &IterateState, problem: &ProblemInstance, config: &SolverConfig) -> Result<IterateState> {
    let exponent = IjtExponent::from_p(problem.reg().p())?;
    let tau = problem.reg().lambda() / config.beta;
    let grad = problem.smooth().gradient(&state.x);
    let x_next = (state.x.as_array() - &(grad / config.beta)).mapv(|z| lp_prox(z, tau, exponent));
    Ok(IterateState {
        x: DenseVector::new(x_next).map_err(numerical)?,
        x_prev: state.x.clone(),
        eps: state.eps.clone(),
        k: state.k + 1,
    })
}

pub fn solve_ijt(problem: &ProblemInstance, x0: &DenseVector, config: &SolverConfig) -> Result<SolveResult> {
    solve(SolverKind::Ijt, problem, x0, config, None)
}
