//! Solvers for `min_x f(x) + lambda ||x||_p^p` with `0 < p < 1`.
//!
//! The main algorithm is an iteratively reweighted l1 method with
//! extrapolation (EIRL1): each step linearizes the smoothed regularizer
//! `sum_i (|x_i| + eps_i)^p` at the current iterate, takes a proximal gradient
//! step from the momentum point `x^k + alpha^k (x^k - x^{k-1})`, and shrinks
//! `eps` geometrically. Baselines (IRL1, IRL2, IJT), a seeded benchmark
//! harness and trace diagnostics live alongside it.
//!
//! ```
//! use eirl1::harness::{generate_instance, gaussian_start};
//! use eirl1::math::RegParams;
//! use eirl1::solvers::{solve_eirl1, SolverConfig};
//!
//! let inst = generate_instance(32, 64, 3, 1e-4, 1).unwrap();
//! let problem = inst.problem(RegParams::new(0.5, 0.05).unwrap()).unwrap();
//! let x0 = gaussian_start(64, 2);
//! let res = solve_eirl1(&problem, &x0, &SolverConfig::default()).unwrap();
//! assert!(res.converged);
//! ```

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod math;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::Execution;
pub use math::{DenseVector, EpsilonVector, RegParams, SignPattern, WeightVector, EPS_FLOOR, W_MAX};
pub use problems::{LeastSquaresProblem, ProblemInstance, SmoothTerm};
pub use solvers::{AlphaSchedule, SolveResult, SolverConfig, SolverKind, TerminationReason, TraceLevel};
