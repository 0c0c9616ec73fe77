//! Reweighted solvers for `min f(x) + lambda ||x||_p^p` sharing one driver loop.
//!
//! All solvers step against the same `beta`-proximal model of `f`; they differ
//! only in the per-coordinate subproblem:
//!
//! * [`SolverKind::Eirl1`]: weighted soft-thresholding at an extrapolated point.
//! * [`SolverKind::Irl1`]: the same without extrapolation.
//! * [`SolverKind::Irl2`]: a weighted ridge step from the smoothed `(x^2 + eps)^(p/2)` model.
//! * [`SolverKind::Ijt`]: the exact `lp` proximal map (closed form for `p = 1/2, 2/3`).

mod eirl1;
mod ijt;
mod irl2;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{IterationRecord, Snapshot, Trace};
use crate::error::{Error, Result};
use crate::math::{eval_f, eval_psi, stationarity_residual, DenseVector, EpsilonVector};
use crate::problems::ProblemInstance;

pub use eirl1::{eirl1_step, solve_eirl1, solve_irl1};
pub use ijt::{half_threshold, ijt_step, lp_prox, solve_ijt, two_thirds_threshold, IjtExponent};
pub use irl2::{irl2_step, irl2_update, irl2_weights, solve_irl2};

/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 5000;
/// Default spacing of stored iterates and stationarity evaluations in full traces.
pub const DEFAULT_SNAPSHOT_EVERY: usize = 50;

/// Momentum coefficients `alpha^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaSchedule {
    Constant(f64),
    /// `alpha^0 = 0`, `alpha^k = (k - 1) / (k + 2)`.
    Nesterov,
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSchedule::Constant(v) if !(0.0..1.0).contains(&v) => {
                Err(Error::config("alpha", format!("must lie in [0, 1), got {v}")))
            }
            _ => Ok(()),
        }
    }

    /// Supremum over all `k`; `1` for the Nesterov schedule.
    pub fn supremum(&self) -> f64 {
        match *self {
            AlphaSchedule::Constant(v) => v,
            AlphaSchedule::Nesterov => 1.0,
        }
    }
}

impl fmt::Display for AlphaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaSchedule::Constant(v) => write!(f, "{v}"),
            AlphaSchedule::Nesterov => f.write_str("nesterov"),
        }
    }
}

impl FromStr for AlphaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("nesterov") {
            return Ok(AlphaSchedule::Nesterov);
        }
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::config("alpha", format!("expected a number or `nesterov`, got `{s}`")))?;
        let sched = AlphaSchedule::Constant(v);
        sched.validate()?;
        Ok(sched)
    }
}

pub fn alpha_at(schedule: AlphaSchedule, k: usize) -> f64 {
    match schedule {
        AlphaSchedule::Constant(v) => v,
        AlphaSchedule::Nesterov if k == 0 => 0.0,
        AlphaSchedule::Nesterov => (k as f64 - 1.0) / (k as f64 + 2.0),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    None,
    /// First and last records only.
    Summary,
    #[default]
    Full,
}

impl FromStr for TraceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TraceLevel::None),
            "summary" => Ok(TraceLevel::Summary),
            "full" => Ok(TraceLevel::Full),
            _ => Err(Error::config("trace", format!("expected none|summary|full, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub beta: f64,
    pub mu: f64,
    /// Uniform initial smoothing `eps^0_i`.
    pub eps0: f64,
    pub alpha_schedule: AlphaSchedule,
    pub opttol: f64,
    pub max_iter: usize,
    pub trace_level: TraceLevel,
    /// Store the iterate every this many steps (and at termination) in full traces.
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mu: 0.9,
            eps0: 1.0,
            alpha_schedule: AlphaSchedule::Constant(0.9),
            opttol: 1e-6,
            max_iter: DEFAULT_MAX_ITER,
            trace_level: TraceLevel::Full,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::config("mu", format!("must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(Error::config("eps0", format!("must be positive, got {}", self.eps0)));
        }
        if !(self.opttol > 0.0) {
            return Err(Error::config("opttol", format!("must be positive, got {}", self.opttol)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be at least 1"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::config("snapshot_every", "must be at least 1"));
        }
        self.alpha_schedule.validate()
    }
}

/// `(x^k, x^{k-1}, eps^k)` and the iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub x: DenseVector,
    pub x_prev: DenseVector,
    pub eps: EpsilonVector,
    pub k: usize,
}

impl IterateState {
    /// Starting state with `x^{-1} = x^0`.
    pub fn new(x0: DenseVector, eps0: EpsilonVector) -> Result<Self> {
        if x0.len() != eps0.len() {
            return Err(Error::Usage(format!("x0 has length {}, eps0 has length {}", x0.len(), eps0.len())));
        }
        Ok(Self { x_prev: x0.clone(), x: x0, eps: eps0, k: 0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Eirl1,
    Irl1,
    Irl2,
    Ijt,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Eirl1, SolverKind::Irl1, SolverKind::Irl2, SolverKind::Ijt];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Eirl1 => "eirl1",
            SolverKind::Irl1 => "irl1",
            SolverKind::Irl2 => "irl2",
            SolverKind::Ijt => "ijt",
        }
    }

    /// Whether the solver decreases the surrogate `psi(x^k, x^{k-1}, eps^k)`.
    pub fn has_psi_model(self) -> bool {
        matches!(self, SolverKind::Eirl1 | SolverKind::Irl1)
    }

    /// Schedule the solver actually runs with under `config`.
    pub fn effective_schedule(self, config: &SolverConfig) -> AlphaSchedule {
        match self {
            SolverKind::Irl1 | SolverKind::Ijt => AlphaSchedule::Constant(0.0),
            _ => config.alpha_schedule,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("solver", format!("expected eirl1|irl1|irl2|ijt, got `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    OpttolMet,
    MaxIter,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub x_final: DenseVector,
    pub iterations: usize,
    pub converged: bool,
    pub termination_reason: TerminationReason,
    pub trace: Trace,
    /// Smoothing vector at the final iterate.
    pub eps_final: EpsilonVector,
}

/// Runs `kind` from `x0`. `truth`, when given, adds the per-iteration MSE to the trace.
pub fn solve(
    kind: SolverKind,
    problem: &ProblemInstance,
    x0: &DenseVector,
    config: &SolverConfig,
    truth: Option<&DenseVector>,
) -> Result<SolveResult> {
    if kind == SolverKind::Ijt {
        IjtExponent::from_p(problem.reg().p())?;
    }
    let config = SolverConfig { alpha_schedule: kind.effective_schedule(config), ..config.clone() };
    let advance = |state: &IterateState, alpha: f64| -> Result<IterateState> {
        match kind {
            SolverKind::Eirl1 | SolverKind::Irl1 => eirl1_step(state, problem, &config, alpha),
            SolverKind::Irl2 => irl2_step(state, problem, &config, alpha),
            SolverKind::Ijt => ijt_step(state, problem, &config),
        }
    };
    drive(kind != SolverKind::Ijt, advance, problem, x0, &config, truth)
}

fn mse(x: &DenseVector, truth: &DenseVector) -> f64 {
    let d = x.distance(truth);
    d * d / x.len() as f64
}

struct Recorder<'a> {
    problem: &'a ProblemInstance,
    config: &'a SolverConfig,
    truth: Option<&'a DenseVector>,
    smoothed: bool,
    trace: Trace,
}

impl Recorder<'_> {
    fn make_record(
        &self,
        state: &IterateState,
        step_norm: f64,
        rel_step: f64,
        with_stationarity: bool,
    ) -> Result<IterationRecord> {
        let eps = self.smoothed.then_some(&state.eps);
        let f_eps = eval_f(&state.x, eps, self.problem)?;
        let psi = f_eps + 0.5 * self.config.beta * step_norm * step_norm;
        if !f_eps.is_finite() || !psi.is_finite() {
            return Err(Error::NumericalFailure(format!("objective is not finite at iteration {}", state.k)));
        }
        let signs = state.x.sign_pattern();
        Ok(IterationRecord {
            k: state.k,
            f_eps,
            psi,
            step_norm,
            rel_step,
            support_size: signs.support_size(),
            sign_hash: Some(signs.digest()),
            eps_norm1: if self.smoothed { state.eps.norm1() } else { 0.0 },
            stationarity: if with_stationarity { Some(stationarity_residual(&state.x, self.problem)?) } else { None },
            mse: self.truth.map(|t| mse(&state.x, t)),
        })
    }

    fn observe(&mut self, state: &IterateState, step_norm: f64, rel_step: f64, last: bool) -> Result<()> {
        let every = self.config.snapshot_every;
        let periodic = state.k.is_multiple_of(every);
        let keep = match self.config.trace_level {
            TraceLevel::None => false,
            TraceLevel::Summary => state.k == 0 || last,
            TraceLevel::Full => true,
        };
        if !keep {
            return Ok(());
        }
        let record = self.make_record(state, step_norm, rel_step, periodic || last)?;
        self.trace.records.push(record);
        if self.config.trace_level == TraceLevel::Full
            && (periodic || last)
            && self.trace.snapshots.last().is_none_or(|s| s.k != state.k)
        {
            self.trace.snapshots.push(Snapshot { k: state.k, x: state.x.clone() });
        }
        Ok(())
    }
}

fn drive(
    smoothed: bool,
    advance: impl Fn(&IterateState, f64) -> Result<IterateState>,
    problem: &ProblemInstance,
    x0: &DenseVector,
    config: &SolverConfig,
    truth: Option<&DenseVector>,
) -> Result<SolveResult> {
    config.validate()?;
    problem.check_dim(x0.len())?;
    if let Some(t) = truth {
        problem.check_dim(t.len())?;
    }
    let lf = problem.smooth().lipschitz_constant();
    if config.beta < lf * (1.0 - 1e-8) {
        log::warn!("beta = {} is below the Lipschitz constant {lf}; descent guarantees do not hold", config.beta);
    } else if config.beta <= lf * (1.0 + 1e-8) {
        static AT_BOUNDARY: std::sync::Once = std::sync::Once::new();
        AT_BOUNDARY.call_once(|| {
            log::warn!(
                "beta = {} does not exceed the Lipschitz constant {lf}; the decrease bound is not strict",
                config.beta
            )
        });
    }

    let mut state = IterateState::new(x0.clone(), EpsilonVector::uniform(x0.len(), config.eps0)?)?;
    let mut rec = Recorder { problem, config, truth, smoothed, trace: Trace::default() };
    // summary traces only see the first and final states
    let summary = config.trace_level == TraceLevel::Summary;
    if let Err(e) = rec.observe(&state, 0.0, 0.0, false) {
        return failure(state, rec.trace, e);
    }

    let mut reason = TerminationReason::MaxIter;
    while state.k < config.max_iter {
        let alpha = alpha_at(config.alpha_schedule, state.k);
        let next = match advance(&state, alpha) {
            Ok(next) => next,
            Err(Error::NumericalFailure(msg)) => {
                log::debug!("numerical failure at iteration {}: {msg}", state.k);
                reason = TerminationReason::NumericalFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        let step = next.x.distance(&next.x_prev);
        let xnorm = next.x.norm2();
        let rel = if xnorm > 0.0 { step / xnorm } else { step };
        let done = rel <= config.opttol || next.k >= config.max_iter;
        let record_result = if summary && !done { Ok(()) } else { rec.observe(&next, step, rel, done) };
        state = next;
        if let Err(e) = record_result {
            log::debug!("{e}");
            reason = TerminationReason::NumericalFailure;
            break;
        }
        if rel <= config.opttol {
            reason = TerminationReason::OpttolMet;
            break;
        }
    }
    Ok(SolveResult {
        iterations: state.k,
        converged: reason == TerminationReason::OpttolMet,
        termination_reason: reason,
        x_final: state.x,
        eps_final: state.eps,
        trace: rec.trace,
    })
}

fn failure(state: IterateState, trace: Trace, err: Error) -> Result<SolveResult> {
    match err {
        Error::NumericalFailure(_) => Ok(SolveResult {
            iterations: state.k,
            converged: false,
            termination_reason: TerminationReason::NumericalFailure,
            x_final: state.x,
            eps_final: state.eps,
            trace,
        }),
        e => Err(e),
    }
}

/// Maps kernel input errors raised on computed quantities to numerical failure.
pub(crate) fn numerical(err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => Error::NumericalFailure(msg),
        e => e,
    }
}

/// Surrogate value for a state, using the smoothing the solver applies.
pub fn state_psi(state: &IterateState, beta: f64, problem: &ProblemInstance) -> Result<f64> {
    eval_psi(&state.x, &state.x_prev, Some(&state.eps), beta, problem)
}
