//! Seeded sparse-recovery experiments: instance generation, multi-trial sweeps
//! over solvers and momentum values, and aggregate statistics.
//!
//! Trials are independent and run on the rayon pool when the `parallel`
//! feature is enabled. Results are always reduced in trial order, so the
//! output does not depend on scheduling.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diagnostics::check_psi_decrease;
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, Execution};
use crate::math::{DenseVector, RegParams};
use crate::problems::{LeastSquaresProblem, ProblemInstance};
use crate::solvers::{solve, AlphaSchedule, IjtExponent, SolverConfig, SolverKind, TerminationReason, TraceLevel};

/// Generator used for every random draw in the harness.
pub const RNG_NAME: &str = "rand_chacha::ChaCha8Rng (seed_from_u64)";
/// Added to the instance seed to obtain the seed of the shared starting point.
pub const X0_SEED_OFFSET: u64 = 1 << 32;

/// A sparse recovery instance `y = A x_true + noise` with orthonormal rows in `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub a: Array2<f64>,
    pub x_true: DenseVector,
    pub y: Array1<f64>,
    pub seed: u64,
}

impl Instance {
    /// The least-squares problem `1/2 ||A x - y||^2` with `L = 1` from the orthonormal rows.
    pub fn problem(&self, reg: RegParams) -> Result<ProblemInstance> {
        let ls = LeastSquaresProblem::new(self.a.clone(), self.y.clone())?;
        ProblemInstance::new(ls, reg)
    }
}

/// Draws `A` (i.i.d. standard normal, rows orthonormalized via a reduced QR of
/// `A^T`), places `k` random `+-1` spikes in `x_true` and adds Gaussian noise
/// of variance `sigma2` to `A x_true`.
pub fn generate_instance(m: usize, n: usize, k: usize, sigma2: f64, seed: u64) -> Result<Instance> {
    if m == 0 || m >= n {
        return Err(Error::spec("m", format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    if k > n {
        return Err(Error::spec("K", format!("sparsity {k} exceeds dimension {n}")));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::spec("sigma2", format!("must be a nonnegative variance, got {sigma2}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    // column j of A^T is row j of A
    let at = nalgebra::DMatrix::from_fn(n, m, |i, j| gauss[j * n + i]);
    let q = at.qr().q();
    let a = Array2::from_shape_fn((m, n), |(i, j)| q[(j, i)]);

    let mut x_true = Array1::zeros(n);
    for pos in index::sample(&mut rng, n, k).into_vec() {
        x_true[pos] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let mut y = mat_vec(&a, x_true.view());
    if sigma2 > 0.0 {
        let sigma = sigma2.sqrt();
        y.iter_mut().for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(Instance { a, x_true: DenseVector::new(x_true)?, y, seed })
}

/// Standard Gaussian starting point.
pub fn gaussian_start(n: usize, seed: u64) -> DenseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseVector::new((0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("gaussian draws are finite")
}

/// A solver together with its configuration and a display label.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub config: SolverConfig,
    pub label: String,
}

impl SolverSpec {
    pub fn new(kind: SolverKind, config: SolverConfig) -> Self {
        let label = match kind {
            SolverKind::Eirl1 | SolverKind::Irl2 => match config.alpha_schedule {
                AlphaSchedule::Constant(a) => format!("{}_alpha{a}", kind.name()),
                AlphaSchedule::Nesterov => format!("{}_nesterov", kind.name()),
            },
            _ => kind.name().to_string(),
        };
        Self { kind, config, label }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub m: usize,
    pub n: usize,
    /// Number of `+-1` spikes in the ground truth.
    pub k: usize,
    pub sigma2: f64,
    pub reg: RegParams,
    pub solvers: Vec<SolverSpec>,
    pub trials: usize,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::spec("m", format!("need 0 < m < n, got m = {}, n = {}", self.m, self.n)));
        }
        if self.k > self.n {
            return Err(Error::spec("K", format!("sparsity {} exceeds dimension {}", self.k, self.n)));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::spec("sigma2", "must be nonnegative"));
        }
        if self.trials == 0 {
            return Err(Error::spec("trials", "must be at least 1"));
        }
        if self.solvers.is_empty() {
            return Err(Error::spec("solvers", "at least one solver is required"));
        }
        for s in &self.solvers {
            s.config.validate()?;
            if s.kind == SolverKind::Ijt {
                IjtExponent::from_p(self.reg.p())?;
            }
        }
        Ok(())
    }

    pub fn instance_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    pub fn start_seed(&self, trial: usize) -> u64 {
        self.instance_seed(trial).wrapping_add(X0_SEED_OFFSET)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub solver: String,
    pub iterations: usize,
    pub converged: bool,
    pub termination: TerminationReason,
    pub final_mse: f64,
    pub final_support_size: usize,
    pub invariant_violations: usize,
    /// Not serialized so that outputs stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Five-number summary (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverStats {
    pub solver: String,
    pub trials: usize,
    pub converged_trials: usize,
    pub median_iterations: f64,
    pub mean_final_mse: f64,
    pub mean_support_size: f64,
    pub support_size: Quartiles,
    pub total_invariant_violations: usize,
    /// Per-iteration MSE averaged over trials; shorter runs are extended by their final value.
    pub mean_mse_curve: Vec<f64>,
    pub median_mse_curve: Vec<f64>,
}

impl SolverStats {
    /// Mean MSE at iteration `k` (the final value past the longest run).
    pub fn mean_mse_at(&self, k: usize) -> Option<f64> {
        self.mean_mse_curve.get(k.min(self.mean_mse_curve.len().saturating_sub(1))).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateStats {
    pub per_solver: Vec<SolverStats>,
}

impl AggregateStats {
    pub fn get(&self, label: &str) -> Option<&SolverStats> {
        self.per_solver.iter().find(|s| s.solver == label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    /// Ordered by trial, then by position in the solver list.
    pub summaries: Vec<TrialSummary>,
    pub stats: AggregateStats,
}

struct TrialRun {
    summary: TrialSummary,
    mse_curve: Vec<f64>,
}

fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<TrialRun>> {
    let seed = spec.instance_seed(trial);
    let inst = generate_instance(spec.m, spec.n, spec.k, spec.sigma2, seed)?;
    let problem = inst.problem(spec.reg)?;
    let x0 = gaussian_start(spec.n, spec.start_seed(trial));
    spec.solvers
        .iter()
        .map(|s| {
            let config = SolverConfig { trace_level: TraceLevel::Full, ..s.config.clone() };
            let started = Instant::now();
            let res = solve(s.kind, &problem, &x0, &config, Some(&inst.x_true))?;
            let wall_time = started.elapsed();
            let invariant_violations = if s.kind.has_psi_model() && res.trace.records.len() >= 2 {
                let alpha_bar = s.kind.effective_schedule(&config).supremum();
                check_psi_decrease(&res.trace.records, config.beta, alpha_bar)?.violations.len()
            } else {
                0
            };
            let mse_curve: Vec<f64> = res.trace.records.iter().filter_map(|r| r.mse).collect();
            let d = res.x_final.distance(&inst.x_true);
            Ok(TrialRun {
                summary: TrialSummary {
                    trial,
                    seed,
                    solver: s.label.clone(),
                    iterations: res.iterations,
                    converged: res.converged,
                    termination: res.termination_reason,
                    final_mse: d * d / spec.n as f64,
                    final_support_size: res.x_final.support_size(),
                    invariant_violations,
                    wall_time,
                },
                mse_curve,
            })
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    Quartiles::of(values).map_or(f64::NAN, |q| q.median)
}

fn aggregate(spec: &ExperimentSpec, runs: &[Vec<TrialRun>]) -> AggregateStats {
    let per_solver = spec
        .solvers
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mine: Vec<&TrialRun> = runs.iter().map(|t| &t[j]).collect();
            let len = mine.iter().map(|r| r.mse_curve.len()).max().unwrap_or(0);
            let mut mean_curve = Vec::with_capacity(len);
            let mut median_curve = Vec::with_capacity(len);
            for k in 0..len {
                let at_k: Vec<f64> =
                    mine.iter().filter_map(|r| r.mse_curve.get(k).or(r.mse_curve.last()).copied()).collect();
                mean_curve.push(at_k.iter().sum::<f64>() / at_k.len() as f64);
                median_curve.push(median(&at_k));
            }
            let iters: Vec<f64> = mine.iter().map(|r| r.summary.iterations as f64).collect();
            let support: Vec<f64> = mine.iter().map(|r| r.summary.final_support_size as f64).collect();
            let n = mine.len() as f64;
            SolverStats {
                solver: s.label.clone(),
                trials: mine.len(),
                converged_trials: mine.iter().filter(|r| r.summary.converged).count(),
                median_iterations: median(&iters),
                mean_final_mse: mine.iter().map(|r| r.summary.final_mse).sum::<f64>() / n,
                mean_support_size: support.iter().sum::<f64>() / n,
                support_size: Quartiles::of(&support).expect("at least one trial"),
                total_invariant_violations: mine.iter().map(|r| r.summary.invariant_violations).sum(),
                mean_mse_curve: mean_curve,
                median_mse_curve: median_curve,
            }
        })
        .collect();
    AggregateStats { per_solver }
}

/// Runs every solver on every trial using the rayon pool when available.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    run_experiment_with(spec, Execution::Parallel)
}

pub fn run_experiment_with(spec: &ExperimentSpec, exec: Execution) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let runs: Vec<Vec<TrialRun>> = map_trials(spec.trials, exec, |t| run_trial(spec, t))?;
    let stats = aggregate(spec, &runs);
    let summaries = runs.into_iter().flatten().map(|r| r.summary).collect();
    Ok(ExperimentOutcome { summaries, stats })
}

fn map_trials<T: Send>(trials: usize, exec: Execution, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..trials).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..trials).map(f).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaBlock {
    pub alpha: f64,
    pub outcome: ExperimentOutcome,
}

/// Runs EIRL1 once per momentum value on the same seeds. The first solver in
/// `spec` provides the remaining configuration (defaults when the list is empty).
pub fn alpha_sweep(spec: &ExperimentSpec, alphas: &[f64]) -> Result<Vec<AlphaBlock>> {
    alpha_sweep_with(spec, alphas, Execution::Parallel)
}

pub fn alpha_sweep_with(spec: &ExperimentSpec, alphas: &[f64], exec: Execution) -> Result<Vec<AlphaBlock>> {
    let base = spec.solvers.first().map(|s| s.config.clone()).unwrap_or_default();
    alphas
        .iter()
        .map(|&alpha| {
            let schedule = AlphaSchedule::Constant(alpha);
            schedule.validate()?;
            let config = SolverConfig { alpha_schedule: schedule, ..base.clone() };
            let sub = ExperimentSpec { solvers: vec![SolverSpec::new(SolverKind::Eirl1, config)], ..spec.clone() };
            Ok(AlphaBlock { alpha, outcome: run_experiment_with(&sub, exec)? })
        })
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool for `None`.
pub fn with_thread_limit<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(t) = threads {
        match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a {t}-thread pool ({e}); using the global pool"),
        }
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(solvers: Vec<SolverSpec>, trials: usize) -> ExperimentSpec {
        ExperimentSpec {
            m: 20,
            n: 40,
            k: 3,
            sigma2: 1e-4,
            reg: RegParams::new(0.5, 0.05).unwrap(),
            solvers,
            trials,
            base_seed: 7,
        }
    }

    fn eirl1(alpha: f64) -> SolverSpec {
        SolverSpec::new(
            SolverKind::Eirl1,
            SolverConfig { alpha_schedule: AlphaSchedule::Constant(alpha), max_iter: 2000, ..Default::default() },
        )
    }

    #[test]
    fn instance_contract() {
        for seed in 0..10 {
            let inst = generate_instance(12, 30, 4, 1e-4, seed).unwrap();
            let gram = inst.a.dot(&inst.a.t());
            let dev = (&gram - &Array2::<f64>::eye(12)).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(dev <= 1e-10, "seed {seed}: {dev}");
            assert_eq!(inst.x_true.support_size(), 4);
            assert!(inst.x_true.as_slice().iter().all(|v| *v == 0.0 || v.abs() == 1.0));
        }
    }

    #[test]
    fn noiseless_and_empty_instances() {
        let inst = generate_instance(5, 9, 2, 0.0, 1).unwrap();
        assert_eq!(inst.y, mat_vec(&inst.a, inst.x_true.view()));
        let inst = generate_instance(5, 9, 0, 0.0, 1).unwrap();
        assert_eq!(inst.x_true.support_size(), 0);
        assert!(inst.y.iter().all(|v| *v == 0.0));
        let noisy = generate_instance(5, 9, 0, 1.0, 1).unwrap();
        assert!(noisy.y.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn instance_errors_name_the_field() {
        assert!(matches!(generate_instance(5, 9, 10, 0.0, 1), Err(Error::Specification { field: "K", .. })));
        assert!(matches!(generate_instance(9, 9, 1, 0.0, 1), Err(Error::Specification { field: "m", .. })));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_instance(6, 11, 3, 1e-4, 42).unwrap(), generate_instance(6, 11, 3, 1e-4, 42).unwrap());
        assert_ne!(generate_instance(6, 11, 3, 1e-4, 42).unwrap(), generate_instance(6, 11, 3, 1e-4, 43).unwrap());
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        let q = Quartiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!(q.median, 1.5);
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn single_trial_stats_match_the_trial() {
        let out = run_experiment(&tiny_spec(vec![eirl1(0.9)], 1)).unwrap();
        assert_eq!(out.summaries.len(), 1);
        let (s, st) = (&out.summaries[0], &out.stats.per_solver[0]);
        assert_eq!(st.median_iterations, s.iterations as f64);
        assert_eq!(st.mean_final_mse, s.final_mse);
        assert_eq!(st.support_size.median, s.final_support_size as f64);
        assert_eq!(st.mean_mse_curve.len(), s.iterations + 1);
        assert_eq!(*st.mean_mse_curve.last().unwrap(), s.final_mse);
    }

    #[test]
    fn experiments_are_deterministic_across_execution_modes() {
        let spec = tiny_spec(vec![eirl1(0.9), SolverSpec::new(SolverKind::Irl1, SolverConfig::default())], 4);
        let a = run_experiment_with(&spec, Execution::Sequential).unwrap();
        let b = run_experiment_with(&spec, Execution::Parallel).unwrap();
        let strip = |o: &ExperimentOutcome| {
            o.summaries.iter().map(|s| TrialSummary { wall_time: Duration::ZERO, ..s.clone() }).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn alpha_sweep_blocks() {
        let spec = tiny_spec(vec![eirl1(0.5)], 2);
        let blocks = alpha_sweep(&spec, &[0.9, 0.9]).unwrap();
        assert_eq!(blocks[0].outcome.stats, blocks[1].outcome.stats);

        let zero = alpha_sweep(&spec, &[0.0]).unwrap();
        let irl1 = run_experiment(&tiny_spec(vec![SolverSpec::new(SolverKind::Irl1, eirl1(0.5).config)], 2)).unwrap();
        let (a, b) = (&zero[0].outcome.stats.per_solver[0], &irl1.stats.per_solver[0]);
        assert_eq!(a.mean_mse_curve, b.mean_mse_curve);
        assert_eq!(a.support_size, b.support_size);
        assert!(alpha_sweep(&spec, &[1.0]).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec(vec![eirl1(0.9)], 1);
        spec.k = 100;
        assert!(matches!(run_experiment(&spec), Err(Error::Specification { field: "K", .. })));
        let spec = ExperimentSpec {
            reg: RegParams::new(0.3, 0.05).unwrap(),
            ..tiny_spec(vec![SolverSpec::new(SolverKind::Ijt, SolverConfig::default())], 1)
        };
        assert!(matches!(run_experiment(&spec), Err(Error::Config { field: "p", .. })));
    }
}
