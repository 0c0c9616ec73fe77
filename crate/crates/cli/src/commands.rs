use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use eirl1::diagnostics::{diagnose_records, DiagnosticsReport, IterationRecord};
use eirl1::harness::{
    alpha_sweep, gaussian_start, generate_instance, run_experiment, ExperimentOutcome, Quartiles, SolverStats,
    TrialSummary, RNG_NAME, X0_SEED_OFFSET,
};
use eirl1::io::{fmt_f64, read_matrix, read_trace_csv, read_vector, write_matrix, write_matrix_csv, write_trace_csv};
use eirl1::solvers::solve;
use eirl1::{
    AlphaSchedule, DenseVector, LeastSquaresProblem, ProblemInstance, SmoothTerm, SolverKind, TerminationReason,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Overrides, RunConfigFile};
use crate::error::CliError;

/// Tail share used for the step-norm rate fit in `solve` and `diagnose`.
pub const TAIL_FRACTION: f64 = 0.5;
pub const INSTANCE_SIDECAR: &str = "instance.json";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn with_path<T>(path: &Path, r: eirl1::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        eirl1::Error::Io(m) | eirl1::Error::Format(m) => CliError::Io { path: path.display().to_string(), message: m },
        other => other.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSidecar {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma2: f64,
    pub seed: u64,
    pub generator: String,
    pub format: String,
    pub files: Vec<FileEntry>,
}

/// Writes `A.bin`, `x_true.bin`, `y.bin` (plus CSV copies when asked) and `instance.json`.
pub fn cmd_generate(cfg: &RunConfigFile, out: &Path, csv: bool) -> Result<InstanceSidecar, CliError> {
    cfg.validate_instance()?;
    let inst = generate_instance(cfg.m, cfg.n, cfg.k, cfg.sigma2, cfg.base_seed)?;
    ensure_dir(out)?;
    let x_true = inst.x_true.as_array();
    let parts: [(&str, Array2<f64>); 3] = [
        ("A", inst.a.clone()),
        ("x_true", x_true.view().insert_axis(ndarray::Axis(1)).to_owned()),
        ("y", inst.y.view().insert_axis(ndarray::Axis(1)).to_owned()),
    ];
    let mut files = Vec::new();
    for (stem, mat) in &parts {
        let path = out.join(format!("{stem}.bin"));
        let mut w = create(&path)?;
        with_path(&path, write_matrix(&mut w, mat))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        drop(w);
        files.push(FileEntry { name: format!("{stem}.bin"), sha256: sha256_file(&path)? });
        if csv {
            let path = out.join(format!("{stem}.csv"));
            let mut w = create(&path)?;
            with_path(&path, write_matrix_csv(&mut w, mat))?;
            drop(w);
            files.push(FileEntry { name: format!("{stem}.csv"), sha256: sha256_file(&path)? });
        }
    }
    let sidecar = InstanceSidecar {
        m: cfg.m,
        n: cfg.n,
        k: cfg.k,
        sigma2: cfg.sigma2,
        seed: cfg.base_seed,
        generator: RNG_NAME.to_string(),
        format: "LPMAT001: magic, rows u64 LE, cols u64 LE, row-major f64 LE".to_string(),
        files,
    };
    write_json(&out.join(INSTANCE_SIDECAR), &sidecar)?;
    Ok(sidecar)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StartPoint {
    #[default]
    Gaussian,
    Zeros,
}

/// Everything needed to rerun the trace diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsOutput {
    pub passed: bool,
    pub beta: f64,
    pub alpha_bar: f64,
    pub report: DiagnosticsReport,
}

pub fn run_diagnostics(
    records: &[IterationRecord],
    kind: SolverKind,
    beta: f64,
    schedule: AlphaSchedule,
) -> Result<DiagnosticsOutput, CliError> {
    let alpha_bar = match kind {
        SolverKind::Irl1 | SolverKind::Ijt => 0.0,
        _ => schedule.supremum(),
    };
    let report = diagnose_records(records, beta, alpha_bar, kind.has_psi_model(), TAIL_FRACTION)?;
    Ok(DiagnosticsOutput { passed: report.passed(), beta, alpha_bar, report })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSummary {
    pub solver: SolverKind,
    pub alpha: String,
    pub p: f64,
    pub lambda: f64,
    pub beta: f64,
    pub lipschitz: f64,
    pub seed: u64,
    pub termination: TerminationReason,
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub final_support_size: usize,
    pub final_mse: Option<f64>,
    pub diagnostics: DiagnosticsOutput,
}

/// Solves a stored instance and writes `trace.csv` and `summary.json` into `out`.
pub fn cmd_solve(
    instance_dir: &Path,
    cfg: &RunConfigFile,
    seed_override: Option<u64>,
    start: StartPoint,
    out: &Path,
) -> Result<SolveSummary, CliError> {
    let kind = *cfg.solvers.first().ok_or_else(|| CliError::config("solvers", "no solver selected"))?;
    let config = cfg.solver_config()?;
    let reg = cfg.reg()?;

    let sidecar_path = instance_dir.join(INSTANCE_SIDECAR);
    let sidecar: Option<InstanceSidecar> = if sidecar_path.exists() {
        let text = fs::read_to_string(&sidecar_path).map_err(|e| CliError::io(&sidecar_path, e))?;
        let s: InstanceSidecar = serde_json::from_str(&text).map_err(|e| CliError::io(&sidecar_path, e))?;
        for f in &s.files {
            let p = instance_dir.join(&f.name);
            if p.exists() && sha256_file(&p)? != f.sha256 {
                return Err(CliError::Io { path: p.display().to_string(), message: "checksum mismatch".into() });
            }
        }
        Some(s)
    } else {
        None
    };

    let a_path = instance_dir.join("A.bin");
    let y_path = instance_dir.join("y.bin");
    let a = with_path(&a_path, read_matrix(open(&a_path)?))?;
    let y = with_path(&y_path, read_vector(open(&y_path)?))?;
    let xt_path = instance_dir.join("x_true.bin");
    let x_true = if xt_path.exists() {
        let v = with_path(&xt_path, read_vector(open(&xt_path)?))?;
        Some(with_path(&xt_path, DenseVector::new(v))?)
    } else {
        None
    };
    if let Some(xt) = &x_true {
        if xt.len() != a.ncols() {
            return Err(CliError::Runtime(format!("x_true has length {}, A has {} columns", xt.len(), a.ncols())));
        }
    }

    let n = a.ncols();
    let ls = LeastSquaresProblem::new(a, y)?;
    let lipschitz = ls.lipschitz_constant();
    let problem = ProblemInstance::new(ls, reg)?;
    let seed = seed_override.or(sidecar.as_ref().map(|s| s.seed)).unwrap_or(cfg.base_seed);
    let x0 = match start {
        StartPoint::Gaussian => gaussian_start(n, seed.wrapping_add(X0_SEED_OFFSET)),
        StartPoint::Zeros => DenseVector::zeros(n),
    };

    let res = solve(kind, &problem, &x0, &config, x_true.as_ref())?;
    ensure_dir(out)?;
    let trace_path = out.join("trace.csv");
    let mut w = create(&trace_path)?;
    with_path(&trace_path, write_trace_csv(&mut w, &res.trace.records))?;
    drop(w);

    let diagnostics = run_diagnostics(&res.trace.records, kind, config.beta, config.alpha_schedule)?;
    let final_objective = eirl1::math::eval_f(&res.x_final, None, &problem)?;
    let summary = SolveSummary {
        solver: kind,
        alpha: kind.effective_schedule(&config).to_string(),
        p: reg.p(),
        lambda: reg.lambda(),
        beta: config.beta,
        lipschitz,
        seed,
        termination: res.termination_reason,
        converged: res.converged,
        iterations: res.iterations,
        final_objective,
        final_support_size: res.x_final.support_size(),
        final_mse: x_true.as_ref().map(|t| {
            let d = res.x_final.distance(t);
            d * d / n as f64
        }),
        diagnostics,
    };
    write_json(&out.join("summary.json"), &summary)?;
    if summary.termination == TerminationReason::NumericalFailure {
        return Err(CliError::Runtime(format!("numerical failure after {} iterations", summary.iterations)));
    }
    Ok(summary)
}

/// Reads a trace CSV and reruns the diagnostics on it.
pub fn cmd_diagnose(
    trace: &Path,
    kind: SolverKind,
    beta: f64,
    schedule: AlphaSchedule,
) -> Result<DiagnosticsOutput, CliError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::config("beta", "must be positive and finite"));
    }
    schedule.validate()?;
    let records = with_path(trace, read_trace_csv(open(trace)?))?;
    if records.is_empty() {
        return Err(CliError::Io { path: trace.display().to_string(), message: "trace has no data rows".into() });
    }
    run_diagnostics(&records, kind, beta, schedule)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct StatsView<'a> {
    solver: &'a str,
    alpha: Option<f64>,
    trials: usize,
    converged_trials: usize,
    median_iterations: f64,
    mean_final_mse: f64,
    mean_support_size: f64,
    support_size: Quartiles,
    total_invariant_violations: usize,
    mse_curve_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct AggregateView<'a> {
    generator: &'static str,
    m: usize,
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    sigma2: f64,
    p: f64,
    lambda: f64,
    trials: usize,
    base_seed: u64,
    solvers: Vec<StatsView<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutcome {
    /// `(alpha, outcome)`; `alpha` is `None` for a plain solver comparison.
    pub blocks: Vec<(Option<f64>, ExperimentOutcome)>,
}

impl BenchOutcome {
    pub fn stats(&self) -> impl Iterator<Item = &SolverStats> {
        self.blocks.iter().flat_map(|(_, o)| o.stats.per_solver.iter())
    }

    pub fn summaries(&self) -> impl Iterator<Item = &TrialSummary> {
        self.blocks.iter().flat_map(|(_, o)| o.summaries.iter())
    }

    pub fn all_failed(&self) -> bool {
        self.summaries().all(|s| s.termination == TerminationReason::NumericalFailure)
    }
}

fn curve_file(label: &str) -> String {
    format!("mse_{label}.csv")
}

/// Runs the trial sweep and writes `summaries.csv`, `aggregate.json` and one
/// `mse_<label>.csv` per solver (or per momentum value when `alphas` is set).
pub fn cmd_bench(cfg: &RunConfigFile, out: &Path) -> Result<BenchOutcome, CliError> {
    let spec = cfg.experiment()?;
    let blocks = match &cfg.alphas {
        Some(alphas) if alphas.is_empty() => return Err(CliError::config("alphas", "list is empty")),
        Some(alphas) => alpha_sweep(&spec, alphas)?.into_iter().map(|b| (Some(b.alpha), b.outcome)).collect(),
        None => vec![(None, run_experiment(&spec)?)],
    };
    let outcome = BenchOutcome { blocks };
    ensure_dir(out)?;

    let path = out.join("summaries.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    for s in outcome.summaries() {
        w.serialize(s).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let mut views = Vec::new();
    for (alpha, o) in &outcome.blocks {
        for s in &o.stats.per_solver {
            let name = curve_file(&s.solver);
            write_curve(&out.join(&name), s)?;
            views.push(StatsView {
                solver: &s.solver,
                alpha: *alpha,
                trials: s.trials,
                converged_trials: s.converged_trials,
                median_iterations: s.median_iterations,
                mean_final_mse: s.mean_final_mse,
                mean_support_size: s.mean_support_size,
                support_size: s.support_size,
                total_invariant_violations: s.total_invariant_violations,
                mse_curve_file: name,
            });
        }
    }
    let view = AggregateView {
        generator: RNG_NAME,
        m: spec.m,
        n: spec.n,
        k: spec.k,
        sigma2: spec.sigma2,
        p: spec.reg.p(),
        lambda: spec.reg.lambda(),
        trials: spec.trials,
        base_seed: spec.base_seed,
        solvers: views,
    };
    write_json(&out.join("aggregate.json"), &view)?;
    Ok(outcome)
}

fn write_curve(path: &Path, s: &SolverStats) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| CliError::io(path, e);
    w.write_record(["k", "mean_mse", "median_mse"]).map_err(io)?;
    for (k, (mean, med)) in s.mean_mse_curve.iter().zip(&s.median_mse_curve).enumerate() {
        w.write_record([k.to_string(), fmt_f64(*mean), fmt_f64(*med)]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Thread cap from `LP_EIRL1_THREADS`, if set.
pub fn thread_limit() -> Result<Option<usize>, CliError> {
    match std::env::var("LP_EIRL1_THREADS") {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|t| *t > 0)
            .map(Some)
            .ok_or_else(|| CliError::config("LP_EIRL1_THREADS", format!("expected a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfigFile, CliError> {
    RunConfigFile::load(path)?.apply(overrides)
}
