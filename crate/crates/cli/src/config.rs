//! JSON run configuration shared by `generate`, `solve` and `bench`.

use std::path::Path;

use eirl1::harness::{ExperimentSpec, SolverSpec};
use eirl1::{AlphaSchedule, RegParams, SolverConfig, SolverKind, TraceLevel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaValue {
    Value(f64),
    Named(String),
}

impl AlphaValue {
    pub fn schedule(&self) -> Result<AlphaSchedule, CliError> {
        let parsed = match self {
            AlphaValue::Value(v) => {
                let s = AlphaSchedule::Constant(*v);
                s.validate().map(|_| s)
            }
            AlphaValue::Named(s) => s.parse(),
        };
        parsed.map_err(|e| CliError::config("alpha", e.to_string()))
    }
}

/// Every field is optional in the file; omitted fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma2: f64,
    pub p: f64,
    pub lambda: f64,
    pub mu: f64,
    pub beta: f64,
    pub eps0: f64,
    pub alpha: AlphaValue,
    /// When present, `bench` sweeps EIRL1 over these momentum values.
    pub alphas: Option<Vec<f64>>,
    pub solvers: Vec<SolverKind>,
    pub opttol: f64,
    pub max_iter: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub trace: TraceLevel,
    pub snapshot_every: usize,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            m: 256,
            n: 512,
            k: 25,
            sigma2: 1e-4,
            p: 0.5,
            lambda: 0.05,
            mu: 0.9,
            beta: 1.0,
            eps0: 1.0,
            alpha: AlphaValue::Value(0.9),
            alphas: None,
            solvers: vec![SolverKind::Eirl1, SolverKind::Irl1],
            opttol: 1e-6,
            max_iter: eirl1::solvers::DEFAULT_MAX_ITER,
            trials: 20,
            base_seed: 0,
            trace: TraceLevel::Full,
            snapshot_every: eirl1::solvers::DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub solver: Option<SolverKind>,
    pub alpha: Option<String>,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub opttol: Option<f64>,
    pub max_iter: Option<usize>,
    pub trace: Option<TraceLevel>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.solver {
            self.solvers = vec![s];
        }
        if let Some(a) = &o.alpha {
            self.alpha = match a.parse::<f64>() {
                Ok(v) => AlphaValue::Value(v),
                Err(_) => AlphaValue::Named(a.clone()),
            };
            self.alpha.schedule()?;
        }
        if let Some(p) = o.p {
            self.p = p;
        }
        if let Some(l) = o.lambda {
            self.lambda = l;
        }
        if let Some(s) = o.seed {
            self.base_seed = s;
        }
        if let Some(t) = o.opttol {
            self.opttol = t;
        }
        if let Some(m) = o.max_iter {
            self.max_iter = m;
        }
        if let Some(t) = o.trace {
            self.trace = t;
        }
        Ok(self)
    }

    pub fn reg(&self) -> Result<RegParams, CliError> {
        Ok(RegParams::new(self.p, self.lambda)?)
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            beta: self.beta,
            mu: self.mu,
            eps0: self.eps0,
            alpha_schedule: self.alpha.schedule()?,
            opttol: self.opttol,
            max_iter: self.max_iter,
            trace_level: self.trace,
            snapshot_every: self.snapshot_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the instance shape without touching solver fields.
    pub fn validate_instance(&self) -> Result<(), CliError> {
        if self.k > self.n {
            return Err(CliError::config("K", format!("sparsity {} exceeds n = {}", self.k, self.n)));
        }
        if self.m == 0 || self.m >= self.n {
            return Err(CliError::config("m", format!("need 0 < m < n, got m = {}, n = {}", self.m, self.n)));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(CliError::config("sigma2", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> Result<ExperimentSpec, CliError> {
        self.validate_instance()?;
        let config = self.solver_config()?;
        if self.solvers.is_empty() {
            return Err(CliError::config("solvers", "at least one solver is required"));
        }
        let spec = ExperimentSpec {
            m: self.m,
            n: self.n,
            k: self.k,
            sigma2: self.sigma2,
            reg: self.reg()?,
            solvers: self.solvers.iter().map(|s| SolverSpec::new(*s, config.clone())).collect(),
            trials: self.trials,
            base_seed: self.base_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfigFile::parse("{}").unwrap();
        assert_eq!(cfg, RunConfigFile::default());
        let sc = cfg.solver_config().unwrap();
        assert_eq!((sc.beta, sc.mu, sc.eps0, sc.opttol), (1.0, 0.9, 1.0, 1e-6));
        assert_eq!(sc.alpha_schedule, AlphaSchedule::Constant(0.9));
        assert_eq!((cfg.lambda, cfg.sigma2), (0.05, 1e-4));
    }

    #[test]
    fn named_alpha_and_solver_names() {
        let cfg = RunConfigFile::parse(r#"{"alpha": "nesterov", "solvers": ["ijt", "irl2"], "K": 3}"#).unwrap();
        assert_eq!(cfg.solver_config().unwrap().alpha_schedule, AlphaSchedule::Nesterov);
        assert_eq!(cfg.solvers, vec![SolverKind::Ijt, SolverKind::Irl2]);
        assert_eq!(cfg.k, 3);
    }

    #[test]
    fn errors_are_addressed() {
        let err = RunConfigFile::parse("{\n  \"m\": 10,\n  \"bogus\": 1\n}").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
        let cfg = RunConfigFile::parse(r#"{"K": 600}"#).unwrap();
        assert!(cfg.experiment().unwrap_err().to_string().contains("`K`"));
        let cfg = RunConfigFile::parse(r#"{"mu": 1.5}"#).unwrap();
        assert!(cfg.solver_config().unwrap_err().to_string().contains("`mu`"));
    }

    #[test]
    fn flags_override_file() {
        let cfg = RunConfigFile::parse(r#"{"lambda": 0.2, "alpha": 0.5}"#).unwrap();
        let o = Overrides { lambda: Some(0.01), alpha: Some("0.3".into()), seed: Some(9), ..Default::default() };
        let cfg = cfg.apply(&o).unwrap();
        assert_eq!((cfg.lambda, cfg.base_seed), (0.01, 9));
        assert_eq!(cfg.alpha, AlphaValue::Value(0.3));
        let bad = Overrides { alpha: Some("fast".into()), ..Default::default() };
        assert!(RunConfigFile::default().apply(&bad).is_err());
    }
}
