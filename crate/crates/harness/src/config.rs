//! Plain-text `key = value` configuration.
//!
//! Keys match the long CLI flags (`solver`, `problem`, `n`, `reps`, `seed`,
//! `tol`, `m`, `eps0`, `mu`, `alpha`, `gamma`, `beta`, `theta`, `sigma`,
//! `out`, `format`, `trace`, plus `fd-step`, `checks` and `timing`). Blank
//! lines and lines starting with `#` are ignored.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use bgs_core::GradientMode;

use crate::experiment::{ExperimentSpec, Solver};
use crate::report::Format;
use crate::{HarnessError, Result};

/// Experiment settings before defaults are filled in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub solver: Option<Solver>,
    pub problem: Option<String>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub m: Option<usize>,
    pub eps0: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub trace: Option<PathBuf>,
    /// Forward-difference step; exact gradients when unset.
    pub fd_step: Option<f64>,
    pub checks: Option<bool>,
    pub timing: Option<bool>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut s = Settings::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| HarnessError::Config {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            s.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "solver" => self.solver = Some(value.parse().map_err(|e: HarnessError| e.to_string())?),
            "problem" => self.problem = Some(value.to_string()),
            "n" => self.n = Some(parse_value(key, value)?),
            "reps" => self.reps = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "tol" => self.tol = Some(parse_value(key, value)?),
            "m" => self.m = Some(parse_value(key, value)?),
            "eps0" => self.eps0 = Some(parse_value(key, value)?),
            "mu" => self.mu = Some(parse_value(key, value)?),
            "alpha" => self.alpha = Some(parse_value(key, value)?),
            "gamma" => self.gamma = Some(parse_value(key, value)?),
            "beta" => self.beta = Some(parse_value(key, value)?),
            "theta" => self.theta = Some(parse_value(key, value)?),
            "sigma" => self.sigma = Some(parse_value(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.parse().map_err(|e: HarnessError| e.to_string())?),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "fd-step" | "fd_step" => self.fd_step = Some(parse_value(key, value)?),
            "checks" => self.checks = Some(parse_value(key, value)?),
            "timing" => self.timing = Some(parse_value(key, value)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Values set in `other` win.
    pub fn merge(self, other: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            solver, problem, n, reps, seed, tol, m, eps0, mu, alpha, gamma, beta, theta, sigma, out,
            format, trace, fd_step, checks, timing
        )
    }

    /// Builds the experiment, filling unset values with defaults. `problem`
    /// and `n` are required.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let problem = self
            .problem
            .clone()
            .ok_or_else(|| HarnessError::Invalid("no problem given".into()))?;
        let n = match (self.n, problem.parse::<bgs_core::ProblemId>()) {
            (Some(n), _) => n,
            (None, Ok(id)) => id
                .fixed_dim()
                .ok_or_else(|| HarnessError::Invalid(format!("`{problem}` needs a dimension")))?,
            (None, Err(e)) => return Err(e.into()),
        };
        let mut spec = ExperimentSpec::new(self.solver.unwrap_or(Solver::Bgs), problem, n);
        spec.replications = self.reps.unwrap_or(spec.replications);
        spec.seed_base = self.seed.unwrap_or(spec.seed_base);
        spec.stop_rel_err = self.tol.unwrap_or(spec.stop_rel_err);
        spec.sample_size = self.m;
        let t = &mut spec.tuning;
        t.eps0 = self.eps0;
        t.mu = self.mu;
        t.alpha = self.alpha;
        t.gamma = self.gamma;
        t.beta = self.beta;
        t.theta = self.theta;
        t.sigma = self.sigma;
        t.differentiability_checks = self.checks.unwrap_or(false);
        if let Some(h) = self.fd_step {
            spec.gradient = GradientMode::ForwardDifference { h };
        }
        spec.timing = self.timing.unwrap_or(true);
        spec.keep_traces = self.trace.is_some();
        Ok(spec)
    }
}
