//! Replicated solver runs with the relative-error stopping rule.

use std::fmt;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use bgs_core::bgs::{self, SolverConfig};
use bgs_core::gs::{self, GsConfig};
use bgs_core::problems::WithGradientMode;
use bgs_core::qp::SimplexQpInstance;
use bgs_core::sampling::{sample_point, SolverRng};
use bgs_core::trace::StepDetail;
use bgs_core::{GradientMode, IterationTrace, Objective, Observer, Problem, StepKind, StopReason};
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Solver {
    #[serde(rename = "BGS")]
    Bgs,
    #[serde(rename = "GS")]
    Gs,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Bgs => "BGS",
            Solver::Gs => "GS",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Solver {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "bgs" => Ok(Solver::Bgs),
            "gs" => Ok(Solver::Gs),
            _ => Err(HarnessError::Invalid(format!("unknown solver `{s}`"))),
        }
    }
}

/// Solver parameters that override the defaults when set. `eps0` and `beta`
/// also apply to the gradient sampling baseline (as its initial radius and
/// Armijo constant); the rest only affect B-GS.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tuning {
    pub eps0: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub differentiability_checks: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub solver: Solver,
    pub problem: String,
    pub n: usize,
    pub replications: usize,
    /// Stop a run once `(f - f*) / (|f*| + 1)` is at or below this.
    pub stop_rel_err: f64,
    /// Replication `r` uses seed `seed_base + r`.
    pub seed_base: u64,
    /// Sampled points per iteration; see [`default_sample_size`].
    pub sample_size: Option<usize>,
    pub tuning: Tuning,
    pub gradient: GradientMode,
    pub max_iters: usize,
    pub min_radius: f64,
    /// Start from a random point near the reference start instead of the
    /// reference start itself.
    pub perturb: bool,
    /// Overrides the reference starting point.
    pub start: Option<Vec<f64>>,
    /// Record wall-clock time per run. When off, `time_s` is 0 and reports
    /// are reproducible byte for byte.
    pub timing: bool,
    /// Worker threads; 0 picks the available parallelism.
    pub workers: usize,
    /// Keep the per-step traces in the outcome.
    pub keep_traces: bool,
    /// Write every QP instance to this directory.
    pub qp_dump: Option<PathBuf>,
}

/// 5e-4 up to `n = 200`, 5e-3 above.
pub fn default_tolerance(n: usize) -> f64 {
    if n <= 200 {
        5e-4
    } else {
        5e-3
    }
}

/// `2n` for small problems, `ceil(n / 10)` from `n = 21` on. The gradient
/// sampling baseline always uses `2n`.
pub fn default_sample_size(solver: Solver, n: usize) -> usize {
    match solver {
        Solver::Gs => 2 * n,
        Solver::Bgs if n <= 20 => 2 * n,
        Solver::Bgs => n.div_ceil(10),
    }
}

impl ExperimentSpec {
    pub fn new(solver: Solver, problem: impl Into<String>, n: usize) -> Self {
        Self {
            solver,
            problem: problem.into(),
            n,
            replications: 5,
            stop_rel_err: default_tolerance(n),
            seed_base: 0,
            sample_size: None,
            tuning: Tuning::default(),
            gradient: GradientMode::Exact,
            max_iters: 1000,
            min_radius: 1e-12,
            perturb: true,
            start: None,
            timing: true,
            workers: 0,
            keep_traces: false,
            qp_dump: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(HarnessError::Invalid("replications must be at least 1".into()));
        }
        if !(self.stop_rel_err > 0.0) {
            return Err(HarnessError::Invalid("stop tolerance must be positive".into()));
        }
        self.gradient.validate()?;
        Ok(())
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
            .unwrap_or_else(|| default_sample_size(self.solver, self.n))
    }

    pub fn bgs_config(&self, seed: u64) -> SolverConfig {
        let t = &self.tuning;
        let mut c = SolverConfig::with_sample_size(self.sample_size());
        c.eps0 = t.eps0.unwrap_or(c.eps0);
        c.mu = t.mu.unwrap_or(c.mu);
        c.alpha = t.alpha.unwrap_or(c.alpha);
        c.gamma = t.gamma.unwrap_or(c.gamma);
        c.beta = t.beta.unwrap_or(c.beta);
        c.theta = t.theta.unwrap_or(c.theta);
        c.sigma = t.sigma.unwrap_or(c.sigma);
        c.differentiability_checks = t.differentiability_checks;
        c.max_outer = self.max_iters;
        c.min_radius = self.min_radius;
        c.seed = seed;
        c
    }

    pub fn gs_config(&self, seed: u64) -> GsConfig {
        let mut c = GsConfig::for_dim(self.n);
        c.sample_size = self.sample_size();
        c.eps0 = self.tuning.eps0.unwrap_or(c.eps0);
        c.armijo_beta = self.tuning.beta.unwrap_or(c.armijo_beta);
        c.max_iters = self.max_iters;
        c.min_radius = self.min_radius;
        c.seed = seed;
        c
    }
}

/// One solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: Solver,
    pub problem: String,
    pub n: usize,
    pub seed: u64,
    /// Outer iterations; inner passes of B-GS are not counted.
    pub iters: usize,
    pub g_eval: usize,
    pub time_s: f64,
    #[serde(rename = "E_final")]
    pub e_final: f64,
    pub converged: bool,
    /// Why the run ended.
    pub stop: String,
    /// Kind of the step after which the tolerance was met, or `start`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_step: Option<String>,
    /// Cut short by a solver safety guard; such runs are left out of the
    /// averages.
    pub aborted: bool,
}

/// Means over the runs that were not aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub solver: Solver,
    pub problem: String,
    pub n: usize,
    pub runs: usize,
    pub excluded: usize,
    /// The means are `None` when every run was excluded.
    pub iters: Option<f64>,
    pub g_eval: Option<f64>,
    pub time_s: Option<f64>,
    #[serde(rename = "E_final")]
    pub e_final: Option<f64>,
    /// Number of included runs that met the tolerance.
    pub converged: usize,
}

impl Aggregate {
    pub fn from_reports(reports: &[RunReport]) -> Option<Self> {
        let first = reports.first()?;
        let kept: Vec<&RunReport> = reports.iter().filter(|r| !r.aborted).collect();
        let count = kept.len();
        let mean = |f: &dyn Fn(&RunReport) -> f64| {
            (count > 0).then(|| kept.iter().map(|r| f(r)).sum::<f64>() / count as f64)
        };
        Some(Self {
            solver: first.solver,
            problem: first.problem.clone(),
            n: first.n,
            runs: reports.len(),
            excluded: reports.len() - count,
            iters: mean(&|r| r.iters as f64),
            g_eval: mean(&|r| r.g_eval as f64),
            time_s: mean(&|r| r.time_s),
            e_final: mean(&|r| r.e_final),
            converged: kept.iter().filter(|r| r.converged).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Ordered by seed.
    pub reports: Vec<RunReport>,
    pub aggregate: Aggregate,
    /// `(seed, trace)` per run when traces were requested.
    pub traces: Vec<(u64, Vec<IterationTrace>)>,
    pub f_star: f64,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.reports.iter().all(|r| !r.aborted)
    }
}

/// A point drawn uniformly from the ball of radius `(||x0|| + 1) / n`
/// around `x0`.
pub fn perturb_start(x0: &[f64], n: usize, rng: &mut SolverRng) -> Vec<f64> {
    let radius = (bgs_core::math::norm(x0) + 1.0) / n as f64;
    sample_point(x0, radius, rng)
}

struct RunObserver<'a> {
    problem: &'a Problem,
    tol: f64,
    fired: Option<StepKind>,
    dump: Option<QpDump>,
}

struct QpDump {
    dir: PathBuf,
    seed: u64,
    count: usize,
    error: Option<HarnessError>,
}

impl Observer for RunObserver<'_> {
    fn on_step(&mut self, record: &IterationTrace, _: &StepDetail<'_>) -> ControlFlow<()> {
        if self.problem.relative_error(record.f_val) <= self.tol {
            self.fired = Some(record.kind);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    fn on_qp(&mut self, instance: &SimplexQpInstance) {
        let Some(d) = &mut self.dump else { return };
        if d.error.is_some() {
            return;
        }
        let path = d.dir.join(format!("qp-{}-{:06}.txt", d.seed, d.count));
        d.count += 1;
        if let Err(e) = std::fs::write(&path, instance.to_string()) {
            d.error = Some(HarnessError::io(path, e));
        }
    }
}

fn run_one(spec: &ExperimentSpec, problem: &Problem, seed: u64) -> Result<(RunReport, Vec<IterationTrace>)> {
    let mut rng = SolverRng::seed_from_u64(seed);
    let base = spec.start.as_deref().unwrap_or(problem.x0());
    let x_start = if spec.perturb {
        perturb_start(base, spec.n, &mut rng)
    } else {
        base.to_vec()
    };
    let solver_seed = rng.next_u64();
    let oracle = WithGradientMode::new(problem, spec.gradient)?;

    let mut report = RunReport {
        solver: spec.solver,
        problem: problem.name().to_string(),
        n: spec.n,
        seed,
        iters: 0,
        g_eval: 0,
        time_s: 0.0,
        e_final: problem.relative_error(oracle.value(&x_start)),
        converged: false,
        stop: StopReason::Interrupted.as_str().to_string(),
        stop_step: Some("start".into()),
        aborted: false,
    };
    if report.e_final <= spec.stop_rel_err {
        report.converged = true;
        return Ok((report, Vec::new()));
    }

    let mut observer = RunObserver {
        problem,
        tol: spec.stop_rel_err,
        fired: None,
        dump: spec.qp_dump.as_ref().map(|dir| QpDump {
            dir: dir.clone(),
            seed,
            count: 0,
            error: None,
        }),
    };
    let clock = Instant::now();
    let result = match spec.solver {
        Solver::Bgs => bgs::run_observed(&oracle, &spec.bgs_config(solver_seed), &x_start, &mut observer)?,
        Solver::Gs => gs::gs_run_observed(&oracle, &spec.gs_config(solver_seed), &x_start, &mut observer)?,
    };
    let elapsed = clock.elapsed().as_secs_f64();
    if let Some(e) = observer.dump.and_then(|d| d.error) {
        return Err(e);
    }

    report.iters = result.iterations;
    report.g_eval = result.grad_evals;
    report.time_s = if spec.timing { elapsed } else { 0.0 };
    report.e_final = problem.relative_error(problem.value(&result.x));
    report.converged = report.e_final <= spec.stop_rel_err;
    report.stop = result.stop.as_str().to_string();
    report.stop_step = observer.fired.map(|k| k.as_str().to_string());
    report.aborted = result.stop.is_abort();
    Ok((report, result.trace))
}

/// Runs `spec.replications` independent runs, in parallel when more than one
/// worker is available, and merges them in seed order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let problem = bgs_core::make_problem(&spec.problem, spec.n)?;
    if let Some(s) = &spec.start {
        if s.len() != spec.n {
            return Err(bgs_core::Error::DimensionMismatch {
                expected: spec.n,
                got: s.len(),
            }
            .into());
        }
    }
    if let Some(dir) = &spec.qp_dump {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let reps = spec.replications;
    let workers = match spec.workers {
        0 => std::thread::available_parallelism().map_or(1, |p| p.get()),
        w => w,
    }
    .min(reps);

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(reps));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= reps {
                    break;
                }
                let out = run_one(spec, &problem, spec.seed_base + r as u64);
                results.lock().expect("worker panicked").push((r, out));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|(r, _)| *r);

    let mut reports = Vec::with_capacity(reps);
    let mut traces = Vec::new();
    for (_, out) in results {
        let (report, trace) = out?;
        if spec.keep_traces {
            traces.push((report.seed, trace));
        }
        reports.push(report);
    }
    let aggregate = Aggregate::from_reports(&reports).expect("at least one replication");
    Ok(ExperimentOutcome {
        reports,
        aggregate,
        traces,
        f_star: problem.f_star(),
    })
}
