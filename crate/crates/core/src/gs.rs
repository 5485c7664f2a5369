//! Plain gradient sampling, kept as a baseline for gradient-evaluation
//! counts.
//!
//! Each iteration samples gradients around `x_k`, takes the minimum-norm
//! element `g` of their convex hull and line-searches along `-g / ||g||`.
//! The radius shrinks when `||g||` is small or the line search fails.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::SeedableRng;

use crate::bgs::{AggregateAtom, RunResult, SearchDirection, StepOutcome};
use crate::math::{add_scaled, all_finite, norm, norm_sq};
use crate::problems::Objective;
use crate::qp::{self, QpError, SimplexQpInstance};
use crate::sampling::{sample_ball, SolverRng};
use crate::trace::{IterationTrace, NoObserver, Observer, StepDetail, StepKind, StopReason};
use crate::{Error, Result};

/// Backtracking steps before the line search is declared failed.
pub const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct GsConfig {
    pub sample_size: usize,
    pub eps0: f64,
    /// Radius reduction factor.
    pub eps_shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_beta: f64,
    /// Backtracking factor.
    pub armijo_gamma: f64,
    /// Shrink the radius when the min-norm element is this short.
    pub stationarity_tol: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub min_radius: f64,
    pub qp_tol: f64,
}

impl GsConfig {
    /// Defaults with `2n` sampled points.
    pub fn for_dim(n: usize) -> Self {
        Self {
            sample_size: 2 * n,
            eps0: 0.1,
            eps_shrink: 0.1,
            armijo_beta: 1e-6,
            armijo_gamma: 0.5,
            stationarity_tol: 1e-6,
            seed: 0,
            max_iters: 1000,
            min_radius: 1e-12,
            qp_tol: qp::DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.sample_size == 0 {
            return Err(Error::InvalidConfig("sample_size must be positive"));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(Error::InvalidConfig("eps0 must be positive"));
        }
        if !open_unit(self.eps_shrink) {
            return Err(Error::InvalidConfig("eps_shrink must lie in (0, 1)"));
        }
        if !open_unit(self.armijo_beta) {
            return Err(Error::InvalidConfig("armijo_beta must lie in (0, 1)"));
        }
        if !open_unit(self.armijo_gamma) {
            return Err(Error::InvalidConfig("armijo_gamma must lie in (0, 1)"));
        }
        if !(self.stationarity_tol >= 0.0) {
            return Err(Error::InvalidConfig("stationarity_tol must be nonnegative"));
        }
        if !(self.min_radius > 0.0) {
            return Err(Error::InvalidConfig("min_radius must be positive"));
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::InvalidConfig("qp_tol must be positive"));
        }
        Ok(())
    }
}

/// Minimum-norm element of the convex hull of `grads`.
pub fn min_norm_element(grads: Vec<Vec<f64>>, tol: f64) -> Result<Vec<f64>> {
    let p = grads.len();
    let instance = SimplexQpInstance::new(grads, vec![0.0; p], 1.0);
    match qp::solve_simplex_qp(&instance, tol) {
        Ok(s) => Ok(s.g_tilde),
        Err(QpError::NotConverged { best }) => Ok(best.g_tilde),
        Err(e) => Err(e.into()),
    }
}

pub fn gs_run<O: Objective + ?Sized>(f: &O, config: &GsConfig, x0: &[f64]) -> Result<RunResult> {
    gs_run_observed(f, config, x0, &mut NoObserver)
}

/// Runs gradient sampling from `x0`. Every iteration, accepted or not, costs
/// `sample_size + 1` gradient evaluations and produces one trace record.
pub fn gs_run_observed<O: Objective + ?Sized, Obs: Observer + ?Sized>(
    f: &O,
    config: &GsConfig,
    x0: &[f64],
    observer: &mut Obs,
) -> Result<RunResult> {
    config.validate()?;
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if !all_finite(x0) {
        return Err(Error::NonFinite { k: 0 });
    }
    let mut rng = SolverRng::seed_from_u64(config.seed);
    let mut x = x0.to_vec();
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite { k: 0 });
    }
    let mut eps = config.eps0;
    let mut evals = 0;
    let mut trace = Vec::new();
    let mut k = 0;

    let stop = loop {
        if k >= config.max_iters {
            break StopReason::MaxIterations;
        }
        if eps < config.min_radius {
            break StopReason::RadiusFloor;
        }
        let mut points = sample_ball(&x, eps, config.sample_size, &mut rng);
        points.push(x.clone());
        let mut grads = Vec::with_capacity(points.len());
        for p in &points {
            let mut g = vec![0.0; n];
            f.gradient(p, &mut g);
            if !all_finite(&g) {
                return Err(Error::NonFinite { k });
            }
            grads.push(g);
        }
        evals += config.sample_size + 1;
        let grad_x = grads[grads.len() - 1].clone();
        let g = min_norm_element(grads, config.qp_tol)?;
        let g_norm = norm(&g);

        let mut kind = StepKind::NullStep;
        let mut d = vec![0.0; n];
        let mut next = None;
        if g_norm > config.stationarity_tol {
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi / g_norm;
            }
            let mut t = 1.0;
            for _ in 0..=MAX_BACKTRACKS {
                let trial = add_scaled(&x, t, &d);
                let ft = f.value(&trial);
                if ft.is_finite() && ft <= fx - config.armijo_beta * t * g_norm {
                    next = Some((trial, ft));
                    break;
                }
                t *= config.armijo_gamma;
            }
        }
        if next.is_some() {
            kind = StepKind::SeriousStep;
        }

        let record = IterationTrace {
            k,
            i: 0,
            f_val: next.as_ref().map_or(fx, |n| n.1),
            v: 0.5 * norm_sq(&g),
            w: 0.5 * norm_sq(&g),
            radius: eps,
            kind,
            grad_evals_cum: evals,
        };
        trace.push(record);
        let agg = AggregateAtom {
            g_tilde: g,
            e_tilde: 0.0,
        };
        let outcome = StepOutcome {
            kind,
            search: SearchDirection {
                z: -g_norm,
                v: record.v,
                w: record.w,
                d,
            },
        };
        let flow = observer.on_step(
            &record,
            &StepDetail {
                x: &x,
                f_x: fx,
                grad_x: &grad_x,
                aggregate: &agg,
                outcome: &outcome,
                new_atom: None,
            },
        );
        match next {
            Some((xn, fn_)) => {
                x = xn;
                fx = fn_;
            }
            None => eps *= config.eps_shrink,
        }
        k += 1;
        if let ControlFlow::Break(()) = flow {
            break StopReason::Interrupted;
        }
    };

    Ok(RunResult {
        x,
        f: fx,
        stop,
        iterations: k,
        grad_evals: evals,
        radius: eps,
        trace,
        fdp_warnings: 0,
        qp_warnings: 0,
    })
}
