//! The bundle-gradient-sampling (B-GS) method.
//!
//! Each outer iteration samples `m` points uniformly from the ball
//! `B(x_k, eps_k)`, adds `x_k` itself, and builds the cutting-plane model
//! from the gradients and linearization errors at those points. The dual of
//! the proximal direction-finding problem is a simplex QP (see [`crate::qp`])
//! whose solution gives the aggregate subgradient `g~`, aggregate error
//! `e~` and
//!
//! ```text
//!     d = -eps^a g~            z = -eps^a ||g~||^2 - e~
//!     v = 1/2 ||g~||^2 + e~    w = 1/2 ||g~||^2 + e~ / eps^a
//! ```
//!
//! If `x_k + d` gives sufficient decrease the step is taken. Otherwise the
//! inner loop evaluates a new linearization at `x_k + d`: when its error is
//! small (or the observed change in `f` is small) the model is enriched,
//! with the previous constraints aggregated into `(g~, e~)` and only the
//! heaviest atoms kept. When the error is large the sampling radius shrinks
//! by `mu` (a null step) and the outer loop starts over.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::math::{add_scaled, all_finite, axpy, dot, norm_sq};
use crate::problems::Objective;
use crate::qp::{self, QpError, SimplexQpInstance, SimplexQpSolution};
use crate::sampling::{sample_ball, sample_point, SolverRng};
use crate::trace::{IterationTrace, Observer, StepDetail, StepKind, StopReason};
use crate::{Error, Result};

/// Halvings of the perturbation radius before an FDP search gives up.
pub const FDP_MAX_TRIALS: usize = 64;

/// Parameters of the B-GS method.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Initial sampling radius.
    pub eps0: f64,
    /// Radius reduction factor on null steps.
    pub mu: f64,
    /// Number of sampled points per outer iteration.
    pub m: usize,
    /// Sufficient-decrease parameter.
    pub beta: f64,
    /// Largest perturbation used by the differentiability searches.
    pub sigma: f64,
    /// Exponent of the proximal weight `eps^-alpha`.
    pub alpha: f64,
    /// Acceptance factor for a new linearization error.
    pub gamma: f64,
    /// Cumulative multiplier weight kept by atom selection.
    pub theta: f64,
    /// Stop when the stationarity measure `v` is at or below this.
    pub eps_tol: f64,
    pub seed: u64,
    /// Cap on outer iterations; inner passes are not counted.
    pub max_outer: usize,
    /// Stop when the sampling radius drops below this.
    pub min_radius: f64,
    pub differentiability_checks: bool,
    /// Safety limit on inner passes per outer iteration; `None` means
    /// `500 (m + 1)`.
    pub inner_limit: Option<usize>,
    pub qp_tol: f64,
}

impl SolverConfig {
    /// Recommended defaults with sample size `m`.
    pub fn with_sample_size(m: usize) -> Self {
        Self {
            eps0: 1.0,
            mu: 0.5,
            m,
            beta: 1e-6,
            sigma: 1e-8,
            alpha: 0.5,
            gamma: 0.9,
            theta: 0.9,
            eps_tol: 1e-12,
            seed: 0,
            max_outer: 1000,
            min_radius: 1e-12,
            differentiability_checks: false,
            inner_limit: None,
            qp_tol: qp::DEFAULT_TOL,
        }
    }

    /// Defaults with `m = 2n`, the setting for small problems.
    pub fn for_dim(n: usize) -> Self {
        Self::with_sample_size(2 * n)
    }

    pub fn inner_limit(&self) -> usize {
        self.inner_limit.unwrap_or(500 * (self.m + 1))
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.eps0) {
            return Err(Error::InvalidConfig("eps0 must be positive"));
        }
        if !open_unit(self.mu) {
            return Err(Error::InvalidConfig("mu must lie in (0, 1)"));
        }
        if !open_unit(self.beta) {
            return Err(Error::InvalidConfig("beta must lie in (0, 1)"));
        }
        if !positive(self.sigma) {
            return Err(Error::InvalidConfig("sigma must be positive"));
        }
        if !positive(self.alpha) {
            return Err(Error::InvalidConfig("alpha must be positive"));
        }
        if !open_unit(self.gamma) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig("theta must lie in [0, 1]"));
        }
        if !(self.eps_tol >= 0.0) {
            return Err(Error::InvalidConfig("eps_tol must be nonnegative"));
        }
        if !positive(self.min_radius) {
            return Err(Error::InvalidConfig("min_radius must be positive"));
        }
        if !positive(self.qp_tol) {
            return Err(Error::InvalidConfig("qp_tol must be positive"));
        }
        Ok(())
    }
}

/// A linearization of `f` built at `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleAtom {
    pub source: Vec<f64>,
    pub f_source: f64,
    pub grad: Vec<f64>,
    /// Linearization error at the current iterate.
    pub err: f64,
}

/// Aggregate subgradient and error; `g_tilde` is an `e_tilde`-subgradient
/// of `f` at the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateAtom {
    pub g_tilde: Vec<f64>,
    pub e_tilde: f64,
}

/// Primal quantities recovered from the dual solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDirection {
    pub d: Vec<f64>,
    pub z: f64,
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub kind: StepKind,
    pub search: SearchDirection,
}

/// Linearization error `f(x) - [f(s) + <grad f(s), x - s>]`.
///
/// Values in `[-1e-12, 0)` are rounding noise and clamped to zero; anything
/// more negative means `f` is not convex or its gradient is wrong.
pub fn linearization_error(f_x: f64, x: &[f64], f_s: f64, s: &[f64], grad_s: &[f64]) -> Result<f64> {
    let lin = f_s + grad_s.iter().zip(x.iter().zip(s)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
    let e = f_x - lin;
    if e >= 0.0 {
        Ok(e)
    } else if e >= -qp::ERROR_CLAMP {
        Ok(0.0)
    } else if e.is_nan() {
        Err(Error::NonFinite { k: 0 })
    } else {
        Err(Error::NegativeLinearizationError { value: e })
    }
}

impl BundleAtom {
    /// Evaluates `f` and its gradient at `s` and the error relative to
    /// `(x, f_x)`.
    pub fn evaluate<O: Objective + ?Sized>(f: &O, x: &[f64], f_x: f64, s: Vec<f64>) -> Result<Self> {
        let f_source = f.value(&s);
        let mut grad = vec![0.0; s.len()];
        f.gradient(&s, &mut grad);
        if !f_source.is_finite() || !all_finite(&grad) {
            return Err(Error::NonFinite { k: 0 });
        }
        let err = linearization_error(f_x, x, f_source, &s, &grad)?;
        Ok(Self {
            source: s,
            f_source,
            grad,
            err,
        })
    }
}

/// The model at `x`: atom 0 is `x` itself with zero error, followed by `m`
/// atoms at points sampled uniformly from `B(x, radius)`. Consumes exactly
/// `m + 1` gradient evaluations unless a sampled point fails to evaluate, in
/// which case it is drawn again once.
pub fn build_initial_model<O: Objective + ?Sized, R: Rng + ?Sized>(
    f: &O,
    x: &[f64],
    f_x: f64,
    radius: f64,
    m: usize,
    rng: &mut R,
) -> Result<Vec<BundleAtom>> {
    let mut grad = vec![0.0; x.len()];
    f.gradient(x, &mut grad);
    if !all_finite(&grad) {
        return Err(Error::NonFinite { k: 0 });
    }
    let mut atoms = Vec::with_capacity(m + 1);
    atoms.push(BundleAtom {
        source: x.to_vec(),
        f_source: f_x,
        grad,
        err: 0.0,
    });
    for s in sample_ball(x, radius, m, rng) {
        let atom = match BundleAtom::evaluate(f, x, f_x, s) {
            Err(Error::NonFinite { .. }) => {
                BundleAtom::evaluate(f, x, f_x, sample_point(x, radius, rng))?
            }
            other => other?,
        };
        atoms.push(atom);
    }
    Ok(atoms)
}

/// `d`, `z`, `v` and `w` from the aggregate, with `eps_alpha = eps^alpha`.
pub fn direction_from_dual(agg: &AggregateAtom, eps_alpha: f64) -> SearchDirection {
    let gg = norm_sq(&agg.g_tilde);
    SearchDirection {
        d: agg.g_tilde.iter().map(|g| -eps_alpha * g).collect(),
        z: -eps_alpha * gg - agg.e_tilde,
        v: 0.5 * gg + agg.e_tilde,
        w: 0.5 * gg + agg.e_tilde / eps_alpha,
    }
}

/// `f(x + d) - f(x) <= beta z`
pub fn sufficient_decrease(f_x: f64, f_trial: f64, z: f64, beta: f64) -> bool {
    f_trial - f_x <= beta * z
}

/// Keep the model (`true`) or shrink the radius (`false`): the new error is
/// at most `gamma e~`, or the change `f_gap = |f(x + d) - f(x)|` is at most
/// `1/2 ||g~||^2 + e~`.
pub fn improvement_criterion(e_new: f64, agg: &AggregateAtom, f_gap: f64, gamma: f64) -> bool {
    e_new <= gamma * agg.e_tilde || f_gap <= 0.5 * norm_sq(&agg.g_tilde) + agg.e_tilde
}

/// Which acceptance condition a perturbed point must preserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdpMode {
    /// Sufficient decrease holds (new iterate).
    Descent,
    /// Sufficient decrease fails (auxiliary point).
    NoDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub point: Vec<f64>,
    pub f_point: f64,
    pub trials: usize,
    /// The trial budget ran out before a suitable point was found.
    pub capped: bool,
}

/// Moves `x + d` to a nearby differentiable point `x^ + d` that keeps the
/// sufficient-decrease status required by `mode`, with `||x^ - x|| <= sigma`.
/// `x^` is resampled from `B(x, sigma')` with `sigma'` halving after each
/// failed trial. With `checks` off the point `x + d` is returned as is.
#[allow(clippy::too_many_arguments)]
pub fn fdp_perturb<O: Objective + ?Sized, R: Rng + ?Sized>(
    f: &O,
    x: &[f64],
    f_x: f64,
    d: &[f64],
    beta: f64,
    z: f64,
    sigma: f64,
    mode: FdpMode,
    checks: bool,
    rng: &mut R,
) -> Perturbed {
    let mut point = add_scaled(x, 1.0, d);
    let mut f_point = f.value(&point);
    if !checks {
        return Perturbed {
            point,
            f_point,
            trials: 0,
            capped: false,
        };
    }
    let keeps = |fp: f64| match mode {
        FdpMode::Descent => sufficient_decrease(f_x, fp, z, beta),
        FdpMode::NoDescent => !sufficient_decrease(f_x, fp, z, beta),
    };
    let mut radius = sigma;
    let mut trials = 0;
    while !(f.is_differentiable_at(&point) && keeps(f_point)) {
        if trials == FDP_MAX_TRIALS {
            return Perturbed {
                point,
                f_point,
                trials,
                capped: true,
            };
        }
        let x_hat = sample_point(x, radius, rng);
        point = add_scaled(&x_hat, 1.0, d);
        f_point = f.value(&point);
        radius *= 0.5;
        trials += 1;
    }
    Perturbed {
        point,
        f_point,
        trials,
        capped: false,
    }
}

/// Adaptive atom selection.
///
/// `weights` are the multipliers `(index, lambda_j)` of the atoms in the
/// last subproblem (the aggregate's weight excluded). Keeps the largest `l`
/// of them, where `l` is maximal with
/// `(sum of the l largest) / (sum of all) <= theta`, then adds `forced`.
/// Returns sorted, deduplicated indices. Ties in weight go to the lower
/// index.
pub fn select_indices(weights: &[(usize, f64)], theta: f64, forced: &[usize]) -> Vec<usize> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let mut order: Vec<(usize, f64)> = weights.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = forced.to_vec();
    if total > 0.0 {
        let limit = theta * (1.0 + 1e-12);
        let mut cum = 0.0;
        for (j, l) in order {
            cum += l;
            if cum / total > limit {
                break;
            }
            kept.push(j);
        }
    }
    kept.sort_unstable();
    kept.dedup();
    kept
}

/// `g~ = sum_j l_j g_j + l~ g~_prior` and likewise for the errors.
pub fn aggregate(
    lambda: &[f64],
    atoms: &[&BundleAtom],
    prior: Option<(f64, &AggregateAtom)>,
) -> AggregateAtom {
    let n = atoms
        .first()
        .map(|a| a.grad.len())
        .or(prior.map(|p| p.1.g_tilde.len()))
        .unwrap_or(0);
    let mut g_tilde = vec![0.0; n];
    let mut e_tilde = 0.0;
    for (l, a) in lambda.iter().zip(atoms) {
        if *l != 0.0 {
            axpy(*l, &a.grad, &mut g_tilde);
            e_tilde += l * a.err;
        }
    }
    if let Some((l, p)) = prior {
        if l != 0.0 {
            axpy(l, &p.g_tilde, &mut g_tilde);
            e_tilde += l * p.e_tilde;
        }
    }
    AggregateAtom { g_tilde, e_tilde }
}

/// Slot storage for the atoms of one outer iteration; freed slots are
/// reused by later insertions.
#[derive(Debug, Default)]
struct AtomPool {
    slots: Vec<Option<BundleAtom>>,
    free: Vec<usize>,
}

impl AtomPool {
    fn reset(&mut self, atoms: Vec<BundleAtom>) {
        self.slots.clear();
        self.free.clear();
        self.slots.extend(atoms.into_iter().map(Some));
    }

    fn get(&self, i: usize) -> &BundleAtom {
        self.slots[i].as_ref().expect("live atom")
    }

    fn insert(&mut self, atom: BundleAtom) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(atom);
                i
            }
            None => {
                self.slots.push(Some(atom));
                self.slots.len() - 1
            }
        }
    }

    /// Frees every slot not listed in `keep` (sorted).
    fn retain(&mut self, keep: &[usize]) {
        for i in 0..self.slots.len() {
            if self.slots[i].is_some() && keep.binary_search(&i).is_err() {
                self.slots[i] = None;
                self.free.push(i);
            }
        }
        // Reuse the lowest slots first.
        self.free.sort_unstable_by(|a, b| b.cmp(a));
    }
}

/// Result of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub stop: StopReason,
    /// Completed outer iterations (serious plus null steps).
    pub iterations: usize,
    pub grad_evals: usize,
    pub radius: f64,
    pub trace: Vec<IterationTrace>,
    /// Differentiability searches that ran out of trials.
    pub fdp_warnings: usize,
    /// Subproblems accepted at their best iterate without meeting the KKT
    /// tolerance.
    pub qp_warnings: usize,
}

fn solve_qp(
    instance: &SimplexQpInstance,
    tol: f64,
    warnings: &mut usize,
) -> Result<SimplexQpSolution> {
    match qp::solve_simplex_qp(instance, tol) {
        Ok(s) => Ok(s),
        Err(QpError::NotConverged { best }) => {
            *warnings += 1;
            Ok(*best)
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs B-GS from `x0` without observing intermediate steps.
pub fn run<O: Objective + ?Sized>(f: &O, config: &SolverConfig, x0: &[f64]) -> Result<RunResult> {
    run_observed(f, config, x0, &mut crate::trace::NoObserver)
}

/// Runs B-GS from `x0`, reporting every inner pass to `observer`.
pub fn run_observed<O: Objective + ?Sized, Obs: Observer + ?Sized>(
    f: &O,
    config: &SolverConfig,
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
    let mut evals = 0usize;
    let mut trace = Vec::new();
    let mut fdp_warnings = 0;
    let mut qp_warnings = 0;
    let mut pool = AtomPool::default();
    let inner_limit = config.inner_limit();
    let with_k = |e: Error, k: usize| match e {
        Error::NonFinite { .. } => Error::NonFinite { k },
        other => other,
    };

    let mut k = 0;
    let stop = 'outer: loop {
        if k >= config.max_outer {
            break StopReason::MaxIterations;
        }
        if eps < config.min_radius {
            break StopReason::RadiusFloor;
        }
        let eps_alpha = libm::pow(eps, config.alpha);
        let model = build_initial_model(f, &x, fx, eps, config.m, &mut rng).map_err(|e| with_k(e, k))?;
        evals += config.m + 1;
        if config.differentiability_checks
            && model[1..].iter().any(|a| !f.is_differentiable_at(&a.source))
        {
            break StopReason::NondifferentiableSample;
        }
        let grad_x = model[0].grad.clone();
        pool.reset(model);

        let all: Vec<usize> = (0..=config.m).collect();
        let instance = SimplexQpInstance::new(
            all.iter().map(|&j| pool.get(j).grad.clone()).collect(),
            all.iter().map(|&j| pool.get(j).err).collect(),
            1.0 / eps_alpha,
        );
        observer.on_qp(&instance);
        let sol = solve_qp(&instance, config.qp_tol, &mut qp_warnings)?;
        let mut agg = AggregateAtom {
            g_tilde: sol.g_tilde.clone(),
            e_tilde: sol.e_tilde,
        };
        let mut search = direction_from_dual(&agg, eps_alpha);
        let mut weights: Vec<(usize, f64)> = all.iter().copied().zip(sol.lambda).collect();

        let mut i = 0;
        loop {
            if i >= inner_limit {
                break 'outer StopReason::InnerLimit;
            }
            let mut record = IterationTrace {
                k,
                i,
                f_val: fx,
                v: search.v,
                w: search.w,
                radius: eps,
                kind: StepKind::Converged,
                grad_evals_cum: evals,
            };
            if search.v <= config.eps_tol {
                let outcome = StepOutcome {
                    kind: StepKind::Converged,
                    search: search.clone(),
                };
                trace.push(record);
                let _ = observer.on_step(
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
                break 'outer StopReason::Stationary;
            }

            let trial = add_scaled(&x, 1.0, &search.d);
            let f_trial = f.value(&trial);
            if !f_trial.is_finite() {
                return Err(Error::NonFinite { k });
            }

            if sufficient_decrease(fx, f_trial, search.z, config.beta) {
                let moved = if config.differentiability_checks {
                    let p = fdp_perturb(
                        f,
                        &x,
                        fx,
                        &search.d,
                        config.beta,
                        search.z,
                        config.sigma,
                        FdpMode::Descent,
                        true,
                        &mut rng,
                    );
                    fdp_warnings += usize::from(p.capped);
                    (p.point, p.f_point)
                } else {
                    (trial, f_trial)
                };
                record.kind = StepKind::SeriousStep;
                record.f_val = moved.1;
                trace.push(record);
                let outcome = StepOutcome {
                    kind: StepKind::SeriousStep,
                    search,
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
                x = moved.0;
                fx = moved.1;
                k += 1;
                if flow.is_break() {
                    break 'outer StopReason::Interrupted;
                }
                continue 'outer;
            }

            let aux = if config.differentiability_checks {
                let p = fdp_perturb(
                    f,
                    &x,
                    fx,
                    &search.d,
                    config.beta,
                    search.z,
                    config.sigma,
                    FdpMode::NoDescent,
                    true,
                    &mut rng,
                );
                fdp_warnings += usize::from(p.capped);
                p
            } else {
                Perturbed {
                    point: trial,
                    f_point: f_trial,
                    trials: 0,
                    capped: false,
                }
            };
            let mut g_new = vec![0.0; n];
            f.gradient(&aux.point, &mut g_new);
            evals += 1;
            record.grad_evals_cum = evals;
            if !all_finite(&g_new) {
                return Err(Error::NonFinite { k });
            }
            let e_new = linearization_error(fx, &x, aux.f_point, &aux.point, &g_new)?;
            let new_atom = BundleAtom {
                source: aux.point,
                f_source: aux.f_point,
                grad: g_new,
                err: e_new,
            };
            let f_gap = (f_trial - fx).abs();

            if !improvement_criterion(e_new, &agg, f_gap, config.gamma) {
                record.kind = StepKind::NullStep;
                trace.push(record);
                let outcome = StepOutcome {
                    kind: StepKind::NullStep,
                    search,
                };
                let flow = observer.on_step(
                    &record,
                    &StepDetail {
                        x: &x,
                        f_x: fx,
                        grad_x: &grad_x,
                        aggregate: &agg,
                        outcome: &outcome,
                        new_atom: Some(&new_atom),
                    },
                );
                eps *= config.mu;
                k += 1;
                if flow.is_break() {
                    break 'outer StopReason::Interrupted;
                }
                continue 'outer;
            }

            record.kind = StepKind::InnerEnrich;
            trace.push(record);
            let outcome = StepOutcome {
                kind: StepKind::InnerEnrich,
                search,
            };
            let flow = observer.on_step(
                &record,
                &StepDetail {
                    x: &x,
                    f_x: fx,
                    grad_x: &grad_x,
                    aggregate: &agg,
                    outcome: &outcome,
                    new_atom: Some(&new_atom),
                },
            );
            if flow.is_break() {
                break 'outer StopReason::Interrupted;
            }

            let newest = pool.insert(new_atom);
            let kept = select_indices(&weights, config.theta, &[0, newest]);
            pool.retain(&kept);

            let mut atoms: Vec<Vec<f64>> = kept.iter().map(|&j| pool.get(j).grad.clone()).collect();
            let mut errs: Vec<f64> = kept.iter().map(|&j| pool.get(j).err).collect();
            atoms.push(agg.g_tilde.clone());
            errs.push(agg.e_tilde);
            let instance = SimplexQpInstance::new(atoms, errs, 1.0 / eps_alpha);
            observer.on_qp(&instance);
            let before = qp_warnings;
            let sol = solve_qp(&instance, config.qp_tol, &mut qp_warnings)?;

            let refs: Vec<&BundleAtom> = kept.iter().map(|&j| pool.get(j)).collect();
            let (lam, lam_agg) = sol.lambda.split_at(kept.len());
            agg = aggregate(lam, &refs, Some((lam_agg[0], &agg)));
            search = direction_from_dual(&agg, eps_alpha);
            if qp_warnings == before {
                debug_assert!({
                    // The max form of z agrees with the closed form at the
                    // dual optimum.
                    let z_max = instance
                        .atoms
                        .iter()
                        .zip(&instance.errors)
                        .map(|(g, e)| dot(g, &search.d) - e.max(0.0))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let scale = instance
                        .atoms
                        .iter()
                        .zip(&instance.errors)
                        .map(|(g, e)| (dot(g, &agg.g_tilde) + e.max(0.0) / eps_alpha).abs())
                        .fold(1.0, f64::max);
                    (z_max - search.z).abs() <= 1e-8 * (1.0 + eps_alpha * scale)
                });
            }
            weights = kept.iter().copied().zip(lam.iter().copied()).collect();
            i += 1;
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
        fdp_warnings,
        qp_warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dist;

    fn atom(grad: f64, err: f64) -> BundleAtom {
        BundleAtom {
            source: vec![0.0],
            f_source: 0.0,
            grad: vec![grad],
            err,
        }
    }

    struct Abs;
    impl Objective for Abs {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            x[0].abs()
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            out[0] = if x[0] < 0.0 { -1.0 } else { 1.0 };
        }
        fn is_differentiable_at(&self, x: &[f64]) -> bool {
            x[0] != 0.0
        }
    }

    struct Sq(usize);
    impl Objective for Sq {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, x: &[f64]) -> f64 {
            norm_sq(x)
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            for (o, v) in out.iter_mut().zip(x) {
                *o = 2.0 * v;
            }
        }
    }

    fn err_at(f: &impl Objective, x: f64, s: f64) -> f64 {
        let mut g = [0.0];
        f.gradient(&[s], &mut g);
        linearization_error(f.value(&[x]), &[x], f.value(&[s]), &[s], &g).unwrap()
    }

    #[test]
    fn linearization_errors_of_abs() {
        assert_eq!(err_at(&Abs, 1.0, 2.0), 0.0);
        assert_eq!(err_at(&Abs, 1.0, -1.0), 2.0);
        assert_eq!(err_at(&Abs, 1.0, 1.0), 0.0);
    }

    #[test]
    fn negative_error_is_rejected() {
        // A concave function breaks the inequality.
        let e = linearization_error(0.0, &[1.0], 0.0, &[0.0], &[1.0]);
        assert!(matches!(e, Err(Error::NegativeLinearizationError { .. })));
        assert_eq!(linearization_error(0.0, &[1.0], -1e-13, &[0.0], &[1.0]).ok(), None);
        assert_eq!(linearization_error(1.0, &[1.0], 5e-13, &[0.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn dual_to_primal() {
        let s = direction_from_dual(
            &AggregateAtom {
                g_tilde: vec![0.0, 0.0],
                e_tilde: 0.0,
            },
            0.7,
        );
        assert_eq!((s.d.as_slice(), s.z, s.v), ([-0.0, -0.0].as_slice(), 0.0, 0.0));

        let s = direction_from_dual(
            &AggregateAtom {
                g_tilde: vec![1.0, 0.0],
                e_tilde: 0.5,
            },
            1.0,
        );
        assert_eq!(s.d, vec![-1.0, -0.0]);
        assert_eq!((s.z, s.v, s.w), (-1.5, 1.0, 1.0));

        let s = direction_from_dual(
            &AggregateAtom {
                g_tilde: vec![2.0, 0.0],
                e_tilde: 0.0,
            },
            0.25,
        );
        assert_eq!(s.d, vec![-0.5, -0.0]);
        assert_eq!((s.z, s.v, s.w), (-1.0, 2.0, 2.0));
    }

    #[test]
    fn sufficient_decrease_cases() {
        assert!(sufficient_decrease(3.0, 3.0, 0.0, 1e-6));
        let f = Sq(2);
        assert!(sufficient_decrease(f.value(&[1.0, 0.0]), f.value(&[0.0, 0.0]), -1.0, 1e-6));
        assert!(!sufficient_decrease(Abs.value(&[1.0]), Abs.value(&[2.0]), -0.1, 1e-6));
    }

    #[test]
    fn criterion_cases() {
        let one = AggregateAtom {
            g_tilde: vec![0.0],
            e_tilde: 1.0,
        };
        assert!(improvement_criterion(0.0, &one, 100.0, 0.9));
        assert!(improvement_criterion(10.0, &one, 0.5, 0.9));
        let tilted = AggregateAtom {
            g_tilde: vec![libm::sqrt(0.2)],
            e_tilde: 1.0,
        };
        assert!(!improvement_criterion(10.0, &tilted, 5.0, 0.9));
    }

    #[test]
    fn selection_cases() {
        let w = [(0, 0.5), (1, 0.3), (2, 0.2)];
        assert_eq!(select_indices(&w, 0.9, &[]), vec![0, 1]);
        assert_eq!(select_indices(&w, 0.0, &[0, 7]), vec![0, 7]);
        assert_eq!(select_indices(&w, 1.0, &[]), vec![0, 1, 2]);
        // Ratios are taken relative to the kept weight only.
        let w = [(3, 0.05), (5, 0.05), (9, 0.0)];
        assert_eq!(select_indices(&w, 0.5, &[0, 11]), vec![0, 3, 11]);
        // All weight on the aggregate: only forced indices survive.
        assert_eq!(select_indices(&[(4, 0.0)], 1.0, &[0, 6]), vec![0, 6]);
    }

    #[test]
    fn aggregate_cases() {
        let a = atom(1.0, 0.0);
        let b = atom(-1.0, 2.0);
        let single = aggregate(&[1.0], &[&b], None);
        assert_eq!((single.g_tilde, single.e_tilde), (vec![-1.0], 2.0));
        let prior = AggregateAtom {
            g_tilde: vec![3.0],
            e_tilde: 0.25,
        };
        let kept = aggregate(&[0.0, 0.0], &[&a, &b], Some((1.0, &prior)));
        assert_eq!(kept, prior);
        let mixed = aggregate(&[0.5, 0.5], &[&a, &b], None);
        assert_eq!((mixed.g_tilde, mixed.e_tilde), (vec![0.0], 1.0));
    }

    #[test]
    fn initial_model_shapes() {
        let mut rng = SolverRng::seed_from_u64(3);
        let f = Sq(3);
        let x = [0.3, -0.2, 1.0];
        let single = build_initial_model(&f, &x, f.value(&x), 0.1, 0, &mut rng).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].err, 0.0);
        assert_eq!(single[0].source, x.to_vec());

        // For ||x||^2 the error is exactly ||x - s||^2 <= eps^2.
        let eps = 1e-2;
        let model = build_initial_model(&f, &x, f.value(&x), eps, 25, &mut rng).unwrap();
        assert_eq!(model.len(), 26);
        for a in &model {
            assert!(a.err >= 0.0);
            assert!(a.err <= eps * eps * (1.0 + 1e-9));
            assert!((a.err - dist(&a.source, &x).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn fdp_without_checks_is_identity() {
        let mut rng = SolverRng::seed_from_u64(0);
        let p = fdp_perturb(&Abs, &[1.0], 1.0, &[-1.0], 1e-6, -0.5, 1e-8, FdpMode::Descent, false, &mut rng);
        assert_eq!(p.point, vec![0.0]);
        assert_eq!(p.trials, 0);
    }

    #[test]
    fn fdp_with_checks() {
        let mut rng = SolverRng::seed_from_u64(0);
        // Already differentiable and decreasing: loop body never runs.
        let p = fdp_perturb(&Abs, &[1.0], 1.0, &[-0.5], 1e-6, -0.5, 1e-8, FdpMode::Descent, true, &mut rng);
        assert_eq!((p.point.as_slice(), p.trials), ([0.5].as_slice(), 0));
        // Lands on the kink: perturbed within sigma.
        let p = fdp_perturb(&Abs, &[1.0], 1.0, &[-1.0], 1e-6, -0.5, 1e-8, FdpMode::Descent, true, &mut rng);
        assert!(p.trials >= 1 && !p.capped);
        assert!(p.point[0] != 0.0 && p.point[0].abs() <= 1e-8);
        assert!(sufficient_decrease(1.0, p.f_point, -0.5, 1e-6));
    }

    #[test]
    fn smooth_quadratic_converges() {
        let f = Sq(2);
        let r = run(&f, &SolverConfig::for_dim(2), &[1.0, 1.0]).unwrap();
        assert!(r.f <= 1e-8, "f = {}", r.f);
        assert!(r.iterations <= 100);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::for_dim(2);
        assert!(c.validate().is_ok());
        c.mu = 1.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::for_dim(2);
        c.theta = 1.5;
        assert!(run(&Sq(2), &c, &[1.0, 1.0]).is_err());
        let c = SolverConfig::for_dim(2);
        assert!(matches!(
            run(&Sq(2), &c, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
