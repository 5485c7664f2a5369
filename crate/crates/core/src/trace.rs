//! Per-step records streamed by the solvers.

use core::fmt;
use core::ops::ControlFlow;

use crate::bgs::{AggregateAtom, BundleAtom, StepOutcome};

/// What a solver decided in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    /// The iterate moved.
    SeriousStep,
    /// The iterate stayed and the sampling radius shrank.
    NullStep,
    /// A new linearization was added to the model (bundle solver only).
    InnerEnrich,
    /// The stationarity measure fell below tolerance.
    Converged,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::SeriousStep => "serious",
            StepKind::NullStep => "null",
            StepKind::InnerEnrich => "enrich",
            StepKind::Converged => "converged",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One record per step. For the bundle solver a step is one pass of the
/// inner loop; `i = 0` is the pass on the freshly sampled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub k: usize,
    pub i: usize,
    /// Objective at the iterate after this step's decision.
    pub f_val: f64,
    /// Stationarity measure of the model that produced the decision.
    pub v: f64,
    /// Dual optimal value of that model.
    pub w: f64,
    /// Sampling radius in force during the step.
    pub radius: f64,
    pub kind: StepKind,
    pub grad_evals_cum: usize,
}

/// Internal state behind a trace record, borrowed for the duration of the
/// observer call.
#[derive(Debug, Clone, Copy)]
pub struct StepDetail<'a> {
    /// The iterate at which the model was built.
    pub x: &'a [f64],
    pub f_x: f64,
    pub grad_x: &'a [f64],
    pub aggregate: &'a AggregateAtom,
    pub outcome: &'a StepOutcome,
    /// The linearization evaluated in this step, if any.
    pub new_atom: Option<&'a BundleAtom>,
}

/// Receives solver progress. Returning `ControlFlow::Break` stops the run
/// after the current step.
pub trait Observer {
    fn on_step(&mut self, record: &IterationTrace, detail: &StepDetail<'_>) -> ControlFlow<()>;

    /// Called with every simplex QP instance before it is solved.
    fn on_qp(&mut self, _instance: &crate::qp::SimplexQpInstance) {}
}

impl<F> Observer for F
where
    F: FnMut(&IterationTrace, &StepDetail<'_>) -> ControlFlow<()>,
{
    fn on_step(&mut self, record: &IterationTrace, detail: &StepDetail<'_>) -> ControlFlow<()> {
        self(record, detail)
    }
}

/// Observer that never interrupts.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl Observer for NoObserver {
    fn on_step(&mut self, _: &IterationTrace, _: &StepDetail<'_>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    /// Stationarity measure at or below tolerance.
    Stationary,
    /// The observer asked to stop.
    Interrupted,
    MaxIterations,
    /// The sampling radius fell below its floor.
    RadiusFloor,
    /// The inner loop exceeded its safety limit.
    InnerLimit,
    /// Differentiability checks found a sampled point outside the
    /// differentiable set.
    NondifferentiableSample,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stationary => "stationary",
            StopReason::Interrupted => "target",
            StopReason::MaxIterations => "max-iterations",
            StopReason::RadiusFloor => "radius-floor",
            StopReason::InnerLimit => "inner-limit",
            StopReason::NondifferentiableSample => "nondifferentiable-sample",
        }
    }

    /// Whether the run was cut short by a safety guard rather than by a
    /// regular stopping rule.
    pub fn is_abort(self) -> bool {
        matches!(self, StopReason::InnerLimit)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
