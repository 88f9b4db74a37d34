use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::BernsteinMeasure;
use crate::levy::LevyModel;
use crate::lift::{CoefficientSet, LiftState};
use crate::rng::path_rng;

/// `r(t, u, mark index, action index)`.
pub type IntensityFn = Arc<dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync>;
/// `l(t, u, action index)`.
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;
/// `g(u)`.
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(t, Y(t-))` to action index.
pub type FeedbackFn = Arc<dyn Fn(f64, &LiftState) -> usize + Send + Sync>;

/// Number of random probes used by [`ControlProblem::validate`].
const PROBES: usize = 10_000;

#[derive(Clone)]
pub struct ControlProblem {
    pub coeffs: CoefficientSet,
    pub model: LevyModel,
    pub y0: LiftState,
    pub grid: TimeGrid,
    pub intensity: IntensityFn,
    /// `C_r`, an upper bound for `r`.
    pub bound: f64,
    pub running_cost: RunningCostFn,
    pub terminal_cost: TerminalCostFn,
    /// Labels of the finite action set, in tie-breaking order.
    pub actions: Vec<String>,
    /// Declared integrability exponent of the running cost, `> 1`.
    pub alpha: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("coeffs", &self.coeffs)
            .field("model", &self.model)
            .field("atoms", &self.y0.n_atoms())
            .field("steps", &self.grid.steps())
            .field("bound", &self.bound)
            .field("actions", &self.actions)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl ControlProblem {
    pub fn measure(&self) -> &Arc<BernsteinMeasure> {
        self.y0.measure()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    pub fn r(&self, t: f64, u: &[f64], mark: usize, action: usize) -> f64 {
        (self.intensity)(t, u, mark, action)
    }

    #[inline]
    pub fn l(&self, t: f64, u: &[f64], action: usize) -> f64 {
        (self.running_cost)(t, u, action)
    }

    #[inline]
    pub fn g(&self, u: &[f64]) -> f64 {
        (self.terminal_cost)(u)
    }

    /// Checks `0 < r <= C_r` and finiteness of `l` on random probes in
    /// `[0, T] × [-10, 10]^d`, plus the structural requirements.
    pub fn validate(&self, seed: u64) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intensity bound must be positive and finite, got {}",
                self.bound
            )));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "integrability exponent must exceed 1, got {}",
                self.alpha
            )));
        }
        if self.coeffs.dim() != self.y0.dim() {
            return Err(Error::InvalidArgument(format!(
                "coefficients act on dimension {}, initial state has {}",
                self.coeffs.dim(),
                self.y0.dim()
            )));
        }
        let d = self.y0.dim();
        let t_max = self.horizon();
        let mut rng = path_rng(seed, u64::MAX);
        let u0 = self.y0.project();
        for probe in 0..PROBES {
            let t = rng.random::<f64>() * t_max;
            let u: Vec<f64> = if probe == 0 {
                u0.clone()
            } else {
                (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()
            };
            let mut inf = f64::INFINITY;
            for a in 0..self.n_actions() {
                for i in 0..self.model.n_marks() {
                    let r = self.r(t, &u, i, a);
                    if !(r > 0.0 && r <= self.bound) {
                        return Err(Error::IntensityBound {
                            t,
                            mark: i,
                            action: Some(a),
                            value: r,
                            bound: self.bound,
                        });
                    }
                }
                let l = self.l(t, &u, a);
                if l.is_nan() {
                    return Err(Error::InvalidArgument(format!(
                        "running cost is NaN at t={t}, action {a}"
                    )));
                }
                inf = inf.min(l);
            }
            if !inf.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "infimum of the running cost over actions is not finite at t={t}"
                )));
            }
        }
        Ok(())
    }
}

/// Admissible control, evaluated on the pre-jump state.
#[derive(Clone)]
pub enum Policy {
    Constant(usize),
    Schedule(Arc<dyn Fn(f64) -> usize + Send + Sync>),
    Feedback(FeedbackFn),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Constant(a) => write!(f, "Constant({a})"),
            Policy::Schedule(_) => f.write_str("Schedule(..)"),
            Policy::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl Policy {
    /// Piecewise-constant schedule: `actions[i]` is in force from
    /// `starts[i]` until the next start. `starts[0]` should be 0.
    pub fn piecewise(starts: Vec<f64>, actions: Vec<usize>) -> Self {
        assert_eq!(starts.len(), actions.len());
        Policy::Schedule(Arc::new(move |t| {
            let i = starts.partition_point(|&s| s <= t);
            actions[i.saturating_sub(1)]
        }))
    }

    pub fn action(&self, t: f64, state: &LiftState) -> usize {
        match self {
            Policy::Constant(a) => *a,
            Policy::Schedule(f) => f(t),
            Policy::Feedback(f) => f(t, state),
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, Policy::Feedback(_))
    }
}
