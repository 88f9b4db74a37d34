//! Problems with known solutions, used by the tests and the shipped configs.

use std::sync::Arc;

use super::problem::ControlProblem;
use crate::error::Result;
use crate::grid::TimeGrid;
use crate::kernel::make_atomic;
use crate::levy::LevyModel;
use crate::lift::{CoefficientSet, LiftState};

/// Two-action problem with a single exponential atom `k(t) = e^{-t}`,
/// `u(0) = 5`, `f = 0`, `σ = 1`, one mark at rate 2, `g(u) = u`.
/// Action 0 costs nothing and leaves the rate alone; action 1 costs 0.8 per
/// unit time and scales the rate by 0.2.
pub fn bang_bang(steps: usize) -> Result<ControlProblem> {
    let measure = Arc::new(make_atomic(&[(1.0, 1.0)])?);
    let costs = [0.0, 0.8];
    let rho = [1.0, 0.2];
    Ok(ControlProblem {
        coeffs: CoefficientSet::zero(1).with_constant_jump(vec![1.0]),
        model: LevyModel::scalar(&[1.0], &[2.0])?,
        y0: LiftState::immerse(&[5.0], measure),
        grid: TimeGrid::uniform(1.0, steps)?,
        intensity: Arc::new(move |_, _, _, a| rho[a]),
        bound: 1.0,
        running_cost: Arc::new(move |_, _, a| costs[a]),
        terminal_cost: Arc::new(|u| u[0]),
        actions: vec!["free".into(), "suppress".into()],
        alpha: 2.0,
    })
}

/// Value and switch time of [`bang_bang`] from its backward ODE
/// `Θ' = -min_χ {c(χ) + λ σ k(T - t) (ρ(χ) - 1)}`, integrated with the
/// midpoint rule at step `dt`.
pub fn bang_bang_oracle(dt: f64) -> (f64, f64) {
    let t_end = 1.0;
    let h = |s: f64| {
        let z = (-(t_end - s)).exp();
        (0.0f64).min(0.8 + 2.0 * z * (0.2 - 1.0))
    };
    let n = (t_end / dt).round() as usize;
    let integral: f64 = (0..n).map(|i| h((i as f64 + 0.5) * dt) * dt).sum();
    let mut switch = t_end;
    for i in 0..=n {
        let s = i as f64 * dt;
        if h(s) < 0.0 {
            switch = s;
            break;
        }
    }
    (5.0 * (-t_end).exp() + integral, switch)
}

/// Control acts on neither the state nor the cost's state dependence:
/// `l = c(χ)`, `r = ρ(χ)`, `g = g0`, on the two-atom kernel
/// `2e^{-t} + 3e^{-2t}` with `f(u) = -0.5u`, `σ = 0.1ξ`, marks `±1`.
pub fn state_independent(costs: Vec<f64>, rho: Vec<f64>, g0: f64, steps: usize) -> Result<ControlProblem> {
    let measure = Arc::new(make_atomic(&[(1.0, 2.0), (2.0, 3.0)])?);
    let bound = rho.iter().copied().fold(0.0, f64::max);
    let actions = (0..costs.len()).map(|i| format!("a{i}")).collect();
    Ok(ControlProblem {
        coeffs: CoefficientSet::linear(1, -0.5).with_scaled_marks(0.1),
        model: LevyModel::scalar(&[1.0, -1.0], &[1.0, 1.0])?,
        y0: LiftState::immerse(&[1.0], measure),
        grid: TimeGrid::uniform(1.0, steps)?,
        intensity: Arc::new(move |_, _, _, a| rho[a]),
        bound,
        running_cost: Arc::new(move |_, _, a| costs[a]),
        terminal_cost: Arc::new(move |_| g0),
        actions,
        alpha: 2.0,
    })
}
