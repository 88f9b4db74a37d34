use serde::Serialize;

use super::problem::ControlProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Lowest-index minimizer.
    pub action: usize,
}

/// `l(s, u, χ) + Σ_i z_i (r(s, u, ξ_i, χ) - 1) λ_i` for every action `χ`.
pub fn hamiltonian_candidates(problem: &ControlProblem, s: f64, u: &[f64], z: &[f64]) -> Vec<f64> {
    (0..problem.n_actions())
        .map(|a| candidate(problem, s, u, z, a))
        .collect()
}

#[inline]
fn candidate(problem: &ControlProblem, s: f64, u: &[f64], z: &[f64], a: usize) -> f64 {
    let tilt: f64 = z
        .iter()
        .zip(problem.model.rates())
        .enumerate()
        .map(|(i, (zi, lam))| zi * (problem.r(s, u, i, a) - 1.0) * lam)
        .sum();
    problem.l(s, u, a) + tilt
}

/// Minimum over the finite action set, ties broken by the lowest index.
pub fn hamiltonian(problem: &ControlProblem, s: f64, u: &[f64], z: &[f64]) -> Result<HamiltonianValue> {
    if problem.actions.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    if z.len() != problem.model.n_marks() {
        return Err(Error::InvalidArgument(format!(
            "z has {} entries for {} marks",
            z.len(),
            problem.model.n_marks()
        )));
    }
    let mut best = HamiltonianValue {
        value: f64::INFINITY,
        action: 0,
    };
    for a in 0..problem.n_actions() {
        let v = candidate(problem, s, u, z, a);
        if v < best.value {
            best = HamiltonianValue { value: v, action: a };
        }
    }
    Ok(best)
}

/// `L = (C_r + 1) ν(ℝ^n \ {0})^{1/2}`, the Lipschitz constant of `H` in `z`
/// with respect to the `L^2(ν)` norm.
pub fn lipschitz_constant(problem: &ControlProblem) -> f64 {
    (problem.bound + 1.0) * problem.model.total_rate().sqrt()
}
