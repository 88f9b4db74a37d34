//! Optimal control of the jump intensity.
//!
//! The control `γ` tilts the rate of mark `ξ_i` from `λ_i` to
//! `r(t, u, ξ_i, γ) λ_i`; the state equation itself is unchanged. The cost is
//! `J(γ) = E^γ[∫_0^T l(t, u, γ) dt + g(u(T))]` and the optimal value is the
//! time-0 value of a backward equation with driver
//! `H(s, u, z) = min_χ { l(s, u, χ) + Σ_i z_i (r(s, u, ξ_i, χ) - 1) λ_i }`.

pub mod benchmarks;
mod bsde;
mod hamiltonian;
mod problem;
pub mod regression;
mod relation;
mod simulate;

pub use bsde::{bsde_solve, feedback_policy, BsdeDiagnostics, BsdeSolution, RegressionConfig};
pub use hamiltonian::{hamiltonian, hamiltonian_candidates, lipschitz_constant, HamiltonianValue};
pub use problem::{ControlProblem, IntensityFn, Policy, RunningCostFn, TerminalCostFn};
pub use relation::{fundamental_relation_check, random_schedules, PolicyRow, RelationReport};
pub use simulate::{
    base_replay, closed_loop_simulate, controlled_simulate, cost_evaluate, cost_evaluate_reweighted, ControlledPath,
};
