use rand::Rng;

use super::problem::{ControlProblem, Policy};
use crate::error::{Error, Result};
use crate::levy::{
    girsanov_weight, sample_path, thinning_sample, GirsanovWeight, IntensityDriver, IntensitySchedule, JumpEvent,
    JumpPath,
};
use crate::lift::{LiftState, LiftStepper, LiftTrajectory};
use crate::rng::ensemble;
use crate::stats::MeanEstimate;

/// One path of the controlled system.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    pub trajectory: LiftTrajectory,
    pub path: JumpPath,
    /// Density of the controlled law with respect to the base law along
    /// `path`.
    pub weight: GirsanovWeight,
    /// Action in force on each grid cell.
    pub actions: Vec<usize>,
    /// `Σ_k Δ_k l(t_k, u(t_k), χ_k)`.
    pub running_cost: f64,
    pub terminal_cost: f64,
}

impl ControlledPath {
    pub fn cost(&self) -> f64 {
        self.running_cost + self.terminal_cost
    }
}

struct ControlledDriver<'a> {
    problem: &'a ControlProblem,
    policy: &'a Policy,
    stepper: LiftStepper<'a>,
    state: LiftState,
    states: Vec<LiftState>,
    u: Vec<f64>,
    action: usize,
    actions: Vec<usize>,
    running_cost: f64,
    fault: Option<Error>,
}

impl<'a> ControlledDriver<'a> {
    fn new(problem: &'a ControlProblem, policy: &'a Policy) -> Self {
        let state = problem.y0.clone().with_time(0.0);
        let mut states = Vec::with_capacity(problem.grid.points().len());
        states.push(state.clone());
        Self {
            problem,
            policy,
            stepper: LiftStepper::new(&problem.coeffs, &problem.model),
            u: vec![0.0; state.dim()],
            state,
            states,
            action: 0,
            actions: Vec::with_capacity(problem.grid.steps()),
            running_cost: 0.0,
            fault: None,
        }
    }

    /// Picks the action on the left state and fills the multipliers.
    fn decide(&mut self, t: f64, multipliers: &mut [f64]) -> usize {
        self.state.project_into(&mut self.u);
        let a = self.policy.action(t, &self.state);
        self.action = a;
        if a >= self.problem.n_actions() {
            self.fault.get_or_insert(Error::UnknownAction {
                index: a,
                len: self.problem.n_actions(),
            });
            multipliers.fill(1.0f64.min(self.problem.bound));
            return a;
        }
        for (i, r) in multipliers.iter_mut().enumerate() {
            *r = self.problem.r(t, &self.u, i, a);
        }
        a
    }

    fn step(&mut self, t: f64, t_next: f64, events: &[JumpEvent]) -> Result<()> {
        if let Some(e) = self.fault.take() {
            return Err(e);
        }
        let dt = t_next - t;
        self.running_cost += dt * self.problem.l(t, &self.u, self.action);
        self.actions.push(self.action);
        self.stepper.advance(&mut self.state, t, dt, events);
        self.state.set_time(t_next);
        self.states.push(self.state.clone());
        Ok(())
    }

    fn finish(self, path: JumpPath, weight: GirsanovWeight) -> ControlledPath {
        let trajectory = LiftTrajectory {
            grid: self.problem.grid.clone(),
            projected: self.states.iter().map(LiftState::project).collect(),
            states: self.states,
        };
        let terminal_cost = self.problem.g(trajectory.projected.last().unwrap());
        ControlledPath {
            trajectory,
            path,
            weight,
            actions: self.actions,
            running_cost: self.running_cost,
            terminal_cost,
        }
    }
}

impl IntensityDriver for ControlledDriver<'_> {
    fn intensities(&mut self, t: f64, multipliers: &mut [f64]) -> Option<usize> {
        Some(self.decide(t, multipliers))
    }

    fn advance(&mut self, t: f64, t_next: f64, events: &[JumpEvent]) -> Result<()> {
        self.step(t, t_next, events)
    }
}

/// Simulates the controlled lift directly under the tilted measure, drawing
/// jumps by thinning with intensity `r(t, P Y(t-), ξ, γ(t, Y(t-)))`.
pub fn controlled_simulate<R: Rng + ?Sized>(
    problem: &ControlProblem,
    policy: &Policy,
    rng: &mut R,
) -> Result<ControlledPath> {
    let mut driver = ControlledDriver::new(problem, policy);
    let thinned = thinning_sample(&problem.model, problem.bound, &problem.grid, &mut driver, rng)?;
    let weight = girsanov_weight(&thinned.path, &thinned.schedule, &problem.model)?;
    Ok(driver.finish(thinned.path, weight))
}

/// [`controlled_simulate`] for a feedback map; the realized actions are in
/// [`ControlledPath::actions`].
pub fn closed_loop_simulate<R: Rng + ?Sized>(
    problem: &ControlProblem,
    feedback: &Policy,
    rng: &mut R,
) -> Result<ControlledPath> {
    controlled_simulate(problem, feedback, rng)
}

/// Runs the policy along a path drawn under the base measure. The returned
/// weight is the density that turns base expectations into controlled ones.
pub fn base_replay(problem: &ControlProblem, policy: &Policy, path: &JumpPath) -> Result<ControlledPath> {
    path.validate_against(&problem.model)?;
    let n = problem.model.n_marks();
    let mut driver = ControlledDriver::new(problem, policy);
    let mut schedule = IntensitySchedule::new(problem.grid.clone(), n);
    let mut multipliers = vec![0.0; n];
    let pts = problem.grid.points();
    for k in 0..problem.grid.steps() {
        let a = driver.decide(pts[k], &mut multipliers);
        schedule.push(&multipliers, Some(a));
        driver.step(pts[k], pts[k + 1], path.events_in(pts[k], pts[k + 1]))?;
    }
    let weight = girsanov_weight(path, &schedule, &problem.model)?;
    Ok(driver.finish(path.clone(), weight))
}

fn collect_estimate(samples: Vec<Result<f64>>) -> Result<MeanEstimate> {
    let values = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(MeanEstimate::from_samples(&values))
}

/// Monte Carlo estimate of `J(γ)` under the controlled measure. Path `i`
/// uses the random stream `(seed, i)`.
pub fn cost_evaluate(problem: &ControlProblem, policy: &Policy, n_paths: usize, seed: u64) -> Result<MeanEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument("cost estimate needs at least two paths".into()));
    }
    collect_estimate(ensemble(n_paths, seed, |_, rng| {
        controlled_simulate(problem, policy, rng).map(|p| p.cost())
    }))
}

/// Estimate of `J(γ)` as `E[Λ_T · cost]` over base-measure paths.
pub fn cost_evaluate_reweighted(
    problem: &ControlProblem,
    policy: &Policy,
    n_paths: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument("cost estimate needs at least two paths".into()));
    }
    let horizon = problem.horizon();
    collect_estimate(ensemble(n_paths, seed, |_, rng| {
        let path = sample_path(&problem.model, horizon, rng)?;
        let run = base_replay(problem, policy, &path)?;
        Ok(run.weight.weight() * run.cost())
    }))
}
