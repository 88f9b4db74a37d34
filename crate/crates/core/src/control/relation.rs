use rand::Rng;
use serde::Serialize;

use super::bsde::{feedback_policy, BsdeSolution};
use super::problem::{ControlProblem, Policy};
use super::simulate::cost_evaluate;
use crate::error::Result;
use crate::rng::path_rng;

/// Slack for rounding when both sides are exact (zero standard error).
const ROUNDING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRow {
    pub name: String,
    pub j: f64,
    pub se: f64,
    /// `J - theta0`.
    pub gap: f64,
    pub feedback: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub theta0: f64,
    pub theta0_se: f64,
    pub rows: Vec<PolicyRow>,
}

impl RelationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn feedback_row(&self) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.feedback)
    }

    /// `policy,J,SE,gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("policy,J,SE,gap\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.name, r.j, r.se, r.gap));
        }
        s
    }
}

/// Evaluates every policy plus the feedback policy extracted from
/// `solution`. Ordinary policies pass when `J >= theta0 - 3 SE`; the
/// feedback policy passes when `|J - theta0|` is within three combined
/// standard errors.
pub fn fundamental_relation_check(
    problem: &ControlProblem,
    solution: &BsdeSolution,
    policies: &[(String, Policy)],
    n_paths: usize,
    seed: u64,
) -> Result<RelationReport> {
    let theta0 = solution.theta0;
    let slack = ROUNDING * (1.0 + theta0.abs());
    let mut rows = Vec::with_capacity(policies.len() + 1);
    for (name, policy) in policies {
        let est = cost_evaluate(problem, policy, n_paths, seed)?;
        let gap = est.mean - theta0;
        rows.push(PolicyRow {
            name: name.clone(),
            j: est.mean,
            se: est.std_error,
            gap,
            feedback: false,
            pass: gap >= -3.0 * est.std_error - slack,
        });
    }
    let fb = feedback_policy(solution, problem);
    let est = cost_evaluate(problem, &fb, n_paths, seed)?;
    let gap = est.mean - theta0;
    let combined = est.std_error.hypot(solution.theta0_se);
    rows.push(PolicyRow {
        name: "feedback".into(),
        j: est.mean,
        se: est.std_error,
        gap,
        feedback: true,
        pass: gap.abs() <= 3.0 * combined + slack,
    });
    Ok(RelationReport {
        theta0,
        theta0_se: solution.theta0_se,
        rows,
    })
}

/// `count` random piecewise-constant schedules with one to three switches.
/// Schedule `i` draws from the stream `(seed, u64::MAX - 1 - i)`, away from
/// the path streams.
pub fn random_schedules(problem: &ControlProblem, count: usize, seed: u64) -> Vec<(String, Policy)> {
    let n_actions = problem.n_actions();
    let horizon = problem.horizon();
    (0..count)
        .map(|i| {
            let mut rng = path_rng(seed, u64::MAX - 1 - i as u64);
            let switches = rng.random_range(1..=3);
            let mut starts: Vec<f64> = (0..switches).map(|_| rng.random::<f64>() * horizon).collect();
            starts.sort_by(f64::total_cmp);
            starts.insert(0, 0.0);
            // consecutive pieces differ, so every switch is a real one
            let mut actions = vec![rng.random_range(0..n_actions)];
            for _ in 1..starts.len() {
                let prev = *actions.last().unwrap();
                let next = if n_actions > 1 {
                    (prev + rng.random_range(1..n_actions)) % n_actions
                } else {
                    prev
                };
                actions.push(next);
            }
            (format!("random-{i}"), Policy::piecewise(starts, actions))
        })
        .collect()
}
