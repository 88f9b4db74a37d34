use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode};
use super::CliError;
use crate::control::{
    bsde_solve, closed_loop_simulate, controlled_simulate, cost_evaluate, cost_evaluate_reweighted, feedback_policy,
    fundamental_relation_check, random_schedules, BsdeSolution, ControlProblem, ControlledPath, Policy,
};
use crate::levy::sample_path;
use crate::lift::{forcing_eval, simulate_lift, LiftState};
use crate::rng::{ensemble, path_rng};
use crate::stats::Z_99;
use crate::volterra::{compare_paths, simulate_volterra, ComparisonReport};

/// Number of log-spaced times in the kernel quadrature table.
const QUADRATURE_POINTS: usize = 50;
const QUADRATURE_RANGE: (f64, f64) = (0.05, 5.0);

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub headline: String,
    /// Files written, manifest last.
    pub outputs: Vec<String>,
}

/// Output files of one run, written together with the manifest.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn add(&mut self, name: &str, content: String) {
        self.files.insert(name.to_string(), content);
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.add(name, text);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'static str,
    seed: u64,
    /// Streams derived from `seed`.
    streams: BTreeMap<&'static str, u64>,
    config_sha256: String,
    config: &'a ExperimentConfig,
    outputs: BTreeMap<String, String>,
}

fn sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn streams(seed: u64) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("forward", seed),
        ("evaluation", seed.wrapping_add(1)),
        ("trajectory", seed.wrapping_add(2)),
    ])
}

/// Runs `cfg` (already resolved, mode set) and writes its outputs to `out`.
/// `raw` is the config text, hashed into the manifest.
pub fn run(cfg: &ExperimentConfig, raw: &str, out: &Path) -> Result<RunSummary, CliError> {
    let mode = cfg
        .mode
        .ok_or_else(|| CliError::Schema("mode: missing field `mode`".into()))?;
    let mut outputs = Outputs::default();
    let result = match mode {
        Mode::KernelCheck => kernel_check(cfg, &mut outputs),
        Mode::Equivalence => equivalence(cfg, &mut outputs),
        Mode::Solve => solve(cfg, &mut outputs),
        Mode::Evaluate => evaluate(cfg, &mut outputs),
        Mode::ClosedLoop => closed_loop(cfg, &mut outputs),
    };
    // outputs of a failed check are still written for inspection
    let (headline, failure) = match result {
        Ok(h) => (h, None),
        Err(Failure::Check(h)) => (h.clone(), Some(CliError::Numeric(h))),
        Err(Failure::Fatal(e)) => return Err(e),
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut written = Vec::new();
    for (name, content) in &outputs.files {
        let path = out.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(name.clone());
    }
    let manifest = Manifest {
        tool: "vlift",
        version: env!("CARGO_PKG_VERSION"),
        mode: mode.name(),
        seed: cfg.numerics.seed,
        streams: streams(cfg.numerics.seed),
        config_sha256: sha256(raw),
        config: cfg,
        outputs: outputs.files.iter().map(|(k, v)| (k.clone(), sha256(v))).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest");
    text.push('\n');
    let path = out.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    written.push("manifest.json".into());
    match failure {
        Some(e) => Err(e),
        None => Ok(RunSummary {
            headline,
            outputs: written,
        }),
    }
}

enum Failure {
    /// The run completed but a verification threshold was missed.
    Check(String),
    Fatal(CliError),
}

impl<E: Into<CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Fatal(e.into())
    }
}

type ModeResult = Result<String, Failure>;

fn kernel_check(cfg: &ExperimentConfig, out: &mut Outputs) -> ModeResult {
    let measure = cfg.kernel.build()?;
    let density = cfg.kernel.density();
    let (t0, t1) = QUADRATURE_RANGE;
    let mut csv = String::from("t,k_atomic,k_target,rel_error\n");
    let mut max_rel = 0.0f64;
    for i in 0..QUADRATURE_POINTS {
        let t = t0 * (t1 / t0).powf(i as f64 / (QUADRATURE_POINTS - 1) as f64);
        let k = measure.kernel_eval(t)?;
        let target = density.as_ref().and_then(|d| d.target_kernel(t)).unwrap_or(k);
        let rel = ((k - target) / target).abs();
        max_rel = max_rel.max(rel);
        writeln!(csv, "{t},{k},{target},{rel}").unwrap();
    }
    let singularity = measure.singularity_index();
    let report = serde_json::json!({
        "atoms": measure.len(),
        "eps": measure.eps(),
        "total_mass": measure.total_mass(),
        "diagnostics": measure.diagnostics(),
        "singularity": singularity,
        "quadrature": {
            "t_min": t0,
            "t_max": t1,
            "points": QUADRATURE_POINTS,
            "max_rel_error": max_rel,
        },
    });
    out.json("measure.json", &measure);
    out.json("kernel_report.json", &report);
    out.add("quadrature_error.csv", csv);
    Ok(format!(
        "kernel-check: {} atoms, continuous index {}, max relative quadrature error {max_rel:e}",
        measure.len(),
        singularity.continuous.map_or("n/a".to_string(), |d| d.to_string()),
    ))
}

fn equivalence(cfg: &ExperimentConfig, out: &mut Outputs) -> ModeResult {
    let measure = Arc::new(cfg.kernel.build()?);
    let model = cfg.levy()?;
    let (coeffs, y0) = cfg.coefficients(&model)?;
    let grid = cfg.grid()?;
    let start = LiftState::immerse(&y0, measure.clone());
    let seed = cfg.numerics.seed;
    let tol = cfg.numerics.equivalence_tolerance;
    let runs = ensemble(cfg.numerics.seeds, seed, |_, rng| -> crate::Result<_> {
        let path = sample_path(&model, grid.horizon(), rng)?;
        let lift = simulate_lift(&coeffs, &model, &path, &grid, &start)?;
        let direct = simulate_volterra(
            |t| measure.kernel(t),
            &coeffs,
            &model,
            &path,
            &grid,
            |t| forcing_eval(&start, t).expect("t >= 0"),
        )?;
        let report = compare_paths(&lift, &direct)?;
        Ok((lift, direct, report))
    });
    let runs = runs.into_iter().collect::<crate::Result<Vec<_>>>()?;
    let mut csv = String::from("seed,sup_gap,rmse,pass\n");
    let reports: Vec<&ComparisonReport> = runs.iter().map(|r| &r.2).collect();
    for (i, r) in reports.iter().enumerate() {
        writeln!(csv, "{i},{},{},{}", r.sup_gap, r.rmse, r.sup_gap < tol).unwrap();
    }
    let max_gap = reports.iter().map(|r| r.sup_gap).fold(0.0, f64::max);
    let all_pass = reports.iter().all(|r| r.sup_gap < tol);
    out.add("equivalence.csv", csv);
    out.json(
        "comparison.json",
        &serde_json::json!({
            "seeds": reports.len(),
            "tolerance": tol,
            "max_sup_gap": max_gap,
            "all_pass": all_pass,
            "reports": reports,
        }),
    );
    if let Some((lift, direct, _)) = runs.first() {
        let d = y0.len();
        let mut traj = String::from("t");
        for c in 1..=d {
            write!(traj, ",u_lift_{c}").unwrap();
        }
        for c in 1..=d {
            write!(traj, ",u_volterra_{c}").unwrap();
        }
        traj.push('\n');
        for (k, t) in grid.points().iter().enumerate() {
            write!(traj, "{t}").unwrap();
            for v in lift.projected[k].iter().chain(&direct.u[k]) {
                write!(traj, ",{v}").unwrap();
            }
            traj.push('\n');
        }
        out.add("trajectory.csv", traj);
    }
    let headline = format!(
        "equivalence: {} paths, max sup gap {max_gap:e} (threshold {tol:e})",
        reports.len()
    );
    if all_pass {
        Ok(headline)
    } else {
        Err(Failure::Check(format!("{headline}: threshold exceeded")))
    }
}

fn problem_for(cfg: &ExperimentConfig) -> Result<ControlProblem, Failure> {
    let problem = cfg.problem()?;
    problem
        .validate(cfg.numerics.seed)
        .map_err(|e| Failure::Fatal(CliError::Schema(format!("control: {e}"))))?;
    Ok(problem)
}

fn eval_paths(cfg: &ExperimentConfig) -> usize {
    cfg.numerics.eval_paths.unwrap_or(cfg.numerics.n_paths)
}

fn value_csv(solution: &BsdeSolution) -> String {
    let mut csv = String::from("t,theta\n");
    for (t, v) in solution.times.iter().zip(&solution.theta_mean) {
        writeln!(csv, "{t},{v}").unwrap();
    }
    csv
}

fn trajectory_csv(run: &ControlledPath) -> String {
    let d = run.trajectory.projected.first().map_or(0, Vec::len);
    let mut csv = String::from("t");
    for c in 1..=d {
        write!(csv, ",u_{c}").unwrap();
    }
    csv.push_str(",action\n");
    for (k, t) in run.trajectory.grid.points().iter().enumerate() {
        write!(csv, "{t}").unwrap();
        for v in &run.trajectory.projected[k] {
            write!(csv, ",{v}").unwrap();
        }
        match run.actions.get(k) {
            Some(a) => writeln!(csv, ",{a}").unwrap(),
            None => csv.push_str(",\n"),
        }
    }
    csv
}

/// Piecewise-constant schedules with 1 to 3 switches at uniform times.
fn constant_policies(problem: &ControlProblem) -> Vec<(String, Policy)> {
    problem
        .actions
        .iter()
        .enumerate()
        .map(|(a, name)| (format!("constant-{name}"), Policy::Constant(a)))
        .collect()
}

fn bsde_json(solution: &BsdeSolution) -> serde_json::Value {
    serde_json::json!({
        "theta0": solution.theta0,
        "theta0_se": solution.theta0_se,
        "n_paths": solution.n_paths,
        "diagnostics": solution.diagnostics,
    })
}

fn solve(cfg: &ExperimentConfig, out: &mut Outputs) -> ModeResult {
    let problem = problem_for(cfg)?;
    let seed = cfg.numerics.seed;
    let solution = bsde_solve(&problem, cfg.numerics.n_paths, &cfg.regression(), seed)?;
    let mut policies = constant_policies(&problem);
    policies.extend(cfg.schedules()?);
    let n_random = cfg.control.as_ref().map_or(0, |c| c.random_schedules);
    policies.extend(random_schedules(&problem, n_random, seed));
    let report = fundamental_relation_check(&problem, &solution, &policies, eval_paths(cfg), seed.wrapping_add(1))?;
    let feedback = feedback_policy(&solution, &problem);
    let run = closed_loop_simulate(&problem, &feedback, &mut path_rng(seed.wrapping_add(2), 0))?;
    out.add("value.csv", value_csv(&solution));
    out.add("policy_table.csv", report.to_csv());
    out.add("trajectory.csv", trajectory_csv(&run));
    out.json("bsde_diagnostics.json", &bsde_json(&solution));
    out.json("relation_report.json", &report);
    let headline = format!(
        "solve: theta0 = {} (se {:e}); {} of {} policies pass the fundamental relation",
        solution.theta0,
        solution.theta0_se,
        report.rows.iter().filter(|r| r.pass).count(),
        report.rows.len()
    );
    if report.all_pass() {
        Ok(headline)
    } else {
        Err(Failure::Check(headline))
    }
}

fn evaluate(cfg: &ExperimentConfig, out: &mut Outputs) -> ModeResult {
    let problem = problem_for(cfg)?;
    let seed = cfg.numerics.seed;
    let n = eval_paths(cfg);
    let mut policies = constant_policies(&problem);
    policies.extend(cfg.schedules()?);
    let mut rows = Vec::new();
    for (name, policy) in &policies {
        let direct = cost_evaluate(&problem, policy, n, seed.wrapping_add(1))?;
        let weighted = cost_evaluate_reweighted(&problem, policy, n, seed.wrapping_add(1))?;
        rows.push((name, direct, weighted));
    }
    let best = rows.iter().map(|r| r.1.mean).fold(f64::INFINITY, f64::min);
    let mut table = String::from("policy,J,SE,gap\n");
    let mut check = String::from("policy,J_thinning,SE_thinning,J_reweighted,SE_reweighted,overlap_99\n");
    let mut consistent = true;
    for (name, direct, weighted) in &rows {
        writeln!(
            table,
            "{name},{},{},{}",
            direct.mean,
            direct.std_error,
            direct.mean - best
        )
        .unwrap();
        let overlap = direct.overlaps(weighted, Z_99);
        consistent &= overlap;
        writeln!(
            check,
            "{name},{},{},{},{},{overlap}",
            direct.mean, direct.std_error, weighted.mean, weighted.std_error
        )
        .unwrap();
    }
    let run = controlled_simulate(&problem, &policies[0].1, &mut path_rng(seed.wrapping_add(2), 0))?;
    out.add("policy_table.csv", table);
    out.add("girsanov_check.csv", check);
    out.add("trajectory.csv", trajectory_csv(&run));
    let headline = format!(
        "evaluate: {} policies, best J = {best}; thinning and reweighting {}",
        rows.len(),
        if consistent { "agree" } else { "DISAGREE" }
    );
    if consistent {
        Ok(headline)
    } else {
        Err(Failure::Check(headline))
    }
}

fn closed_loop(cfg: &ExperimentConfig, out: &mut Outputs) -> ModeResult {
    let problem = problem_for(cfg)?;
    let seed = cfg.numerics.seed;
    let solution = bsde_solve(&problem, cfg.numerics.n_paths, &cfg.regression(), seed)?;
    let feedback = feedback_policy(&solution, &problem);
    let n = eval_paths(cfg);
    let runs = ensemble(n, seed.wrapping_add(2), |_, rng| {
        closed_loop_simulate(&problem, &feedback, rng)
    });
    let runs = runs.into_iter().collect::<crate::Result<Vec<_>>>()?;
    let steps = problem.grid.steps();
    let n_actions = problem.n_actions();
    let mut counts = vec![0usize; steps * n_actions];
    let mut switches = String::from("path,switch_time\n");
    for (i, r) in runs.iter().enumerate() {
        for (k, &a) in r.actions.iter().enumerate() {
            counts[k * n_actions + a] += 1;
        }
        let first = r.actions[0];
        match r.actions.iter().position(|&a| a != first) {
            Some(k) => writeln!(switches, "{i},{}", problem.grid.points()[k]).unwrap(),
            None => writeln!(switches, "{i},").unwrap(),
        }
    }
    let mut actions = String::from("t");
    for a in &problem.actions {
        write!(actions, ",share_{a}").unwrap();
    }
    actions.push('\n');
    for k in 0..steps {
        write!(actions, "{}", problem.grid.points()[k]).unwrap();
        for a in 0..n_actions {
            write!(actions, ",{}", counts[k * n_actions + a] as f64 / n as f64).unwrap();
        }
        actions.push('\n');
    }
    let costs: Vec<f64> = runs.iter().map(ControlledPath::cost).collect();
    let est = crate::stats::MeanEstimate::from_samples(&costs);
    out.add("value.csv", value_csv(&solution));
    out.add("actions.csv", actions);
    out.add("switch_times.csv", switches);
    out.add("trajectory.csv", trajectory_csv(&runs[0]));
    out.json(
        "closed_loop.json",
        &serde_json::json!({
            "theta0": solution.theta0,
            "theta0_se": solution.theta0_se,
            "paths": n,
            "cost_mean": est.mean,
            "cost_se": est.std_error,
            "bsde": bsde_json(&solution),
        }),
    );
    Ok(format!(
        "closed-loop: {n} paths, J = {} (se {:e}), theta0 = {}",
        est.mean, est.std_error, solution.theta0
    ))
}
