mod common;

use common::two_atom_benchmark;
use volterra_lift::levy::{sample_path, JumpEvent};
use volterra_lift::lift::{forcing_eval, simulate_lift, CoefficientSet};
use volterra_lift::rng::{ensemble, path_rng};
use volterra_lift::volterra::{compare_paths, simulate_volterra};
use volterra_lift::{JumpPath, LevyModel, TimeGrid};

fn deterministic_error(steps: usize) -> f64 {
    let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
    let grid = TimeGrid::uniform(2.0, steps).unwrap();
    let coeffs = CoefficientSet::linear(1, -1.0);
    let traj = simulate_volterra(
        |t| (-t).exp(),
        &coeffs,
        &model,
        &JumpPath::empty(2.0),
        &grid,
        |_| vec![1.0],
    )
    .unwrap();
    grid.points()
        .iter()
        .zip(&traj.u)
        .map(|(t, u)| (u[0] - 0.5 * (1.0 + (-2.0 * t).exp())).abs())
        .fold(0.0, f64::max)
}

#[test]
fn deterministic_benchmark_is_first_order() {
    let errs: Vec<f64> = [2000, 4000, 8000, 16000].into_iter().map(deterministic_error).collect();
    assert!(errs[0] < 5e-3, "{errs:?}");
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio >= 2.0, "{errs:?}");
    }
}

#[test]
fn noiseless_solution_ignores_the_path() {
    let b = two_atom_benchmark();
    let coeffs = CoefficientSet::linear(1, -0.5);
    let grid = TimeGrid::uniform(1.0, 200).unwrap();
    let runs: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|seed| {
            let p = sample_path(&b.model, 1.0, &mut path_rng(seed, 0)).unwrap();
            let k = |t: f64| b.measure.kernel(t);
            simulate_volterra(k, &coeffs, &b.model, &p, &grid, |t| forcing_eval(&b.start, t).unwrap())
                .unwrap()
                .u
        })
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn later_events_do_not_change_the_past() {
    let b = two_atom_benchmark();
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let k = |t: f64| b.measure.kernel(t);
    let x = |t: f64| forcing_eval(&b.start, t).unwrap();
    let path = sample_path(&b.model, 1.0, &mut path_rng(3, 0)).unwrap();
    let base = simulate_volterra(k, &b.coeffs, &b.model, &path, &grid, x).unwrap();
    for cut_k in [20, 50, 80] {
        let cut = grid.points()[cut_k];
        let mut events: Vec<JumpEvent> = path.events().iter().copied().filter(|e| e.time <= cut).collect();
        events.extend([cut + 0.013, cut + 0.05].map(|time| JumpEvent { time, mark: 0 }));
        let altered = JumpPath::new(events, 1.0).unwrap();
        let other = simulate_volterra(k, &b.coeffs, &b.model, &altered, &grid, x).unwrap();
        assert_eq!(base.u[..=cut_k], other.u[..=cut_k]);
    }
}

#[test]
fn lift_and_direct_solver_agree_on_shared_paths() {
    let b = two_atom_benchmark();
    let grid = TimeGrid::uniform(1.0, 1000).unwrap();
    let gaps = ensemble(20, 99, |_, rng| {
        let path = sample_path(&b.model, 1.0, rng).unwrap();
        let lift = simulate_lift(&b.coeffs, &b.model, &path, &grid, &b.start).unwrap();
        let direct = simulate_volterra(
            |t| b.measure.kernel(t),
            &b.coeffs,
            &b.model,
            &path,
            &grid,
            |t| forcing_eval(&b.start, t).unwrap(),
        )
        .unwrap();
        compare_paths(&lift, &direct).unwrap().sup_gap
    });
    assert!(gaps.iter().all(|&g| g < 5e-3), "{gaps:?}");
}
