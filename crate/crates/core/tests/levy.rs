mod common;

use common::two_atom_benchmark;
use volterra_lift::levy::{
    girsanov_weight, sample_path, thinning_sample, IntensityDriver, IntensitySchedule, JumpEvent, TimeIntensity,
};
use volterra_lift::lift::{LiftState, LiftStepper};
use volterra_lift::rng::{ensemble, path_rng};
use volterra_lift::stats::{MeanEstimate, Z_99};
use volterra_lift::{JumpPath, LevyModel, Result, TimeGrid};

#[test]
fn poisson_count_and_mark_frequencies() {
    let m = LevyModel::scalar(&[1.0], &[2.0]).unwrap();
    let counts: Vec<f64> = ensemble(100_000, 1, |_, rng| sample_path(&m, 1.0, rng).unwrap().len() as f64);
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    assert!((1.97..=2.03).contains(&mean), "{mean}");

    let m = LevyModel::scalar(&[1.0, 2.0], &[1.0, 3.0]).unwrap();
    let tallies: Vec<(usize, usize)> = ensemble(100_000, 2, |_, rng| {
        let p = sample_path(&m, 1.0, rng).unwrap();
        (p.events().iter().filter(|e| e.mark == 1).count(), p.len())
    });
    let (second, all) = tallies.iter().fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    let frac = second as f64 / all as f64;
    assert!((0.745..=0.755).contains(&frac), "{frac}");
}

#[test]
fn thinning_at_constant_tilt_scales_the_rate() {
    let m = LevyModel::scalar(&[1.0], &[2.0]).unwrap();
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let counts: Vec<f64> = ensemble(100_000, 3, |_, rng| {
        let mut drv = TimeIntensity(|_, _| 1.5);
        thinning_sample(&m, 2.0, &grid, &mut drv, rng).unwrap().path.len() as f64
    });
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    assert!((2.97..=3.03).contains(&mean), "{mean}");
}

#[test]
fn closed_form_weight_and_compensator() {
    let m = LevyModel::scalar(&[1.0], &[2.0]).unwrap();
    let ev = [0.2, 0.5, 0.75].map(|time| JumpEvent { time, mark: 0 });
    let p = JumpPath::new(ev.to_vec(), 1.0).unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let w = girsanov_weight(&p, &IntensitySchedule::constant(grid.clone(), 1, 1.5), &m).unwrap();
    assert!((w.weight() - 1.5f64.powi(3) * (-1.0f64).exp()).abs() < 1e-12);

    let m2 = LevyModel::scalar(&[1.0, -1.0, 0.5], &[0.7, 1.3, 2.0]).unwrap();
    for c in [0.25, 1.0, 1.75, 3.0] {
        let w = girsanov_weight(&p, &IntensitySchedule::constant(grid.clone(), 3, c), &m2).unwrap();
        assert!((w.compensator - (c - 1.0) * 4.0 * 1.0).abs() < 1e-12);
    }
}

/// `r = 1 + tanh(u)/2` on both marks of the two-atom benchmark, `u` being
/// the projection of the lift driven by the accepted events.
struct StateTilt<'a> {
    state: LiftState,
    stepper: LiftStepper<'a>,
}

impl IntensityDriver for StateTilt<'_> {
    fn intensities(&mut self, _: f64, multipliers: &mut [f64]) -> Option<usize> {
        let u = self.state.project()[0];
        multipliers.fill(1.0 + 0.5 * u.tanh());
        None
    }

    fn advance(&mut self, t: f64, t_next: f64, events: &[JumpEvent]) -> Result<()> {
        self.stepper.advance(&mut self.state, t, t_next - t, events);
        Ok(())
    }
}

fn replay(driver: &mut dyn IntensityDriver, path: &JumpPath, grid: &TimeGrid, n_marks: usize) -> IntensitySchedule {
    let mut sched = IntensitySchedule::new(grid.clone(), n_marks);
    let mut row = vec![0.0; n_marks];
    let pts = grid.points();
    for k in 0..grid.steps() {
        let a = driver.intensities(pts[k], &mut row);
        sched.push(&row, a);
        driver
            .advance(pts[k], pts[k + 1], path.events_in(pts[k], pts[k + 1]))
            .unwrap();
    }
    sched
}

#[test]
fn girsanov_weights_have_unit_mean() {
    let b = two_atom_benchmark();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let constant = |c: f64, seed: u64| {
        ensemble(100_000, seed, |_, rng| {
            let p = sample_path(&b.model, 1.0, rng).unwrap();
            girsanov_weight(&p, &IntensitySchedule::constant(grid.clone(), 2, c), &b.model)
                .unwrap()
                .weight()
        })
    };
    let state_dependent: Vec<f64> = ensemble(100_000, 6, |_, rng| {
        let p = sample_path(&b.model, 1.0, rng).unwrap();
        let mut drv = StateTilt {
            state: b.start.clone(),
            stepper: LiftStepper::new(&b.coeffs, &b.model),
        };
        let sched = replay(&mut drv, &p, &grid, 2);
        girsanov_weight(&p, &sched, &b.model).unwrap().weight()
    });
    for w in [constant(0.5, 4), constant(1.5, 5), state_dependent] {
        let est = MeanEstimate::from_samples(&w);
        assert!((est.mean - 1.0).abs() <= 3.0 * est.std_error, "{est:?}");
    }
}

#[test]
fn reweighting_matches_thinning() {
    let b = two_atom_benchmark();
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    // bounded functional: clipped terminal projection
    let phi = |path: &JumpPath| {
        let mut state = b.start.clone();
        let mut stepper = LiftStepper::new(&b.coeffs, &b.model);
        let pts = grid.points();
        for k in 0..grid.steps() {
            stepper.advance(
                &mut state,
                pts[k],
                pts[k + 1] - pts[k],
                path.events_in(pts[k], pts[k + 1]),
            );
        }
        state.project()[0].clamp(-2.0, 2.0)
    };
    let tilted: Vec<f64> = ensemble(100_000, 7, |_, rng| {
        let mut drv = StateTilt {
            state: b.start.clone(),
            stepper: LiftStepper::new(&b.coeffs, &b.model),
        };
        phi(&thinning_sample(&b.model, 1.5, &grid, &mut drv, rng).unwrap().path)
    });
    let weighted: Vec<f64> = ensemble(100_000, 8, |_, rng| {
        let p = sample_path(&b.model, 1.0, rng).unwrap();
        let mut drv = StateTilt {
            state: b.start.clone(),
            stepper: LiftStepper::new(&b.coeffs, &b.model),
        };
        let sched = replay(&mut drv, &p, &grid, 2);
        girsanov_weight(&p, &sched, &b.model).unwrap().weight() * phi(&p)
    });
    let (a, w) = (
        MeanEstimate::from_samples(&tilted),
        MeanEstimate::from_samples(&weighted),
    );
    assert!(a.overlaps(&w, Z_99), "{a:?} vs {w:?}");
}

#[test]
fn seeds_reproduce_paths_and_weights() {
    let b = two_atom_benchmark();
    let grid = TimeGrid::uniform(1.0, 20).unwrap();
    let run = |seed| {
        let mut drv = StateTilt {
            state: b.start.clone(),
            stepper: LiftStepper::new(&b.coeffs, &b.model),
        };
        let t = thinning_sample(&b.model, 1.5, &grid, &mut drv, &mut path_rng(seed, 9)).unwrap();
        let w = girsanov_weight(&t.path, &t.schedule, &b.model).unwrap();
        (t.path, w.log_weight.to_bits())
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).0, run(2).0);
}
