//! Direct convolution quadrature of the stochastic Volterra equation
//!
//! `u(t) = x(t) + ∫_0^t k(t-s) f(s, u(s)) ds + ∫_0^t ∫ k(t-s) σ(s, ξ, u(s-)) π̃(ds, dξ)`
//!
//! on a uniform grid with the explicit left-point rule. Nothing here touches
//! the lifted state, which makes it an independent check of [`crate::lift`].

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::levy::{JumpPath, LevyModel};
use crate::lift::{series_csv, CoefficientSet, LiftTrajectory};

#[derive(Debug, Clone)]
pub struct VolterraTrajectory {
    pub grid: TimeGrid,
    pub u: Vec<Vec<f64>>,
    pub forcing: Vec<Vec<f64>>,
}

impl VolterraTrajectory {
    pub fn to_csv(&self) -> String {
        series_csv(self.grid.points(), &self.u)
    }
}

/// Solves the Volterra equation on a fixed jump path.
///
/// Drift and compensator use `Δ Σ_{m<k} k(t_k - t_m)(·)(t_m)`; an event at
/// `s ∈ (t_m, t_{m+1}]` enters every later `u(t_k)` with weight `k(t_k - s)`
/// and its coefficient frozen at `u(t_m)`. The kernel is never evaluated at 0:
/// an event landing exactly on `t_k` uses `k(Δ/2)` for `u(t_k)`.
pub fn simulate_volterra<K, X>(
    kernel: K,
    coeffs: &CoefficientSet,
    model: &LevyModel,
    path: &JumpPath,
    grid: &TimeGrid,
    forcing: X,
) -> Result<VolterraTrajectory>
where
    K: Fn(f64) -> f64,
    X: Fn(f64) -> Vec<f64>,
{
    let dt = grid
        .uniform_step()
        .ok_or_else(|| Error::GridMismatch("direct solver needs a uniform grid".into()))?;
    if (path.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "path horizon {} differs from grid horizon {}",
            path.horizon(),
            grid.horizon()
        )));
    }
    path.validate_against(model)?;
    let d = coeffs.dim();
    let pts = grid.points();
    let m_steps = grid.steps();

    // k(m Δ) for lags m = 1..=M
    let lags: Vec<f64> = (0..=m_steps)
        .map(|m| if m == 0 { f64::NAN } else { kernel(m as f64 * dt) })
        .collect();
    let forcing_vals: Vec<Vec<f64>> = pts.iter().map(|&t| forcing(t)).collect();
    if forcing_vals.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidArgument(format!(
            "forcing must return vectors of dimension {d}"
        )));
    }

    // net drift f - Σ λ_i σ(ξ_i) at each grid point, filled causally
    let mut net = vec![vec![0.0; d]; m_steps + 1];
    let mut u = vec![vec![0.0; d]; m_steps + 1];
    // coefficient of each event, known once its cell's left endpoint is solved
    let events = path.events();
    let mut event_sigma: Vec<Vec<f64>> = vec![Vec::new(); events.len()];
    let (mut fbuf, mut sig) = (vec![0.0; d], vec![0.0; d]);
    let mut next_event = 0;

    for k in 0..=m_steps {
        let tk = pts[k];
        let mut uk = forcing_vals[k].clone();
        for m in 0..k {
            let w = dt * lags[k - m];
            for (a, b) in uk.iter_mut().zip(&net[m]) {
                *a += w * b;
            }
        }
        for (e, s) in events.iter().zip(&event_sigma).take(next_event) {
            let lag = tk - e.time;
            let w = if lag > 0.0 {
                kernel(lag)
            } else {
                debug!("event at t={} coincides with grid point; using k(dt/2)", e.time);
                kernel(0.5 * dt)
            };
            for (a, b) in uk.iter_mut().zip(s) {
                *a += w * b;
            }
        }
        u[k] = uk;

        if k < m_steps {
            coeffs.drift(tk, &u[k], &mut fbuf);
            let row = &mut net[k];
            row.copy_from_slice(&fbuf);
            for (i, lam) in model.rates().iter().enumerate() {
                coeffs.jump(tk, model.mark(i), &u[k], &mut sig);
                row.iter_mut().zip(&sig).for_each(|(r, s)| *r -= lam * s);
            }
            // events in (t_k, t_{k+1}] get σ frozen at u(t_k)
            let t_next = pts[k + 1];
            while next_event < events.len() && events[next_event].time <= t_next {
                let e = events[next_event];
                coeffs.jump(e.time, model.mark(e.mark), &u[k], &mut sig);
                event_sigma[next_event] = sig.clone();
                next_event += 1;
            }
        }
    }
    Ok(VolterraTrajectory {
        grid: grid.clone(),
        u,
        forcing: forcing_vals,
    })
}

/// Grid-sampled trajectory of `u`.
pub trait GridSeries {
    fn series_grid(&self) -> &TimeGrid;
    fn series(&self) -> &[Vec<f64>];
}

impl GridSeries for VolterraTrajectory {
    fn series_grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn series(&self) -> &[Vec<f64>] {
        &self.u
    }
}

impl GridSeries for LiftTrajectory {
    fn series_grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn series(&self) -> &[Vec<f64>] {
        &self.projected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub sup_gap: f64,
    pub rmse: f64,
    pub per_component: Vec<f64>,
}

/// Sup-norm gap, RMSE over all grid points and components, and the sup gap
/// of each component.
pub fn compare_paths<A: GridSeries + ?Sized, B: GridSeries + ?Sized>(a: &A, b: &B) -> Result<ComparisonReport> {
    if !a.series_grid().same_as(b.series_grid()) {
        return Err(Error::GridMismatch("trajectories live on different grids".into()));
    }
    let (sa, sb) = (a.series(), b.series());
    let d = sa.first().map_or(0, Vec::len);
    if sb.first().map_or(0, Vec::len) != d {
        return Err(Error::InvalidArgument("trajectories differ in dimension".into()));
    }
    let mut per_component = vec![0.0f64; d];
    let mut sq = 0.0;
    for (x, y) in sa.iter().zip(sb) {
        for (c, (p, q)) in x.iter().zip(y).enumerate() {
            let g = (p - q).abs();
            per_component[c] = per_component[c].max(g);
            sq += g * g;
        }
    }
    let count = (sa.len() * d).max(1) as f64;
    Ok(ComparisonReport {
        sup_gap: per_component.iter().copied().fold(0.0, f64::max),
        rmse: (sq / count).sqrt(),
        per_component,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{sample_path, JumpEvent};
    use crate::rng::path_rng;

    #[test]
    fn constant_kernel_constant_drift_is_exact() {
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(2.0, 200).unwrap();
        let coeffs = CoefficientSet::constant_drift(vec![0.3]);
        let traj = simulate_volterra(|_| 1.0, &coeffs, &model, &JumpPath::empty(2.0), &grid, |_| vec![1.5]).unwrap();
        for (t, u) in grid.points().iter().zip(&traj.u) {
            assert!((u[0] - (1.5 + 0.3 * t)).abs() < 1e-12);
        }
        assert_eq!(traj.u[0], traj.forcing[0]);
    }

    #[test]
    fn exponential_kernel_linear_drift_accuracy() {
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(2.0, 2000).unwrap();
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
        let err = grid
            .points()
            .iter()
            .zip(&traj.u)
            .map(|(t, u)| (u[0] - 0.5 * (1.0 + (-2.0 * t).exp())).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "err={err}");
    }

    #[test]
    fn causality_under_late_modification() {
        let model = LevyModel::scalar(&[1.0, -1.0], &[2.0, 2.0]).unwrap();
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let coeffs = CoefficientSet::linear(1, -0.5).with_proportional_jump(0.2, 1.0);
        let path = sample_path(&model, 1.0, &mut path_rng(4, 0)).unwrap();
        let k = |t: f64| 2.0 * (-t).exp() + 3.0 * (-2.0 * t).exp();
        let full = simulate_volterra(k, &coeffs, &model, &path, &grid, |_| vec![1.0]).unwrap();
        let cut = 0.5;
        let mut ev: Vec<JumpEvent> = path.truncated(cut).events().to_vec();
        ev.push(JumpEvent { time: 0.77, mark: 0 });
        let changed = JumpPath::new(ev, 1.0).unwrap();
        let other = simulate_volterra(k, &coeffs, &model, &changed, &grid, |_| vec![1.0]).unwrap();
        for (t, (a, b)) in grid.points().iter().zip(full.u.iter().zip(&other.u)) {
            if *t <= cut {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn coinciding_event_uses_midpoint_kernel() {
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let coeffs = CoefficientSet::zero(1).with_constant_jump(vec![1.0]);
        let path = JumpPath::new(vec![JumpEvent { time: 0.5, mark: 0 }], 1.0).unwrap();
        let traj = simulate_volterra(|t| 1.0 / t.sqrt(), &coeffs, &model, &path, &grid, |_| vec![0.0]).unwrap();
        assert!(traj.u.iter().all(|u| u[0].is_finite()));
        // u(0.5) = k(Δ/2) - Δ(k(0.5) + k(0.25))
        let kk = |t: f64| 1.0 / t.sqrt();
        let expected = kk(0.125) - 0.25 * (kk(0.5) + kk(0.25));
        assert!((traj.u[2][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn comparison_examples() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let a = VolterraTrajectory {
            grid: grid.clone(),
            u: vec![vec![1.0, 2.0]; 4],
            forcing: vec![vec![0.0, 0.0]; 4],
        };
        let r = compare_paths(&a, &a).unwrap();
        assert_eq!(r.sup_gap, 0.0);
        assert_eq!(r.rmse, 0.0);
        let mut b = a.clone();
        b.u.iter_mut().for_each(|u| u.iter_mut().for_each(|v| *v += 0.25));
        let r = compare_paths(&a, &b).unwrap();
        assert!((r.sup_gap - 0.25).abs() < 1e-15);
        assert!((r.rmse - 0.25).abs() < 1e-15);
        assert_eq!(r.per_component.len(), 2);
        let mut c = a.clone();
        c.grid = TimeGrid::uniform(2.0, 3).unwrap();
        assert!(compare_paths(&a, &c).is_err());
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        let r = simulate_volterra(
            |_| 1.0,
            &CoefficientSet::zero(1),
            &model,
            &JumpPath::empty(1.0),
            &grid,
            |_| vec![0.0],
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }
}
