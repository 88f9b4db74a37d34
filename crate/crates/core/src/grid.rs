use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing time grid `0 = t_0 < t_1 < ... < t_M = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Uniform grid with `steps` cells on `[0, horizon]`; `t_k = k T / M` so the
    /// last point is exactly `horizon`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        let points = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Number of cells `M`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    /// Common step when the grid is uniform to relative tolerance `1e-9`.
    pub fn uniform_step(&self) -> Option<f64> {
        let dt = self.horizon() / self.steps() as f64;
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt)
            .then_some(dt)
    }

    /// Index `k` of the cell `(t_k, t_{k+1}]` containing `t`, for `t` in `(0, T]`.
    pub fn cell_of(&self, t: f64) -> usize {
        // first index with points[i] >= t, minus one
        let i = self.points.partition_point(|&p| p < t);
        i.saturating_sub(1).min(self.steps() - 1)
    }

    /// Index `k` with `t_k <= t < t_{k+1}`, clamped to the last cell.
    pub fn floor_index(&self, t: f64) -> usize {
        let i = self.points.partition_point(|&p| p <= t);
        i.saturating_sub(1).min(self.steps() - 1)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}
