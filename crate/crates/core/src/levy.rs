//! Finite-activity marked Poisson random measures.
//!
//! The Lévy measure is `ν = Σ_i λ_i δ_{ξ_i}`. Paths under the base measure are
//! drawn directly; paths under an intensity tilt `r·λ_i` are drawn by thinning
//! a dominating process of rate `C_r λ_i`. The tilt is frozen on each grid
//! cell, which is also how the Girsanov density is accumulated.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevyDocument", into = "LevyDocument")]
pub struct LevyModel {
    marks: Vec<Vec<f64>>,
    rates: Vec<f64>,
    total_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct LevyDocument {
    marks: Vec<Vec<f64>>,
    rates: Vec<f64>,
}

impl TryFrom<LevyDocument> for LevyModel {
    type Error = Error;

    fn try_from(doc: LevyDocument) -> Result<Self> {
        LevyModel::new(doc.marks, doc.rates)
    }
}

impl From<LevyModel> for LevyDocument {
    fn from(m: LevyModel) -> Self {
        Self {
            marks: m.marks,
            rates: m.rates,
        }
    }
}

impl LevyModel {
    pub fn new(marks: Vec<Vec<f64>>, rates: Vec<f64>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::InvalidArgument("Lévy model has no marks".into()));
        }
        if marks.len() != rates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} marks but {} rates",
                marks.len(),
                rates.len()
            )));
        }
        let dim = marks[0].len();
        for (i, m) in marks.iter().enumerate() {
            if m.len() != dim || dim == 0 {
                return Err(Error::InvalidArgument(format!(
                    "mark {i} has dimension {}, expected {dim}",
                    m.len()
                )));
            }
            if m.iter().all(|c| *c == 0.0) || m.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "mark {i} must be a finite nonzero vector"
                )));
            }
        }
        if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rate of mark {i} must be positive and finite, got {r}"
            )));
        }
        let total_rate = rates.iter().sum();
        Ok(Self {
            marks,
            rates,
            total_rate,
        })
    }

    /// Scalar marks.
    pub fn scalar(marks: &[f64], rates: &[f64]) -> Result<Self> {
        Self::new(marks.iter().map(|m| vec![*m]).collect(), rates.to_vec())
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn mark_dim(&self) -> usize {
        self.marks[0].len()
    }

    pub fn mark(&self, i: usize) -> &[f64] {
        &self.marks[i]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    fn pick_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>() * self.total_rate;
        for (i, r) in self.rates.iter().enumerate() {
            if u < *r {
                return i;
            }
            u -= r;
        }
        self.rates.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// Time-sorted jump events on `(0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    events: Vec<JumpEvent>,
    horizon: f64,
}

impl JumpPath {
    pub fn new(events: Vec<JumpEvent>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if events.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidArgument("jump times must be strictly increasing".into()));
        }
        if events.iter().any(|e| !(e.time > 0.0 && e.time <= horizon)) {
            return Err(Error::InvalidArgument("jump times must lie in (0, T]".into()));
        }
        Ok(Self { events, horizon })
    }

    /// Checks mark indices against a model.
    pub fn validate_against(&self, model: &LevyModel) -> Result<()> {
        match self.events.iter().find(|e| e.mark >= model.n_marks()) {
            Some(e) => Err(Error::InvalidArgument(format!(
                "event at t={} references mark {} of {}",
                e.time,
                e.mark,
                model.n_marks()
            ))),
            None => Ok(()),
        }
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            events: Vec::new(),
            horizon,
        }
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with time in `(a, b]`.
    pub fn events_in(&self, a: f64, b: f64) -> &[JumpEvent] {
        let lo = self.events.partition_point(|e| e.time <= a);
        let hi = self.events.partition_point(|e| e.time <= b);
        &self.events[lo..hi.max(lo)]
    }

    /// The path restricted to events at or before `t`.
    pub fn truncated(&self, t: f64) -> Self {
        Self {
            events: self.events.iter().copied().filter(|e| e.time <= t).collect(),
            horizon: self.horizon,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mark_index\n");
        for e in &self.events {
            writeln!(out, "{},{}", e.time, e.mark).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, horizon: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "t,mark_index" => {}
            other => return Err(Error::Parse(format!("expected header `t,mark_index`, got {other:?}"))),
        }
        let mut events = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (t, i) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected two fields", n + 2)))?;
            let time = t
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
            let mark = i
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
            events.push(JumpEvent { time, mark });
        }
        Self::new(events, horizon)
    }
}

/// Samples the base-measure Poisson random measure on `(0, T]`.
pub fn sample_path<R: Rng + ?Sized>(model: &LevyModel, horizon: f64, rng: &mut R) -> Result<JumpPath> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / model.total_rate;
        if t > horizon {
            break;
        }
        events.push(JumpEvent {
            time: t,
            mark: model.pick_mark(rng),
        });
    }
    Ok(JumpPath { events, horizon })
}

/// Supplies intensity multipliers to [`thinning_sample`] and receives the
/// accepted events, one grid cell at a time.
pub trait IntensityDriver {
    /// Fills `multipliers[i]` with `r` for mark `i` on the cell starting at
    /// `t`; returns the action in force, if any.
    fn intensities(&mut self, t: f64, multipliers: &mut [f64]) -> Option<usize>;

    /// Called once per cell `(t, t_next]` with its accepted events.
    fn advance(&mut self, t: f64, t_next: f64, events: &[JumpEvent]) -> Result<()>;
}

/// Driver for intensities that depend only on time and mark.
pub struct TimeIntensity<F>(pub F);

impl<F: FnMut(f64, usize) -> f64> IntensityDriver for TimeIntensity<F> {
    fn intensities(&mut self, t: f64, multipliers: &mut [f64]) -> Option<usize> {
        for (i, r) in multipliers.iter_mut().enumerate() {
            *r = (self.0)(t, i);
        }
        None
    }

    fn advance(&mut self, _: f64, _: f64, _: &[JumpEvent]) -> Result<()> {
        Ok(())
    }
}

/// Piecewise-constant intensity multipliers, one row of `n_marks` values per
/// grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySchedule {
    grid: TimeGrid,
    n_marks: usize,
    multipliers: Vec<f64>,
    actions: Vec<Option<usize>>,
}

impl IntensitySchedule {
    pub fn new(grid: TimeGrid, n_marks: usize) -> Self {
        Self {
            multipliers: Vec::with_capacity(grid.steps() * n_marks),
            actions: Vec::with_capacity(grid.steps()),
            grid,
            n_marks,
        }
    }

    pub fn constant(grid: TimeGrid, n_marks: usize, value: f64) -> Self {
        let steps = grid.steps();
        Self {
            multipliers: vec![value; steps * n_marks],
            actions: vec![None; steps],
            grid,
            n_marks,
        }
    }

    pub fn push(&mut self, row: &[f64], action: Option<usize>) {
        debug_assert_eq!(row.len(), self.n_marks);
        self.multipliers.extend_from_slice(row);
        self.actions.push(action);
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.multipliers[k * self.n_marks..(k + 1) * self.n_marks]
    }

    pub fn action(&self, k: usize) -> Option<usize> {
        self.actions[k]
    }

    pub fn actions(&self) -> &[Option<usize>] {
        &self.actions
    }

    pub fn is_complete(&self) -> bool {
        self.actions.len() == self.grid.steps()
    }
}

fn check_multiplier(t: f64, mark: usize, action: Option<usize>, value: f64, bound: f64) -> Result<()> {
    if value > 0.0 && value <= bound {
        Ok(())
    } else {
        Err(Error::IntensityBound {
            t,
            mark,
            action,
            value,
            bound,
        })
    }
}

/// A tilted path together with the multipliers that generated it.
#[derive(Debug, Clone)]
pub struct ThinnedPath {
    pub path: JumpPath,
    pub schedule: IntensitySchedule,
}

/// Samples the tilted measure with per-mark rate `r λ_i` by thinning
/// proposals of rate `bound · λ_i`, accepting each with probability
/// `r / bound`.
pub fn thinning_sample<D, R>(
    model: &LevyModel,
    bound: f64,
    grid: &TimeGrid,
    driver: &mut D,
    rng: &mut R,
) -> Result<ThinnedPath>
where
    D: IntensityDriver + ?Sized,
    R: Rng + ?Sized,
{
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "intensity bound must be positive and finite, got {bound}"
        )));
    }
    let n = model.n_marks();
    let proposal_rate = bound * model.total_rate;
    let mut schedule = IntensitySchedule::new(grid.clone(), n);
    let mut multipliers = vec![0.0; n];
    let mut events = Vec::new();
    let mut cell = Vec::new();
    let points = grid.points();
    for k in 0..grid.steps() {
        let (t0, t1) = (points[k], points[k + 1]);
        let action = driver.intensities(t0, &mut multipliers);
        for (i, r) in multipliers.iter().enumerate() {
            check_multiplier(t0, i, action, *r, bound)?;
        }
        schedule.push(&multipliers, action);

        cell.clear();
        let mut t = t0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / proposal_rate;
            if t > t1 {
                break;
            }
            let mark = model.pick_mark(rng);
            if rng.random::<f64>() * bound < multipliers[mark] {
                cell.push(JumpEvent { time: t, mark });
            }
        }
        driver.advance(t0, t1, &cell)?;
        events.extend_from_slice(&cell);
    }
    Ok(ThinnedPath {
        path: JumpPath {
            events,
            horizon: grid.horizon(),
        },
        schedule,
    })
}

/// `Λ_T = dP^γ/dP` on `F_T` for a piecewise-constant tilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovWeight {
    pub log_weight: f64,
    /// `ln r` at each event, in event order.
    pub event_log_terms: Vec<f64>,
    /// `∫_0^T Σ_i (r_i(s) - 1) λ_i ds`.
    pub compensator: f64,
}

impl GirsanovWeight {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// `Σ ln r - compensator`, recomputed from the stored parts.
    pub fn recomputed_log_weight(&self) -> f64 {
        self.event_log_terms.iter().sum::<f64>() - self.compensator
    }
}

/// Density of the tilted measure along `path`:
/// `Λ_T = exp(Σ_events ln r − ∫_0^T Σ_i (r_i − 1) λ_i ds)`.
pub fn girsanov_weight(path: &JumpPath, schedule: &IntensitySchedule, model: &LevyModel) -> Result<GirsanovWeight> {
    let grid = schedule.grid();
    if !schedule.is_complete() {
        return Err(Error::GridMismatch("intensity schedule does not cover the grid".into()));
    }
    if (grid.horizon() - path.horizon()).abs() > 1e-12 * path.horizon().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "schedule horizon {} differs from path horizon {}",
            grid.horizon(),
            path.horizon()
        )));
    }
    let mut event_log_terms = Vec::with_capacity(path.len());
    for e in path.events() {
        let k = grid.cell_of(e.time);
        let r = schedule.row(k)[e.mark];
        if !(r > 0.0) {
            return Err(Error::IntensityBound {
                t: e.time,
                mark: e.mark,
                action: schedule.action(k),
                value: r,
                bound: f64::INFINITY,
            });
        }
        event_log_terms.push(r.ln());
    }
    let mut compensator = 0.0;
    for k in 0..grid.steps() {
        let row = schedule.row(k);
        let s: f64 = row.iter().zip(model.rates()).map(|(r, l)| (r - 1.0) * l).sum();
        compensator += s * grid.dt(k);
    }
    let log_weight = event_log_terms.iter().sum::<f64>() - compensator;
    Ok(GirsanovWeight {
        log_weight,
        event_log_terms,
        compensator,
    })
}
