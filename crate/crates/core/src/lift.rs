//! The Markovian lift `Y(t, x)` sampled at the atoms of a Bernstein measure.
//!
//! With `μ = Σ_j w_j δ_{x_j}` the lifted equation is a diagonal linear system
//! `dY_j = -x_j Y_j dt + f(t, u) dt + ∫ σ(t, ξ, u) π̃(dt, dξ)` with
//! `u = P Y = Σ_j w_j Y_j`. The linear part is integrated exactly, so atoms
//! with rates spanning many decades cost nothing in stability.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{weight_unchecked, BernsteinMeasure};
use crate::levy::{JumpEvent, JumpPath, LevyModel};

/// Lifted state: one row `Y_j ∈ ℝ^d` per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftState {
    measure: Arc<BernsteinMeasure>,
    dim: usize,
    values: Vec<f64>,
    time: f64,
}

impl LiftState {
    pub fn zeros(measure: Arc<BernsteinMeasure>, dim: usize) -> Self {
        let n = measure.len();
        Self {
            measure,
            dim,
            values: vec![0.0; n * dim],
            time: 0.0,
        }
    }

    /// State from row-major values, `n_atoms * dim` entries.
    pub fn from_values(measure: Arc<BernsteinMeasure>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != measure.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} x {dim} values, got {}",
                measure.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("lift state has non-finite entries".into()));
        }
        Ok(Self {
            measure,
            dim,
            values,
            time: 0.0,
        })
    }

    pub fn from_rows(measure: Arc<BernsteinMeasure>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged lift rows".into()));
        }
        Self::from_values(measure, dim, rows.concat())
    }

    /// `i(v)`: every atom row equals `v`.
    pub fn immerse(v: &[f64], measure: Arc<BernsteinMeasure>) -> Self {
        let n = measure.len();
        Self {
            measure,
            dim: v.len(),
            values: v.repeat(n),
            time: 0.0,
        }
    }

    pub fn measure(&self) -> &Arc<BernsteinMeasure> {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.measure.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `P Y = Σ_j w_j Y_j`.
    pub fn project(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        self.project_into(&mut u);
        u
    }

    pub fn project_into(&self, u: &mut [f64]) {
        u.fill(0.0);
        for (j, a) in self.measure.atoms().iter().enumerate() {
            for (ui, yi) in u.iter_mut().zip(self.row(j)) {
                *ui += a.w * yi;
            }
        }
    }

    fn weighted_sq(&self, factor: impl Fn(f64) -> f64) -> f64 {
        self.measure
            .atoms()
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let sq: f64 = self.row(j).iter().map(|y| y * y).sum();
                a.w * factor(a.x) * sq
            })
            .sum()
    }

    /// `‖Y‖_H^2 = Σ_j w_j ω(x_j) |Y_j|^2`.
    pub fn h_norm_sq(&self) -> f64 {
        self.weighted_sq(weight_unchecked)
    }

    /// `‖Y‖_V^2 = Σ_j w_j (1 + x_j) ω(x_j) |Y_j|^2`.
    pub fn v_norm_sq(&self) -> f64 {
        self.weighted_sq(|x| (1.0 + x) * weight_unchecked(x))
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    pub fn v_norm(&self) -> f64 {
        self.v_norm_sq().sqrt()
    }

    /// `⟨B Y, Y⟩_H = -Σ_j w_j ω(x_j) x_j |Y_j|^2`, which equals
    /// `-(‖Y‖_V^2 - ‖Y‖_H^2)` exactly.
    pub fn dissipation(&self) -> f64 {
        -self.weighted_sq(|x| x * weight_unchecked(x))
    }

    /// `S(t) Y`: row `j` scaled by `e^{-x_j t}`.
    pub fn semigroup_apply(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "semigroup applied for negative time {t}"
            )));
        }
        let mut out = self.clone();
        for (j, a) in self.measure.atoms().iter().enumerate() {
            let decay = (-a.x * t).exp();
            out.row_mut(j).iter_mut().for_each(|y| *y *= decay);
        }
        out.time = self.time + t;
        Ok(out)
    }

    /// `self - other`, both on the same measure.
    pub fn difference(&self, other: &LiftState) -> LiftState {
        debug_assert_eq!(self.values.len(), other.values.len());
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a -= b);
        out
    }
}

/// Forcing term `x(t) = Σ_j w_j e^{-x_j t} y0_j` generated by an initial field.
pub fn forcing_eval(y0: &LiftState, t: f64) -> Result<Vec<f64>> {
    Ok(y0.semigroup_apply(t)?.project())
}

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, mark, u, out)`.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Drift `f(t, u)` and jump coefficient `σ(t, ξ, u)`, with their declared
/// Lipschitz constants in `u`.
#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    drift: DriftFn,
    jump: JumpFn,
    drift_lipschitz: f64,
    jump_lipschitz: f64,
    label: String,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("drift_lipschitz", &self.drift_lipschitz)
            .field("jump_lipschitz", &self.jump_lipschitz)
            .finish()
    }
}

impl CoefficientSet {
    pub fn custom(
        dim: usize,
        drift: DriftFn,
        drift_lipschitz: f64,
        jump: JumpFn,
        jump_lipschitz: f64,
        label: impl Into<String>,
    ) -> Self {
        Self {
            dim,
            drift,
            jump,
            drift_lipschitz,
            jump_lipschitz,
            label: label.into(),
        }
    }

    /// `f = 0`, `σ = 0`.
    pub fn zero(dim: usize) -> Self {
        Self::custom(
            dim,
            Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            0.0,
            Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            0.0,
            "zero",
        )
    }

    /// `f(t, u) = c`.
    pub fn constant_drift(c: Vec<f64>) -> Self {
        let dim = c.len();
        Self::zero(dim).with_drift(
            Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&c)),
            0.0,
            "constant",
        )
    }

    /// `f(t, u) = a u`.
    pub fn linear(dim: usize, a: f64) -> Self {
        Self::affine(a, vec![0.0; dim])
    }

    /// `f(t, u) = a u + b`.
    pub fn affine(a: f64, b: Vec<f64>) -> Self {
        let dim = b.len();
        Self::zero(dim).with_drift(
            Arc::new(move |_, u: &[f64], out: &mut [f64]| {
                for ((o, ui), bi) in out.iter_mut().zip(u).zip(&b) {
                    *o = a * ui + bi;
                }
            }),
            a.abs(),
            "affine",
        )
    }

    /// Saturating growth `f_i(u) = g_i u_i (1 - clamp(u_i, 0, K)/K)`.
    pub fn growth(rates: Vec<f64>, capacity: f64) -> Self {
        let dim = rates.len();
        let lip = rates.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Self::zero(dim).with_drift(
            Arc::new(move |_, u: &[f64], out: &mut [f64]| {
                for ((o, ui), g) in out.iter_mut().zip(u).zip(&rates) {
                    *o = g * ui * (1.0 - ui.clamp(0.0, capacity) / capacity);
                }
            }),
            lip,
            "growth",
        )
    }

    pub fn with_drift(mut self, drift: DriftFn, lipschitz: f64, label: &str) -> Self {
        self.drift = drift;
        self.drift_lipschitz = lipschitz;
        self.label = self.relabel(label, 0);
        self
    }

    pub fn with_jump(mut self, jump: JumpFn, lipschitz: f64, label: &str) -> Self {
        self.jump = jump;
        self.jump_lipschitz = lipschitz;
        self.label = self.relabel(label, 1);
        self
    }

    fn relabel(&self, part: &str, slot: usize) -> String {
        let mut parts: Vec<String> = self.label.split('/').map(str::to_string).collect();
        parts.resize(2, "zero".into());
        parts[slot] = part.into();
        parts.join("/")
    }

    /// `σ(t, ξ, u) = c`, independent of the mark.
    pub fn with_constant_jump(self, c: Vec<f64>) -> Self {
        self.with_jump(
            Arc::new(move |_, _, _, out: &mut [f64]| out.copy_from_slice(&c)),
            0.0,
            "constant",
        )
    }

    /// `σ(t, ξ, u) = s ξ`; the mark dimension must equal the state dimension.
    pub fn with_scaled_marks(self, scale: f64) -> Self {
        self.with_jump(
            Arc::new(move |_, xi: &[f64], _, out: &mut [f64]| {
                for (o, x) in out.iter_mut().zip(xi) {
                    *o = scale * x;
                }
            }),
            0.0,
            "scaled-mark",
        )
    }

    /// `σ_i(t, ξ, u) = s ξ_i u_i`; `mark_bound` bounds `|ξ_i|` over the marks.
    pub fn with_proportional_jump(self, scale: f64, mark_bound: f64) -> Self {
        self.with_jump(
            Arc::new(move |_, xi: &[f64], u: &[f64], out: &mut [f64]| {
                for ((o, x), ui) in out.iter_mut().zip(xi).zip(u) {
                    *o = scale * x * ui;
                }
            }),
            scale.abs() * mark_bound,
            "proportional",
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift_lipschitz(&self) -> f64 {
        self.drift_lipschitz
    }

    pub fn jump_lipschitz(&self) -> f64 {
        self.jump_lipschitz
    }

    #[inline]
    pub fn drift(&self, t: f64, u: &[f64], out: &mut [f64]) {
        (self.drift)(t, u, out)
    }

    #[inline]
    pub fn jump(&self, t: f64, mark: &[f64], u: &[f64], out: &mut [f64]) {
        (self.jump)(t, mark, u, out)
    }

    /// Checks the declared Lipschitz constants on `probes` random pairs
    /// `u, v ∈ [-10, 10]^d`, `t ∈ [0, horizon]`, for every mark.
    pub fn check_lipschitz<R: Rng + ?Sized>(
        &self,
        model: &LevyModel,
        horizon: f64,
        probes: usize,
        rng: &mut R,
    ) -> Result<()> {
        const TOL: f64 = 1e-9;
        let d = self.dim;
        let (mut fu, mut fv) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..probes {
            let t = rng.random::<f64>() * horizon;
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            let dist = euclid(&u, &v);
            self.drift(t, &u, &mut fu);
            self.drift(t, &v, &mut fv);
            let gap = euclid(&fu, &fv);
            if gap > self.drift_lipschitz * dist + TOL {
                return Err(Error::Lipschitz {
                    which: "drift",
                    declared: self.drift_lipschitz,
                    observed: gap / dist,
                });
            }
            for i in 0..model.n_marks() {
                self.jump(t, model.mark(i), &u, &mut fu);
                self.jump(t, model.mark(i), &v, &mut fv);
                let gap = euclid(&fu, &fv);
                if gap > self.jump_lipschitz * dist + TOL {
                    return Err(Error::Lipschitz {
                        which: "jump",
                        declared: self.jump_lipschitz,
                        observed: gap / dist,
                    });
                }
            }
        }
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `(1 - e^{-x Δ}) / x`, equal to `Δ` at `x = 0`.
#[inline]
pub fn phi(x: f64, dt: f64) -> f64 {
    if x == 0.0 {
        dt
    } else {
        -(-x * dt).exp_m1() / x
    }
}

/// Reusable buffers for the exponential-Euler step.
pub struct LiftStepper<'a> {
    coeffs: &'a CoefficientSet,
    model: &'a LevyModel,
    u: Vec<f64>,
    drift: Vec<f64>,
    comp: Vec<f64>,
    sig: Vec<f64>,
}

impl<'a> LiftStepper<'a> {
    pub fn new(coeffs: &'a CoefficientSet, model: &'a LevyModel) -> Self {
        let d = coeffs.dim();
        Self {
            coeffs,
            model,
            u: vec![0.0; d],
            drift: vec![0.0; d],
            comp: vec![0.0; d],
            sig: vec![0.0; d],
        }
    }

    /// Advances `state` from `t` to `t + dt` given the events in `(t, t + dt]`.
    ///
    /// Coefficients are frozen at the left endpoint. The compensator always
    /// uses the base rates `λ_i`: under a tilted measure the extra drift
    /// `∫ σ (r - 1) ν` and the tilted compensator `∫ σ r ν` cancel down to
    /// the same expression.
    pub fn advance(&mut self, state: &mut LiftState, t: f64, dt: f64, events: &[JumpEvent]) {
        state.project_into(&mut self.u);
        self.coeffs.drift(t, &self.u, &mut self.drift);
        self.comp.fill(0.0);
        for (i, lam) in self.model.rates().iter().enumerate() {
            self.coeffs.jump(t, self.model.mark(i), &self.u, &mut self.sig);
            for (c, s) in self.comp.iter_mut().zip(&self.sig) {
                *c += lam * s;
            }
        }
        for (f, c) in self.drift.iter_mut().zip(&self.comp) {
            *f -= c;
        }
        let d = state.dim;
        let t_next = t + dt;
        let measure = Arc::clone(&state.measure);
        for (j, a) in measure.atoms().iter().enumerate() {
            let decay = (-a.x * dt).exp();
            let ph = phi(a.x, dt);
            let row = &mut state.values[j * d..(j + 1) * d];
            for (y, f) in row.iter_mut().zip(&self.drift) {
                *y = decay * *y + ph * f;
            }
        }
        for e in events {
            self.coeffs
                .jump(e.time, self.model.mark(e.mark), &self.u, &mut self.sig);
            for (j, a) in measure.atoms().iter().enumerate() {
                let w = (-a.x * (t_next - e.time)).exp();
                let row = &mut state.values[j * d..(j + 1) * d];
                for (y, s) in row.iter_mut().zip(&self.sig) {
                    *y += w * s;
                }
            }
        }
        state.time = t_next;
    }

    /// `u = P Y` at the left endpoint of the last step.
    pub fn last_projection(&self) -> &[f64] {
        &self.u
    }
}

/// One exponential-Euler step of the lifted equation.
pub fn step(
    state: &LiftState,
    coeffs: &CoefficientSet,
    model: &LevyModel,
    events: &[JumpEvent],
    t: f64,
    dt: f64,
) -> Result<LiftState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step needs dt > 0, got {dt}")));
    }
    if events.windows(2).any(|w| w[1].time <= w[0].time) || events.iter().any(|e| e.time <= t || e.time > t + dt) {
        return Err(Error::InvalidArgument(
            "step events must be sorted and inside (t, t + dt]".into(),
        ));
    }
    let mut next = state.clone();
    LiftStepper::new(coeffs, model).advance(&mut next, t, dt, events);
    Ok(next)
}

/// Lift states and their projections on a grid.
#[derive(Debug, Clone)]
pub struct LiftTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<LiftState>,
    pub projected: Vec<Vec<f64>>,
}

impl LiftTrajectory {
    fn from_states(grid: TimeGrid, states: Vec<LiftState>) -> Self {
        let projected = states.iter().map(LiftState::project).collect();
        Self {
            grid,
            states,
            projected,
        }
    }

    pub fn terminal(&self) -> &LiftState {
        self.states.last().unwrap()
    }

    /// CSV `t,u_1..u_d`.
    pub fn to_csv(&self) -> String {
        series_csv(self.grid.points(), &self.projected)
    }

    /// CSV `t,atom_j,Y_j1..Y_jd`.
    pub fn atoms_csv(&self) -> String {
        let d = self.states.first().map_or(0, LiftState::dim);
        let mut out = String::from("t,atom_j");
        for c in 1..=d {
            write!(out, ",Y_j{c}").unwrap();
        }
        out.push('\n');
        for (t, s) in self.grid.points().iter().zip(&self.states) {
            for j in 0..s.n_atoms() {
                write!(out, "{t},{j}").unwrap();
                for y in s.row(j) {
                    write!(out, ",{y}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

pub(crate) fn series_csv(times: &[f64], values: &[Vec<f64>]) -> String {
    let d = values.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for c in 1..=d {
        write!(out, ",u_{c}").unwrap();
    }
    out.push('\n');
    for (t, u) in times.iter().zip(values) {
        write!(out, "{t}").unwrap();
        for v in u {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn check_inputs(
    coeffs: &CoefficientSet,
    model: &LevyModel,
    path: &JumpPath,
    grid: &TimeGrid,
    y0: &LiftState,
) -> Result<()> {
    if (path.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "path horizon {} differs from grid horizon {}",
            path.horizon(),
            grid.horizon()
        )));
    }
    if coeffs.dim() != y0.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficients act on dimension {}, initial state has {}",
            coeffs.dim(),
            y0.dim()
        )));
    }
    path.validate_against(model)
}

/// Solves the lifted equation on a fixed jump path by exponential Euler.
pub fn simulate_lift(
    coeffs: &CoefficientSet,
    model: &LevyModel,
    path: &JumpPath,
    grid: &TimeGrid,
    y0: &LiftState,
) -> Result<LiftTrajectory> {
    check_inputs(coeffs, model, path, grid, y0)?;
    let mut stepper = LiftStepper::new(coeffs, model);
    let mut states = Vec::with_capacity(grid.points().len());
    let mut state = y0.clone().with_time(0.0);
    states.push(state.clone());
    let pts = grid.points();
    for k in 0..grid.steps() {
        let events = path.events_in(pts[k], pts[k + 1]);
        stepper.advance(&mut state, pts[k], grid.dt(k), events);
        state.time = pts[k + 1];
        states.push(state.clone());
    }
    Ok(LiftTrajectory::from_states(grid.clone(), states))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Rate of the exponential time weight `e^{-β t}` in the reported
    /// weighted gaps. Diagnostic only.
    pub beta: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-12,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub trajectory: LiftTrajectory,
    pub iterations: usize,
    /// `sup_k ‖Y^{n}(t_k) - Y^{n-1}(t_k)‖_V` per iteration.
    pub gaps: Vec<f64>,
    /// `sup_k e^{-β t_k} ‖Y^{n}(t_k) - Y^{n-1}(t_k)‖_V` per iteration.
    pub weighted_gaps: Vec<f64>,
    pub beta: f64,
}

/// Fixed-point iteration of the mild lifted equation on a fixed path.
///
/// Each sweep recomputes the whole trajectory with the coefficients evaluated
/// on the previous sweep's projection. Time integrals use left-point
/// quadrature on the grid; jump terms use the exact event times.
pub fn picard_solve(
    coeffs: &CoefficientSet,
    model: &LevyModel,
    path: &JumpPath,
    grid: &TimeGrid,
    y0: &LiftState,
    options: PicardOptions,
) -> Result<PicardSolution> {
    check_inputs(coeffs, model, path, grid, y0)?;
    let pts = grid.points();
    let d = y0.dim();
    let measure = Arc::clone(y0.measure());

    let mut current: Vec<LiftState> = pts
        .iter()
        .map(|&t| y0.semigroup_apply(t).map(|s| s.with_time(t)))
        .collect::<Result<_>>()?;
    let mut gaps = Vec::new();
    let mut weighted_gaps = Vec::new();
    let (mut fbuf, mut sig, mut comp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    for iteration in 1..=options.max_iter {
        let u_prev: Vec<Vec<f64>> = current.iter().map(LiftState::project).collect();
        let mut next = Vec::with_capacity(pts.len());
        let mut state = y0.clone().with_time(0.0);
        next.push(state.clone());
        for k in 0..grid.steps() {
            let (t, t1, dt) = (pts[k], pts[k + 1], grid.dt(k));
            let u = &u_prev[k];
            coeffs.drift(t, u, &mut fbuf);
            comp.fill(0.0);
            for (i, lam) in model.rates().iter().enumerate() {
                coeffs.jump(t, model.mark(i), u, &mut sig);
                comp.iter_mut().zip(&sig).for_each(|(c, s)| *c += lam * s);
            }
            for (j, a) in measure.atoms().iter().enumerate() {
                let decay = (-a.x * dt).exp();
                let row = state.row_mut(j);
                for ((y, f), c) in row.iter_mut().zip(&fbuf).zip(&comp) {
                    *y = decay * (*y + dt * (f - c));
                }
            }
            for e in path.events_in(t, t1) {
                coeffs.jump(e.time, model.mark(e.mark), u, &mut sig);
                for (j, a) in measure.atoms().iter().enumerate() {
                    let w = (-a.x * (t1 - e.time)).exp();
                    state.row_mut(j).iter_mut().zip(&sig).for_each(|(y, s)| *y += w * s);
                }
            }
            state.time = t1;
            next.push(state.clone());
        }

        let (mut gap, mut wgap) = (0.0f64, 0.0f64);
        for ((a, b), t) in next.iter().zip(&current).zip(pts) {
            let g = a.difference(b).v_norm();
            gap = gap.max(g);
            wgap = wgap.max((-options.beta * t).exp() * g);
        }
        gaps.push(gap);
        weighted_gaps.push(wgap);
        current = next;
        if !gap.is_finite() {
            break;
        }
        if gap < options.tol {
            return Ok(PicardSolution {
                trajectory: LiftTrajectory::from_states(grid.clone(), current),
                iterations: iteration,
                gaps,
                weighted_gaps,
                beta: options.beta,
            });
        }
    }
    Err(Error::PicardNonConvergence {
        iterations: gaps.len(),
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::make_atomic;
    use crate::rng::path_rng;

    fn measure(atoms: &[(f64, f64)]) -> Arc<BernsteinMeasure> {
        Arc::new(make_atomic(atoms).unwrap())
    }

    #[test]
    fn immersion_norms() {
        let m = measure(&[(0.0, 1.0)]);
        assert_eq!(LiftState::immerse(&[0.0], m.clone()).h_norm(), 0.0);
        assert_eq!(LiftState::immerse(&[1.0], m).h_norm(), 1.0);
        let m = measure(&[(1.0, 2.0), (2.0, 3.0)]);
        let s = LiftState::immerse(&[2.0], m);
        // 4·(2 + 3·2^{-1/2})
        assert!((s.h_norm_sq() - 16.485_281_374_238_57).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let m = measure(&[(1.0, 1.0), (2.0, 1.0)]);
        let s = LiftState::from_rows(m.clone(), &[vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(s.project(), vec![5.0]);
        let i = LiftState::immerse(&[1.5], m);
        assert_eq!(i.project(), vec![3.0]);
    }

    #[test]
    fn norm_examples() {
        let m = measure(&[(0.0, 1.0)]);
        let s = LiftState::from_rows(m, &[vec![3.0]]).unwrap();
        assert_eq!(s.h_norm(), 3.0);
        assert_eq!(s.v_norm(), 3.0);
        let m = measure(&[(3.0, 2.0)]);
        let s = LiftState::from_rows(m, &[vec![1.0]]).unwrap();
        let r = 3f64.powf(-0.5);
        assert!((s.h_norm_sq() - 2.0 * r).abs() < 1e-15);
        assert!((s.v_norm_sq() - 8.0 * r).abs() < 1e-15);
        assert_eq!(LiftState::zeros(measure(&[(1.0, 1.0)]), 2).v_norm(), 0.0);
    }

    #[test]
    fn semigroup_examples() {
        let m = measure(&[(1.0, 1.0)]);
        let s = LiftState::from_rows(m, &[vec![1.0]]).unwrap();
        assert_eq!(s.semigroup_apply(0.0).unwrap().values(), s.values());
        let half = s.semigroup_apply(std::f64::consts::LN_2).unwrap();
        assert!((half.values()[0] - 0.5).abs() < 1e-15);
        assert!(s.semigroup_apply(-1.0).is_err());
    }

    #[test]
    fn forcing_factorizes_for_constant_field() {
        let m = measure(&[(0.5, 1.0), (3.0, 0.25)]);
        let y0 = LiftState::immerse(&[2.0], m.clone());
        for t in [0.0, 0.7, 3.0] {
            let x = forcing_eval(&y0, t).unwrap();
            assert!((x[0] - 2.0 * m.kernel(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_limits() {
        assert_eq!(phi(0.0, 0.1), 0.1);
        assert!((phi(1e-12, 0.1) - 0.1).abs() < 1e-12);
        assert!((phi(2.0, 0.5) - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pure_decay_without_coefficients() {
        let m = measure(&[(0.5, 1.0), (4.0, 2.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let y0 = LiftState::from_rows(m, &[vec![1.0], vec![-2.0]]).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let path = crate::levy::sample_path(&model, 1.0, &mut path_rng(0, 0)).unwrap();
        let traj = simulate_lift(&CoefficientSet::zero(1), &model, &path, &grid, &y0).unwrap();
        for (t, s) in grid.points().iter().zip(&traj.states) {
            assert!((s.row(0)[0] - (-0.5 * t).exp()).abs() < 1e-14);
            assert!((s.row(1)[0] + 2.0 * (-4.0 * t).exp()).abs() < 1e-14);
        }
        for (p, s) in traj.projected.iter().zip(&traj.states) {
            assert_eq!(p, &s.project());
        }
    }

    #[test]
    fn constant_drift_on_origin_atom_is_exact() {
        let m = measure(&[(0.0, 1.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let coeffs = CoefficientSet::constant_drift(vec![0.75]);
        let y0 = LiftState::immerse(&[0.0], m);
        let grid = TimeGrid::uniform(2.0, 40).unwrap();
        let traj = simulate_lift(&coeffs, &model, &JumpPath::empty(2.0), &grid, &y0).unwrap();
        for (t, u) in grid.points().iter().zip(&traj.projected) {
            assert!((u[0] - 0.75 * t).abs() < 1e-13);
        }
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let m = measure(&[(1.0, 1.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let s = LiftState::immerse(&[1.0], m);
        let c = CoefficientSet::zero(1);
        assert!(step(&s, &c, &model, &[], 0.0, 0.0).is_err());
        let late = [JumpEvent { time: 0.3, mark: 0 }];
        assert!(step(&s, &c, &model, &late, 0.0, 0.1).is_err());
    }

    #[test]
    fn single_event_jump_weighting() {
        // one atom x=2, σ = 1, f = 0: after the step Y = e^{-2Δ}y - φ λ + e^{-2(Δ - s)}
        let m = measure(&[(2.0, 1.0)]);
        let model = LevyModel::scalar(&[1.0], &[3.0]).unwrap();
        let c = CoefficientSet::zero(1).with_constant_jump(vec![1.0]);
        let s = LiftState::immerse(&[1.0], m);
        let ev = [JumpEvent { time: 0.04, mark: 0 }];
        let next = step(&s, &c, &model, &ev, 0.0, 0.1).unwrap();
        let expected = (-0.2f64).exp() - phi(2.0, 0.1) * 3.0 + (-2.0f64 * 0.06).exp();
        assert!((next.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let m = measure(&[(1.0, 1.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let y0 = LiftState::immerse(&[1.0], m);
        let r = simulate_lift(&CoefficientSet::zero(1), &model, &JumpPath::empty(2.0), &grid, &y0);
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn picard_trivial_and_contracting() {
        let m = measure(&[(1.0, 2.0), (2.0, 3.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let y0 = LiftState::immerse(&[1.0], m);
        let path = JumpPath::empty(1.0);
        let sol = picard_solve(
            &CoefficientSet::zero(1),
            &model,
            &path,
            &grid,
            &y0,
            PicardOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.iterations, 1);

        let sol = picard_solve(
            &CoefficientSet::linear(1, -0.1),
            &model,
            &path,
            &grid,
            &y0,
            PicardOptions::default(),
        )
        .unwrap();
        assert!(sol.iterations > 2);
        let g = &sol.gaps;
        assert!(g.windows(2).take_while(|w| w[1] > 1e-14).all(|w| w[1] < w[0]));
    }

    #[test]
    fn picard_reports_non_convergence() {
        let m = measure(&[(1.0, 1.0)]);
        let model = LevyModel::scalar(&[1.0], &[1.0]).unwrap();
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let y0 = LiftState::immerse(&[1.0], m);
        let opts = PicardOptions {
            max_iter: 2,
            tol: 1e-14,
            beta: 1.0,
        };
        let err = picard_solve(
            &CoefficientSet::linear(1, -1.0),
            &model,
            &JumpPath::empty(1.0),
            &grid,
            &y0,
            opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::PicardNonConvergence { iterations: 2, ref gaps } if gaps.len() == 2));
    }

    #[test]
    fn lipschitz_checks() {
        let model = LevyModel::scalar(&[1.0, -2.0], &[1.0, 1.0]).unwrap();
        let mut rng = path_rng(9, 0);
        CoefficientSet::linear(1, -0.5)
            .with_proportional_jump(0.3, 2.0)
            .check_lipschitz(&model, 1.0, 100, &mut rng)
            .unwrap();
        CoefficientSet::growth(vec![0.4], 5.0)
            .check_lipschitz(&model, 1.0, 100, &mut rng)
            .unwrap();
        let lying = CoefficientSet::linear(1, -0.5).with_drift(
            Arc::new(|_, u: &[f64], out: &mut [f64]| out[0] = 3.0 * u[0]),
            1.0,
            "liar",
        );
        assert!(matches!(
            lying.check_lipschitz(&model, 1.0, 100, &mut rng),
            Err(Error::Lipschitz { which: "drift", .. })
        ));
    }
}
