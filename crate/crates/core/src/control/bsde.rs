//! Backward least-squares scheme for the control BSDE.
//!
//! Forward paths are drawn under the base measure. Going backwards from
//! `Θ_M = g(u_M)`, each step regresses `Θ_{k+1}` jointly on features `φ` of
//! the state at `t_k` and on `φ Δπ̃_i`, the same features times the
//! compensated event counts of the cell. The first block is the conditional
//! mean, the others are `Z(ξ_i)`, and `Θ_k = Ê[Θ_{k+1} | Y_k] + Δ H(t_k, u_k, Z_k)`.

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::hamiltonian::hamiltonian;
use super::problem::{ControlProblem, Policy};
use super::regression::{least_squares, least_squares_strict, Basis, FeatureMap, LsFit};
use crate::error::{Error, Result};
use crate::levy::sample_path;
use crate::lift::{LiftState, LiftStepper};
use crate::rng::ensemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// Total degree of the polynomial in `u`.
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Atoms whose lift rows enter the features linearly.
    #[serde(default)]
    pub lift_atoms: Vec<usize>,
    /// Allowed RMSE of the terminal fit.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// First ridge tried when the normal equations are singular.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_degree() -> usize {
    3
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_ridge() -> f64 {
    1e-10
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree: default_degree(),
            lift_atoms: Vec::new(),
            tolerance: default_tolerance(),
            ridge: default_ridge(),
        }
    }
}

/// Fitted surrogates at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepModel {
    pub basis: Basis,
    /// Coefficients of `Ê[Θ_{k+1} | Y_k]`.
    pub value: Vec<f64>,
    /// Coefficients of `Z(ξ_i)`, one vector per mark.
    pub z: Vec<Vec<f64>>,
}

impl StepModel {
    fn value_at(&self, phi: &[f64]) -> f64 {
        dot(&self.value, phi)
    }

    fn z_at(&self, phi: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.z) {
            *o = dot(c, phi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeDiagnostics {
    /// Coefficient of determination of the conditional-mean fit, per step.
    pub r2: Vec<f64>,
    /// Mean of `Θ_{k+1} - Θ_k + Δ H - Σ_i Z_i Δπ̃_i` over the ensemble.
    pub martingale_residual: Vec<f64>,
    /// Standard error of the residual mean.
    pub martingale_se: Vec<f64>,
    /// Ensemble mean of `Σ_i Z_i^2 λ_i`, per step.
    pub z_energy: Vec<f64>,
    /// Largest ridge used by any regression; 0 when none was needed.
    pub max_ridge: f64,
    /// RMSE of the terminal surrogate against `g(u_M)`.
    pub terminal_rmse: f64,
}

impl BsdeDiagnostics {
    /// Steps whose martingale residual is further than `z` standard errors
    /// from 0 (beyond a rounding floor).
    pub fn residual_outliers(&self, z: f64) -> Vec<usize> {
        self.martingale_residual
            .iter()
            .zip(&self.martingale_se)
            .enumerate()
            .filter(|(_, (m, s))| m.abs() > z * **s + 1e-12)
            .map(|(k, _)| k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub theta0: f64,
    /// Monte Carlo standard error of `theta0`.
    pub theta0_se: f64,
    pub times: Vec<f64>,
    /// Ensemble mean of `Θ_k` on every grid point.
    pub theta_mean: Vec<f64>,
    pub map: FeatureMap,
    /// Surrogates for `t_0, …, t_{M-1}`.
    pub steps: Vec<StepModel>,
    /// Surrogate of `g` at `t_M`.
    pub terminal: StepModel,
    pub diagnostics: BsdeDiagnostics,
    pub n_paths: usize,
}

impl BsdeSolution {
    fn step_index(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&p| p <= t);
        i.saturating_sub(1).min(self.steps.len() - 1)
    }

    /// `V̂(t_k, Y)` for the grid cell containing `t`, i.e. the regressed
    /// conditional mean of the next value plus `Δ H`.
    pub fn value(&self, problem: &ControlProblem, t: f64, state: &LiftState) -> Result<f64> {
        let k = self.step_index(t);
        let coords = self.map.coords(state);
        let phi = self.steps[k].basis.eval(&coords);
        let z = self.z_coords(k, &phi);
        let h = hamiltonian(problem, self.times[k], &coords[..self.map.dim], &z)?;
        Ok(self.steps[k].value_at(&phi) + (self.times[k + 1] - self.times[k]) * h.value)
    }

    /// `Ṽ̂(t_k, Y, ξ_i)` for every mark.
    pub fn z(&self, t: f64, state: &LiftState) -> Vec<f64> {
        let k = self.step_index(t);
        let coords = self.map.coords(state);
        let phi = self.steps[k].basis.eval(&coords);
        self.z_coords(k, &phi)
    }

    fn z_coords(&self, k: usize, phi: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.steps[k].z.len()];
        self.steps[k].z_at(phi, &mut z);
        z
    }

    /// `V̂(T, Y)`.
    pub fn terminal_value(&self, state: &LiftState) -> f64 {
        let coords = self.map.coords(state);
        self.terminal.value_at(&self.terminal.basis.eval(&coords))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward ensemble under the base measure, stored time-major.
struct Ensemble {
    n: usize,
    /// `coords[k]` holds `n` rows of feature coordinates at `t_k`.
    coords: Vec<Vec<f64>>,
    /// `counts[k]` holds `n` rows of per-mark event counts on cell `k`.
    counts: Vec<Vec<u32>>,
}

fn forward(problem: &ControlProblem, map: &FeatureMap, n: usize, seed: u64) -> Result<Ensemble> {
    let steps = problem.grid.steps();
    let c = map.n_coords();
    let m = problem.model.n_marks();
    let pts = problem.grid.points();
    let horizon = problem.horizon();
    let paths = ensemble(n, seed, |_, rng| -> Result<(Vec<f64>, Vec<u32>)> {
        let path = sample_path(&problem.model, horizon, rng)?;
        let mut state = problem.y0.clone().with_time(0.0);
        let mut stepper = LiftStepper::new(&problem.coeffs, &problem.model);
        let mut coords = vec![0.0; (steps + 1) * c];
        let mut counts = vec![0u32; steps * m];
        map.coords_into(&state, &mut coords[..c]);
        for k in 0..steps {
            let events = path.events_in(pts[k], pts[k + 1]);
            for e in events {
                counts[k * m + e.mark] += 1;
            }
            stepper.advance(&mut state, pts[k], pts[k + 1] - pts[k], events);
            map.coords_into(&state, &mut coords[(k + 1) * c..(k + 2) * c]);
        }
        if !state.is_finite() {
            return Err(Error::InvalidArgument("forward path diverged".into()));
        }
        Ok((coords, counts))
    });
    let mut coords = vec![Vec::with_capacity(n * c); steps + 1];
    let mut counts = vec![Vec::with_capacity(n * m); steps];
    for p in paths {
        let (pc, pn) = p?;
        for (k, dst) in coords.iter_mut().enumerate() {
            dst.extend_from_slice(&pc[k * c..(k + 1) * c]);
        }
        for (k, dst) in counts.iter_mut().enumerate() {
            dst.extend_from_slice(&pn[k * m..(k + 1) * m]);
        }
    }
    Ok(Ensemble { n, coords, counts })
}

fn design(basis: &Basis, coords: &[f64], c: usize, n: usize) -> Vec<f64> {
    let p = basis.len();
    let mut x = vec![0.0; n * p];
    for (row, co) in x.chunks_exact_mut(p).zip(coords.chunks_exact(c)) {
        basis.eval_into(co, row);
    }
    x
}

/// Minimum number of observed events per `Z` feature and mark.
const EVENTS_PER_FEATURE: f64 = 10.0;
/// Smallest squared Cholesky pivot of the equilibrated normal equations
/// accepted before the basis is reduced.
const MIN_PIVOT: f64 = 1e-8;

/// Highest `Z` degree for which every mark has at least
/// `EVENTS_PER_FEATURE` observed events per feature.
fn z_degree_cap(basis: &Basis, counts: &[u32], m: usize, degree: usize) -> usize {
    let min_events = (0..m)
        .map(|mark| counts.iter().skip(mark).step_by(m).map(|&c| c as f64).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (0..=degree)
        .rev()
        .find(|&d| basis.columns_up_to(d).len() as f64 * EVENTS_PER_FEATURE <= min_events)
        .unwrap_or(0)
}

struct StepFit {
    basis: Basis,
    /// Design of the value block, `n` rows.
    x: Vec<f64>,
    /// Columns of `x` entering the `Z` blocks.
    zcols: Vec<usize>,
    /// Joint design `[φ, φ' Δπ̃_1, …]`.
    xj: Vec<f64>,
    fit: LsFit,
}

fn joint_design(x: &[f64], p: usize, zcols: &[usize], counts: &[u32], rates: &[f64], dt: f64) -> Vec<f64> {
    let m = rates.len();
    let pz = zcols.len();
    let q = p + pz * m;
    let n = x.len() / p;
    let mut xj = vec![0.0; n * q];
    for (i, row) in xj.chunks_exact_mut(q).enumerate() {
        let phi = &x[i * p..(i + 1) * p];
        row[..p].copy_from_slice(phi);
        for mark in 0..m {
            let dpi = counts[i * m + mark] as f64 - rates[mark] * dt;
            let block = &mut row[p + mark * pz..p + (mark + 1) * pz];
            for (dst, &col) in block.iter_mut().zip(zcols) {
                *dst = phi[col] * dpi;
            }
        }
    }
    xj
}

/// Joint fit `Θ_{k+1} ≈ φ·a + Σ_i (φ'·b_i) Δπ̃_i`; the second block soaks up
/// the jump noise so the conditional mean is not disturbed by it. Degrees
/// are lowered, `Z` first, until the design is well conditioned (early
/// cells, where the paths have barely spread, cannot support a cubic). Only
/// if even constants fail does the ridge fallback kick in.
#[allow(clippy::too_many_arguments)]
fn fit_step(
    basis: Basis,
    full: &[f64],
    counts: &[u32],
    rates: &[f64],
    dt: f64,
    theta: &[f64],
    config: &RegressionConfig,
    z_cap: usize,
) -> Result<StepFit> {
    let p_full = basis.len();
    let mut candidates = Vec::new();
    for dv in (0..=config.degree).rev() {
        for dz in (0..=dv.min(z_cap)).rev() {
            candidates.push((dv, dz));
        }
    }
    for (attempt, &(dv, dz)) in candidates.iter().enumerate() {
        let vcols = basis.columns_up_to(dv);
        let (b, x) = restrict(basis.clone(), full, p_full, &vcols);
        let p = b.len();
        let zcols = b.columns_up_to(dz);
        let xj = joint_design(&x, p, &zcols, counts, rates, dt);
        let q = p + zcols.len() * rates.len();
        let last = attempt + 1 == candidates.len();
        let fit = if last {
            least_squares(&xj, theta, q, config.ridge)?
        } else {
            match least_squares_strict(&xj, theta, q, MIN_PIVOT)? {
                Some(fit) => fit,
                None => continue,
            }
        };
        if dv < config.degree || dz < dv.min(config.degree) {
            debug!("basis reduced to value degree {dv}, Z degree {dz}");
        }
        return Ok(StepFit {
            basis: b,
            x,
            zcols,
            xj,
            fit,
        });
    }
    unreachable!("candidate list always ends with degree zero")
}

/// Keeps only `cols` of the basis and of the design rows.
fn restrict(basis: Basis, x: &[f64], p: usize, cols: &[usize]) -> (Basis, Vec<f64>) {
    if cols.len() == p {
        return (basis, x.to_vec());
    }
    let out = x
        .chunks_exact(p)
        .flat_map(|row| cols.iter().map(move |&c| row[c]))
        .collect();
    (basis.select(cols), out)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Solves the control BSDE on `n_paths` base-measure paths with random
/// streams `(seed, i)`.
pub fn bsde_solve(
    problem: &ControlProblem,
    n_paths: usize,
    config: &RegressionConfig,
    seed: u64,
) -> Result<BsdeSolution> {
    if problem.actions.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let n_atoms = problem.y0.n_atoms();
    if let Some(&j) = config.lift_atoms.iter().find(|&&j| j >= n_atoms) {
        return Err(Error::InvalidArgument(format!(
            "lift feature atom {j} out of range for {n_atoms} atoms"
        )));
    }
    if n_atoms > 1 && config.lift_atoms.is_empty() {
        warn!(
            "value surrogates use u = PY only; the lift has {n_atoms} atoms, so the fit ignores \
             part of the state"
        );
    }
    let d = problem.y0.dim();
    let m = problem.model.n_marks();
    let map = FeatureMap {
        dim: d,
        degree: config.degree,
        lift_atoms: config.lift_atoms.clone(),
    };
    let needed = map.max_features() * (1 + m);
    if n_paths < needed.max(2) {
        return Err(Error::InsufficientPaths {
            paths: n_paths,
            regressors: needed.max(2),
        });
    }

    let ens = forward(problem, &map, n_paths, seed)?;
    let n = ens.n;
    let c = map.n_coords();
    let steps = problem.grid.steps();
    let pts = problem.grid.points();
    let rates = problem.model.rates();

    // terminal condition
    let mut theta: Vec<f64> = ens.coords[steps]
        .chunks_exact(c)
        .map(|co| problem.g(&co[..d]))
        .collect();
    let terminal_basis = Basis::fit(&map, &ens.coords[steps], n);
    let x = design(&terminal_basis, &ens.coords[steps], c, n);
    let fit = least_squares(&x, &theta, terminal_basis.len(), config.ridge)?;
    let mut max_ridge = fit.ridge;
    let p = terminal_basis.len();
    let sse: f64 = x
        .chunks_exact(p)
        .zip(&theta)
        .map(|(row, th)| (dot(&fit.coef, row) - th).powi(2))
        .sum();
    let terminal_rmse = (sse / n as f64).sqrt();
    if terminal_rmse > config.tolerance {
        warn!(
            "terminal fit RMSE {terminal_rmse:e} exceeds the regression tolerance {:e}",
            config.tolerance
        );
    }
    let terminal = StepModel {
        basis: terminal_basis,
        value: fit.coef,
        z: vec![Vec::new(); m],
    };

    let mut models = Vec::with_capacity(steps);
    let mut theta_mean = vec![0.0; steps + 1];
    theta_mean[steps] = theta.iter().sum::<f64>() / n as f64;
    let mut r2 = vec![0.0; steps];
    let mut mres = vec![0.0; steps];
    let mut mse = vec![0.0; steps];
    let mut z_energy = vec![0.0; steps];
    let mut theta0_se = 0.0;
    let mut z = vec![0.0; m];
    let mut resid = vec![0.0; n];

    for k in (0..steps).rev() {
        let dt = pts[k + 1] - pts[k];
        let coords = &ens.coords[k];
        let counts = &ens.counts[k];
        let basis = Basis::fit(&map, coords, n);
        let full = design(&basis, coords, c, n);
        let z_cap = z_degree_cap(&basis, counts, m, config.degree);
        let StepFit {
            basis,
            x,
            zcols,
            xj,
            fit,
        } = fit_step(basis, &full, counts, rates, dt, &theta, config, z_cap)?;
        let p = basis.len();
        let pz = zcols.len();
        let q = p + pz * m;
        max_ridge = max_ridge.max(fit.ridge);
        let z_coef = fit.coef[p..]
            .chunks_exact(pz)
            .map(|b| {
                let mut full = vec![0.0; p];
                for (&col, v) in zcols.iter().zip(b) {
                    full[col] = *v;
                }
                full
            })
            .collect();
        let model = StepModel {
            basis,
            value: fit.coef[..p].to_vec(),
            z: z_coef,
        };
        let fitted: Vec<f64> = x.chunks_exact(p).map(|row| model.value_at(row)).collect();
        for ((r, th), f) in resid.iter_mut().zip(&theta).zip(&fitted) {
            *r = th - f;
        }
        let (th_mean, th_sd) = mean_sd(&theta);
        let ss_tot = th_sd * th_sd * (n as f64 - 1.0);
        let ss_res: f64 = xj
            .chunks_exact(q)
            .zip(&theta)
            .map(|(row, th)| (th - dot(&fit.coef, row)).powi(2))
            .sum();
        r2[k] = if ss_tot > 1e-300 { 1.0 - ss_res / ss_tot } else { 1.0 };
        if k == 0 {
            theta0_se = th_sd / (n as f64).sqrt();
        }
        debug!("step {k}: mean Θ_(k+1) = {th_mean}, R² = {}", r2[k]);

        let mut mart = Vec::with_capacity(n);
        let mut energy = 0.0;
        for i in 0..n {
            let phi = &x[i * p..(i + 1) * p];
            model.z_at(phi, &mut z);
            let u = &coords[i * c..i * c + d];
            let h = hamiltonian(problem, pts[k], u, &z)?;
            let mut noise = 0.0;
            for mark in 0..m {
                let dpi = counts[i * m + mark] as f64 - rates[mark] * dt;
                noise += z[mark] * dpi;
                energy += z[mark] * z[mark] * rates[mark];
            }
            mart.push(resid[i] - noise);
            theta[i] = fitted[i] + dt * h.value;
        }
        let (mm, msd) = mean_sd(&mart);
        mres[k] = mm;
        mse[k] = msd / (n as f64).sqrt();
        z_energy[k] = energy / n as f64;
        theta_mean[k] = theta.iter().sum::<f64>() / n as f64;
        models.push(model);
    }
    models.reverse();
    if max_ridge > 0.0 {
        warn!("regressions needed a ridge up to {max_ridge:e} x tr/p");
    }

    Ok(BsdeSolution {
        theta0: theta_mean[0],
        theta0_se,
        times: pts.to_vec(),
        theta_mean,
        map,
        steps: models,
        terminal,
        diagnostics: BsdeDiagnostics {
            r2,
            martingale_residual: mres,
            martingale_se: mse,
            z_energy,
            max_ridge,
            terminal_rmse,
        },
        n_paths: n,
    })
}

/// Feedback map `(t, Y) -> argmin_χ` of the Hamiltonian at the regressed
/// `Z(t_k, Y, ·)`, with `t_k` the grid time at or before `t`.
pub fn feedback_policy(solution: &BsdeSolution, problem: &ControlProblem) -> Policy {
    let solution = Arc::new(solution.clone());
    let problem = problem.clone();
    Policy::Feedback(Arc::new(move |t, state| {
        let z = solution.z(t, state);
        let mut u = vec![0.0; state.dim()];
        state.project_into(&mut u);
        hamiltonian(&problem, t, &u, &z).map(|h| h.action).unwrap_or(0)
    }))
}
