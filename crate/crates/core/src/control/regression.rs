//! Least-squares regression on polynomial features of the lifted state.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::LiftState;

/// Raw regression coordinates of a state: `u = P Y` followed by the rows
/// `Y_j` of the selected atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub dim: usize,
    pub degree: usize,
    pub lift_atoms: Vec<usize>,
}

impl FeatureMap {
    pub fn n_coords(&self) -> usize {
        self.dim * (1 + self.lift_atoms.len())
    }

    pub fn coords_into(&self, state: &LiftState, out: &mut [f64]) {
        state.project_into(&mut out[..self.dim]);
        for (slot, &j) in self.lift_atoms.iter().enumerate() {
            let start = self.dim * (1 + slot);
            out[start..start + self.dim].copy_from_slice(state.row(j));
        }
    }

    pub fn coords(&self, state: &LiftState) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coords()];
        self.coords_into(state, &mut out);
        out
    }

    /// Upper bound on the number of features.
    pub fn max_features(&self) -> usize {
        monomials(self.dim, self.degree).len() + self.dim * self.lift_atoms.len()
    }
}

/// Exponent vectors of all monomials in `d` variables of total degree at most
/// `degree`, constant first, ordered by degree.
pub fn monomials(d: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; d]];
    let mut last = vec![vec![0u32; d]];
    for _ in 1..=degree {
        let mut next: Vec<Vec<u32>> = Vec::new();
        for e in &last {
            // extend only at or after the last nonzero slot to avoid duplicates
            let first = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for v in first..d {
                let mut f = e.clone();
                f[v] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        last = next;
    }
    out
}

/// Standardized feature basis fitted to one time step of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Coordinates with nonzero spread; the others are constant and absorbed
    /// by the intercept.
    active: Vec<bool>,
    /// Monomials over the active `u` coordinates.
    exponents: Vec<Vec<u32>>,
    /// Active lift coordinates, entering linearly.
    linear: Vec<usize>,
    dim: usize,
}

impl Basis {
    /// Fits the standardization to `coords` (`n` rows of `n_coords`).
    pub fn fit(map: &FeatureMap, coords: &[f64], n: usize) -> Self {
        let c = map.n_coords();
        let mut mean = vec![0.0; c];
        for row in coords.chunks_exact(c).take(n) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in coords.chunks_exact(c).take(n) {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
        }
        let scale: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let active: Vec<bool> = scale
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s > 1e-12 * (1.0 + m.abs()))
            .collect();
        let u_active: Vec<usize> = (0..map.dim).filter(|&i| active[i]).collect();
        let exponents = monomials(u_active.len(), map.degree)
            .into_iter()
            .map(|e| {
                let mut full = vec![0u32; map.dim];
                for (k, &i) in u_active.iter().enumerate() {
                    full[i] = e[k];
                }
                full
            })
            .collect();
        let linear = (map.dim..c).filter(|&i| active[i]).collect();
        Self {
            mean,
            scale,
            active,
            exponents,
            linear,
            dim: map.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len() + self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Basis made of the features at `cols` (as given by
    /// [`Basis::columns_up_to`]).
    pub fn select(mut self, cols: &[usize]) -> Self {
        let ne = self.exponents.len();
        let exponents = cols
            .iter()
            .filter(|&&c| c < ne)
            .map(|&c| self.exponents[c].clone())
            .collect();
        let linear = cols
            .iter()
            .filter(|&&c| c >= ne)
            .map(|&c| self.linear[c - ne])
            .collect();
        self.exponents = exponents;
        self.linear = linear;
        self
    }

    /// Indices of the features of total degree at most `degree`; lift
    /// coordinates count as degree one.
    pub fn columns_up_to(&self, degree: usize) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .exponents
            .iter()
            .enumerate()
            .filter(|(_, e)| e.iter().sum::<u32>() as usize <= degree)
            .map(|(i, _)| i)
            .collect();
        if degree >= 1 {
            cols.extend(self.exponents.len()..self.len());
        }
        cols
    }

    pub fn eval_into(&self, coords: &[f64], out: &mut [f64]) {
        let z = |i: usize| {
            if self.active[i] {
                (coords[i] - self.mean[i]) / self.scale[i]
            } else {
                0.0
            }
        };
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = (0..self.dim).fold(1.0, |acc, i| acc * z(i).powi(e[i] as i32));
        }
        for (o, &i) in out[self.exponents.len()..].iter_mut().zip(&self.linear) {
            *o = z(i);
        }
    }

    pub fn eval(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(coords, &mut out);
        out
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsFit {
    pub coef: Vec<f64>,
    /// Ridge added to the normal equations; 0 unless the design was rank
    /// deficient.
    pub ridge: f64,
}

/// Solves `min |X β - y|^2` through the normal equations of the
/// column-equilibrated design. When the Cholesky factor is numerically
/// singular, retries with a ridge `ρ |β̃|^2` on the equilibrated
/// coefficients, starting at `ridge_start` and growing tenfold.
pub fn least_squares(x: &[f64], y: &[f64], p: usize, ridge_start: f64) -> Result<LsFit> {
    let (gram, rhs, scale) = normal_equations(x, y, p)?;
    let mut ridge: f64 = 0.0;
    let mut next = ridge_start.max(1e-14);
    loop {
        if let Some(coef) = solve_scaled(&gram, &rhs, &scale, ridge, 1e-13) {
            if ridge > 0.0 {
                warn!("rank-deficient regression ({p} regressors): ridge {ridge:e}");
            }
            return Ok(LsFit { coef, ridge });
        }
        if ridge > 1.0 {
            return Err(Error::InvalidArgument(
                "regression design is degenerate even with ridge".into(),
            ));
        }
        ridge = next;
        next *= 10.0;
    }
}

/// Like [`least_squares`] without regularization: `None` when the smallest
/// squared Cholesky pivot of the equilibrated normal equations is below
/// `min_pivot`.
pub fn least_squares_strict(x: &[f64], y: &[f64], p: usize, min_pivot: f64) -> Result<Option<LsFit>> {
    let (gram, rhs, scale) = normal_equations(x, y, p)?;
    Ok(solve_scaled(&gram, &rhs, &scale, 0.0, min_pivot).map(|coef| LsFit { coef, ridge: 0.0 }))
}

fn solve_scaled(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    scale: &[f64],
    ridge: f64,
    min_pivot: f64,
) -> Option<Vec<f64>> {
    let p = scale.len();
    let mut g = gram.clone();
    for a in 0..p {
        g[(a, a)] += ridge;
    }
    let ch = g.cholesky()?;
    let l = ch.l();
    let min = (0..p).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min * min <= min_pivot {
        return None;
    }
    let sol = ch.solve(rhs);
    Some(sol.iter().zip(scale).map(|(c, s)| c / s).collect())
}

type NormalEquations = (DMatrix<f64>, DVector<f64>, Vec<f64>);

/// Equilibrated `X'X`, `X'y` and the column scales.
fn normal_equations(x: &[f64], y: &[f64], p: usize) -> Result<NormalEquations> {
    let n = y.len();
    if n < p {
        return Err(Error::InsufficientPaths {
            paths: n,
            regressors: p,
        });
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (row, yi) in x.chunks_exact(p).zip(y) {
        for a in 0..p {
            rhs[a] += row[a] * yi;
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let scale: Vec<f64> = (0..p)
        .map(|a| {
            let d = gram[(a, a)];
            if d > 0.0 {
                d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for a in 0..p {
        rhs[a] /= scale[a];
        for b in 0..=a {
            gram[(a, b)] /= scale[a] * scale[b];
            gram[(b, a)] = gram[(a, b)];
        }
    }
    Ok((gram, rhs, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 3).len(), 20);
        assert_eq!(monomials(0, 3).len(), 1);
        let m = monomials(2, 2);
        let mut uniq = m.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), m.len());
    }

    #[test]
    fn exact_fit_of_polynomial() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let p = 3;
        let design: Vec<f64> = xs.iter().flat_map(|x| [1.0, *x, x * x]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 - x + 0.5 * x * x).collect();
        let fit = least_squares(&design, &y, p, 1e-10).unwrap();
        assert_eq!(fit.ridge, 0.0);
        for (c, e) in fit.coef.iter().zip([2.0, -1.0, 0.5]) {
            assert!((c - e).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_column_falls_back_to_ridge() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let design: Vec<f64> = xs.iter().flat_map(|x| [1.0, *x, *x]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
        let fit = least_squares(&design, &y, 3, 1e-10).unwrap();
        assert!(fit.ridge > 0.0);
        let pred = fit.coef[0] + 10.0 * (fit.coef[1] + fit.coef[2]);
        assert!((pred - 21.0).abs() < 1e-3);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            least_squares(&[1.0, 2.0], &[1.0], 2, 0.0),
            Err(Error::InsufficientPaths {
                paths: 1,
                regressors: 2
            })
        ));
    }
}
