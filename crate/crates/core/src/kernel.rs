//! Completely monotone kernels as finite atomic Bernstein measures.
//!
//! A measure `μ = Σ_j w_j δ_{x_j}` defines the kernel
//! `k(t) = ∫ e^{-tx} μ(dx) = Σ_j w_j e^{-x_j t}`. Continuous measures (the
//! fractional kernel `t^{α-1}/Γ(α)`, gamma mixtures) are reduced to atoms by
//! integrating the density exactly over geometric cells.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};

/// Default `ε` for measures without a fractional provenance. Any value in
/// `(0, 1/2)` is admissible for a finite atomic measure.
pub const DEFAULT_EPS: f64 = 0.25;

/// Distance below `1/2` at which a continuous singularity index is flagged as
/// sitting on the admissibility boundary.
pub const BOUNDARY_MARGIN: f64 = 1e-2;

/// `ω(x) = 1 ∧ x^{-1/2}`, with `ω(0) = 1`.
pub fn weight(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weight needs a nonnegative rate, got {x}"
        )));
    }
    Ok(weight_unchecked(x))
}

#[inline]
pub(crate) fn weight_unchecked(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        1.0 / x.sqrt()
    }
}

/// Target kernel of the fractional family, `t^{α-1}/Γ(α)`.
pub fn fractional_kernel(alpha: f64, t: f64) -> f64 {
    t.powf(alpha - 1.0) / gamma(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Decay rate `x_j >= 0`.
    pub x: f64,
    /// Mass `w_j > 0`.
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaComponent {
    pub shape: f64,
    pub rate: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DensityFamily {
    /// Density `x^{-α} / (Γ(α) Γ(1-α))`, kernel `t^{α-1}/Γ(α)`.
    Fractional { alpha: f64 },
    /// Explicit atoms, passed through unchanged.
    ExponentialMix { atoms: Vec<Atom> },
    /// Mixture of gamma densities, kernel `Σ c (b/(b+t))^a`.
    GammaMix { components: Vec<GammaComponent> },
}

/// A continuous (or explicitly atomic) Bernstein measure together with the
/// geometric quadrature used to reduce it to atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    #[serde(flatten)]
    pub family: DensityFamily,
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
}

impl DensitySpec {
    pub fn fractional(alpha: f64, x_min: f64, x_max: f64, nodes: usize) -> Self {
        Self {
            family: DensityFamily::Fractional { alpha },
            x_min,
            x_max,
            nodes,
        }
    }

    /// Ratio `ρ` of the geometric grid `x_min ρ^j`.
    pub fn grid_ratio(&self) -> f64 {
        if self.nodes < 2 {
            return 1.0;
        }
        (self.x_max / self.x_min).powf(1.0 / (self.nodes - 1) as f64)
    }

    /// Analytic kernel of the continuous family, when there is one.
    pub fn target_kernel(&self, t: f64) -> Option<f64> {
        match &self.family {
            DensityFamily::Fractional { alpha } => Some(fractional_kernel(*alpha, t)),
            DensityFamily::GammaMix { components } => Some(
                components
                    .iter()
                    .map(|c| c.weight * (c.rate / (c.rate + t)).powf(c.shape))
                    .sum(),
            ),
            DensityFamily::ExponentialMix { atoms } => Some(atoms.iter().map(|a| a.w * (-a.x * t).exp()).sum()),
        }
    }

    fn validate(&self) -> Result<()> {
        if let DensityFamily::Fractional { alpha } = self.family {
            if !(alpha > 0.5 && alpha < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "fractional exponent must lie strictly inside (1/2, 1), got {alpha}"
                )));
            }
        }
        if let DensityFamily::GammaMix { components } = &self.family {
            if components.is_empty() {
                return Err(Error::InvalidArgument("gamma mixture has no components".into()));
            }
            for c in components {
                if !(c.shape > 0.0 && c.rate > 0.0 && c.weight > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "gamma component needs positive shape, rate and weight: {c:?}"
                    )));
                }
            }
        }
        if matches!(self.family, DensityFamily::ExponentialMix { .. }) {
            return Ok(());
        }
        if self.nodes == 0 {
            return Err(Error::InvalidArgument("quadrature grid is empty".into()));
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min && self.x_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "support truncation needs 0 < x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(())
    }
}

/// Where a discretized measure came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<GammaComponent>>,
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
}

/// Constants recorded for every measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureDiagnostics {
    /// `Σ_{x_j >= 1} w_j x_j^{ε-1/2}`.
    pub moment: f64,
    /// `Σ_j w_j (ω(x_j) + 1/((1+x_j) ω(x_j)))`.
    pub admissibility_constant: f64,
    /// `C = Σ_j w_j ω(x_j)`, so that `‖i v‖_H^2 = C |v|^2`.
    pub immersion_constant: f64,
    /// `C_P^2 = Σ_j w_j / ((1+x_j) ω(x_j))`, so that `|P Y| <= C_P ‖Y‖_V`.
    pub projection_constant_sq: f64,
}

impl MeasureDiagnostics {
    fn compute(atoms: &[Atom], eps: f64) -> Self {
        let mut moment = 0.0;
        let mut immersion = 0.0;
        let mut projection = 0.0;
        for a in atoms {
            let om = weight_unchecked(a.x);
            if a.x >= 1.0 {
                moment += a.w * a.x.powf(eps - 0.5);
            }
            immersion += a.w * om;
            projection += a.w / ((1.0 + a.x) * om);
        }
        Self {
            moment,
            admissibility_constant: immersion + projection,
            immersion_constant: immersion,
            projection_constant_sq: projection,
        }
    }
}

/// Finite atomic Bernstein measure, atoms sorted by strictly increasing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDocument", into = "MeasureDocument")]
pub struct BernsteinMeasure {
    atoms: Vec<Atom>,
    eps: f64,
    provenance: Option<Provenance>,
    diagnostics: MeasureDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct MeasureDocument {
    atoms: Vec<Atom>,
    eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl TryFrom<MeasureDocument> for BernsteinMeasure {
    type Error = Error;

    fn try_from(doc: MeasureDocument) -> Result<Self> {
        let mut m = make_atomic_with_eps(
            doc.atoms.iter().map(|a| (a.x, a.w)).collect::<Vec<_>>().as_slice(),
            doc.eps,
        )?;
        m.provenance = doc.provenance;
        Ok(m)
    }
}

impl From<BernsteinMeasure> for MeasureDocument {
    fn from(m: BernsteinMeasure) -> Self {
        Self {
            atoms: m.atoms,
            eps: m.eps,
            provenance: m.provenance,
        }
    }
}

/// Builds a measure from `(rate, weight)` pairs with the default `ε`.
pub fn make_atomic(atoms: &[(f64, f64)]) -> Result<BernsteinMeasure> {
    make_atomic_with_eps(atoms, DEFAULT_EPS)
}

pub fn make_atomic_with_eps(atoms: &[(f64, f64)], eps: f64) -> Result<BernsteinMeasure> {
    if atoms.is_empty() {
        return Err(Error::InvalidMeasure("measure has no atoms".into()));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidMeasure(format!("eps must lie in (0, 1/2), got {eps}")));
    }
    let mut sorted = Vec::with_capacity(atoms.len());
    for &(x, w) in atoms {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidMeasure(format!(
                "decay rate must be finite and nonnegative, got {x}"
            )));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::NonPositiveWeight { rate: x, weight: w });
        }
        sorted.push(Atom { x, w });
    }
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    if let Some(pair) = sorted.windows(2).find(|p| p[0].x == p[1].x) {
        return Err(Error::DuplicateRate { rate: pair[0].x });
    }
    let diagnostics = MeasureDiagnostics::compute(&sorted, eps);
    Ok(BernsteinMeasure {
        atoms: sorted,
        eps,
        provenance: None,
        diagnostics,
    })
}

/// Reduces a density to atoms on geometric cells.
///
/// Cell `j` spans `[x_min ρ^{j-1/2}, x_min ρ^{j+1/2}]` (the first cell starts
/// at 0, the last stops at `x_max ρ^{1/2}`). Its atom carries the exact cell
/// mass and sits at the cell's mass-weighted mean rate.
pub fn discretize_density(spec: &DensitySpec) -> Result<BernsteinMeasure> {
    spec.validate()?;
    let (cells, eps, provenance) = match &spec.family {
        DensityFamily::ExponentialMix { atoms } => {
            let pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (a.x, a.w)).collect();
            return make_atomic(&pairs);
        }
        DensityFamily::Fractional { alpha } => {
            let a = *alpha;
            let c = 1.0 / (gamma(a) * gamma(1.0 - a));
            let cells = geometric_cells(spec, |lo, hi| {
                let mass = c * (hi.powf(1.0 - a) - lo.powf(1.0 - a)) / (1.0 - a);
                let first = c * (hi.powf(2.0 - a) - lo.powf(2.0 - a)) / (2.0 - a);
                (mass, first)
            });
            let prov = Provenance {
                family: "fractional".into(),
                alpha: Some(a),
                components: None,
                x_min: spec.x_min,
                x_max: spec.x_max,
                nodes: spec.nodes,
            };
            (cells, (a - 0.5) / 2.0, prov)
        }
        DensityFamily::GammaMix { components } => {
            let cells = geometric_cells(spec, |lo, hi| {
                let mut mass = 0.0;
                let mut first = 0.0;
                for g in components {
                    let p = |s: f64, x: f64| if x > 0.0 { gamma_lr(s, g.rate * x) } else { 0.0 };
                    mass += g.weight * (p(g.shape, hi) - p(g.shape, lo));
                    first += g.weight * g.shape / g.rate * (p(g.shape + 1.0, hi) - p(g.shape + 1.0, lo));
                }
                (mass, first)
            });
            let prov = Provenance {
                family: "gamma-mix".into(),
                alpha: None,
                components: Some(components.clone()),
                x_min: spec.x_min,
                x_max: spec.x_max,
                nodes: spec.nodes,
            };
            (cells, DEFAULT_EPS, prov)
        }
    };
    let atoms: Vec<(f64, f64)> = cells.into_iter().filter(|(_, w)| *w > 0.0).collect();
    if atoms.is_empty() {
        return Err(Error::InvalidMeasure("quadrature produced no mass".into()));
    }
    let mut m = make_atomic_with_eps(&atoms, eps)?;
    m.provenance = Some(provenance);
    Ok(m)
}

/// `(rate, mass)` per geometric cell; `moments(lo, hi)` returns the zeroth and
/// first moment of the density over `[lo, hi]`.
fn geometric_cells(spec: &DensitySpec, moments: impl Fn(f64, f64) -> (f64, f64)) -> Vec<(f64, f64)> {
    let n = spec.nodes;
    let rho = spec.grid_ratio();
    let half = rho.sqrt();
    let node = |j: usize| spec.x_min * rho.powi(j as i32);
    (0..n)
        .map(|j| {
            let lo = if j == 0 { 0.0 } else { node(j) / half };
            let hi = if n == 1 { spec.x_max } else { node(j) * half };
            let (mass, first) = moments(lo, hi);
            let rate = if mass > 0.0 { first / mass } else { node(j) };
            (rate.clamp(lo, hi), mass)
        })
        .collect()
}

/// Singularity index of a measure: always 0 for the atoms themselves, plus
/// the index of the continuous target when the measure was discretized from
/// one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub atomic: f64,
    pub continuous: Option<f64>,
    /// Continuous index within [`BOUNDARY_MARGIN`] of `1/2`.
    pub at_boundary: bool,
}

impl BernsteinMeasure {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn diagnostics(&self) -> &MeasureDiagnostics {
        &self.diagnostics
    }

    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.x)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// `k(t) = Σ_j w_j e^{-x_j t}`.
    pub fn kernel_eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("kernel evaluated at negative time {t}")));
        }
        Ok(self.kernel(t))
    }

    /// Unchecked kernel evaluation for hot loops.
    #[inline]
    pub fn kernel(&self, t: f64) -> f64 {
        self.atoms.iter().map(|a| a.w * (-a.x * t).exp()).sum()
    }

    /// `∫_0^t k(s) ds`, exact.
    pub fn kernel_integral(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                if a.x == 0.0 {
                    a.w * t
                } else {
                    a.w * -(-a.x * t).exp_m1() / a.x
                }
            })
            .sum()
    }

    /// Laplace transform `k̂(s) = Σ_j w_j / (s + x_j)`.
    pub fn laplace(&self, s: f64) -> f64 {
        self.atoms.iter().map(|a| a.w / (s + a.x)).sum()
    }

    pub fn singularity_index(&self) -> SingularityReport {
        let continuous = self.provenance.as_ref().and_then(|p| match p.family.as_str() {
            "fractional" => p.alpha.map(|a| 1.0 - a),
            // bounded kernel at the origin: k̂(s) ~ 1/s
            "gamma-mix" => Some(0.0),
            _ => None,
        });
        SingularityReport {
            atomic: 0.0,
            continuous,
            at_boundary: continuous.is_some_and(|d| d >= 0.5 - BOUNDARY_MARGIN),
        }
    }

    /// Same measure with a different `ε`.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = self.atoms.iter().map(|a| (a.x, a.w)).collect();
        let mut m = make_atomic_with_eps(&pairs, eps)?;
        m.provenance = self.provenance.clone();
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn weight_branches() {
        assert_eq!(weight(0.0).unwrap(), 1.0);
        assert_eq!(weight(4.0).unwrap(), 0.5);
        assert_eq!(weight(0.25).unwrap(), 1.0);
        assert!(weight(-1.0).is_err());
    }

    #[test]
    fn single_atom_at_origin() {
        let m = make_atomic(&[(0.0, 1.0)]).unwrap();
        for t in [0.0, 0.3, 10.0] {
            assert_eq!(m.kernel_eval(t).unwrap(), 1.0);
        }
        let d = m.diagnostics();
        assert_eq!(d.immersion_constant, 1.0);
        assert_eq!(d.projection_constant_sq, 1.0);
    }

    #[test]
    fn two_atom_constants() {
        let m = make_atomic(&[(2.0, 3.0), (1.0, 2.0)]).unwrap();
        assert_eq!(m.atoms()[0].x, 1.0);
        assert_eq!(m.kernel_eval(0.0).unwrap(), 5.0);
        let d = m.diagnostics();
        // 2·ω(1) + 3·ω(2) = 2 + 3/√2
        assert!(close(d.immersion_constant, 4.121_320_343_559_643, 1e-14));
        // 2/(2·1) + 3/(3·2^{-1/2}) = 1 + √2
        assert!(close(d.projection_constant_sq, 2.414_213_562_373_095, 1e-14));
        // only x ≥ 1 atoms enter: 2·1 + 3·2^{-1/4}
        assert!(close(d.moment, 2.0 + 3.0 * 2f64.powf(-0.25), 1e-14));
    }

    #[test]
    fn duplicate_and_nonpositive_atoms_rejected() {
        assert!(matches!(
            make_atomic(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(Error::DuplicateRate { rate }) if rate == 1.0
        ));
        assert!(matches!(
            make_atomic(&[(1.0, 0.0)]),
            Err(Error::NonPositiveWeight { .. })
        ));
        assert!(make_atomic(&[(-1.0, 1.0)]).is_err());
        assert!(make_atomic(&[]).is_err());
    }

    #[test]
    fn negative_time_rejected() {
        let m = make_atomic(&[(1.0, 1.0)]).unwrap();
        assert!(m.kernel_eval(-0.1).is_err());
    }

    #[test]
    fn fractional_kernel_at_one() {
        let m = discretize_density(&DensitySpec::fractional(0.75, 1e-2, 1e4, 60)).unwrap();
        // 1/Γ(0.75)
        let target = 0.816_048_939_098_262_2;
        assert!((m.kernel_eval(1.0).unwrap() / target - 1.0).abs() < 0.01);
        assert!((m.eps() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn fractional_exponent_bounds() {
        for alpha in [0.4, 0.5, 1.0] {
            assert!(discretize_density(&DensitySpec::fractional(alpha, 1e-2, 1e4, 60)).is_err());
        }
        let empty = DensitySpec::fractional(0.75, 1e-2, 1e4, 0);
        assert!(discretize_density(&empty).is_err());
    }

    #[test]
    fn exponential_mix_passes_through() {
        let atoms = vec![Atom { x: 1.0, w: 2.0 }, Atom { x: 2.0, w: 3.0 }];
        let spec = DensitySpec {
            family: DensityFamily::ExponentialMix { atoms },
            x_min: 0.0,
            x_max: 0.0,
            nodes: 0,
        };
        let a = discretize_density(&spec).unwrap();
        let b = make_atomic(&[(1.0, 2.0), (2.0, 3.0)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_mix_matches_closed_form() {
        let spec = DensitySpec {
            family: DensityFamily::GammaMix {
                components: vec![GammaComponent {
                    shape: 2.0,
                    rate: 3.0,
                    weight: 1.5,
                }],
            },
            x_min: 1e-3,
            x_max: 1e3,
            nodes: 60,
        };
        let m = discretize_density(&spec).unwrap();
        for t in [0.0, 0.1, 1.0, 5.0] {
            let exact = spec.target_kernel(t).unwrap();
            assert!((m.kernel(t) / exact - 1.0).abs() < 1e-2, "t={t}");
        }
        assert_eq!(m.singularity_index().continuous, Some(0.0));
    }

    #[test]
    fn singularity_reports() {
        let atom = make_atomic(&[(1.0, 1.0)]).unwrap();
        let r = atom.singularity_index();
        assert_eq!(r.atomic, 0.0);
        assert_eq!(r.continuous, None);
        assert!(!r.at_boundary);

        let frac = discretize_density(&DensitySpec::fractional(0.75, 1e-2, 1e4, 30)).unwrap();
        let r = frac.singularity_index();
        assert_eq!(r.atomic, 0.0);
        assert!((r.continuous.unwrap() - 0.25).abs() < 1e-15);
        assert!(!r.at_boundary);

        let edge = discretize_density(&DensitySpec::fractional(0.5001, 1e-2, 1e4, 30)).unwrap();
        let r = edge.singularity_index();
        assert!((r.continuous.unwrap() - 0.4999).abs() < 1e-12);
        assert!(r.at_boundary);
    }

    #[test]
    fn document_round_trip_keeps_provenance() {
        let m = discretize_density(&DensitySpec::fractional(0.75, 1e-2, 1e4, 12)).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: BernsteinMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"atoms":[{"x":1.0,"w":1.0},{"x":1.0,"w":2.0}],"eps":0.25}"#;
        assert!(serde_json::from_str::<BernsteinMeasure>(bad).is_err());
    }
}
