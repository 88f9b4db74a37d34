//! Experiment configuration: a TOML document with sections `kernel`, `levy`,
//! `coefficients`, `control` and `numerics`, and a top-level `mode`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, IntensityFn, Policy, RegressionConfig, RunningCostFn, TerminalCostFn};
use crate::grid::TimeGrid;
use crate::kernel::{
    discretize_density, make_atomic_with_eps, BernsteinMeasure, DensityFamily, DensitySpec, GammaComponent, DEFAULT_EPS,
};
use crate::levy::LevyModel;
use crate::lift::{CoefficientSet, LiftState};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    KernelCheck,
    Equivalence,
    Solve,
    Evaluate,
    ClosedLoop,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::KernelCheck => "kernel-check",
            Mode::Equivalence => "equivalence",
            Mode::Solve => "solve",
            Mode::Evaluate => "evaluate",
            Mode::ClosedLoop => "closed-loop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub kernel: KernelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy: Option<LevySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    pub numerics: NumericsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSection {
    /// Explicit `[x, w]` pairs.
    Atomic {
        atoms: Vec<[f64; 2]>,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Fractional {
        alpha: f64,
        x_min: f64,
        x_max: f64,
        nodes: usize,
    },
    GammaMix {
        components: Vec<GammaComponent>,
        x_min: f64,
        x_max: f64,
        nodes: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl KernelSection {
    pub fn density(&self) -> Option<DensitySpec> {
        match self {
            KernelSection::Atomic { .. } => None,
            KernelSection::Fractional {
                alpha,
                x_min,
                x_max,
                nodes,
            } => Some(DensitySpec::fractional(*alpha, *x_min, *x_max, *nodes)),
            KernelSection::GammaMix {
                components,
                x_min,
                x_max,
                nodes,
                ..
            } => Some(DensitySpec {
                family: DensityFamily::GammaMix {
                    components: components.clone(),
                },
                x_min: *x_min,
                x_max: *x_max,
                nodes: *nodes,
            }),
        }
    }

    pub fn build(&self) -> Result<BernsteinMeasure, CliError> {
        let schema = |e: crate::Error| CliError::Schema(format!("kernel: {e}"));
        match self {
            KernelSection::Atomic { atoms, eps } => {
                let pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (a[0], a[1])).collect();
                make_atomic_with_eps(&pairs, *eps).map_err(schema)
            }
            KernelSection::Fractional { .. } => discretize_density(&self.density().unwrap()).map_err(schema),
            KernelSection::GammaMix { eps, .. } => discretize_density(&self.density().unwrap())
                .and_then(|m| m.with_eps(*eps))
                .map_err(schema),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySection {
    /// One mark per entry; scalars or vectors of the state dimension.
    pub marks: Vec<MarkValue>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarkValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl LevySection {
    pub fn build(&self) -> Result<LevyModel, CliError> {
        let marks = self
            .marks
            .iter()
            .map(|m| match m {
                MarkValue::Scalar(x) => vec![*x],
                MarkValue::Vector(v) => v.clone(),
            })
            .collect();
        LevyModel::new(marks, self.rates.clone()).map_err(|e| CliError::Schema(format!("levy: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    /// Initial value `u(0)`; the lift starts from its immersion.
    pub y0: Vec<f64>,
    #[serde(default)]
    pub drift: DriftFamily,
    #[serde(default)]
    pub jump: JumpFamily,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftFamily {
    #[default]
    Zero,
    /// `f(u) = c`.
    Constant { c: Vec<f64> },
    /// `f(u) = a u`.
    Linear { a: f64 },
    /// `f(u) = a u + b`.
    Affine { a: f64, b: Vec<f64> },
    /// `f_i(u) = g_i u_i (1 - u_i / K)`, `u_i` clamped to `[0, K]` inside.
    Growth { rates: Vec<f64>, capacity: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpFamily {
    #[default]
    Zero,
    /// `σ(ξ, u) = c`.
    Constant { c: Vec<f64> },
    /// `σ(ξ, u) = s ξ`.
    ScaledMark { scale: f64 },
    /// `σ_i(ξ, u) = s ξ_i u_i`.
    Proportional { scale: f64 },
}

impl CoefficientSection {
    pub fn build(&self, model: &LevyModel) -> Result<CoefficientSet, CliError> {
        let d = self.y0.len();
        let bad = |msg: String| CliError::Schema(format!("coefficients: {msg}"));
        if d == 0 {
            return Err(bad("y0 must not be empty".into()));
        }
        let check_len = |what: &str, len: usize| {
            if len == d {
                Ok(())
            } else {
                Err(bad(format!("{what} has {len} entries, y0 has {d}")))
            }
        };
        let base = match &self.drift {
            DriftFamily::Zero => CoefficientSet::zero(d),
            DriftFamily::Constant { c } => {
                check_len("drift.c", c.len())?;
                CoefficientSet::constant_drift(c.clone())
            }
            DriftFamily::Linear { a } => CoefficientSet::linear(d, *a),
            DriftFamily::Affine { a, b } => {
                check_len("drift.b", b.len())?;
                CoefficientSet::affine(*a, b.clone())
            }
            DriftFamily::Growth { rates, capacity } => {
                check_len("drift.rates", rates.len())?;
                if !(*capacity > 0.0) {
                    return Err(bad("drift.capacity must be positive".into()));
                }
                CoefficientSet::growth(rates.clone(), *capacity)
            }
        };
        let needs_mark_dim = matches!(
            self.jump,
            JumpFamily::ScaledMark { .. } | JumpFamily::Proportional { .. }
        );
        if needs_mark_dim && model.mark_dim() != d {
            return Err(bad(format!(
                "jump family needs marks of dimension {d}, levy marks have {}",
                model.mark_dim()
            )));
        }
        Ok(match &self.jump {
            JumpFamily::Zero => base,
            JumpFamily::Constant { c } => {
                check_len("jump.c", c.len())?;
                base.with_constant_jump(c.clone())
            }
            JumpFamily::ScaledMark { scale } => base.with_scaled_marks(*scale),
            JumpFamily::Proportional { scale } => {
                let bound = (0..model.n_marks())
                    .flat_map(|i| model.mark(i).iter().map(|x| x.abs()))
                    .fold(0.0, f64::max);
                base.with_proportional_jump(*scale, bound)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub actions: Vec<String>,
    pub r: IntensityFamily,
    pub l: RunningCostFamily,
    pub g: TerminalCostFamily,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    pub alpha: f64,
    /// Deterministic schedules to evaluate besides the constant actions.
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
    /// Number of random piecewise-constant schedules added to the
    /// fundamental-relation check.
    #[serde(default = "default_random_schedules")]
    pub random_schedules: usize,
}

fn default_random_schedules() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntensityFamily {
    /// `r(t, u, ξ_i, χ) = values[χ][i]`.
    Table { values: Vec<Vec<f64>> },
    /// `values[χ][i] · (1 + gain · tanh(u_coordinate))`, with `|gain| < 1`.
    Saturating {
        values: Vec<Vec<f64>>,
        gain: f64,
        #[serde(default)]
        coordinate: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunningCostFamily {
    /// `l(t, u, χ) = costs[χ] + state_weight · |u|^2`.
    Table {
        costs: Vec<f64>,
        #[serde(default)]
        state_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalCostFamily {
    Constant {
        value: f64,
    },
    /// `g(u) = weights · u + constant`.
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// `g(u) = Σ_i weights_i u_i^2`.
    Quadratic {
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub name: String,
    /// Start times of the pieces; the first must be 0.
    pub starts: Vec<f64>,
    /// Action labels, one per piece.
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_grid_steps")]
    pub grid_steps: usize,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    /// Paths per policy evaluation; defaults to `n_paths`.
    #[serde(default)]
    pub eval_paths: Option<usize>,
    #[serde(default = "default_degree")]
    pub regression_degree: usize,
    #[serde(default)]
    pub lift_atoms: Vec<usize>,
    #[serde(default = "default_regression_tolerance")]
    pub regression_tolerance: f64,
    pub seed: u64,
    /// Number of shared paths in `equivalence` mode.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Sup-gap threshold in `equivalence` mode.
    #[serde(default = "default_equivalence_tolerance")]
    pub equivalence_tolerance: f64,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_grid_steps() -> usize {
    100
}
fn default_n_paths() -> usize {
    10_000
}
fn default_degree() -> usize {
    3
}
fn default_regression_tolerance() -> f64 {
    1e-6
}
fn default_seeds() -> usize {
    20
}
fn default_equivalence_tolerance() -> f64 {
    5e-3
}

/// Parses a configuration, reporting schema errors with their field path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| CliError::Schema(format!("invalid TOML: {e}")))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        // a missing field is reported at its parent; name the field itself
        let field_path = match missing_field(&msg) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        CliError::Schema(format!("{field_path}: {}", msg.trim()))
    })
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.split("missing field `").nth(1)?;
    rest.split('`').next()
}

impl ExperimentConfig {
    /// Fills every default so that the manifest shows the values used.
    pub fn resolved(mut self) -> Self {
        if self.numerics.eval_paths.is_none() {
            self.numerics.eval_paths = Some(self.numerics.n_paths);
        }
        self
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::uniform(self.numerics.horizon, self.numerics.grid_steps)
            .map_err(|e| CliError::Schema(format!("numerics: {e}")))
    }

    pub fn levy(&self) -> Result<LevyModel, CliError> {
        self.levy
            .as_ref()
            .ok_or_else(|| CliError::Schema("levy: missing section".into()))?
            .build()
    }

    pub fn coefficients(&self, model: &LevyModel) -> Result<(CoefficientSet, Vec<f64>), CliError> {
        let c = self
            .coefficients
            .as_ref()
            .ok_or_else(|| CliError::Schema("coefficients: missing section".into()))?;
        Ok((c.build(model)?, c.y0.clone()))
    }

    pub fn regression(&self) -> RegressionConfig {
        RegressionConfig {
            degree: self.numerics.regression_degree,
            lift_atoms: self.numerics.lift_atoms.clone(),
            tolerance: self.numerics.regression_tolerance,
            ..RegressionConfig::default()
        }
    }

    pub fn problem(&self) -> Result<ControlProblem, CliError> {
        let measure = Arc::new(self.kernel.build()?);
        let model = self.levy()?;
        let (coeffs, y0) = self.coefficients(&model)?;
        let grid = self.grid()?;
        let control = self
            .control
            .as_ref()
            .ok_or_else(|| CliError::Schema("control: missing section".into()))?;
        let n_actions = control.actions.len();
        let d = y0.len();
        let bad = |msg: String| CliError::Schema(format!("control: {msg}"));
        if n_actions == 0 {
            return Err(bad("actions must not be empty".into()));
        }
        let check_table = |name: &str, table: &[Vec<f64>]| {
            if table.len() != n_actions || table.iter().any(|row| row.len() != model.n_marks()) {
                Err(bad(format!(
                    "{name} must have one row per action ({n_actions}) and one entry per mark ({})",
                    model.n_marks()
                )))
            } else {
                Ok(())
            }
        };
        let intensity: IntensityFn = match &control.r {
            IntensityFamily::Table { values } => {
                check_table("r.values", values)?;
                let values = values.clone();
                Arc::new(move |_, _, i, a| values[a][i])
            }
            IntensityFamily::Saturating {
                values,
                gain,
                coordinate,
            } => {
                check_table("r.values", values)?;
                if *coordinate >= d {
                    return Err(bad(format!("r.coordinate {coordinate} out of range")));
                }
                let (values, gain, j) = (values.clone(), *gain, *coordinate);
                Arc::new(move |_, u, i, a| values[a][i] * (1.0 + gain * u[j].tanh()))
            }
        };
        let running_cost: RunningCostFn = match &control.l {
            RunningCostFamily::Table { costs, state_weight } => {
                if costs.len() != n_actions {
                    return Err(bad(format!("l.costs needs {n_actions} entries")));
                }
                let (costs, q) = (costs.clone(), *state_weight);
                Arc::new(move |_, u, a| costs[a] + q * u.iter().map(|x| x * x).sum::<f64>())
            }
        };
        let terminal_cost: TerminalCostFn = match &control.g {
            TerminalCostFamily::Constant { value } => {
                let v = *value;
                Arc::new(move |_| v)
            }
            TerminalCostFamily::Linear { weights, constant } => {
                if weights.len() != d {
                    return Err(bad(format!("g.weights needs {d} entries")));
                }
                let (w, c) = (weights.clone(), *constant);
                Arc::new(move |u| c + w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            }
            TerminalCostFamily::Quadratic { weights } => {
                if weights.len() != d {
                    return Err(bad(format!("g.weights needs {d} entries")));
                }
                let w = weights.clone();
                Arc::new(move |u| w.iter().zip(u).map(|(a, b)| a * b * b).sum::<f64>())
            }
        };
        Ok(ControlProblem {
            y0: LiftState::immerse(&y0, measure),
            coeffs,
            model,
            grid,
            intensity,
            bound: control.c_r,
            running_cost,
            terminal_cost,
            actions: control.actions.clone(),
            alpha: control.alpha,
        })
    }

    /// Configured deterministic schedules, validated against the actions.
    pub fn schedules(&self) -> Result<Vec<(String, Policy)>, CliError> {
        let Some(control) = &self.control else {
            return Ok(Vec::new());
        };
        control
            .schedules
            .iter()
            .map(|s| {
                let bad = |msg: String| CliError::Schema(format!("control.schedules.{}: {msg}", s.name));
                if s.starts.len() != s.actions.len() || s.starts.is_empty() {
                    return Err(bad("starts and actions must be nonempty and of equal length".into()));
                }
                if s.starts[0] != 0.0 || s.starts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("starts must begin at 0 and increase".into()));
                }
                let actions = s
                    .actions
                    .iter()
                    .map(|label| {
                        control
                            .actions
                            .iter()
                            .position(|a| a == label)
                            .ok_or_else(|| bad(format!("unknown action `{label}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((s.name.clone(), Policy::piecewise(s.starts.clone(), actions)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "equivalence"
[kernel]
family = "atomic"
atoms = [[1.0, 2.0], [2.0, 3.0]]
[levy]
marks = [1.0, -1.0]
rates = [1.0, 1.0]
[coefficients]
y0 = [1.0]
drift = { family = "linear", a = -0.5 }
jump = { family = "scaled-mark", scale = 0.1 }
[numerics]
seed = 7
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap().resolved();
        assert_eq!(cfg.mode, Some(Mode::Equivalence));
        assert_eq!(cfg.numerics.grid_steps, 100);
        assert_eq!(cfg.numerics.eval_paths, Some(10_000));
        let m = cfg.kernel.build().unwrap();
        assert_eq!(m.len(), 2);
        let model = cfg.levy().unwrap();
        let (coeffs, y0) = cfg.coefficients(&model).unwrap();
        assert_eq!((coeffs.dim(), y0), (1, vec![1.0]));
    }

    #[test]
    fn missing_field_is_named_by_path() {
        let text = MINIMAL.replace("rates = [1.0, 1.0]\n", "");
        match parse_config(&text) {
            Err(CliError::Schema(msg)) => assert!(msg.starts_with("levy.rates"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = MINIMAL.replace("seed = 7\n", "");
        match parse_config(&text) {
            Err(CliError::Schema(msg)) => assert!(msg.starts_with("numerics.seed"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_families_and_fields_are_rejected() {
        let text = MINIMAL.replace("\"linear\", a", "\"cubic\", a");
        assert!(matches!(parse_config(&text), Err(CliError::Schema(_))));
        let text = MINIMAL.replace("seed = 7", "seed = 7\nsed = 3");
        match parse_config(&text) {
            Err(CliError::Schema(msg)) => assert!(msg.contains("sed"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_values_are_schema_errors() {
        let text = MINIMAL.replace("rates = [1.0, 1.0]", "rates = [1.0]");
        let cfg = parse_config(&text).unwrap();
        assert!(matches!(cfg.levy(), Err(CliError::Schema(_))));
    }
}
