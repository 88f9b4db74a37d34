use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate decay rate {rate}: merge the atoms by summing their weights")]
    DuplicateRate { rate: f64 },

    #[error("atom at rate {rate} has nonpositive weight {weight}")]
    NonPositiveWeight { rate: f64, weight: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("intensity multiplier {value} at t={t}, mark {mark}, action {action:?} violates 0 < r <= {bound}")]
    IntensityBound {
        t: f64,
        mark: usize,
        action: Option<usize>,
        value: f64,
        bound: f64,
    },

    #[error("declared Lipschitz constant {declared} for {which} violated: observed ratio {observed}")]
    Lipschitz {
        which: &'static str,
        declared: f64,
        observed: f64,
    },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("picard iteration did not converge in {iterations} iterations; gap history {gaps:?}")]
    PicardNonConvergence { iterations: usize, gaps: Vec<f64> },

    #[error("{paths} paths are not enough for {regressors} regressors")]
    InsufficientPaths { paths: usize, regressors: usize },

    #[error("action set is empty")]
    EmptyActionSet,

    #[error("action index {index} outside action set of size {len}")]
    UnknownAction { index: usize, len: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
