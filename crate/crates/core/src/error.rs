//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("structure is not bracket-generating within depth {max_depth} at {point:?}; achieved growth {achieved:?}")]
    NotBracketGenerating {
        point: Vec<f64>,
        max_depth: usize,
        achieved: Vec<usize>,
    },

    #[error("privileged-coordinate correction failed for coordinate {coord} at derivation order {order}")]
    ChartCorrection { coord: usize, order: usize },

    #[error("chart is not privileged: pushforward coefficient ({field},{coord}) has weighted order {got} < {want}")]
    ChartNotPrivileged {
        field: usize,
        coord: usize,
        got: i64,
        want: i64,
    },

    #[error("gauge matrix is not orthogonal at sample {point:?} (deviation {deviation:.3e} > tol {tol:.3e})")]
    GaugeNotOrthogonal {
        point: Vec<f64>,
        deviation: f64,
        tol: f64,
    },

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("trajectory left the declared domain at t = {t}")]
    DomainExit { t: f64 },

    #[error("distance estimation failed: best endpoint gap {best_gap:.3e} after {restarts} restarts")]
    DistanceBudget { best_gap: f64, restarts: usize },

    #[error("extension gap [{a}, {b}] unsolvable within max eta {max_eta:.3e}; best endpoint residual {best_residual:.3e} (insufficient budget and genuine non-extendability are not distinguished)")]
    GapUnsolvable {
        a: f64,
        b: f64,
        max_eta: f64,
        best_residual: f64,
    },

    #[error("chart construction failed at a singular point ({0}); supply an equiregular lift and verify upstairs")]
    SingularPoint(String),

    #[error("Lusin selection cannot reach the measure target: achieved discarded measure {achieved:.3e} > eps {eps:.3e}")]
    LusinMeasure { achieved: f64, eps: f64 },

    #[error("lift error: {0}")]
    Lift(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
