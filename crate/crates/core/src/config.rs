//! Run configuration embedded in every emitted report.
//!
//! Identical `RunConfig` plus identical inputs must produce identical
//! outputs, including under parallel execution; randomized operations derive
//! per-task streams from `seed` so the thread count never changes results.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute integrator tolerance.
    pub integ_abs: f64,
    /// Relative integrator tolerance.
    pub integ_rel: f64,
    /// Relative numeric-rank threshold (singular values below
    /// `rank_rel * sigma_max` count as zero).
    pub rank_rel: f64,
    /// Probe radius for the sampled-regularity test.
    pub probe_radius: f64,
    /// Submersion verdict: require `sigma_min > submersion * sigma_1`.
    pub submersion: f64,
    /// Max residual for a level-set projection to count as converged.
    pub residual: f64,
    /// Power-law exponent floor for an accept verdict.
    pub beta_min: f64,
    /// Smallest-bucket normalized-defect ceiling for an accept verdict.
    pub theta: f64,
    /// Normalized pseudo-norm lower bound that forces a reject verdict.
    pub big_theta: f64,
    /// Max distance between an extension trajectory and the data points.
    pub interp: f64,
    /// Max control jump allowed at gap junctions.
    pub junction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            integ_abs: 1e-10,
            integ_rel: 1e-10,
            rank_rel: 1e-9,
            probe_radius: 1e-3,
            submersion: 1e-8,
            residual: 1e-9,
            beta_min: 0.3,
            theta: 1e-3,
            big_theta: 1e-1,
            interp: 1e-6,
            junction: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Knot count for distance-estimation controls.
    pub distance_knots: usize,
    /// Multi-start count for distance estimation.
    pub distance_restarts: usize,
    /// Gauss-Newton iteration cap per penalty stage.
    pub gn_max_iters: usize,
    /// Restart count for pliability searches.
    pub pliability_restarts: usize,
    /// Basis-size schedule for pliability searches.
    pub basis_schedule: Vec<usize>,
    /// Cap on Whitney pair-defect evaluations before seeded subsampling.
    pub pair_cap: usize,
    /// Knot count for per-pair defect distance estimates.
    pub pair_knots: usize,
    /// Multi-start count for per-pair defect distance estimates.
    pub pair_restarts: usize,
    /// Doublings allowed above the base eta in extension gap solves.
    pub eta_doublings: usize,
    /// Grid resolution per axis for sup-style diagnostics.
    pub grid: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            distance_knots: 64,
            distance_restarts: 6,
            gn_max_iters: 60,
            pliability_restarts: 12,
            basis_schedule: vec![4, 6, 8],
            pair_cap: 4096,
            pair_knots: 8,
            pair_restarts: 2,
            eta_doublings: 5,
            grid: 33,
        }
    }
}

/// Full reproducibility record carried by every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub tolerances: Tolerances,
    pub budgets: Budgets,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tolerances: Tolerances::default(),
            budgets: Budgets::default(),
            output_dir: ".".into(),
        }
    }
}
