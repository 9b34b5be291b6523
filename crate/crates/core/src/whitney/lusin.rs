//! Lusin-style approximation: an absolutely continuous horizontal curve,
//! given by a (possibly rough) sampled control, coincides off a set of small
//! measure with the horizontal extension of its well-behaved samples.
//!
//! The selection is a discretized Egorov argument: difference-quotient
//! defects `f_h(t) = d(gamma(t+h), e^{h X_{u(t)}} gamma(t)) / h` are computed
//! for a dyadic set of step sizes, and grid times where the sup over small
//! steps exceeds a threshold are discarded, with the `(threshold, h0)` pair
//! tightened until the discarded grid measure is below `eps`.

use super::{extend, ExtendOptions, ExtensionResult, WhitneyData};
use crate::endpoint::{estimate_dsr, DistanceBudget};
use crate::error::Error;
use crate::flow::{chron_exp, flow_const, Control, RkOptions};
use crate::structure::SRStructure;
use crate::Result;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct LusinOptions {
    /// Dyadic step sizes, largest first.
    pub h_set: Vec<f64>,
    /// Defect thresholds tried from strict to loose.
    pub tau_schedule: Vec<f64>,
    /// Number of grid cells on the control interval.
    pub grid: usize,
    pub distance_budget: DistanceBudget,
    pub extend: ExtendOptions,
    pub seed: u64,
}

impl Default for LusinOptions {
    fn default() -> Self {
        LusinOptions {
            h_set: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            tau_schedule: vec![0.05, 0.1, 0.2, 0.4],
            grid: 64,
            distance_budget: DistanceBudget {
                knots: 8,
                restarts: 2,
                ..Default::default()
            },
            extend: ExtendOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LusinSelection {
    pub kept_times: Vec<f64>,
    pub kept_measure: f64,
    pub total_measure: f64,
    pub tau_used: f64,
    pub h0_used: f64,
    /// Per-grid-time sup defect over the admitted step sizes.
    pub sup_defects: Vec<f64>,
}

#[derive(Debug)]
pub struct LusinResult {
    pub selection: LusinSelection,
    pub data: WhitneyData,
    pub extension: ExtensionResult,
}

/// Integrate the curve of `u_ac` from `p0`, select a compact set of grid
/// times where the first-order defects are uniformly small with discarded
/// measure below `eps`, and extend the selected data.
pub fn lusin(
    s: &SRStructure,
    u_ac: &Control,
    p0: &[f64],
    eps: f64,
    opts: &LusinOptions,
) -> Result<LusinResult> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let rk = RkOptions::with_tol(1e-10, 1e-10);
    let gamma = chron_exp(s, u_ac, p0, &rk)?;
    let (a, b) = (u_ac.t0, u_ac.t1);
    let total = b - a;
    let n = opts.grid;
    let cell = total / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| a + cell * i as f64).collect();

    // Defect table: rows by grid time, columns by step size (NaN when t+h
    // leaves the interval or the estimate fails).
    let h_scaled: Vec<f64> = opts.h_set.iter().map(|h| h * total).collect();
    let table: Vec<Vec<f64>> = times
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| {
            let u_t = u_ac.value(t);
            let gt = gamma.sample(t);
            h_scaled
                .iter()
                .enumerate()
                .map(|(hi, &h)| {
                    if t + h > b + 1e-12 {
                        return f64::NAN;
                    }
                    let reach = match flow_const(s, &u_t, h, &gt, &rk) {
                        Ok(z) => z,
                        Err(_) => return f64::INFINITY,
                    };
                    let target = gamma.sample(t + h);
                    match estimate_dsr(
                        s,
                        &reach,
                        &target,
                        &opts.distance_budget,
                        opts.seed ^ ((ti as u64) << 8) ^ hi as u64,
                    ) {
                        Ok(est) => est.upper / h,
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect()
        })
        .collect();

    // Egorov-style tightening: strictest (small tau, large h0) combination
    // that meets the measure target wins.
    let mut chosen: Option<(f64, f64, Vec<bool>, Vec<f64>)> = None;
    'search: for &tau in &opts.tau_schedule {
        for h0_idx in 0..h_scaled.len() {
            // Admit steps h <= h0 (indices h0_idx..: the set is descending).
            let sup: Vec<f64> = table
                .iter()
                .map(|row| {
                    row[h0_idx..]
                        .iter()
                        .filter(|v| !v.is_nan())
                        .fold(0.0f64, |acc, &v| acc.max(v))
                })
                .collect();
            let keep: Vec<bool> = sup.iter().map(|&v| v <= tau).collect();
            let discarded = keep.iter().filter(|&&k| !k).count() as f64 * cell;
            if discarded < eps {
                chosen = Some((tau, h_scaled[h0_idx], keep, sup));
                break 'search;
            }
        }
    }
    let Some((tau_used, h0_used, keep, sup_defects)) = chosen else {
        // Best (loosest tau, smallest-h0) combination still misses the target.
        let tau = *opts.tau_schedule.last().unwrap();
        let h0_idx = h_scaled.len() - 1;
        let min_discard = table
            .iter()
            .map(|row| {
                row[h0_idx..]
                    .iter()
                    .filter(|v| !v.is_nan())
                    .fold(0.0f64, |acc, &v| acc.max(v))
            })
            .filter(|&v| v > tau)
            .count() as f64
            * cell;
        return Err(Error::LusinMeasure {
            achieved: min_discard,
            eps,
        });
    };

    let mut kept_times: Vec<f64> = times
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&t, _)| t)
        .collect();
    if kept_times.is_empty() {
        // Degenerate selection (eps larger than the interval): fall back to
        // the initial time only, which yields a trivial two-ray extension.
        kept_times.push(a);
    }
    let kept_measure = kept_times.len() as f64 * cell;
    let data = WhitneyData::new(
        kept_times.clone(),
        kept_times.iter().map(|&t| gamma.sample(t)).collect(),
        kept_times.iter().map(|&t| u_ac.value(t)).collect(),
    )?;
    let extension = extend(s, &data, &opts.extend)?;
    Ok(LusinResult {
        selection: LusinSelection {
            kept_times,
            kept_measure,
            total_measure: total,
            tau_used,
            h0_used,
            sup_defects,
        },
        data,
        extension,
    })
}
