//! First-order compatibility verification of curve data, construction of
//! horizontal extensions with continuous control across the gaps, and Lusin
//! approximation of absolutely continuous horizontal curves.
//!
//! Curve data lives on a finite strictly increasing time set `K` and pairs
//! each time with a point and a control value (the continuous selection with
//! `L(t) = X_{u(t)}(f(t))`). Verification measures normalized defects
//! `d(f(t), e^{(t-s)X_{u(s)}} f(s)) / |t-s|` over windowed pairs: acceptance
//! is a power-law decay fit on distance upper estimates, rejection requires a
//! pseudo-norm lower proxy to exceed a threshold (so an unconverged upper
//! estimate can never cause a rejection), and everything else is
//! inconclusive.

mod lusin;

pub use lusin::{lusin, LusinOptions, LusinResult};

use crate::config::{Budgets, Tolerances};
use crate::endpoint::{estimate_dsr, DistanceBudget};
use crate::error::Error;
use crate::flow::{chron_exp, flow_const, Control, RkOptions, Trajectory};
use crate::nilpotent::{
    dilate, nilpotentize, privileged_chart_f64, pseudo_norm, PrivilegedChart,
};
use crate::structure::{flag_at, SRStructure};
use crate::Result;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Finite curve data on a strictly increasing time set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyData {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl WhitneyData {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() || times.len() != controls.len() {
            return Err(Error::InvalidArgument(
                "curve data needs equal, nonzero numbers of times, points and controls".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "times must be strictly increasing".into(),
            ));
        }
        if points
            .iter()
            .flatten()
            .chain(controls.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite curve data".into()));
        }
        Ok(WhitneyData {
            times,
            points,
            controls,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }

    /// Check points lie in the structure's domain (when declared).
    pub fn check_domain(&self, s: &SRStructure) -> Result<()> {
        if let Some(b) = &s.domain {
            for p in &self.points {
                if !b.contains(p) {
                    return Err(Error::InvalidArgument(format!(
                        "data point {p:?} outside the declared domain"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every other sample (used for the resolution-sensitivity field).
    pub fn half_resolution(&self) -> WhitneyData {
        let idx: Vec<usize> = (0..self.len()).step_by(2).collect();
        WhitneyData {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            controls: idx.iter().map(|&i| self.controls[i].clone()).collect(),
        }
    }

    /// CSV with header `t, x1..xd, u1..um`.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let d = self.points[0].len();
        let m = self.controls[0].len();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format!("{}", self.times[i])];
            row.extend(self.points[i].iter().map(|v| format!("{}", v)));
            row.extend(self.controls[i].iter().map(|v| format!("{}", v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv<R: std::io::Read>(r: R, dim: usize, rank: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 + dim + rank {
            return Err(Error::Parse(format!(
                "curve CSV must have 1+{dim}+{rank} columns, found {}",
                headers.len()
            )));
        }
        let mut times = Vec::new();
        let mut points = Vec::new();
        let mut controls = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap()
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse("bad number in curve CSV".into()))
            };
            times.push(f(0)?);
            points.push((1..=dim).map(f).collect::<Result<Vec<f64>>>()?);
            controls.push((dim + 1..=dim + rank).map(f).collect::<Result<Vec<f64>>>()?);
        }
        WhitneyData::new(times, points, controls)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Both,
    Forward,
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Direction::Both),
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::Parse(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BucketRow {
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub pairs: usize,
    pub sup_normalized_defect: f64,
}

/// Empirical modulus report: the desk-scale stand-in for the `o(t)` claim.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusReport {
    pub direction: Direction,
    pub buckets: Vec<BucketRow>,
    /// Fitted power-law exponent of sup defect against gap size.
    pub beta: Option<f64>,
    pub verdict: Verdict,
    pub beta_min: f64,
    pub theta: f64,
    pub big_theta: f64,
    pub h_max: f64,
    pub pairs_evaluated: usize,
    pub pairs_skipped: usize,
    pub max_lower_defect: f64,
    /// Verdict recomputed on every-other sample, as a resolution-sensitivity
    /// indicator (the continuum claim is unobservable at finite resolution).
    pub half_resolution_verdict: Option<Verdict>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub tolerances: Tolerances,
    pub budgets: Budgets,
    pub seed: u64,
    /// Window: pairs farther apart than `h_max_fraction * diameter` are not
    /// evaluated.
    pub h_max_fraction: f64,
    pub max_depth: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tolerances: Tolerances::default(),
            budgets: Budgets::default(),
            seed: 0,
            h_max_fraction: 0.25,
            max_depth: 6,
        }
    }
}

/// Direct verification of the first-order compatibility condition on the
/// data, using distance upper estimates for acceptance and pseudo-norm lower
/// proxies for rejection.
pub fn verify_direct(
    s: &SRStructure,
    data: &WhitneyData,
    direction: Direction,
    opts: &VerifyOptions,
) -> Result<ModulusReport> {
    verify_direct_inner(s, data, direction, opts, true)
}

fn verify_direct_inner(
    s: &SRStructure,
    data: &WhitneyData,
    direction: Direction,
    opts: &VerifyOptions,
    with_half_resolution: bool,
) -> Result<ModulusReport> {
    data.check_domain(s)?;
    let n = data.len();
    let h_max = (data.diameter() * opts.h_max_fraction).max(f64::MIN_POSITIVE);

    // Candidate ordered pairs (source s_idx, target t_idx) within the window.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let h = data.times[b] - data.times[a];
            if h > h_max {
                break;
            }
            match direction {
                Direction::Forward => pairs.push((a, b)),
                Direction::Backward => pairs.push((b, a)),
                Direction::Both => {
                    pairs.push((a, b));
                    pairs.push((b, a));
                }
            }
        }
    }
    if pairs.len() > opts.budgets.pair_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9a1f);
        pairs.shuffle(&mut rng);
        pairs.truncate(opts.budgets.pair_cap);
        pairs.sort_unstable();
    }

    // Charts at target points, for the pseudo-norm lower proxy. Failure to
    // build one (singular point) just disables the proxy there.
    let charts: Vec<Option<PrivilegedChart>> = (0..n)
        .into_par_iter()
        .map(|i| privileged_chart_f64(s, &data.points[i], opts.max_depth).ok())
        .collect();

    let budget = DistanceBudget {
        knots: opts.budgets.pair_knots,
        restarts: opts.budgets.pair_restarts,
        gn_max_iters: opts.budgets.gn_max_iters,
        ..Default::default()
    };
    let rk = RkOptions::with_tol(opts.tolerances.integ_abs, opts.tolerances.integ_rel);

    struct PairOutcome {
        h: f64,
        upper_defect: Option<f64>,
        lower_defect: Option<f64>,
    }
    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(src, dst))| {
            let h = data.times[dst] - data.times[src];
            let habs = h.abs();
            let reach = match flow_const(s, &data.controls[src], h, &data.points[src], &rk) {
                Ok(z) => z,
                Err(_) => {
                    return PairOutcome {
                        h: habs,
                        upper_defect: None,
                        lower_defect: None,
                    }
                }
            };
            let lower_defect = charts[dst]
                .as_ref()
                .map(|ch| pseudo_norm(ch, &ch.to_chart(&reach)) / habs);
            let upper_defect = estimate_dsr(s, &reach, &data.points[dst], &budget, opts.seed ^ idx as u64)
                .ok()
                .map(|est| est.upper / habs);
            PairOutcome {
                h: habs,
                upper_defect,
                lower_defect,
            }
        })
        .collect();

    // Dyadic buckets by gap size from h_max downward.
    let n_buckets = 16usize;
    let mut buckets: Vec<BucketRow> = (0..n_buckets)
        .map(|l| BucketRow {
            gap_lo: h_max / 2f64.powi(l as i32 + 1),
            gap_hi: h_max / 2f64.powi(l as i32),
            pairs: 0,
            sup_normalized_defect: 0.0,
        })
        .collect();
    let mut skipped = 0usize;
    let mut max_lower: f64 = 0.0;
    for oc in &outcomes {
        if let Some(ld) = oc.lower_defect {
            max_lower = max_lower.max(ld);
        }
        let Some(ud) = oc.upper_defect else {
            skipped += 1;
            continue;
        };
        let l = (h_max / oc.h).log2().floor().clamp(0.0, (n_buckets - 1) as f64) as usize;
        buckets[l].pairs += 1;
        buckets[l].sup_normalized_defect = buckets[l].sup_normalized_defect.max(ud);
    }
    buckets.retain(|b| b.pairs > 0);

    let beta = if buckets.len() >= 2 {
        let xy: Vec<(f64, f64)> = buckets
            .iter()
            .map(|b| {
                (
                    (0.5 * (b.gap_lo + b.gap_hi)).ln(),
                    b.sup_normalized_defect.max(1e-300).ln(),
                )
            })
            .collect();
        Some(crate::nilpotent::fit_slope(&xy))
    } else {
        None
    };

    let tol = &opts.tolerances;
    let verdict = if max_lower > tol.big_theta {
        Verdict::Reject
    } else if outcomes.is_empty() {
        Verdict::Accept // no pairs in the window: vacuous
    } else if skipped == 0
        && beta.map(|b| b > tol.beta_min).unwrap_or(false)
        && buckets
            .last()
            .map(|b| b.sup_normalized_defect < tol.theta)
            .unwrap_or(false)
    {
        Verdict::Accept
    } else {
        Verdict::Inconclusive
    };

    let half = if with_half_resolution && data.len() >= 5 {
        let hd = data.half_resolution();
        verify_direct_inner(s, &hd, direction, opts, false)
            .ok()
            .map(|r| r.verdict)
    } else {
        None
    };

    Ok(ModulusReport {
        direction,
        buckets,
        beta,
        verdict,
        beta_min: tol.beta_min,
        theta: tol.theta,
        big_theta: tol.big_theta,
        h_max,
        pairs_evaluated: outcomes.len() - skipped,
        pairs_skipped: skipped,
        max_lower_defect: max_lower,
        half_resolution_verdict: half,
        seed: opts.seed,
    })
}

/// Per-scale discrepancy between dilated consecutive differences and the
/// nilpotent flow target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DilationReport {
    pub direction: Direction,
    /// `(gap, discrepancy)` per consecutive pair.
    pub rows: Vec<(f64, f64)>,
    /// Log-log slope of discrepancy against gap (positive means decay).
    pub slope: Option<f64>,
    pub accept: bool,
}

/// Dilation form of the verification: for consecutive pairs `(a, b)`, the
/// dilated difference `d_{1/(b-a)}(Phi_{f(b)}(f(a)))` must approach
/// `e^{-Xhat_{u(b)}}(0)` (forward; mirrored backward). Requires charts, hence
/// regular data points.
pub fn verify_dilation(
    s: &SRStructure,
    data: &WhitneyData,
    direction: Direction,
    opts: &VerifyOptions,
) -> Result<DilationReport> {
    data.check_domain(s)?;
    for p in &data.points {
        let flag = flag_at(s, p, opts.max_depth, opts.tolerances.rank_rel)?;
        if !flag.regular {
            return Err(Error::SingularPoint(format!(
                "data point {p:?} has growth {:?}; lift the data to an equiregular structure first",
                flag.growth_vector
            )));
        }
    }
    let rk = RkOptions::with_tol(opts.tolerances.integ_abs, opts.tolerances.integ_rel);
    let n = data.len();
    let mut dirs = Vec::new();
    match direction {
        Direction::Forward => dirs.push(true),
        Direction::Backward => dirs.push(false),
        Direction::Both => {
            dirs.push(true);
            dirs.push(false);
        }
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for w in 0..n.saturating_sub(1) {
        let (a, b) = (w, w + 1);
        let h = data.times[b] - data.times[a];
        for &forward in &dirs {
            let (base_idx, other_idx, u_idx, sign) = if forward {
                (b, a, b, -1.0)
            } else {
                (a, b, a, 1.0)
            };
            let chart = privileged_chart_f64(s, &data.points[base_idx], opts.max_depth)?;
            let nf = nilpotentize(s, &chart)?;
            let y = dilate(&chart, 1.0 / h, &chart.to_chart(&data.points[other_idx]))?;
            let target = flow_const(
                &nf.to_structure(),
                &data.controls[u_idx],
                sign,
                &vec![0.0; s.dim],
                &rk,
            )?;
            let disc = y
                .iter()
                .zip(&target)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            rows.push((h, disc));
        }
    }
    let pos: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, e)| *e > 1e-13)
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    let slope = if pos.len() >= 2 {
        Some(crate::nilpotent::fit_slope(&pos))
    } else {
        None
    };
    // Accept when discrepancies decay with gap size (positive slope), or are
    // uniformly negligible.
    let accept = slope.map(|sl| sl > 0.0).unwrap_or(true)
        && rows.iter().all(|(_, e)| e.is_finite());
    Ok(DilationReport {
        direction,
        rows,
        slope,
        accept,
    })
}

// ---------------------------------------------------------------------------
// Extension.

/// Control defined piecewise on consecutive intervals, with constant-control
/// rays outside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PiecewiseControl {
    pub segments: Vec<Control>,
    /// Constant values used before the first and after the last segment.
    pub left_ray: Vec<f64>,
    pub right_ray: Vec<f64>,
}

impl PiecewiseControl {
    pub fn t0(&self) -> f64 {
        self.segments.first().map(|c| c.t0).unwrap_or(0.0)
    }

    pub fn t1(&self) -> f64 {
        self.segments.last().map(|c| c.t1).unwrap_or(0.0)
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        if self.segments.is_empty() || t <= self.t0() {
            return self.left_ray.clone();
        }
        if t >= self.t1() {
            return self.right_ray.clone();
        }
        for seg in &self.segments {
            if t <= seg.t1 {
                return seg.value(t);
            }
        }
        self.right_ray.clone()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapDiagnostic {
    pub a: f64,
    pub b: f64,
    pub eta_allowed: f64,
    pub eta_used: f64,
    pub endpoint_error: f64,
    pub basis_size: usize,
    pub gap_width: f64,
}

#[derive(Clone, Debug)]
pub struct ExtendOptions {
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Additive budget above the mandatory `|u(b)-u(a)|` in the first eta
    /// stage: `eta_0 = |du| + width*|du| + eta_pad`, doubled on failure.
    pub eta_pad: f64,
    pub eta_doublings: usize,
    pub n_schedule: Vec<usize>,
    /// Length of the constant-control boundary rays.
    pub boundary_pad: f64,
    pub gap_solve_tol: f64,
}

impl Default for ExtendOptions {
    fn default() -> Self {
        ExtendOptions {
            tolerances: Tolerances::default(),
            seed: 0,
            eta_pad: 0.01,
            eta_doublings: 5,
            n_schedule: vec![4, 8, 12],
            boundary_pad: 0.5,
            gap_solve_tol: 1e-9,
        }
    }
}

/// A horizontal extension of the data: piecewise control (continuous across
/// junctions by construction), the integrated trajectory, and per-gap
/// diagnostics.
#[derive(Clone, Debug)]
pub struct ExtensionResult {
    pub control: PiecewiseControl,
    pub gaps: Vec<GapDiagnostic>,
    pub max_point_error: f64,
    pub max_junction_jump: f64,
    pub t_span: (f64, f64),
    segments: Vec<Trajectory>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionSummary {
    pub control: PiecewiseControl,
    pub gaps: Vec<GapDiagnostic>,
    pub max_point_error: f64,
    pub max_junction_jump: f64,
    pub t_span: (f64, f64),
}

impl ExtensionResult {
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let first = self.segments.first().expect("nonempty extension");
        if t <= first.t0() {
            return first.sample(t.max(self.t_span.0));
        }
        for seg in &self.segments {
            if t <= seg.t1() {
                return seg.sample(t);
            }
        }
        self.segments.last().unwrap().sample(t)
    }

    pub fn summary(&self) -> ExtensionSummary {
        ExtensionSummary {
            control: self.control.clone(),
            gaps: self.gaps.clone(),
            max_point_error: self.max_point_error,
            max_junction_jump: self.max_junction_jump,
            t_span: self.t_span,
        }
    }

    /// Uniformly sampled trajectory CSV `t, x1..xd, u1..um`.
    pub fn trajectory_to_csv<W: std::io::Write>(&self, w: W, samples: usize) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.segments[0].nodes[0].point.len();
        let m = self.control.left_ray.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wtr.write_record(&header)?;
        let (t0, t1) = self.t_span;
        for k in 0..=samples {
            let t = t0 + (t1 - t0) * k as f64 / samples as f64;
            let x = self.sample(t);
            let u = self.control.value(t);
            let mut row = vec![format!("{}", t)];
            row.extend(x.iter().map(|v| format!("{}", v)));
            row.extend(u.iter().map(|v| format!("{}", v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Solve one gap: a basis control on `[a, b]` with `v(a) = 0`,
/// `v(b) = u(b) - u(a)` (the linear-ramp coefficient is pinned to the control
/// jump) and endpoint `f(b)`, minimizing a coefficient-norm surrogate via
/// damped minimal-norm Gauss-Newton steps.
#[allow(clippy::too_many_arguments)]
fn solve_gap(
    s: &SRStructure,
    a: f64,
    b: f64,
    fa: &[f64],
    fb: &[f64],
    ua: &[f64],
    ub: &[f64],
    opts: &ExtendOptions,
    rk: &RkOptions,
) -> Result<(Control, GapDiagnostic)> {
    let m = s.rank;
    let d = s.dim;
    let width = b - a;
    let du: Vec<f64> = ub.iter().zip(ua).map(|(x, y)| x - y).collect();
    let du_norm = du.iter().map(|x| x * x).sum::<f64>().sqrt();
    let jets = crate::endpoint::FrameJets::new(s);

    let mut best_residual = f64::INFINITY;
    let mut eta_allowed = du_norm + width * du_norm + opts.eta_pad;
    for doubling in 0..=opts.eta_doublings {
        if doubling > 0 {
            eta_allowed = du_norm + (eta_allowed - du_norm) * 2.0;
        }
        for &n_sines in &opts.n_schedule {
            let nv = n_sines * m;
            let mut c = vec![0.0; nv];
            // Effective control on [a,b]: u(a) + du*tau + sum_k c_k sin(k pi tau).
            let eval_ctrl = |c: &[f64]| -> Control {
                let mut coeffs = vec![du.clone()];
                coeffs.extend((0..n_sines).map(|k| c[k * m..(k + 1) * m].to_vec()));
                Control::basis(a, b, ua.to_vec(), coeffs).expect("shape")
            };
            let endpoint_of = |c: &[f64]| -> Result<Vec<f64>> {
                let ctrl = eval_ctrl(c);
                Ok(chron_exp(s, &ctrl, fa, rk)?.endpoint())
            };
            let mut end = endpoint_of(&c)?;
            let mut err = dist(&end, fb);
            let mut mu = 1e-8;
            for _ in 0..60 {
                if err < opts.gap_solve_tol {
                    break;
                }
                // Sensitivity with respect to the sine coefficients only.
                let cc = c.clone();
                let du2 = du.clone();
                let ua2 = ua.to_vec();
                let u_of_t = move |t: f64| -> Vec<f64> {
                    let tau = ((t - a) / width).clamp(0.0, 1.0);
                    (0..m)
                        .map(|i| {
                            let mut v = ua2[i] + du2[i] * tau;
                            for k in 0..n_sines {
                                v += cc[k * m + i]
                                    * ((k + 1) as f64 * std::f64::consts::PI * tau).sin();
                            }
                            v
                        })
                        .collect()
                };
                let phi = move |k: usize, t: f64| -> f64 {
                    let tau = ((t - a) / width).clamp(0.0, 1.0);
                    ((k + 1) as f64 * std::f64::consts::PI * tau).sin()
                };
                let (_, sens) = crate::endpoint::endpoint_sensitivity_on(
                    &jets, &u_of_t, &[], fa, n_sines, &phi, a, b, rk,
                )?;
                let jac = sens;
                let r = nalgebra::DVector::from_fn(d, |i, _| end[i] - fb[i]);
                let svd = jac.svd(true, true);
                let mut accepted = false;
                for _ in 0..10 {
                    let delta = crate::endpoint::lm_step(&svd, &r, mu);
                    let cand: Vec<f64> = c.iter().zip(delta.iter()).map(|(x, y)| x + y).collect();
                    let end_new = endpoint_of(&cand)?;
                    let err_new = dist(&end_new, fb);
                    if err_new < err {
                        c = cand;
                        end = end_new;
                        err = err_new;
                        mu = (mu / 3.0).max(1e-14);
                        accepted = true;
                        break;
                    }
                    mu *= 5.0;
                }
                if !accepted {
                    break;
                }
            }
            best_residual = best_residual.min(err);
            if err < opts.gap_solve_tol {
                let ctrl = eval_ctrl(&c);
                let eta_used = ctrl.deviation_sup_norm(1024);
                if eta_used <= eta_allowed {
                    return Ok((
                        ctrl,
                        GapDiagnostic {
                            a,
                            b,
                            eta_allowed,
                            eta_used,
                            endpoint_error: err,
                            basis_size: n_sines + 1,
                            gap_width: width,
                        },
                    ));
                }
            }
        }
    }
    Err(Error::GapUnsolvable {
        a,
        b,
        max_eta: eta_allowed,
        best_residual,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Build a horizontal extension of the data across all gaps, plus constant
/// boundary rays. The precondition that the data verified as acceptable is
/// the caller's to enforce (the CLI refuses without `--force`); the solver
/// itself reports an unsolvable gap without deciding whether the budget or
/// the data is at fault.
pub fn extend(s: &SRStructure, data: &WhitneyData, opts: &ExtendOptions) -> Result<ExtensionResult> {
    data.check_domain(s)?;
    let rk = RkOptions::with_tol(opts.tolerances.integ_abs, opts.tolerances.integ_rel);
    let n = data.len();
    let mut segments_ctrl: Vec<Control> = Vec::new();
    let mut gaps = Vec::new();
    // Solve gaps independently (they only share data values).
    let solved: Vec<Result<(Control, GapDiagnostic)>> = (0..n.saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            solve_gap(
                s,
                data.times[i],
                data.times[i + 1],
                &data.points[i],
                &data.points[i + 1],
                &data.controls[i],
                &data.controls[i + 1],
                opts,
                &rk,
            )
        })
        .collect();
    for res in solved {
        let (ctrl, diag) = res?;
        segments_ctrl.push(ctrl);
        gaps.push(diag);
    }

    // Boundary rays as short constant-control segments.
    let pad = opts.boundary_pad.max(1e-6);
    let t_first = data.times[0];
    let t_last = *data.times.last().unwrap();
    let left = Control::constant(s.rank, &data.controls[0], t_first - pad, t_first);
    let right = Control::constant(s.rank, &data.controls[n - 1], t_last, t_last + pad);

    // Integrate the full control, left ray backward from f(t_first), then the
    // gaps in order, then the right ray.
    let mut segments: Vec<Trajectory> = Vec::new();
    let back = Control::constant(s.rank, &data.controls[0], t_first, t_first - pad);
    let back_traj = chron_exp(s, &back, &data.points[0], &rk)?;
    let left_start = back_traj.endpoint();
    segments.push(chron_exp(s, &left, &left_start, &rk)?);
    let mut cursor = data.points[0].clone();
    let mut max_point_error: f64 = 0.0;
    for (i, ctrl) in segments_ctrl.iter().enumerate() {
        let traj = chron_exp(s, ctrl, &cursor, &rk)?;
        cursor = traj.endpoint();
        max_point_error = max_point_error.max(dist(&cursor, &data.points[i + 1]));
        segments.push(traj);
    }
    segments.push(chron_exp(s, &right, &cursor, &rk)?);

    // Junction continuity: the gap controls hit u(a) and u(b) by
    // construction; measure the realized jumps anyway.
    let mut max_junction_jump: f64 = 0.0;
    let all_segs: Vec<&Control> = std::iter::once(&left)
        .chain(segments_ctrl.iter())
        .chain(std::iter::once(&right))
        .collect();
    for w in all_segs.windows(2) {
        let jump = dist(&w[0].value(w[0].t1), &w[1].value(w[1].t0));
        max_junction_jump = max_junction_jump.max(jump);
    }

    let mut all_controls = vec![left];
    all_controls.extend(segments_ctrl);
    all_controls.push(right);
    let control = PiecewiseControl {
        segments: all_controls,
        left_ray: data.controls[0].clone(),
        right_ray: data.controls[n - 1].clone(),
    };
    Ok(ExtensionResult {
        control,
        gaps,
        max_point_error,
        max_junction_jump,
        t_span: (t_first - pad, t_last + pad),
        segments,
    })
}
