//! Lifts and desingularizations: a structure upstairs, a structure
//! downstairs, and a polynomial submersion intertwining their frames exactly.
//!
//! The commutation check `psi_* Xup_i == Xdown_i o psi` is an exact
//! polynomial identity; curve data downstairs is lifted constructively by
//! building a global control that reproduces the data (scaled constant
//! control on most of each gap, a short correction arc at the end) and
//! flowing the upstairs frame with it.

use crate::endpoint::{estimate_dsr, steer, DistanceBudget, FrameJets};
use crate::error::Error;
use crate::flow::{chron_exp, flow_const, Control, RkOptions, Trajectory};
use crate::poly::Multinomial;
use crate::structure::SRStructure;
use crate::whitney::WhitneyData;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A lift: `psi` is a submersion with `psi_* Xup_i = Xdown_i o psi`.
#[derive(Clone, Debug)]
pub struct LiftSpec {
    pub name: String,
    pub upstairs: SRStructure,
    pub downstairs: SRStructure,
    /// `psi`: `downstairs.dim` polynomials in `upstairs.dim` variables.
    pub psi: Vec<Multinomial>,
}

impl LiftSpec {
    pub fn new(
        name: impl Into<String>,
        upstairs: SRStructure,
        downstairs: SRStructure,
        psi: Vec<Multinomial>,
    ) -> Result<Self> {
        if upstairs.rank != downstairs.rank {
            return Err(Error::Lift(format!(
                "rank mismatch: upstairs {} vs downstairs {}",
                upstairs.rank, downstairs.rank
            )));
        }
        if psi.len() != downstairs.dim || psi.iter().any(|p| p.dim() != upstairs.dim) {
            return Err(Error::Lift(
                "psi must map upstairs coordinates onto downstairs coordinates".into(),
            ));
        }
        Ok(LiftSpec {
            name: name.into(),
            upstairs,
            downstairs,
            psi,
        })
    }

    /// Apply `psi` to an upstairs point.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        self.psi.iter().map(|c| c.eval_f64(p)).collect()
    }

    /// Jacobian of `psi` at an upstairs point.
    pub fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.downstairs.dim, self.upstairs.dim, |r, c| {
            self.psi[r].partial(c).expect("index ok").eval_f64(p)
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftCheck {
    pub commutes: bool,
    /// Per-(field, component) residual polynomials of
    /// `psi_* Xup_i - Xdown_i o psi` that are not identically zero.
    pub residuals: Vec<(usize, usize, String)>,
    pub submersion_ok: bool,
    pub min_jacobian_rank: usize,
}

/// Exact commutation check plus a sampled submersion (Jacobian rank) check.
pub fn check_lift(ls: &LiftSpec, rank_tol: f64) -> Result<LiftCheck> {
    let mut residuals = Vec::new();
    for (i, (xu, xd)) in ls
        .upstairs
        .frame
        .iter()
        .zip(&ls.downstairs.frame)
        .enumerate()
    {
        for j in 0..ls.downstairs.dim {
            // (psi_* Xup)_j = Xup(psi_j); (Xdown o psi)_j = Xdown_j(psi(x)).
            let lhs = xu.apply(&ls.psi[j])?;
            let rhs = xd.component(j).substitute(&ls.psi)?;
            let resid = lhs.sub(&rhs)?;
            if !resid.is_zero() {
                residuals.push((i + 1, j + 1, resid.to_string()));
            }
        }
    }
    let pts = match &ls.upstairs.domain {
        Some(b) => b.grid(3),
        None => vec![vec![0.0; ls.upstairs.dim]],
    };
    let mut min_rank = ls.downstairs.dim;
    for p in &pts {
        let jac = ls.jacobian(p);
        let svd = jac.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > rank_tol * smax.max(1e-300))
            .count();
        min_rank = min_rank.min(rank);
    }
    Ok(LiftCheck {
        commutes: residuals.is_empty(),
        residuals,
        submersion_ok: min_rank == ls.downstairs.dim,
        min_jacobian_rank: min_rank,
    })
}

/// Minimal-norm preimage of a downstairs point under `psi`, by Gauss-Newton
/// on `psi(x) = q` with a small norm bias.
pub fn fiber_point(ls: &LiftSpec, q: &[f64]) -> Result<Vec<f64>> {
    let d_up = ls.upstairs.dim;
    let mut x = vec![0.0; d_up];
    for _ in 0..200 {
        let fx = ls.project(&x);
        let r = DVector::from_fn(ls.downstairs.dim, |i, _| fx[i] - q[i]);
        if r.norm() < 1e-12 {
            break;
        }
        let jac = ls.jacobian(&x);
        let svd = jac.svd(true, true);
        let step = svd.solve(&r, 1e-12).map_err(|e| Error::Lift(e.into()))?;
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
    }
    let fx = ls.project(&x);
    let err = fx
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err > 1e-8 {
        return Err(Error::Lift(format!(
            "could not find a fiber point over {q:?} (residual {err:.3e})"
        )));
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftGapLog {
    pub a: f64,
    pub b: f64,
    pub defect: f64,
    /// Duration of the correction arc (`defect / M`).
    pub correction_span: f64,
    pub correction_sup_norm: f64,
}

#[derive(Debug)]
pub struct LiftedData {
    pub upstairs: WhitneyData,
    pub m_constant: f64,
    pub gaps: Vec<LiftGapLog>,
    pub trajectory: Trajectory,
}

/// Lift downstairs curve data through the submersion.
///
/// A global downstairs control is built gap by gap: on `[a, b - defect/M)`
/// the constant `u(a)` scaled by `(b-a)/(b-a-defect/M)` (so the scaled flow
/// reaches `e^{(b-a) X_{u(a)}} f(a)` early), then a correction control of
/// norm on the order of `M` steering to `f(b)` on the final sub-interval.
/// `M` is twice the sup of gap-normalized defects (estimated distances).
/// The upstairs frame is then flowed with this control from the fiber point
/// `p0_up` and sampled at the data times; the control values at the data
/// times are unchanged.
pub fn lift_whitney_data(
    ls: &LiftSpec,
    data: &WhitneyData,
    p0_up: &[f64],
    budget: &DistanceBudget,
    seed: u64,
) -> Result<LiftedData> {
    let check = check_lift(ls, 1e-9)?;
    if !check.commutes || !check.submersion_ok {
        return Err(Error::Lift(
            "lift does not commute (or psi is not a submersion); run check first".into(),
        ));
    }
    let down = &ls.downstairs;
    let proj0 = ls.project(p0_up);
    let err0 = proj0
        .iter()
        .zip(&data.points[0])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err0 > 1e-8 {
        return Err(Error::Lift(format!(
            "psi(p0_up) = {proj0:?} does not match the first data point"
        )));
    }
    let rk = RkOptions::with_tol(1e-10, 1e-10);
    let n = data.len();

    // Gap defects and the sup constant M.
    let mut defects = vec![0.0; n.saturating_sub(1)];
    for i in 0..n - 1 {
        let (a, b) = (data.times[i], data.times[i + 1]);
        let reach = flow_const(down, &data.controls[i], b - a, &data.points[i], &rk)?;
        let gap = dist(&reach, &data.points[i + 1]);
        defects[i] = if gap < 1e-11 {
            0.0
        } else {
            estimate_dsr(down, &reach, &data.points[i + 1], budget, seed ^ i as u64)?.upper
        };
    }
    let m_constant = defects
        .iter()
        .zip(data.times.windows(2))
        .map(|(d, w)| 2.0 * d / (w[1] - w[0]))
        .fold(0.0f64, f64::max)
        .max(1e-9);

    // Per-gap piecewise control downstairs; flown upstairs.
    let jets_down = FrameJets::new(down);
    let mut cursor_up = p0_up.to_vec();
    let mut up_points = vec![p0_up.to_vec()];
    let mut gaps = Vec::new();
    let mut traj_parts: Vec<Trajectory> = Vec::new();
    for i in 0..n - 1 {
        let (a, b) = (data.times[i], data.times[i + 1]);
        let width = b - a;
        let defect = defects[i];
        let t_corr = defect / m_constant; // duration of the correction arc
        let t_main = width - t_corr;
        let scale = width / t_main;
        let u_scaled: Vec<f64> = data.controls[i].iter().map(|u| u * scale).collect();

        // Main arc upstairs.
        let main = Control::constant(down.rank, &u_scaled, a, a + t_main);
        let traj_main = chron_exp(&ls.upstairs, &main, &cursor_up, &rk)?;
        cursor_up = traj_main.endpoint();
        traj_parts.push(traj_main);
        let mut corr_sup = 0.0;
        if t_corr > 0.0 {
            // Correction downstairs: steer the reached point to f(b) in
            // normalized time, then replay upstairs over [b - t_corr, b].
            let reach_down = ls.project(&cursor_up);
            let sol = steer(
                down,
                &jets_down,
                &reach_down,
                &data.points[i + 1],
                budget,
                &vec![0.0; budget.knots * down.rank],
                &rk,
            )?;
            if sol.gap > budget.gap_target.max(1e-8) {
                return Err(Error::Lift(format!(
                    "gap [{a}, {b}]: correction shooting failed (endpoint gap {:.3e})",
                    sol.gap
                )));
            }
            // Replay the normalized-time control at speed 1/t_corr, keeping
            // the exact knot values so the two parametrizations trace the
            // same curve.
            let crate::flow::ControlKind::Sampled { values } = &sol.control.kind else {
                return Err(Error::Lift("steer returned a non-sampled control".into()));
            };
            let corr_vals: Vec<Vec<f64>> = values
                .iter()
                .map(|row| row.iter().map(|v| v / t_corr).collect())
                .collect();
            corr_sup = corr_vals
                .iter()
                .map(|v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let corr = Control::sampled(b - t_corr, b, corr_vals)?;
            let traj_corr = chron_exp(&ls.upstairs, &corr, &cursor_up, &rk)?;
            cursor_up = traj_corr.endpoint();
            traj_parts.push(traj_corr);
        }
        gaps.push(LiftGapLog {
            a,
            b,
            defect,
            correction_span: t_corr,
            correction_sup_norm: corr_sup,
        });
        up_points.push(cursor_up.clone());
    }

    if traj_parts.is_empty() {
        // Single-point data: a zero-length trajectory at the fiber point.
        let rest = Control::constant(down.rank, &data.controls[0], data.times[0], data.times[0]);
        traj_parts.push(chron_exp(&ls.upstairs, &rest, &cursor_up, &rk)?);
    }
    let upstairs = WhitneyData::new(data.times.clone(), up_points, data.controls.clone())?;
    let trajectory = Trajectory::concat(traj_parts);
    Ok(LiftedData {
        upstairs,
        m_constant,
        gaps,
        trajectory,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Project an upstairs trajectory downstairs pointwise (the control is
/// unchanged because the frames are psi-related).
pub fn project_curve(ls: &LiftSpec, traj: &Trajectory) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    traj.nodes
        .iter()
        .map(|nd| (nd.t, ls.project(&nd.point), nd.control.clone()))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceComparison {
    pub down_upper: f64,
    pub up_upper: f64,
    /// Uncertified downstairs lower proxy, when a chart at the projected
    /// source exists.
    pub down_lower_proxy: Option<f64>,
    /// Set only when the downstairs lower proxy exceeds the upstairs upper
    /// bound, which would contradict the projection inequality.
    pub violation: bool,
}

/// Compare distance estimates across the lift: the projection can only
/// shrink distances, so `d_down <= d_up`. Violation is flagged conservatively
/// (only a lower-bound proxy beating a certified upper bound counts).
pub fn project_distance_check(
    ls: &LiftSpec,
    p_up: &[f64],
    q_up: &[f64],
    budget: &DistanceBudget,
    seed: u64,
) -> Result<DistanceComparison> {
    let (pd, qd) = (ls.project(p_up), ls.project(q_up));
    let up = estimate_dsr(&ls.upstairs, p_up, q_up, budget, seed)?;
    let down = estimate_dsr(&ls.downstairs, &pd, &qd, budget, seed ^ 1)?;
    let proxy = crate::nilpotent::privileged_chart_f64(&ls.downstairs, &pd, 6)
        .ok()
        .map(|ch| crate::nilpotent::pseudo_norm(&ch, &ch.to_chart(&qd)));
    let violation = proxy.map(|lp| lp > up.upper).unwrap_or(false);
    Ok(DistanceComparison {
        down_upper: down.upper,
        up_upper: up.upper,
        down_lower_proxy: proxy,
        violation,
    })
}
