//! Controlled flows of horizontal vector fields.
//!
//! The central operation is the flow of the time-dependent field
//! `sum_i u_i(t) X_i` (the chronological exponential of control theory),
//! integrated adaptively with dense output. The module also provides the
//! constant-field flow, flow Jacobians, the truncated `exp(sigma ad_X)`
//! series with its remainder-bound diagnostic, and a two-route validator for
//! the variation-of-constants formula.

pub mod rk;

pub use rk::{RkNode, RkOptions, RkSolution, RkStats};

use crate::error::Error;
use crate::poly::{seminorm, CompiledField, CompiledPoly, Rat, VectorField};
use crate::structure::{DomainBox, SRStructure};
use crate::Result;
use nalgebra::DMatrix;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

/// Continuous control signal on an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ControlKind {
    /// Values on a uniform time grid, piecewise-linear in between.
    Sampled { values: Vec<Vec<f64>> },
    /// Coefficients over the basis `phi_1(t) = tau`,
    /// `phi_k(t) = sin((k-1) pi tau)` with `tau = (t-t0)/(t1-t0)`; every
    /// basis function vanishes at `t0`, so the control equals `offset` there.
    Basis { coeffs: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub t0: f64,
    pub t1: f64,
    pub m: usize,
    pub offset: Vec<f64>,
    pub kind: ControlKind,
}

impl Control {
    pub fn constant(m: usize, u: &[f64], t0: f64, t1: f64) -> Self {
        assert_eq!(u.len(), m);
        Control {
            t0,
            t1,
            m,
            offset: u.to_vec(),
            kind: ControlKind::Sampled {
                values: vec![vec![0.0; m]; 2],
            },
        }
    }

    pub fn sampled(t0: f64, t1: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "sampled control needs at least two knots".into(),
            ));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::DimensionMismatch(
                "ragged sampled control values".into(),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sampled control has non-finite values".into(),
            ));
        }
        Ok(Control {
            t0,
            t1,
            m,
            offset: vec![0.0; m],
            kind: ControlKind::Sampled { values },
        })
    }

    pub fn basis(t0: f64, t1: f64, offset: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let m = offset.len();
        if coeffs.iter().any(|c| c.len() != m) {
            return Err(Error::DimensionMismatch(
                "basis coefficient rows must have length m".into(),
            ));
        }
        Ok(Control {
            t0,
            t1,
            m,
            offset,
            kind: ControlKind::Basis { coeffs },
        })
    }

    pub fn basis_size(&self) -> usize {
        match &self.kind {
            ControlKind::Basis { coeffs } => coeffs.len(),
            ControlKind::Sampled { values } => values.len(),
        }
    }

    /// Control value at `t` (clamped to the interval).
    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = self.offset.clone();
        let span = self.t1 - self.t0;
        let tau = if span == 0.0 {
            0.0
        } else {
            ((t - self.t0) / span).clamp(0.0, 1.0)
        };
        match &self.kind {
            ControlKind::Sampled { values } => {
                let n = values.len();
                let x = tau * (n - 1) as f64;
                let i = (x.floor() as usize).min(n - 2);
                let w = x - i as f64;
                for k in 0..self.m {
                    out[k] += (1.0 - w) * values[i][k] + w * values[i + 1][k];
                }
            }
            ControlKind::Basis { coeffs } => {
                for (k, c) in coeffs.iter().enumerate() {
                    let phi = basis_fn(k, tau);
                    for (o, ck) in out.iter_mut().zip(c) {
                        *o += phi * ck;
                    }
                }
            }
        }
        out
    }

    /// Interior knots that the integrator should not step across.
    pub fn knots(&self) -> Vec<f64> {
        match &self.kind {
            ControlKind::Sampled { values } => {
                let n = values.len();
                (1..n - 1)
                    .map(|i| self.t0 + (self.t1 - self.t0) * i as f64 / (n - 1) as f64)
                    .collect()
            }
            ControlKind::Basis { .. } => Vec::new(),
        }
    }

    /// Sup norm over a fine grid of the deviation from `offset` (the `v` in
    /// `u + v`).
    pub fn deviation_sup_norm(&self, samples: usize) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=samples {
            let t = self.t0 + (self.t1 - self.t0) * i as f64 / samples as f64;
            let v = self.value(t);
            let norm = v
                .iter()
                .zip(&self.offset)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(norm);
        }
        best
    }

    /// Export effective values (offset included) as CSV `t, u1..um`.
    pub fn to_csv<W: std::io::Write>(&self, w: W, samples: usize) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.m).map(|i| format!("u{i}")));
        wtr.write_record(&header)?;
        for i in 0..=samples {
            let t = self.t0 + (self.t1 - self.t0) * i as f64 / samples as f64;
            let mut row = vec![format!("{}", t)];
            row.extend(self.value(t).iter().map(|v| format!("{}", v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Import a sampled control from CSV `t, u1..um` on a uniform grid.
    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || headers.get(0) != Some("t") {
            return Err(Error::Parse(
                "control CSV must start with a `t` column".into(),
            ));
        }
        let m = headers.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t: f64 = rec
                .get(0)
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| Error::Parse("bad time value in control CSV".into()))?;
            let row: std::result::Result<Vec<f64>, _> =
                (1..=m).map(|i| rec.get(i).unwrap().trim().parse()).collect();
            times.push(t);
            values
                .push(row.map_err(|_| Error::Parse("bad control value in control CSV".into()))?);
        }
        if times.len() < 2 {
            return Err(Error::Parse("control CSV needs at least two rows".into()));
        }
        let t0 = times[0];
        let t1 = *times.last().unwrap();
        let h = (t1 - t0) / (times.len() - 1) as f64;
        for (i, &t) in times.iter().enumerate() {
            if (t - (t0 + h * i as f64)).abs() > 1e-9 * (t1 - t0).abs().max(1.0) {
                return Err(Error::Parse(
                    "control CSV must be sampled on a uniform time grid".into(),
                ));
            }
        }
        Control::sampled(t0, t1, values)
    }
}

/// Basis function `k` at normalized time `tau` (shared with the endpoint
/// machinery so differentials and controls agree exactly).
pub(crate) fn basis_fn(k: usize, tau: f64) -> f64 {
    if k == 0 {
        tau
    } else {
        (k as f64 * std::f64::consts::PI * tau).sin()
    }
}

/// Integrator statistics echoed into reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

/// Dense-output solution of a controlled flow, with control values recorded
/// at the accepted nodes.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub nodes: Vec<TrajectoryNode>,
    pub stats: IntegratorStats,
    sol: RkSolution,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryNode {
    pub t: f64,
    pub point: Vec<f64>,
    pub control: Vec<f64>,
}

impl Trajectory {
    fn from_solution(sol: RkSolution, ctrl: impl Fn(f64) -> Vec<f64>, opts: &RkOptions) -> Self {
        let nodes = sol
            .nodes
            .iter()
            .map(|nd| TrajectoryNode {
                t: nd.t,
                point: nd.y.clone(),
                control: ctrl(nd.t),
            })
            .collect();
        Trajectory {
            nodes,
            stats: IntegratorStats {
                accepted_steps: sol.stats.accepted,
                rejected_steps: sol.stats.rejected,
                abs_tol: opts.abs_tol,
                rel_tol: opts.rel_tol,
            },
            sol,
        }
    }

    /// Concatenate trajectories that share junction points (the first node
    /// of each later part duplicates the last node of the previous one).
    pub fn concat(parts: Vec<Trajectory>) -> Trajectory {
        assert!(!parts.is_empty(), "cannot concatenate zero trajectories");
        let mut it = parts.into_iter();
        let mut acc = it.next().unwrap();
        for part in it {
            let skip = usize::from(!acc.sol.nodes.is_empty());
            acc.sol.nodes.extend(part.sol.nodes.into_iter().skip(skip));
            acc.nodes.extend(part.nodes.into_iter().skip(skip));
            acc.sol.stats.accepted += part.sol.stats.accepted;
            acc.sol.stats.rejected += part.sol.stats.rejected;
            acc.stats.accepted_steps += part.stats.accepted_steps;
            acc.stats.rejected_steps += part.stats.rejected_steps;
        }
        acc
    }

    pub fn t0(&self) -> f64 {
        self.sol.t0()
    }

    pub fn t1(&self) -> f64 {
        self.sol.t1()
    }

    pub fn endpoint(&self) -> Vec<f64> {
        self.sol.endpoint().to_vec()
    }

    /// Dense-output query (cubic Hermite on the bracketing step).
    pub fn sample(&self, t: f64) -> Vec<f64> {
        self.sol.sample(t)
    }

    /// Export as CSV `t, x1..xd, u1..um`.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let d = self.nodes[0].point.len();
        let m = self.nodes[0].control.len();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wtr.write_record(&header)?;
        for nd in &self.nodes {
            let mut row = vec![format!("{}", nd.t)];
            row.extend(nd.point.iter().map(|v| format!("{}", v)));
            row.extend(nd.control.iter().map(|v| format!("{}", v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_domain(sol: &RkSolution, domain: Option<&DomainBox>) -> Result<()> {
    if let Some(b) = domain {
        for nd in &sol.nodes {
            if !b.contains(&nd.y) {
                return Err(Error::DomainExit { t: nd.t });
            }
        }
    }
    Ok(())
}

/// Flow of `sum_i u_i(t) X_i` from `p0` over the control interval
/// (the chronological exponential). Reverse-time integration is requested by
/// a control with `t1 < t0`.
pub fn chron_exp(
    s: &SRStructure,
    ctrl: &Control,
    p0: &[f64],
    opts: &RkOptions,
) -> Result<Trajectory> {
    if ctrl.m != s.rank {
        return Err(Error::DimensionMismatch(format!(
            "control has {} channels for rank {}",
            ctrl.m, s.rank
        )));
    }
    if p0.len() != s.dim {
        return Err(Error::DimensionMismatch(format!(
            "start point has {} coordinates on R^{}",
            p0.len(),
            s.dim
        )));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite start point".into()));
    }
    let fields: Vec<CompiledField> = s.frame.iter().map(|f| f.compile()).collect();
    let d = s.dim;
    let mut fx = vec![0.0; d];
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let u = ctrl.value(t);
        dy.iter_mut().for_each(|v| *v = 0.0);
        for (ui, field) in u.iter().zip(&fields) {
            if *ui == 0.0 {
                continue;
            }
            field.eval_into(y, &mut fx);
            for (dyi, fxi) in dy.iter_mut().zip(&fx) {
                *dyi += ui * fxi;
            }
        }
    };
    let sol = rk::integrate(rhs, ctrl.t0, ctrl.t1, p0, &ctrl.knots(), opts)?;
    check_domain(&sol, s.domain.as_ref())?;
    Ok(Trajectory::from_solution(sol, |t| ctrl.value(t), opts))
}

/// Constant-control flow `e^{t X_u}(p0)`; negative `t` integrates backward.
pub fn flow_const(
    s: &SRStructure,
    u: &[f64],
    t: f64,
    p0: &[f64],
    opts: &RkOptions,
) -> Result<Vec<f64>> {
    let ctrl = Control::constant(s.rank, u, 0.0, t);
    if t == 0.0 {
        return Ok(p0.to_vec());
    }
    Ok(chron_exp(s, &ctrl, p0, opts)?.endpoint())
}

/// Compiled field together with its compiled Jacobian entries.
pub struct FieldJet {
    pub field: CompiledField,
    /// `jac[j][l] = d (X)_j / d x_l`.
    pub jac: Vec<Vec<CompiledPoly>>,
    pub dim: usize,
}

impl FieldJet {
    pub fn new(v: &VectorField) -> Self {
        let dim = v.dim();
        let jac = (0..dim)
            .map(|j| {
                (0..dim)
                    .map(|l| v.component(j).partial(l).expect("index ok").compile())
                    .collect()
            })
            .collect();
        FieldJet {
            field: v.compile(),
            jac,
            dim,
        }
    }
}

/// Flow `e^{t X}(y0)` together with the Jacobian of the flow map at `y0`,
/// via the matrix variational equation.
pub fn flow_with_jacobian(
    jet: &FieldJet,
    t: f64,
    y0: &[f64],
    opts: &RkOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = jet.dim;
    // State: [y, J column-major].
    let mut state = vec![0.0; d + d * d];
    state[..d].copy_from_slice(y0);
    for i in 0..d {
        state[d + i * d + i] = 1.0;
    }
    let mut a = vec![0.0; d * d];
    let rhs = |_t: f64, s: &[f64], ds: &mut [f64]| {
        let (y, jflat) = s.split_at(d);
        jet.field.eval_into(y, &mut ds[..d]);
        for j in 0..d {
            for l in 0..d {
                a[j * d + l] = jet.jac[j][l].eval(y);
            }
        }
        // dJ = A J, column by column.
        for col in 0..d {
            for row in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += a[row * d + l] * jflat[col * d + l];
                }
                ds[d + col * d + row] = acc;
            }
        }
    };
    let sol = rk::integrate(rhs, 0.0, t, &state, &[], opts)?;
    let end = sol.endpoint();
    let y = end[..d].to_vec();
    let jac = DMatrix::from_fn(d, d, |r, c| end[d + c * d + r]);
    Ok((y, jac))
}

/// Numeric pushforward `(e^{sigma X})_* Y` evaluated at `w`:
/// flow `w` back, evaluate `Y` there and push through the flow Jacobian.
pub fn pushforward_at(
    x_jet: &FieldJet,
    y_field: &CompiledField,
    sigma: f64,
    w: &[f64],
    opts: &RkOptions,
) -> Result<Vec<f64>> {
    let back = flow_with_jacobian(x_jet, -sigma, w, opts)?.0;
    let (fwd_end, jac) = flow_with_jacobian(x_jet, sigma, &back, opts)?;
    debug_assert!(fwd_end
        .iter()
        .zip(w)
        .all(|(a, b)| (a - b).abs() < 1e-6 * (1.0 + b.abs())));
    let yv = y_field.eval(&back);
    let yv = nalgebra::DVector::from_vec(yv);
    Ok((jac * yv).iter().copied().collect())
}

/// Truncated series `Y + sum_{k=1}^{N-1} sigma^k/k! ad_X^k(Y)` (exact), and
/// the remainder-bound diagnostic evaluated with grid seminorms on the box
/// (the constant in the bound is taken as 1 and is heuristic; only the
/// `O(sigma^N)` shape is meaningful).
pub fn ad_series(
    x: &VectorField,
    y: &VectorField,
    sigma: &Rat,
    n: usize,
    lo: &[f64],
    hi: &[f64],
    grid: usize,
) -> Result<(VectorField, f64)> {
    if n < 1 {
        return Err(Error::InvalidArgument("ad_series needs N >= 1".into()));
    }
    let mut acc = y.clone();
    let mut bracket = y.clone();
    let mut factorial = Rat::from_integer(1.into());
    let mut sig_pow = Rat::from_integer(1.into());
    for k in 1..n {
        bracket = crate::structure::lie_bracket(x, &bracket)?;
        factorial = factorial * Rat::from_integer(k.into());
        sig_pow *= sigma;
        acc = acc.add(&bracket.scale(&(sig_pow.clone() / factorial.clone())))?;
    }
    let sig = sigma.to_f64().unwrap_or(f64::NAN).abs();
    let x1 = seminorm(x, 1, lo, hi, grid);
    let xn = seminorm(x, n, lo, hi, grid);
    let yn = seminorm(y, n, lo, hi, grid);
    let mut nfact = 1.0;
    for k in 1..=n {
        nfact *= k as f64;
    }
    let bound = (1.0 / nfact) * (sig * x1).exp() * sig.powi(n as i32) * xn.powi(n as i32) * yn;
    Ok((acc, bound))
}

/// Two-route check of the constant-`X` variation-of-constants formula.
///
/// Left route: endpoint of the flow of `X + Y_t` over `[0, t]`.
/// Right route: flow of the pushforward field `exp((tau - t) ad_X) Y_tau`
/// (realized by the `ad` series truncated at `n_trunc`), started from
/// `e^{tX}(p0)`. Returns the endpoint discrepancy norm.
pub fn variation_check(
    x: &VectorField,
    frame: &[VectorField],
    y: &Control,
    p0: &[f64],
    t: f64,
    n_trunc: usize,
    domain: Option<&DomainBox>,
    opts: &RkOptions,
) -> Result<f64> {
    let d = x.dim();
    let xc = x.compile();
    let frame_c: Vec<CompiledField> = frame.iter().map(|f| f.compile()).collect();

    // Left: flow of X + Y_tau.
    let mut fx = vec![0.0; d];
    let rhs_left = |tau: f64, yv: &[f64], dy: &mut [f64]| {
        xc.eval_into(yv, dy);
        let c = y.value(tau);
        for (ci, f) in c.iter().zip(&frame_c) {
            if *ci == 0.0 {
                continue;
            }
            f.eval_into(yv, &mut fx);
            for (dyi, fxi) in dy.iter_mut().zip(&fx) {
                *dyi += ci * fxi;
            }
        }
    };
    let left = rk::integrate(rhs_left, 0.0, t, p0, &y.knots(), opts)?;
    check_domain(&left, domain)?;
    let left_end = left.endpoint().to_vec();

    // Right: precompute ad_X^k X_i symbolically, flow the series field from
    // e^{tX}(p0).
    let mut brackets: Vec<Vec<CompiledField>> = Vec::with_capacity(frame.len());
    for f in frame {
        let mut row = Vec::with_capacity(n_trunc);
        let mut cur = f.clone();
        row.push(cur.compile());
        for _ in 1..n_trunc {
            cur = crate::structure::lie_bracket(x, &cur)?;
            row.push(cur.compile());
        }
        brackets.push(row);
    }
    let start = rk::integrate(
        |_tau, yv, dy| xc.eval_into(yv, dy),
        0.0,
        t,
        p0,
        &[],
        opts,
    )?;
    check_domain(&start, domain)?;
    let mut fx2 = vec![0.0; d];
    let rhs_right = |tau: f64, yv: &[f64], dy: &mut [f64]| {
        let c = y.value(tau);
        dy.iter_mut().for_each(|v| *v = 0.0);
        let sigma = tau - t;
        for (ci, row) in c.iter().zip(&brackets) {
            if *ci == 0.0 {
                continue;
            }
            let mut coeff = 1.0;
            for (k, b) in row.iter().enumerate() {
                if k > 0 {
                    coeff *= sigma / k as f64;
                }
                b.eval_into(yv, &mut fx2);
                for (dyi, fxi) in dy.iter_mut().zip(&fx2) {
                    *dyi += ci * coeff * fxi;
                }
            }
        }
    };
    let right = rk::integrate(rhs_right, 0.0, t, start.endpoint(), &y.knots(), opts)?;
    check_domain(&right, domain)?;
    let resid: f64 = left_end
        .iter()
        .zip(right.endpoint())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(resid)
}
