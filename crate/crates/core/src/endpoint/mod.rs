//! Endpoint maps and their analysis: differentials by the variational
//! equation, strong-pliability certificates by Gauss-Newton projection onto
//! the endpoint level set, Goh/Legendre bilinear forms along transported
//! covectors, bracket-span and convex-cone sufficient conditions, and
//! Carnot-Caratheodory distance estimation by a penalty-continued direct
//! method.

mod nnls;

pub use nnls::{nnls, NnlsSolution};

use crate::error::Error;
use crate::flow::{basis_fn, flow_with_jacobian, rk, Control, FieldJet, RkOptions};
use crate::nilpotent::{pseudo_norm, NilpotentFrame, PrivilegedChart};
use crate::poly::{rat_from_f64, CompiledField, CompiledPoly, VectorField};
use crate::structure::{lie_bracket, SRStructure};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Sensitivity integration.

/// Compiled frame with compiled Jacobians, shared by all solvers here.
pub struct FrameJets {
    fields: Vec<CompiledField>,
    /// `jacs[i][j][l] = d (X_i)_j / d x_l`.
    jacs: Vec<Vec<Vec<CompiledPoly>>>,
    d: usize,
    m: usize,
}

impl FrameJets {
    pub fn new(s: &SRStructure) -> Self {
        let d = s.dim;
        let jacs = s
            .frame
            .iter()
            .map(|f| {
                (0..d)
                    .map(|j| {
                        (0..d)
                            .map(|l| f.component(j).partial(l).expect("index ok").compile())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FrameJets {
            fields: s.frame.iter().map(|f| f.compile()).collect(),
            jacs,
            d,
            m: s.rank,
        }
    }
}

/// Integrate the controlled flow together with its sensitivity to control
/// perturbations along `n_funcs` scalar basis functions per channel.
///
/// Directions are indexed `c = k * m + i` (basis function `k`, channel `i`);
/// the sensitivity block solves `S_c' = A(t) S_c + phi_k(t) X_i(y)` with
/// `A = sum_i u_i(t) DX_i`, which is the variational equation for the
/// directional derivative of the endpoint.
fn endpoint_with_sensitivity(
    jets: &FrameJets,
    u_of_t: &(dyn Fn(f64) -> Vec<f64> + Sync),
    knots: &[f64],
    p0: &[f64],
    n_funcs: usize,
    phi: &(dyn Fn(usize, f64) -> f64 + Sync),
    opts: &RkOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    endpoint_sensitivity_on(jets, u_of_t, knots, p0, n_funcs, phi, 0.0, 1.0, opts)
}

/// As [`endpoint_with_sensitivity`], over an arbitrary interval `[t0, t1]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn endpoint_sensitivity_on(
    jets: &FrameJets,
    u_of_t: &(dyn Fn(f64) -> Vec<f64> + Sync),
    knots: &[f64],
    p0: &[f64],
    n_funcs: usize,
    phi: &(dyn Fn(usize, f64) -> f64 + Sync),
    t0: f64,
    t1: f64,
    opts: &RkOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = jets.d;
    let m = jets.m;
    let ncols = n_funcs * m;
    let mut state = vec![0.0; d * (1 + ncols)];
    state[..d].copy_from_slice(p0);

    let mut fvals = vec![0.0; m * d];
    let mut amat = vec![0.0; d * d];
    let mut phis = vec![0.0; n_funcs];
    let rhs = |t: f64, st: &[f64], ds: &mut [f64]| {
        let y = &st[..d];
        let u = u_of_t(t);
        for (i, f) in jets.fields.iter().enumerate() {
            f.eval_into(y, &mut fvals[i * d..(i + 1) * d]);
        }
        for v in ds[..d].iter_mut() {
            *v = 0.0;
        }
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            for j in 0..d {
                ds[j] += ui * fvals[i * d + j];
            }
        }
        for j in 0..d {
            for l in 0..d {
                let mut acc = 0.0;
                for (i, ui) in u.iter().enumerate() {
                    if *ui != 0.0 {
                        acc += ui * jets.jacs[i][j][l].eval(y);
                    }
                }
                amat[j * d + l] = acc;
            }
        }
        for (k, p) in phis.iter_mut().enumerate() {
            *p = phi(k, t);
        }
        for c in 0..ncols {
            let (k, i) = (c / m, c % m);
            let s_c = &st[d * (1 + c)..d * (2 + c)];
            let out = &mut ds[d * (1 + c)..d * (2 + c)];
            for j in 0..d {
                let mut acc = phis[k] * fvals[i * d + j];
                for l in 0..d {
                    acc += amat[j * d + l] * s_c[l];
                }
                out[j] = acc;
            }
        }
    };
    let sol = rk::integrate(rhs, t0, t1, &state, knots, opts)?;
    let end = sol.endpoint();
    let endpoint = end[..d].to_vec();
    let sens = DMatrix::from_fn(d, ncols, |r, c| end[d * (1 + c) + r]);
    Ok((endpoint, sens))
}

// ---------------------------------------------------------------------------
// Endpoint problems over basis controls.

/// The endpoint map `v -> (flow endpoint of X_{u+v} over [0,1], v(1))` on
/// finitely parametrized controls.
#[derive(Clone, Debug)]
pub struct EndpointProblem {
    pub structure: SRStructure,
    pub base: Vec<f64>,
    pub u: Vec<f64>,
    pub basis_size: usize,
}

impl EndpointProblem {
    pub fn new(
        structure: SRStructure,
        base: Vec<f64>,
        u: Vec<f64>,
        basis_size: usize,
    ) -> Result<Self> {
        if basis_size < 1 {
            return Err(Error::InvalidArgument("basis size must be >= 1".into()));
        }
        if base.len() != structure.dim || u.len() != structure.rank {
            return Err(Error::DimensionMismatch(
                "endpoint problem base/control dimensions".into(),
            ));
        }
        Ok(EndpointProblem {
            structure,
            base,
            u,
            basis_size,
        })
    }

    /// Problem on a nilpotent approximation, based at the origin.
    pub fn for_nilpotent(nf: &NilpotentFrame, u: Vec<f64>, basis_size: usize) -> Result<Self> {
        let d = nf.dim();
        EndpointProblem::new(nf.to_structure(), vec![0.0; d], u, basis_size)
    }

    /// Build the control `u + v` from basis coefficients `coeffs[k][i]`.
    pub fn control(&self, coeffs: Vec<Vec<f64>>) -> Control {
        Control::basis(0.0, 1.0, self.u.clone(), coeffs).expect("coefficient shape")
    }

    fn zero_control(&self) -> Control {
        self.control(vec![vec![0.0; self.structure.rank]; self.basis_size])
    }
}

/// Endpoint map value: `(flow endpoint, v(1))`. The control's offset is the
/// problem's `u`; its deviation is `v`.
pub fn endpoint_map(prob: &EndpointProblem, v: &Control, opts: &RkOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let traj = crate::flow::chron_exp(&prob.structure, v, &prob.base, opts)?;
    let v1: Vec<f64> = v
        .value(v.t1)
        .iter()
        .zip(&v.offset)
        .map(|(a, b)| a - b)
        .collect();
    Ok((traj.endpoint(), v1))
}

/// Differential of the endpoint map at `v` over the coefficient space,
/// `(d+m) x (N*m)`: the top block by the variational equation, the bottom
/// block the linear map `w -> w(1)`.
pub fn endpoint_differential(
    prob: &EndpointProblem,
    v: &Control,
    opts: &RkOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let jets = FrameJets::new(&prob.structure);
    let (d, m, n) = (prob.structure.dim, prob.structure.rank, prob.basis_size);
    let u_of_t = |t: f64| v.value(t);
    let (endpoint, sens) = endpoint_with_sensitivity(
        &jets,
        &u_of_t,
        &v.knots(),
        &prob.base,
        n,
        &|k, t| basis_fn(k, t),
        opts,
    )?;
    let mut mat = DMatrix::zeros(d + m, n * m);
    mat.view_mut((0, 0), (d, n * m)).copy_from(&sens);
    for k in 0..n {
        let phi1 = basis_fn(k, 1.0);
        for i in 0..m {
            mat[(d + i, k * m + i)] = phi1;
        }
    }
    Ok((endpoint, mat))
}

// ---------------------------------------------------------------------------
// Strong pliability.

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmersionCertificate {
    /// The found control `u + v` (offset `u`, basis deviation `v`).
    pub control: Control,
    /// `||v||_inf` over a fine grid.
    pub sup_norm: f64,
    /// `||F^u(v) - F^u(0)||`.
    pub residual: f64,
    /// Singular values of the coefficient-space differential, descending.
    pub singular_values: Vec<f64>,
    pub basis_size: usize,
    pub verdict: String,
    pub submersion_tol: f64,
    pub residual_tol: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PliabilityFailure {
    pub best_sigma_ratio: f64,
    pub best_residual: f64,
    pub restarts: usize,
    pub basis_sizes_tried: Vec<usize>,
    pub note: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum PliabilityOutcome {
    Certificate(SubmersionCertificate),
    Failure(PliabilityFailure),
}

impl PliabilityOutcome {
    pub fn certificate(&self) -> Option<&SubmersionCertificate> {
        match self {
            PliabilityOutcome::Certificate(c) => Some(c),
            PliabilityOutcome::Failure(_) => None,
        }
    }
}

/// Evaluate the pliability residual `[G(v) - G0; v(1)]` at coefficients `c`.
fn pliability_residual(
    prob: &EndpointProblem,
    g0: &[f64],
    coeffs: &[f64],
    opts: &RkOptions,
) -> Result<(DVector<f64>, Control)> {
    let (d, m, n) = (prob.structure.dim, prob.structure.rank, prob.basis_size);
    let ctrl = prob.control(unflatten(coeffs, n, m));
    let (end, v1) = endpoint_map(prob, &ctrl, opts)?;
    let mut r = DVector::zeros(d + m);
    for j in 0..d {
        r[j] = end[j] - g0[j];
    }
    for i in 0..m {
        r[d + i] = v1[i];
    }
    Ok((r, ctrl))
}

fn unflatten(c: &[f64], n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|k| c[k * m..(k + 1) * m].to_vec()).collect()
}

/// Levenberg step from the SVD of J: `delta = -V diag(s/(s^2+mu)) U^T r`.
pub(crate) fn lm_step(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, r: &DVector<f64>, mu: f64) -> DVector<f64> {
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let utr = u.transpose() * r;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        scaled[i] = -s / (s * s + mu) * utr[i];
    }
    vt.transpose() * scaled
}

/// Search for a strong-pliability certificate: a control `v` with
/// `||v||_inf < eta`, `F^u(v) = F^u(0)` within `residual_tol`, at which the
/// finite-dimensional differential has `sigma_min > submersion_tol sigma_1`.
///
/// A failure report is NOT a disproof: the search is heuristic and the
/// underlying property has no known decision procedure.
pub fn strong_pliability_search(
    prob_template: &EndpointProblem,
    eta: f64,
    schedule: &[usize],
    restarts: usize,
    seed: u64,
    submersion_tol: f64,
    residual_tol: f64,
    opts: &RkOptions,
) -> Result<PliabilityOutcome> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let schedule: Vec<usize> = if schedule.is_empty() {
        vec![prob_template.basis_size]
    } else {
        schedule.to_vec()
    };
    let (g0, _) = endpoint_map(prob_template, &prob_template.zero_control(), opts)?;

    let mut best_residual = f64::INFINITY;

    // The v = 0 shortcut covers regular points of the endpoint map (and the
    // zero-velocity pairs, which are always regular).
    let mut best_ratio: f64 = {
        let prob = prob_template.clone();
        let (_, jac) = endpoint_differential(&prob, &prob.zero_control(), opts)?;
        let svd = jac.clone().svd(false, false);
        let (s1, smin) = sigma_range(&svd.singular_values);
        if smin > submersion_tol * s1 {
            let cert = SubmersionCertificate {
                control: prob.zero_control(),
                sup_norm: 0.0,
                residual: 0.0,
                singular_values: sorted_desc(&svd.singular_values),
                basis_size: prob.basis_size,
                verdict: "submersion".into(),
                submersion_tol,
                residual_tol,
                seed,
            };
            return Ok(PliabilityOutcome::Certificate(cert));
        }
        smin / s1
    };

    for &n in &schedule {
        let mut prob = prob_template.clone();
        prob.basis_size = n;
        let m = prob.structure.rank;
        if n * m < prob.structure.dim + m {
            continue; // differential cannot be onto
        }
        let attempts: Vec<Option<(SubmersionCertificate, f64, f64)>> = (0..restarts)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((n as u64) << 32) | r as u64);
                pliability_attempt(
                    &prob,
                    &g0,
                    eta,
                    &mut rng,
                    submersion_tol,
                    residual_tol,
                    seed,
                    opts,
                )
                .ok()
            })
            .collect();
        for a in attempts.into_iter().flatten() {
            let (cert_opt, ratio, resid) = (a.0, a.1, a.2);
            best_ratio = best_ratio.max(ratio);
            best_residual = best_residual.min(resid);
            if cert_opt.verdict == "submersion" {
                return Ok(PliabilityOutcome::Certificate(cert_opt));
            }
        }
    }
    Ok(PliabilityOutcome::Failure(PliabilityFailure {
        best_sigma_ratio: best_ratio,
        best_residual,
        restarts,
        basis_sizes_tried: schedule,
        note: "inconclusive: failure to find a certificate is not a disproof of strong pliability"
            .into(),
    }))
}

fn sorted_desc(sv: &DVector<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = sv.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

fn sigma_range(sv: &DVector<f64>) -> (f64, f64) {
    let v = sorted_desc(sv);
    (v[0], *v.last().unwrap())
}

/// One Gauss-Newton projection attempt from a random start of sup norm
/// within `eta/2`; returns the certificate candidate plus diagnostics.
#[allow(clippy::too_many_arguments)]
fn pliability_attempt(
    prob: &EndpointProblem,
    g0: &[f64],
    eta: f64,
    rng: &mut ChaCha8Rng,
    submersion_tol: f64,
    residual_tol: f64,
    seed: u64,
    opts: &RkOptions,
) -> Result<(SubmersionCertificate, f64, f64)> {
    let (n, m) = (prob.basis_size, prob.structure.rank);
    let nv = n * m;
    let mut c: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Scale the random start to a sup norm around eta/4.
    let ctrl = prob.control(unflatten(&c, n, m));
    let sup = ctrl.deviation_sup_norm(512).max(1e-12);
    let scale = eta / 4.0 / sup;
    c.iter_mut().for_each(|x| *x *= scale);

    let mut mu = 1e-8;
    let (mut r, mut ctrl) = pliability_residual(prob, g0, &c, opts)?;
    for _ in 0..80 {
        if r.norm() < residual_tol {
            break;
        }
        let (_, jac) = endpoint_differential(prob, &ctrl, opts)?;
        let svd = jac.svd(true, true);
        let mut accepted = false;
        for _ in 0..12 {
            let delta = lm_step(&svd, &r, mu);
            let cand: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (r_new, ctrl_new) = pliability_residual(prob, g0, &cand, opts)?;
            if r_new.norm() < r.norm() {
                c = cand;
                r = r_new;
                ctrl = ctrl_new;
                mu = (mu / 3.0).max(1e-14);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let residual = r.norm();
    let (_, jac) = endpoint_differential(prob, &ctrl, opts)?;
    let svd = jac.svd(false, false);
    let (s1, smin) = sigma_range(&svd.singular_values);
    let sup_norm = ctrl.deviation_sup_norm(2048);
    let ok = residual < residual_tol && smin > submersion_tol * s1 && sup_norm < eta;
    let cert = SubmersionCertificate {
        control: ctrl,
        sup_norm,
        residual,
        singular_values: sorted_desc(&svd.singular_values),
        basis_size: n,
        verdict: if ok { "submersion".into() } else { "not-verified".into() },
        submersion_tol,
        residual_tol,
        seed,
    };
    Ok((cert, smin / s1, residual))
}

// ---------------------------------------------------------------------------
// Goh / Legendre forms along a transported covector.

/// A covector at the endpoint `e^{X_u}(base)`; the transported family
/// `lambda_t` is produced on demand by adjoint (transpose-Jacobian) flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Covector {
    pub lambda: Vec<f64>,
}

impl Covector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            return Err(Error::InvalidArgument("covector must be nonzero".into()));
        }
        Ok(Covector { lambda })
    }
}

/// Transport the endpoint covector back to time `t` along `e^{(1-t) X_u}`:
/// returns `(q_t, lambda_t)` with `lambda_t = J^T lambda`.
pub fn transport_covector(
    nf: &NilpotentFrame,
    u: &[f64],
    cov: &Covector,
    t: f64,
    opts: &RkOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = nf.to_structure();
    let xu = s.field(u)?;
    let jet = FieldJet::new(&xu);
    let origin = vec![0.0; s.dim];
    let qt = if t == 0.0 {
        origin.clone()
    } else {
        flow_with_jacobian(&jet, t, &origin, opts)?.0
    };
    let (_, jac) = flow_with_jacobian(&jet, 1.0 - t, &qt, opts)?;
    let lam = DVector::from_vec(cov.lambda.clone());
    let lam_t = jac.transpose() * lam;
    Ok((qt, lam_t.iter().copied().collect()))
}

/// Goh bilinear form `lambda_t . [X_{v1}, X_{v2}](q_t)`.
pub fn goh_form(
    nf: &NilpotentFrame,
    u: &[f64],
    cov: &Covector,
    t: f64,
    v1: &[f64],
    v2: &[f64],
    opts: &RkOptions,
) -> Result<f64> {
    let s = nf.to_structure();
    let (qt, lam_t) = transport_covector(nf, u, cov, t, opts)?;
    let b = lie_bracket(&s.field(v1)?, &s.field(v2)?)?;
    Ok(dot(&lam_t, &b.eval_f64(&qt)))
}

/// Legendre bilinear form `lambda_t . [[X_u, X_{v1}], X_{v2}](q_t)`.
pub fn legendre_form(
    nf: &NilpotentFrame,
    u: &[f64],
    cov: &Covector,
    t: f64,
    v1: &[f64],
    v2: &[f64],
    opts: &RkOptions,
) -> Result<f64> {
    let s = nf.to_structure();
    let (qt, lam_t) = transport_covector(nf, u, cov, t, opts)?;
    let inner = lie_bracket(&s.field(u)?, &s.field(v1)?)?;
    let b = lie_bracket(&inner, &s.field(v2)?)?;
    Ok(dot(&lam_t, &b.eval_f64(&qt)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-covector witnesses from screening the Goh and Legendre forms over the
/// annihilator of the image of the endpoint differential at `v = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GohLegendreScreen {
    pub corank: usize,
    pub rows: Vec<ScreenRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenRow {
    pub lambda: Vec<f64>,
    /// `(t, i, j, value)` with `|B_G(lambda, t; e_i, e_j)| > tol`.
    pub goh_witness: Option<(f64, usize, usize, f64)>,
    /// `(t, i, value)` with `B_L(lambda, t; e_i, e_i) < -tol`.
    pub legendre_witness: Option<(f64, usize, f64)>,
}

pub fn goh_legendre_screen(
    nf: &NilpotentFrame,
    u: &[f64],
    basis_size: usize,
    t_samples: usize,
    opts: &RkOptions,
) -> Result<GohLegendreScreen> {
    let prob = EndpointProblem::for_nilpotent(nf, u.to_vec(), basis_size)?;
    let (_, jac) = endpoint_differential(&prob, &prob.zero_control(), opts)?;
    let d = nf.dim();
    let m = nf.rank();
    // Image of D_0 F only (drop the v(1) block rows).
    let f_block = jac.view((0, 0), (d, jac.ncols())).into_owned();
    let svd = f_block.svd(true, false);
    let uu = svd.u.as_ref().expect("svd with u");
    let s1 = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-9 * s1.max(1e-300))
        .count();
    let corank = d - rank;
    let mut rows = Vec::new();
    let tol = 1e-8;
    for col in rank..uu.ncols() {
        let lambda: Vec<f64> = uu.column(col).iter().copied().collect();
        let cov = Covector::new(lambda.clone())?;
        let mut goh_witness = None;
        let mut legendre_witness = None;
        'outer: for ts in 0..=t_samples {
            let t = ts as f64 / t_samples as f64;
            for i in 0..m {
                for j in 0..m {
                    let e_i = unit(m, i);
                    let e_j = unit(m, j);
                    if i != j {
                        let g = goh_form(nf, u, &cov, t, &e_i, &e_j, opts)?;
                        if g.abs() > tol && goh_witness.is_none() {
                            goh_witness = Some((t, i + 1, j + 1, g));
                        }
                    }
                }
                let e_i = unit(m, i);
                let l = legendre_form(nf, u, &cov, t, &e_i, &e_i, opts)?;
                if l < -tol && legendre_witness.is_none() {
                    legendre_witness = Some((t, i + 1, l));
                }
                if goh_witness.is_some() && legendre_witness.is_some() {
                    break 'outer;
                }
            }
        }
        rows.push(ScreenRow {
            lambda,
            goh_witness,
            legendre_witness,
        });
    }
    Ok(GohLegendreScreen { corank, rows })
}

fn unit(m: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[i] = 1.0;
    v
}

// ---------------------------------------------------------------------------
// Bracket-span and cone sufficient conditions.

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GohSpanningReport {
    pub satisfied: bool,
    /// Cumulative span dimension after including `(ad X_u)^k` terms.
    pub span_dims: Vec<usize>,
    pub kmax: usize,
}

/// Checks `sum_k (ad X_u)^k Dhat^2` spans the whole space at 0.
pub fn goh_spanning_check(nf: &NilpotentFrame, u: &[f64], kmax: usize) -> Result<GohSpanningReport> {
    let s = nf.to_structure();
    let xu = s.field(u)?;
    let origin = vec![0.0; s.dim];
    // Generators of Dhat^2: the frame plus its pairwise brackets.
    let mut gens: Vec<VectorField> = s.frame.clone();
    for i in 0..s.rank {
        for j in (i + 1)..s.rank {
            let b = lie_bracket(&s.frame[i], &s.frame[j])?;
            if !b.is_zero() {
                gens.push(b);
            }
        }
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut span_dims = Vec::new();
    let mut current = gens.clone();
    for _k in 0..=kmax {
        for g in &current {
            columns.push(g.eval_f64(&origin));
        }
        span_dims.push(numeric_rank_cols(&columns, s.dim, 1e-9));
        if *span_dims.last().unwrap() == s.dim {
            break;
        }
        current = current
            .iter()
            .map(|g| lie_bracket(&xu, g))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|g| !g.is_zero())
            .collect();
        if current.is_empty() {
            break;
        }
    }
    Ok(GohSpanningReport {
        satisfied: span_dims.last().copied() == Some(s.dim),
        span_dims,
        kmax,
    })
}

fn numeric_rank_cols(columns: &[Vec<f64>], dim: usize, tol: f64) -> usize {
    if columns.is_empty() {
        return 0;
    }
    let mat = DMatrix::from_fn(dim, columns.len(), |r, c| columns[c][r]);
    let svd = mat.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > tol * smax).count()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeReport {
    pub satisfied: bool,
    pub generators: usize,
    /// Per-target `(direction index 1..=d, sign, nnls residual)`.
    pub feasibility: Vec<(usize, i8, f64)>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Convex positive cone condition on step-3 frames: decide whether the cone
/// generated by `W(0) + [[X_u, V], V](0)` over sampled horizontal `V` and a
/// signed spanning set `W` of `Dhat^2` is the whole space, by solving a
/// nonnegative least-squares feasibility problem for each `±e_j`.
///
/// Sampling streams from the seed, so enlarging `sample_count` only appends
/// generators: a `true` verdict is monotone in the sample count.
pub fn cone_condition(
    nf: &NilpotentFrame,
    u: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<ConeReport> {
    let s = nf.to_structure();
    let d = s.dim;
    if nf.step() != 3 {
        return Err(Error::InvalidArgument(format!(
            "cone_condition applies to step-3 frames, got step {}",
            nf.step()
        )));
    }
    if sample_count < 2 * d {
        return Err(Error::InvalidArgument(format!(
            "sample_count must be at least 2*dim = {}",
            2 * d
        )));
    }
    let origin = vec![0.0; d];
    let xu = s.field(u)?;
    // Signed spanning set of Dhat^2 values at 0.
    let mut w_vals: Vec<Vec<f64>> = Vec::new();
    let mut dhat2: Vec<VectorField> = s.frame.clone();
    for i in 0..s.rank {
        for j in (i + 1)..s.rank {
            let b = lie_bracket(&s.frame[i], &s.frame[j])?;
            if !b.is_zero() {
                dhat2.push(b);
            }
        }
    }
    for g in &dhat2 {
        let v = g.eval_f64(&origin);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let vn: Vec<f64> = v.iter().map(|x| x / norm).collect();
            w_vals.push(vn.iter().map(|x| -x).collect());
            w_vals.push(vn);
        }
    }
    // Sampled [[X_u, V], V](0) for V = X_c with streamed Gaussian-ish c.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xC0DE);
    let mut brack_vals: Vec<Vec<f64>> = Vec::new();
    for _ in 0..sample_count {
        let c: Vec<f64> = (0..s.rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c_rat: Vec<crate::poly::Rat> = c.iter().map(|&x| rat_from_f64(x)).collect();
        let v = VectorField::linear_combination(&s.frame, &c_rat)?;
        let b = lie_bracket(&lie_bracket(&xu, &v)?, &v)?;
        let val = b.eval_f64(&origin);
        if val.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-14 {
            brack_vals.push(val);
        }
    }
    // Generators: pure W's (V = 0), pure brackets (W = 0), and their sums.
    let mut gens: Vec<Vec<f64>> = Vec::new();
    gens.extend(w_vals.iter().cloned());
    for b in &brack_vals {
        gens.push(b.clone());
        for w in &w_vals {
            gens.push(w.iter().zip(b).map(|(a, c)| a + c).collect());
        }
    }
    let a = DMatrix::from_fn(d, gens.len(), |r, c| gens[c][r]);
    let mut feasibility = Vec::new();
    let mut satisfied = true;
    for j in 0..d {
        for sign in [1i8, -1i8] {
            let mut b = DVector::zeros(d);
            b[j] = sign as f64;
            let sol = nnls(&a, &b, 400);
            feasibility.push((j + 1, sign, sol.residual));
            if sol.residual >= 1e-8 {
                satisfied = false;
            }
        }
    }
    Ok(ConeReport {
        satisfied,
        generators: gens.len(),
        feasibility,
        sample_count,
        seed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MediumFatReport {
    pub satisfied: bool,
    /// True when `X_u(p) = 0`: the pair is strongly pliable by the
    /// zero-velocity regularity argument, independently of spans.
    pub trivial_zero_velocity: bool,
    pub rank: usize,
    pub dim: usize,
}

/// Medium-fat test at `p`: `D^2_p + [X_u, D^2]_p = T_p M` by numeric rank.
pub fn medium_fat_check(s: &SRStructure, p: &[f64], u: &[f64]) -> Result<MediumFatReport> {
    let xu = s.field(u)?;
    let xu_at_p = xu.eval_f64(p);
    if xu_at_p.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
        return Ok(MediumFatReport {
            satisfied: true,
            trivial_zero_velocity: true,
            rank: 0,
            dim: s.dim,
        });
    }
    let mut gens: Vec<VectorField> = s.frame.clone();
    let mut level2: Vec<VectorField> = Vec::new();
    for i in 0..s.rank {
        for j in (i + 1)..s.rank {
            let b = lie_bracket(&s.frame[i], &s.frame[j])?;
            if !b.is_zero() {
                level2.push(b);
            }
        }
    }
    gens.extend(level2.iter().cloned());
    // [X_u, D^2] generated by [X_u, X_i] and [X_u, [X_i, X_j]].
    for g in s.frame.iter().chain(level2.iter()) {
        let b = lie_bracket(&xu, g)?;
        if !b.is_zero() {
            gens.push(b);
        }
    }
    let columns: Vec<Vec<f64>> = gens.iter().map(|g| g.eval_f64(p)).collect();
    let rank = numeric_rank_cols(&columns, s.dim, 1e-9);
    Ok(MediumFatReport {
        satisfied: rank == s.dim,
        trivial_zero_velocity: false,
        rank,
        dim: s.dim,
    })
}

// ---------------------------------------------------------------------------
// Carnot-Caratheodory distance estimation (direct method).

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBudget {
    pub knots: usize,
    pub restarts: usize,
    pub gn_max_iters: usize,
    pub penalty_init: f64,
    pub penalty_max: f64,
    /// Required endpoint accuracy of the steering control.
    pub gap_target: f64,
}

impl Default for DistanceBudget {
    fn default() -> Self {
        DistanceBudget {
            knots: 64,
            restarts: 6,
            gn_max_iters: 60,
            penalty_init: 1e4,
            penalty_max: 1e13,
            gap_target: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// Length of the best found control: a certified upper bound up to the
    /// endpoint gap.
    pub upper: f64,
    pub control: Control,
    pub endpoint_gap: f64,
    /// Pseudo-norm of the target in a chart at the source (uncertified
    /// lower-bound proxy), when a chart is supplied.
    pub lower_proxy: Option<f64>,
    pub converged_restarts: usize,
}

pub(crate) struct SteerOutcome {
    pub control: Control,
    pub gap: f64,
    pub length: f64,
}

/// Steering solve: find a sampled control on [0,1] driving `from` to `to`,
/// minimizing energy with a doubling endpoint penalty.
pub(crate) fn steer(
    s: &SRStructure,
    jets: &FrameJets,
    from: &[f64],
    to: &[f64],
    budget: &DistanceBudget,
    init: &[f64],
    opts: &RkOptions,
) -> Result<SteerOutcome> {
    let d = s.dim;
    let m = s.rank;
    let n = budget.knots;
    let nv = n * m;
    let h = 1.0 / (n - 1) as f64;
    let sqrt_w: Vec<f64> = (0..n)
        .map(|j| {
            let w = if j == 0 || j == n - 1 { h / 2.0 } else { h };
            w.sqrt()
        })
        .collect();
    let knots: Vec<f64> = (1..n - 1).map(|j| j as f64 * h).collect();
    let mut c = init.to_vec();
    assert_eq!(c.len(), nv);

    let eval_gap = |c: &[f64]| -> Result<(Vec<f64>, f64)> {
        let vals = unflatten(c, n, m);
        let ctrl = Control::sampled(0.0, 1.0, vals)?;
        let traj = crate::flow::chron_exp(s, &ctrl, from, opts)?;
        let end = traj.endpoint();
        let gap = end.iter().zip(to).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok((end, gap))
    };

    let residual =
        |c: &[f64], end: &[f64], rho: f64| -> DVector<f64> {
            let mut r = DVector::zeros(nv + d);
            for j in 0..n {
                for i in 0..m {
                    r[j * m + i] = sqrt_w[j] * c[j * m + i];
                }
            }
            let sr = rho.sqrt();
            for jj in 0..d {
                r[nv + jj] = sr * (end[jj] - to[jj]);
            }
            r
        };

    let mut rho = budget.penalty_init;
    let (mut end, mut gap) = eval_gap(&c)?;
    let mut mu = 1e-6;
    let mut iters = 0usize;
    while iters < budget.gn_max_iters {
        if gap <= budget.gap_target {
            break;
        }
        iters += 1;
        // Sensitivity of the endpoint to knot values (hat basis).
        let cc = c.clone();
        let u_of_t = move |t: f64| -> Vec<f64> {
            let x = (t / h).clamp(0.0, (n - 1) as f64);
            let j = (x.floor() as usize).min(n - 2);
            let w = x - j as f64;
            (0..m)
                .map(|i| (1.0 - w) * cc[j * m + i] + w * cc[(j + 1) * m + i])
                .collect()
        };
        let hat = move |k: usize, t: f64| -> f64 {
            let x = t / h;
            let dist = (x - k as f64).abs();
            (1.0 - dist).max(0.0)
        };
        let (_, sens) = endpoint_with_sensitivity(jets, &u_of_t, &knots, from, n, &hat, opts)?;
        let mut jac = DMatrix::zeros(nv + d, nv);
        for j in 0..n {
            for i in 0..m {
                jac[(j * m + i, j * m + i)] = sqrt_w[j];
            }
        }
        let sr = rho.sqrt();
        for rr in 0..d {
            for ccol in 0..nv {
                jac[(nv + rr, ccol)] = sr * sens[(rr, ccol)];
            }
        }
        let r = residual(&c, &end, rho);
        let svd = jac.svd(true, true);
        let mut accepted = false;
        for _ in 0..10 {
            let delta = lm_step(&svd, &r, mu);
            let cand: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (end_new, gap_new) = eval_gap(&cand)?;
            let r_new = residual(&cand, &end_new, rho);
            if r_new.norm_squared() < r.norm_squared() {
                c = cand;
                end = end_new;
                gap = gap_new;
                mu = (mu / 3.0).max(1e-14);
                accepted = true;
                break;
            }
            mu *= 5.0;
        }
        let stalled = !accepted;
        if (stalled || gap > budget.gap_target) && rho < budget.penalty_max {
            // Penalty continuation: double until the endpoint constraint is
            // effectively hard.
            if stalled || iters % 2 == 0 {
                rho *= 2.0;
            }
            if stalled {
                mu = (mu * 0.1).max(1e-12);
            }
        } else if stalled {
            break;
        }
    }
    let ctrl = Control::sampled(0.0, 1.0, unflatten(&c, n, m))?;
    // Length of the realized control by fine trapezoid quadrature.
    let samples = 2048;
    let mut length = 0.0;
    let mut prev = norm(&ctrl.value(0.0));
    for k in 1..=samples {
        let t = k as f64 / samples as f64;
        let cur = norm(&ctrl.value(t));
        length += 0.5 * (prev + cur) / samples as f64;
        prev = cur;
    }
    Ok(SteerOutcome {
        control: ctrl,
        gap,
        length,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Estimate the Carnot-Caratheodory distance from `p` to `q`: a multi-start
/// penalty-continued energy minimization returning a certified upper bound
/// (the length of a control whose endpoint lies within `gap_target` of `q`).
pub fn estimate_dsr(
    s: &SRStructure,
    p: &[f64],
    q: &[f64],
    budget: &DistanceBudget,
    seed: u64,
) -> Result<DistanceEstimate> {
    estimate_dsr_with_chart(s, p, q, budget, seed, None)
}

pub fn estimate_dsr_with_chart(
    s: &SRStructure,
    p: &[f64],
    q: &[f64],
    budget: &DistanceBudget,
    seed: u64,
    chart: Option<&PrivilegedChart>,
) -> Result<DistanceEstimate> {
    if p.len() != s.dim || q.len() != s.dim {
        return Err(Error::DimensionMismatch("distance endpoints".into()));
    }
    let lower_proxy = chart.map(|ch| pseudo_norm(ch, &ch.to_chart(q)));
    if p == q {
        return Ok(DistanceEstimate {
            upper: 0.0,
            control: Control::constant(s.rank, &vec![0.0; s.rank], 0.0, 1.0),
            endpoint_gap: 0.0,
            lower_proxy,
            converged_restarts: budget.restarts,
        });
    }
    let jets = FrameJets::new(s);
    let (n, m) = (budget.knots, s.rank);
    // Constant least-squares start: u0 with X_{u0}(p) closest to q - p.
    let frame_at_p = DMatrix::from_fn(s.dim, m, |r, cidx| s.frame[cidx].component(r).eval_f64(p));
    let rhsv = DVector::from_fn(s.dim, |r, _| q[r] - p[r]);
    let u0 = frame_at_p
        .svd(true, true)
        .solve(&rhsv, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(m));
    let disp = norm(&rhsv.iter().copied().collect::<Vec<f64>>());
    let amp = norm(&u0.iter().copied().collect::<Vec<f64>>()).max(disp).max(0.3);

    let inits: Vec<Vec<f64>> = (0..budget.restarts.max(1))
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0xD157 ^ r as u64);
            let mut c = vec![0.0; n * m];
            for j in 0..n {
                for i in 0..m {
                    let noise = if r == 0 {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0) * amp
                    };
                    c[j * m + i] = u0[i] + noise;
                }
            }
            c
        })
        .collect();

    let outcomes: Vec<Result<SteerOutcome>> = inits
        .par_iter()
        .map(|init| steer(s, &jets, p, q, budget, init, &RkOptions::with_tol(1e-10, 1e-10)))
        .collect();
    let mut best: Option<SteerOutcome> = None;
    let mut best_gap = f64::INFINITY;
    let mut converged = 0usize;
    for oc in outcomes.into_iter().flatten() {
        best_gap = best_gap.min(oc.gap);
        if oc.gap <= budget.gap_target {
            converged += 1;
            if best.as_ref().map(|b| oc.length < b.length).unwrap_or(true) {
                best = Some(oc);
            }
        }
    }
    match best {
        Some(b) => Ok(DistanceEstimate {
            upper: b.length + 2.0 * b.gap,
            control: b.control,
            endpoint_gap: b.gap,
            lower_proxy,
            converged_restarts: converged,
        }),
        None => Err(Error::DistanceBudget {
            best_gap,
            restarts: budget.restarts,
        }),
    }
}
