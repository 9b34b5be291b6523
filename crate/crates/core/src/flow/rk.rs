//! Embedded Dormand-Prince 5(4) integrator with adaptive steps, knot-aligned
//! stepping and cubic-Hermite dense output.

use crate::error::Error;
use crate::Result;

/// Integrator options. `fixed_step` disables error control.
#[derive(Clone, Debug)]
pub struct RkOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    pub h_init: Option<f64>,
    pub fixed_step: Option<f64>,
}

impl Default for RkOptions {
    fn default() -> Self {
        RkOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_steps: 2_000_000,
            h_init: None,
            fixed_step: None,
        }
    }
}

impl RkOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        RkOptions {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }
}

/// Accepted node: time, state and state derivative.
#[derive(Clone, Debug)]
pub struct RkNode {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct RkStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Dense solution over `[t0, t1]` (possibly with `t1 < t0`).
#[derive(Clone, Debug)]
pub struct RkSolution {
    pub nodes: Vec<RkNode>,
    pub stats: RkStats,
}

impl RkSolution {
    pub fn t0(&self) -> f64 {
        self.nodes.first().expect("nonempty").t
    }

    pub fn t1(&self) -> f64 {
        self.nodes.last().expect("nonempty").t
    }

    pub fn endpoint(&self) -> &[f64] {
        &self.nodes.last().expect("nonempty").y
    }

    /// Cubic Hermite interpolation on the bracketing step (4th-order
    /// interpolation error, matching the consumers' needs).
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let nodes = &self.nodes;
        if nodes.len() == 1 {
            return nodes[0].y.clone();
        }
        let forward = nodes.last().unwrap().t >= nodes[0].t;
        // Binary search for the bracketing interval.
        let (mut lo, mut hi) = (0usize, nodes.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let before = if forward {
                nodes[mid].t <= t
            } else {
                nodes[mid].t >= t
            };
            if before {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = (&nodes[lo], &nodes[hi]);
        let h = b.t - a.t;
        if h == 0.0 {
            return a.y.clone();
        }
        let s = ((t - a.t) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        a.y.iter()
            .zip(&a.dy)
            .zip(b.y.iter().zip(&b.dy))
            .map(|((ya, da), (yb, db))| h00 * ya + h * h10 * da + h01 * yb + h * h11 * db)
            .collect()
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1`. Steps never cross a knot in
/// `knots` (piecewise-defined right-hand sides keep full order that way).
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    knots: &[f64],
    opts: &RkOptions,
) -> Result<RkSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let span = t1 - t0;
    let dir = if span >= 0.0 { 1.0 } else { -1.0 };
    let mut nodes = Vec::new();
    let mut stats = RkStats::default();

    let mut k1 = vec![0.0; n];
    f(t0, y0, &mut k1);
    nodes.push(RkNode {
        t: t0,
        y: y0.to_vec(),
        dy: k1.clone(),
    });
    if span == 0.0 {
        return Ok(RkSolution { nodes, stats });
    }

    // Interior knots, sorted in travel direction.
    let mut stops: Vec<f64> = knots
        .iter()
        .copied()
        .filter(|&k| (k - t0) * dir > 1e-14 * span.abs() && (t1 - k) * dir > 1e-14 * span.abs())
        .collect();
    stops.sort_by(|a, b| (dir * a).partial_cmp(&(dir * b)).unwrap());
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * span.abs());
    stops.push(t1);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h_mag = opts
        .fixed_step
        .or(opts.h_init)
        .unwrap_or(span.abs() / 100.0)
        .min(span.abs());
    let h_floor = span.abs() * 1e-14;

    let mut stage = vec![vec![0.0; n]; 7];
    stage[0].copy_from_slice(&k1);
    let mut ytmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];

    for &stop in &stops {
        loop {
            let remaining = (stop - t) * dir;
            if remaining <= h_floor {
                break;
            }
            if stats.accepted + stats.rejected > opts.max_steps {
                return Err(Error::Integration(format!(
                    "step budget {} exhausted at t = {t}",
                    opts.max_steps
                )));
            }
            let h = dir * h_mag.min(remaining);
            // Stages 2..7 (stage 1 is FSAL from the previous step).
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, st) in stage.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += a * st[i];
                        }
                    }
                    ytmp[i] = y[i] + h * acc;
                }
                let (lhs, rhs) = stage.split_at_mut(s);
                let _ = lhs;
                f(t + C[s] * h, &ytmp, &mut rhs[0]);
            }
            // 5th-order solution is the last stage combination (A[6] = b5).
            for i in 0..n {
                let mut acc = 0.0;
                for (j, st) in stage.iter().enumerate().take(6) {
                    acc += A[6][j] * st[i];
                }
                y5[i] = y[i] + h * acc;
            }
            if opts.fixed_step.is_some() {
                t += h;
                y.copy_from_slice(&y5);
                f(t, &y, &mut stage[6]);
                stage.swap(0, 6);
                nodes.push(RkNode {
                    t,
                    y: y.clone(),
                    dy: stage[0].clone(),
                });
                stats.accepted += 1;
                continue;
            }
            // Embedded 4th-order error estimate; stage 7 = f at the 5th-order
            // endpoint (FSAL).
            f(t + h, &y5, &mut stage[6]);
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut e4 = 0.0;
                for (j, st) in stage.iter().enumerate() {
                    e4 += B4[j] * st[i];
                }
                let err_i = (y[i] + h * e4) - y5[i];
                let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
                err_sq += (err_i / scale) * (err_i / scale);
            }
            let err = (err_sq / n as f64).sqrt();
            if err <= 1.0 {
                t += h;
                y.copy_from_slice(&y5);
                stage.swap(0, 6);
                nodes.push(RkNode {
                    t,
                    y: y.clone(),
                    dy: stage[0].clone(),
                });
                stats.accepted += 1;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h_mag = (h_mag * factor).min(span.abs());
            } else {
                stats.rejected += 1;
                h_mag *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h_mag < h_floor {
                    return Err(Error::Integration(format!(
                        "step size underflow at t = {t} (h = {h_mag:.3e})"
                    )));
                }
            }
        }
        // Landed on a knot (within h_floor): snap to it and refresh the FSAL
        // stage since f may be only piecewise smooth across it.
        t = stop;
        f(t, &y, &mut stage[0]);
        if let Some(last) = nodes.last_mut() {
            if (last.t - t).abs() <= h_floor {
                last.t = t;
                last.dy = stage[0].clone();
            } else {
                nodes.push(RkNode {
                    t,
                    y: y.clone(),
                    dy: stage[0].clone(),
                });
            }
        }
    }
    Ok(RkSolution { nodes, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let sol = integrate(
            |_, y, dy| dy[0] = y[0],
            0.0,
            1.0,
            &[1.0],
            &[],
            &RkOptions::default(),
        )
        .unwrap();
        assert!((sol.endpoint()[0] - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let sol = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            std::f64::consts::TAU,
            &[1.0, 0.0],
            &[],
            &RkOptions::with_tol(1e-12, 1e-12),
        )
        .unwrap();
        assert!((sol.endpoint()[0] - 1.0).abs() < 1e-9);
        for k in 0..10 {
            let t = k as f64 * 0.61;
            let y = sol.sample(t);
            assert!((y[0] - t.cos()).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn backward_time() {
        let sol = integrate(
            |_, y, dy| dy[0] = y[0],
            0.0,
            -1.0,
            &[1.0],
            &[],
            &RkOptions::default(),
        )
        .unwrap();
        assert!((sol.endpoint()[0] - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn knots_are_hit_exactly() {
        // RHS with a kink at t = 0.5: full order needs the knot split.
        let rhs = |t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = if t < 0.5 { 1.0 } else { -1.0 };
        };
        let sol = integrate(rhs, 0.0, 1.0, &[0.0], &[0.5], &RkOptions::default()).unwrap();
        assert!(sol.endpoint()[0].abs() < 1e-12);
        assert!(sol.nodes.iter().any(|nd| (nd.t - 0.5).abs() < 1e-13));
    }

    #[test]
    fn fixed_step_order_at_least_four() {
        // Error ratio between h and h/2 on the oscillator: order p gives 2^p.
        let run = |h: f64| {
            let opts = RkOptions {
                fixed_step: Some(h),
                ..Default::default()
            };
            let sol = integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                1.0,
                &[1.0, 0.0],
                &[],
                &opts,
            )
            .unwrap();
            (sol.endpoint()[0] - 1f64.cos()).abs() + (sol.endpoint()[1] + 1f64.sin()).abs()
        };
        let e1 = run(0.05);
        let e2 = run(0.025);
        assert!(e1 / e2 >= 16.0, "observed ratio {}", e1 / e2);
    }
}
