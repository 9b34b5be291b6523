//! Dense nonnegative least squares (Lawson-Hanson active set).
//!
//! Solves `min ||A x - b||` subject to `x >= 0`. Problem sizes here are tiny
//! (d <= 10 rows, a few hundred columns), so the plain active-set loop with
//! SVD subproblem solves is plenty.

use nalgebra::{DMatrix, DVector};

pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: f64,
}

pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> NnlsSolution {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut x = DVector::zeros(n);
    let tol = 1e-12 * a.amax().max(1.0);

    let solve_passive = |passive: &[bool], x_out: &mut DVector<f64>| {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        x_out.fill(0.0);
        if cols.is_empty() {
            return;
        }
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
        let svd = sub.svd(true, true);
        if let Ok(z) = svd.solve(b, 1e-12) {
            for (c, &j) in cols.iter().enumerate() {
                x_out[j] = z[c];
            }
        }
    };

    for _ in 0..max_iter {
        let w = a.transpose() * (b - a * &x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol {
                if best.map(|(_, v)| w[j] > v).unwrap_or(true) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        let mut z = DVector::zeros(n);
        solve_passive(&passive, &mut z);
        // Inner loop: back off along the segment x -> z until feasible.
        let mut guard = 0;
        while z.iter().enumerate().any(|(j, &v)| passive[j] && v <= 0.0) {
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom.abs() > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                break;
            }
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= tol {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
            solve_passive(&passive, &mut z);
            guard += 1;
            if guard > n {
                break;
            }
        }
        x = z;
    }
    let residual = (b - a * &x).norm();
    NnlsSolution { x, residual }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cone_member() {
        // b = 2*a1 + 3*a3 is in the cone.
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 3.0]);
        let sol = nnls(&a, &b, 100);
        assert!(sol.residual < 1e-10, "residual {}", sol.residual);
        assert!(sol.x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn infeasible_direction_has_residual() {
        // Columns all point into the right half-plane; -e1 is unreachable.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        let sol = nnls(&a, &b, 100);
        assert!(sol.residual > 0.5);
    }
}
