//! Privileged coordinates, quasi-homogeneous dilations, pseudo-norms,
//! nilpotent approximations and empirical Ball-Box calibration.
//!
//! Charts are built as exact polynomial maps with exact polynomial inverses:
//! a linear change adapted to a greedily selected bracket basis, followed by
//! triangular polynomial corrections that kill the low-order part of each
//! coordinate. Correction coefficients are solved for over the rationals so
//! that all iterated frame-derivatives of the coordinate of order below its
//! weight vanish at the base point. The construction is certified after the
//! fact: the frame pushed through the chart must have every component of
//! weighted order at least `w_j - 1`, as an exact polynomial statement.

use crate::error::Error;
use crate::flow::RkOptions;
use crate::poly::{rat_from_f64, rat_to_f64, Multinomial, Rat, VectorField};
use crate::structure::{flag_at, weights_from_growth, SRStructure};
use crate::Result;
use num_traits::{One, Zero};
use serde::Serialize;

/// Construction log for reproducibility of chart-dependent reports.
#[derive(Clone, Debug, Serialize)]
pub struct ChartProvenance {
    /// Kept bracket words (1-based frame indices, outermost first).
    pub bracket_words: Vec<Vec<usize>>,
    /// Rows of `A^{-1}` (the linear change), exact rationals as strings.
    pub linear_change: Vec<Vec<String>>,
    /// Correction polynomials per coordinate (1-based), in chart variables.
    pub corrections: Vec<(usize, String)>,
}

/// System of privileged coordinates at a base point, with exact polynomial
/// forward and inverse maps.
#[derive(Clone, Debug)]
pub struct PrivilegedChart {
    pub base: Vec<Rat>,
    pub weights: Vec<u32>,
    /// `Phi_p`: polynomials in the original coordinates, vanishing at base.
    pub forward: Vec<Multinomial>,
    /// Exact polynomial inverse: `forward(inverse(z)) == z` term-for-term.
    pub inverse: Vec<Multinomial>,
    /// The frame expressed in chart coordinates (exact pushforward).
    pub pushforward: Vec<VectorField>,
    pub provenance: ChartProvenance,
}

impl PrivilegedChart {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn base_f64(&self) -> Vec<f64> {
        self.base.iter().map(rat_to_f64).collect()
    }

    /// Growth vector implied by the weights.
    pub fn growth_vector(&self) -> Vec<usize> {
        let step = *self.weights.iter().max().expect("nonempty") as usize;
        (1..=step)
            .map(|s| self.weights.iter().filter(|&&w| (w as usize) <= s).count())
            .collect()
    }

    pub fn step(&self) -> usize {
        *self.weights.iter().max().expect("nonempty") as usize
    }

    pub fn to_chart(&self, x: &[f64]) -> Vec<f64> {
        self.forward.iter().map(|p| p.eval_f64(x)).collect()
    }

    pub fn from_chart(&self, z: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|p| p.eval_f64(z)).collect()
    }
}

/// Quasi-homogeneous dilation `(d_lambda y)_i = lambda^{w_i} y_i`.
pub fn dilate(chart: &PrivilegedChart, lambda: f64, y: &[f64]) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dilation parameter must be positive, got {lambda}"
        )));
    }
    Ok(y.iter()
        .zip(&chart.weights)
        .map(|(yi, &w)| lambda.powi(w as i32) * yi)
        .collect())
}

/// Pseudo-norm `sum_i |y_i|^{1/w_i}`.
pub fn pseudo_norm(chart: &PrivilegedChart, y: &[f64]) -> f64 {
    y.iter()
        .zip(&chart.weights)
        .map(|(yi, &w)| yi.abs().powf(1.0 / w as f64))
        .sum()
}

// ---------------------------------------------------------------------------
// Exact rational linear algebra.

/// Incremental exact rank tracker (echelon basis of added vectors).
struct RatSpan {
    basis: Vec<Vec<Rat>>,
}

impl RatSpan {
    fn new() -> Self {
        RatSpan { basis: Vec::new() }
    }

    fn rank(&self) -> usize {
        self.basis.len()
    }

    /// Reduce `v` against the basis; if independent, absorb it and return true.
    fn try_add(&mut self, mut v: Vec<Rat>) -> bool {
        for b in &self.basis {
            let pivot = b
                .iter()
                .position(|x| !x.is_zero())
                .expect("basis rows nonzero");
            if !v[pivot].is_zero() {
                let factor = v[pivot].clone() / b[pivot].clone();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= factor.clone() * bi;
                }
            }
        }
        if v.iter().all(|x| x.is_zero()) {
            return false;
        }
        self.basis.push(v);
        true
    }
}

/// Exact inverse by Gauss-Jordan; `a` is row-major square.
fn rat_inverse(a: &[Vec<Rat>]) -> Option<Vec<Vec<Rat>>> {
    let n = a.len();
    let mut m: Vec<Vec<Rat>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rat::one() } else { Rat::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot_row);
        let pivot = m[col][col].clone();
        for x in m[col].iter_mut() {
            *x /= pivot.clone();
        }
        for r in 0..n {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].clone();
            let src = m[col].clone();
            for (x, c) in m[r].iter_mut().zip(&src) {
                *x -= factor.clone() * c;
            }
        }
    }
    Some(m.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// Solve `M c = b` exactly, free variables set to zero; `None` when
/// inconsistent.
fn rat_solve(m: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    let mut aug: Vec<Vec<Rat>> = m
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut rank = 0usize;
    for col in 0..cols {
        let Some(pr) = (rank..rows).find(|&r| !aug[r][col].is_zero()) else {
            continue;
        };
        aug.swap(rank, pr);
        let pivot = aug[rank][col].clone();
        for x in aug[rank].iter_mut() {
            *x /= pivot.clone();
        }
        let src = aug[rank].clone();
        for (r, row) in aug.iter_mut().enumerate() {
            if r == rank || row[col].is_zero() {
                continue;
            }
            let factor = row[col].clone();
            for (x, c) in row.iter_mut().zip(&src) {
                *x -= factor.clone() * c;
            }
        }
        pivot_cols.push(col);
        rank += 1;
        if rank == rows {
            break;
        }
    }
    for row in aug.iter().skip(rank) {
        if !row[cols].is_zero() {
            return None;
        }
    }
    let mut x = vec![Rat::zero(); cols];
    for (i, &pc) in pivot_cols.iter().enumerate() {
        x[pc] = aug[i][cols].clone();
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Chart construction.

/// Greedy adapted bracket basis: scan right-nested bracket words by
/// increasing length, lexicographic within a length, keeping words whose
/// values at the base point increase the exact rank.
fn adapted_basis(
    s: &SRStructure,
    base: &[Rat],
    max_depth: usize,
) -> Result<(Vec<Vec<usize>>, Vec<VectorField>, Vec<usize>)> {
    let d = s.dim;
    let mut span = RatSpan::new();
    let mut kept_words = Vec::new();
    let mut kept_fields = Vec::new();
    let mut growth = Vec::new();
    let mut current: Vec<(Vec<usize>, VectorField)> = (0..s.rank)
        .map(|i| (vec![i], s.frame[i].clone()))
        .collect();
    for _len in 1..=max_depth {
        for (word, field) in &current {
            if field.is_zero() {
                continue;
            }
            if span.try_add(field.eval_rat(base)) {
                kept_words.push(word.clone());
                kept_fields.push(field.clone());
            }
        }
        growth.push(span.rank());
        if span.rank() == d {
            return Ok((kept_words, kept_fields, growth));
        }
        // Extend words on the left; lexicographic order is preserved.
        let mut next = Vec::with_capacity(s.rank * current.len());
        for i in 0..s.rank {
            for (word, field) in &current {
                let b = crate::structure::lie_bracket(&s.frame[i], field)?;
                if b.is_zero() {
                    continue;
                }
                let mut w = Vec::with_capacity(word.len() + 1);
                w.push(i);
                w.extend_from_slice(word);
                next.push((w, b));
            }
        }
        current = next;
        if current.is_empty() {
            break;
        }
    }
    Err(Error::NotBracketGenerating {
        point: base.iter().map(rat_to_f64).collect(),
        max_depth,
        achieved: growth,
    })
}

/// Iterated frame derivative `(X_{w_1} ... X_{w_k} h)(base)`, innermost last.
fn word_derivative_at(
    frame: &[VectorField],
    word: &[usize],
    h: &Multinomial,
    base: &[Rat],
) -> Result<Rat> {
    let mut g = h.clone();
    for &i in word.iter().rev() {
        g = frame[i].apply(&g)?;
        if g.is_zero() {
            return Ok(Rat::zero());
        }
    }
    Ok(g.eval_rat(base))
}

fn all_words(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * m);
        for w in &out {
            for i in 0..m {
                let mut v = w.clone();
                v.push(i);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Multi-indices over `lower` coordinates with weighted degree exactly `k`
/// and at least two factors (linear cross-terms would break adaptedness).
fn candidate_monomials(weights: &[u32], lower: &[usize], k: u32) -> Vec<Vec<u32>> {
    fn rec(
        lower: &[usize],
        weights: &[u32],
        pos: usize,
        remaining: u32,
        factors: u32,
        alpha: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if remaining == 0 {
            if factors >= 2 {
                out.push(alpha.clone());
            }
            return;
        }
        if pos == lower.len() {
            return;
        }
        let idx = lower[pos];
        let w = weights[idx];
        for a in (0..=remaining / w).rev() {
            alpha[idx] = a;
            rec(lower, weights, pos + 1, remaining - a * w, factors + a, alpha, out);
        }
        alpha[idx] = 0;
    }
    let mut out = Vec::new();
    let mut alpha = vec![0u32; weights.len()];
    rec(lower, weights, 0, k, 0, &mut alpha, &mut out);
    out
}

/// Build a system of privileged coordinates at a rational base point.
///
/// Works pointwise at singular points as well; continuity across nearby base
/// points comes from re-running the same deterministic algorithm.
pub fn privileged_chart(
    s: &SRStructure,
    base: &[Rat],
    max_depth: usize,
) -> Result<PrivilegedChart> {
    let d = s.dim;
    if base.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "base point has {} coordinates on R^{}",
            base.len(),
            d
        )));
    }
    let (words, fields, growth) = adapted_basis(s, base, max_depth)?;
    let weights = weights_from_growth(&growth);

    // Linear change to linearly adapted coordinates: columns of A are the
    // adapted-basis values at the base point; y = A^{-1}(x - base).
    let values: Vec<Vec<Rat>> = fields.iter().map(|f| f.eval_rat(base)).collect();
    let a: Vec<Vec<Rat>> = (0..d)
        .map(|r| (0..d).map(|c| values[c][r].clone()).collect())
        .collect();
    let a_inv = rat_inverse(&a).expect("adapted basis has full rank");

    let shifted: Vec<Multinomial> = (0..d)
        .map(|i| {
            Multinomial::var(d, i)
                .sub(&Multinomial::constant(d, base[i].clone()))
                .expect("dims")
        })
        .collect();
    // coords[j]: the j-th chart coordinate as a polynomial in x; starts
    // linearly adapted, gains corrections level by level.
    let mut coords: Vec<Multinomial> = (0..d)
        .map(|j| {
            let mut acc = Multinomial::zero(d);
            for (l, sh) in shifted.iter().enumerate() {
                if a_inv[j][l].is_zero() {
                    continue;
                }
                acc = acc.add(&sh.scale(&a_inv[j][l])).expect("dims");
            }
            acc
        })
        .collect();

    // q_in_z[j]: the correction polynomial for coordinate j written in the
    // chart variables; coordinates of weight < s are final when level s is
    // processed, so monomials in their coordinate FUNCTIONS correspond
    // one-to-one to monomials in the chart variables.
    let step = *weights.iter().max().unwrap();
    let mut q_in_z: Vec<Multinomial> = vec![Multinomial::zero(d); d];
    for s_level in 3..=step {
        let lower: Vec<usize> = (0..d).filter(|&j| weights[j] < s_level).collect();
        let level_coords: Vec<usize> = (0..d).filter(|&j| weights[j] == s_level).collect();
        for k in 2..s_level {
            let cands = candidate_monomials(&weights, &lower, k);
            if cands.is_empty() {
                continue;
            }
            let cand_polys: Vec<Multinomial> = cands
                .iter()
                .map(|alpha| {
                    let mut p = Multinomial::constant(d, Rat::one());
                    for (i, &ai) in alpha.iter().enumerate() {
                        if ai > 0 {
                            p = p.mul(&coords[i].pow(ai)).expect("dims");
                        }
                    }
                    p
                })
                .collect();
            let words_k = all_words(s.rank, k as usize);
            let mut matrix: Vec<Vec<Rat>> = vec![vec![Rat::zero(); cands.len()]; words_k.len()];
            for (ci, cp) in cand_polys.iter().enumerate() {
                for (wi, w) in words_k.iter().enumerate() {
                    matrix[wi][ci] = word_derivative_at(&s.frame, w, cp, base)?;
                }
            }
            for &j in &level_coords {
                let rhs: Vec<Rat> = words_k
                    .iter()
                    .map(|w| word_derivative_at(&s.frame, w, &coords[j], base))
                    .collect::<Result<_>>()?;
                if rhs.iter().all(|x| x.is_zero()) {
                    continue;
                }
                let sol = rat_solve(&matrix, &rhs).ok_or(Error::ChartCorrection {
                    coord: j + 1,
                    order: k as usize,
                })?;
                let mut corr_x = Multinomial::zero(d);
                for (ci, c) in sol.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    corr_x = corr_x.add(&cand_polys[ci].scale(c)).expect("dims");
                    q_in_z[j].add_term(cands[ci].clone(), c.clone());
                }
                coords[j] = coords[j].sub(&corr_x).expect("dims");
            }
        }
    }

    // Inverse: y_j = z_j + Q_j(z_lower) (triangular by weight level), then
    // x = base + A y.
    let y_of_z: Vec<Multinomial> = (0..d)
        .map(|j| Multinomial::var(d, j).add(&q_in_z[j]).expect("dims"))
        .collect();
    let inverse: Vec<Multinomial> = (0..d)
        .map(|i| {
            let mut acc = Multinomial::constant(d, base[i].clone());
            for (j, yz) in y_of_z.iter().enumerate() {
                if a[i][j].is_zero() {
                    continue;
                }
                acc = acc.add(&yz.scale(&a[i][j])).expect("dims");
            }
            acc
        })
        .collect();

    // Invariant: forward(base) == 0 and forward(inverse(z)) == z exactly.
    for (j, c) in coords.iter().enumerate() {
        assert!(
            c.eval_rat(base).is_zero(),
            "chart coordinate {j} does not vanish at base"
        );
        let comp = c.substitute(&inverse).expect("dims");
        assert_eq!(
            comp,
            Multinomial::var(d, j),
            "forward/inverse composition failed at coordinate {j}"
        );
    }

    // Exact pushforward of the frame, and the privileged-order certificate:
    // component j must have weighted order >= w_j - 1.
    let mut pushforward = Vec::with_capacity(s.rank);
    for (fi, f) in s.frame.iter().enumerate() {
        let comps: Result<Vec<Multinomial>> = coords
            .iter()
            .map(|zj| f.apply(zj)?.substitute(&inverse))
            .collect();
        let field = VectorField::new(comps?);
        for j in 0..d {
            let want = weights[j] as i64 - 1;
            if let Some(got) = field.component(j).weighted_order(&weights) {
                if (got as i64) < want {
                    return Err(Error::ChartNotPrivileged {
                        field: fi + 1,
                        coord: j + 1,
                        got: got as i64,
                        want,
                    });
                }
            }
        }
        pushforward.push(field);
    }

    let provenance = ChartProvenance {
        bracket_words: words
            .iter()
            .map(|w| w.iter().map(|i| i + 1).collect())
            .collect(),
        linear_change: a_inv
            .iter()
            .map(|row| row.iter().map(|r| r.to_string()).collect())
            .collect(),
        corrections: q_in_z
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_zero())
            .map(|(j, q)| (j + 1, q.to_string()))
            .collect(),
    };

    Ok(PrivilegedChart {
        base: base.to_vec(),
        weights,
        forward: coords,
        inverse,
        pushforward,
        provenance,
    })
}

/// Convenience wrapper converting a float base point exactly.
pub fn privileged_chart_f64(
    s: &SRStructure,
    base: &[f64],
    max_depth: usize,
) -> Result<PrivilegedChart> {
    let base: Vec<Rat> = base.iter().map(|&x| rat_from_f64(x)).collect();
    privileged_chart(s, &base, max_depth)
}

// ---------------------------------------------------------------------------
// Nilpotent approximation.

/// A frame of weighted-homogeneous fields in privileged coordinates: the
/// order-(-1) truncation of the pushforward.
#[derive(Clone, Debug)]
pub struct NilpotentFrame {
    pub chart: PrivilegedChart,
    pub fields: Vec<VectorField>,
    pub name: String,
}

impl NilpotentFrame {
    /// View as a plain structure (no domain: homogeneous fields are
    /// complete).
    pub fn to_structure(&self) -> SRStructure {
        SRStructure::new(self.name.clone(), self.fields.clone(), None)
            .expect("valid nilpotent frame")
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn rank(&self) -> usize {
        self.fields.len()
    }

    pub fn step(&self) -> usize {
        self.chart.step()
    }
}

/// Truncate the chart pushforward to its weighted-homogeneous part of order
/// -1 and certify the result: homogeneity is exact by construction, and the
/// truncated frame must be bracket-generating at 0 with the growth vector of
/// the base point.
pub fn nilpotentize(s: &SRStructure, chart: &PrivilegedChart) -> Result<NilpotentFrame> {
    let d = chart.dim();
    let weights = &chart.weights;
    let fields: Vec<VectorField> = chart
        .pushforward
        .iter()
        .map(|f| {
            VectorField::new(
                (0..d)
                    .map(|j| f.component(j).weighted_part(weights, weights[j] as u64 - 1))
                    .collect(),
            )
        })
        .collect();
    let nf = NilpotentFrame {
        chart: chart.clone(),
        fields,
        name: format!("{}^nilpotent", s.name),
    };
    let flag = flag_at(&nf.to_structure(), &vec![0.0; d], chart.step() + 1, 1e-9)?;
    if flag.growth_vector != chart.growth_vector() {
        return Err(Error::InvalidArgument(format!(
            "nilpotentization growth {:?} differs from base growth {:?}",
            flag.growth_vector,
            chart.growth_vector()
        )));
    }
    Ok(nf)
}

/// Exact homogeneity check `lambda (d_{1/lambda})_* Xhat == Xhat` at a
/// rational lambda: component j picks up `lambda^{1 - w_j + w(alpha)}` on a
/// monomial of weighted degree `w(alpha)`.
pub fn homogeneity_holds(nf: &NilpotentFrame, lambda: &Rat) -> bool {
    let weights = &nf.chart.weights;
    let d = nf.dim();
    for f in &nf.fields {
        for j in 0..d {
            // Substitute x_i -> lambda^{w_i} x_i and scale by
            // lambda^{1 - w_j}.
            let factors: Vec<Rat> = weights
                .iter()
                .map(|&w| {
                    let mut p = Rat::one();
                    for _ in 0..w {
                        p *= lambda;
                    }
                    p
                })
                .collect();
            let scaled = f.component(j).scale_vars(&factors);
            // lambda^{1-w_j}: divide by lambda^{w_j - 1} and multiply by
            // lambda once.
            let mut scale = lambda.clone();
            for _ in 0..weights[j] {
                scale /= lambda;
            }
            // scale = lambda^{1 - w_j}... constructed as lambda / lambda^{w_j}
            let got = scaled.scale(&scale);
            if &got != f.component(j) {
                return false;
            }
        }
    }
    true
}

/// Per-dilation sup error table for the convergence of the rescaled frame to
/// its nilpotent approximation on a box grid in chart coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<(f64, f64)>,
    /// Log-log slope of error against lambda (when at least two positive
    /// errors exist).
    pub slope: Option<f64>,
    /// Errors nonincreasing within 5% slack.
    pub nonincreasing: bool,
}

/// For each `lambda`, computes
/// `sup_grid max_i |lambda (d_{1/lambda})_* X_i - Xhat_i|` (sup over a grid
/// of the box in chart coordinates).
pub fn check_convergence(
    chart: &PrivilegedChart,
    nf: &NilpotentFrame,
    lambdas: &[f64],
    half_width: f64,
    grid: usize,
) -> Result<ConvergenceTable> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] >= w[0]) || lambdas[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "lambda list must be positive and strictly decreasing".into(),
        ));
    }
    let d = chart.dim();
    let push: Vec<Vec<crate::poly::CompiledPoly>> = chart
        .pushforward
        .iter()
        .map(|f| (0..d).map(|j| f.component(j).compile()).collect())
        .collect();
    let nil: Vec<Vec<crate::poly::CompiledPoly>> = nf
        .fields
        .iter()
        .map(|f| (0..d).map(|j| f.component(j).compile()).collect())
        .collect();
    let box_ = crate::structure::DomainBox::cube(d, half_width);
    let pts = box_.grid(grid.max(2));
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let mut err: f64 = 0.0;
        for y in &pts {
            // lambda (d_{1/lambda})_* X at y: component j is
            // lambda^{1-w_j} X~_j(d_lambda y).
            let dy: Vec<f64> = y
                .iter()
                .zip(&chart.weights)
                .map(|(yi, &w)| lam.powi(w as i32) * yi)
                .collect();
            for (pf, nl) in push.iter().zip(&nil) {
                for j in 0..d {
                    let scaled = lam.powi(1 - chart.weights[j] as i32) * pf[j].eval(&dy);
                    err = err.max((scaled - nl[j].eval(y)).abs());
                }
            }
        }
        rows.push((lam, err));
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].1 <= w[0].1 * 1.05);
    let pos: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|&(l, e)| (l.ln(), e.ln()))
        .collect();
    let slope = if pos.len() >= 2 {
        Some(fit_slope(&pos))
    } else {
        None
    };
    Ok(ConvergenceTable {
        rows,
        slope,
        nonincreasing,
    })
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn fit_slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xy {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Empirical Ball-Box constants at a regular point, from sampled distance
/// estimates. The reported constants are empirical stand-ins, not certified
/// bounds.
#[derive(Clone, Debug, Serialize)]
pub struct BallBoxEstimate {
    pub c_est: f64,
    pub eps_est: f64,
    /// Per-sample `(pseudo_norm, distance_upper, ratio)`.
    pub rows: Vec<(f64, f64, f64)>,
    /// Sample design used (radial flows along random constant controls).
    pub sample_design: String,
}

/// Samples points near the base by flowing random constant controls for
/// short times, estimates the distance to each, and reports the smallest
/// constant making both Ball-Box inequalities hold on all samples.
pub fn ball_box_calibrate(
    s: &SRStructure,
    chart: &PrivilegedChart,
    sample_times: &[f64],
    budget: &crate::endpoint::DistanceBudget,
    seed: u64,
) -> Result<BallBoxEstimate> {
    use rand::{Rng, SeedableRng};
    if sample_times.is_empty() {
        return Err(Error::InvalidArgument(
            "ball_box_calibrate needs at least one sample".into(),
        ));
    }
    let base = chart.base_f64();
    let flag = flag_at(s, &base, chart.step() + 2, 1e-9)?;
    if !flag.regular {
        return Err(Error::SingularPoint(format!(
            "ball_box_calibrate requires a (sampled-)regular base point, got growth {:?}",
            flag.growth_vector
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let opts = RkOptions::default();
    let mut rows = Vec::new();
    let mut c_est: f64 = 1.0;
    let mut eps_est: f64 = 0.0;
    for &t in sample_times {
        let u: Vec<f64> = (0..s.rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        let u: Vec<f64> = u.iter().map(|x| x / norm).collect();
        let q = crate::flow::flow_const(s, &u, t, &base, &opts)?;
        let pn = pseudo_norm(chart, &chart.to_chart(&q));
        let est = crate::endpoint::estimate_dsr(s, &base, &q, budget, seed ^ 0x5eed)?;
        let ratio = est.upper / pn.max(1e-300);
        rows.push((pn, est.upper, ratio));
        c_est = c_est.max(ratio).max(1.0 / ratio.max(1e-300));
        eps_est = eps_est.max(est.upper);
    }
    Ok(BallBoxEstimate {
        c_est,
        eps_est,
        rows,
        sample_design: "radial: random unit constant controls, given times".into(),
    })
}
