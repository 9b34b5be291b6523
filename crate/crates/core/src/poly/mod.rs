//! Exact sparse multivariate polynomial arithmetic.
//!
//! This is the substrate for every symbolic computation in the crate: frame
//! coefficients, Lie brackets, coordinate changes and nilpotentizations are
//! all [`Multinomial`]s with exact rational coefficients, so algebraic
//! identities are verified term-for-term rather than within a tolerance.

pub(crate) mod parse;

pub use parse::{parse_expr, tokenize, Token};

use crate::error::Error;
use crate::Result;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Exact rational scalar.
pub type Rat = BigRational;

/// Rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Rational `n/d`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Exact rational from an `f64` (every finite float is dyadic).
pub fn rat_from_f64(x: f64) -> Rat {
    Rat::from_float(x).expect("finite float")
}

/// `f64` value of a rational.
pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Sparse polynomial in `dim` variables with exact rational coefficients.
///
/// Invariants: no stored coefficient is zero and every exponent tuple has
/// length `dim`.
#[derive(Clone, PartialEq, Eq)]
pub struct Multinomial {
    dim: usize,
    terms: BTreeMap<Vec<u32>, Rat>,
}

impl Multinomial {
    /// The zero polynomial.
    pub fn zero(dim: usize) -> Self {
        Multinomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    /// A constant polynomial.
    pub fn constant(dim: usize, c: Rat) -> Self {
        let mut p = Multinomial::zero(dim);
        if !c.is_zero() {
            p.terms.insert(vec![0; dim], c);
        }
        p
    }

    /// The coordinate function `x_{i}` (0-based).
    pub fn var(dim: usize, i: usize) -> Self {
        assert!(i < dim, "variable index {i} out of range for dim {dim}");
        let mut exps = vec![0u32; dim];
        exps[i] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(exps, Rat::one());
        Multinomial { dim, terms }
    }

    /// Build from explicit `(exponents, coefficient)` terms.
    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, Rat)>) -> Self {
        let mut p = Multinomial::zero(dim);
        for (e, c) in terms {
            assert_eq!(e.len(), dim);
            p.add_term(e, c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Iterate stored terms in deterministic (lexicographic) order.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Rat)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, exps: Vec<u32>, coeff: Rat) {
        if coeff.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().clone() + coeff;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "polynomial dims {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = Multinomial::zero(self.dim);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exps: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(exps, ca * cb);
            }
        }
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| (e.clone(), -c.clone()))
            .collect();
        Multinomial {
            dim: self.dim,
            terms,
        }
    }

    pub fn scale(&self, c: &Rat) -> Self {
        if c.is_zero() {
            return Multinomial::zero(self.dim);
        }
        let terms = self
            .terms
            .iter()
            .map(|(e, k)| (e.clone(), k * c))
            .collect();
        Multinomial {
            dim: self.dim,
            terms,
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Multinomial::constant(self.dim, Rat::one());
        for _ in 0..n {
            out = out.mul(self).expect("same dim");
        }
        out
    }

    /// Exact partial derivative with respect to variable `i` (0-based).
    pub fn partial(&self, i: usize) -> Result<Self> {
        if i >= self.dim {
            return Err(Error::IndexOutOfRange(format!(
                "partial wrt x{} on a {}-variable polynomial",
                i + 1,
                self.dim
            )));
        }
        let mut out = Multinomial::zero(self.dim);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut exps = e.clone();
            exps[i] -= 1;
            out.add_term(exps, c * Rat::from_integer(BigInt::from(e[i])));
        }
        Ok(out)
    }

    /// Minimal weighted degree `min_terms sum_i w_i * a_i`, or `None` for the
    /// zero polynomial (plus infinity).
    pub fn weighted_order(&self, weights: &[u32]) -> Option<u64> {
        assert_eq!(weights.len(), self.dim);
        self.terms
            .keys()
            .map(|e| {
                e.iter()
                    .zip(weights)
                    .map(|(a, w)| *a as u64 * *w as u64)
                    .sum()
            })
            .min()
    }

    /// Keep only the terms of weighted degree exactly `order`.
    pub fn weighted_part(&self, weights: &[u32], order: u64) -> Self {
        assert_eq!(weights.len(), self.dim);
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| {
                e.iter()
                    .zip(weights)
                    .map(|(a, w)| *a as u64 * *w as u64)
                    .sum::<u64>()
                    == order
            })
            .map(|(e, c)| (e.clone(), c.clone()))
            .collect();
        Multinomial {
            dim: self.dim,
            terms,
        }
    }

    /// Total-degree upper bound (max standard degree of stored terms).
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Exact evaluation at a rational point.
    pub fn eval_rat(&self, x: &[Rat]) -> Rat {
        assert_eq!(x.len(), self.dim);
        let mut acc = Rat::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (i, &a) in e.iter().enumerate() {
                for _ in 0..a {
                    t *= &x[i];
                }
            }
            acc += t;
        }
        acc
    }

    /// Floating-point evaluation. Prefer [`CompiledPoly`] in inner loops.
    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut t = rat_to_f64(c);
            for (i, &a) in e.iter().enumerate() {
                t *= x[i].powi(a as i32);
            }
            acc += t;
        }
        acc
    }

    /// Substitute `x_i <- subs[i]` and fully expand. All `subs` must share one
    /// dimension, which becomes the dimension of the result.
    pub fn substitute(&self, subs: &[Multinomial]) -> Result<Self> {
        if subs.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "substitute: {} polynomials for {} variables",
                subs.len(),
                self.dim
            )));
        }
        let out_dim = subs.first().map(|p| p.dim).unwrap_or(0);
        // Memoize powers of each substituted variable.
        let mut powers: Vec<Vec<Multinomial>> = subs
            .iter()
            .map(|p| vec![Multinomial::constant(out_dim, Rat::one()), p.clone()])
            .collect();
        let mut out = Multinomial::zero(out_dim);
        for (e, c) in &self.terms {
            let mut t = Multinomial::constant(out_dim, c.clone());
            for (i, &a) in e.iter().enumerate() {
                while powers[i].len() <= a as usize {
                    let next = powers[i].last().unwrap().mul(&subs[i])?;
                    powers[i].push(next);
                }
                t = t.mul(&powers[i][a as usize])?;
            }
            out = out.add(&t)?;
        }
        Ok(out)
    }

    /// Exact variable scaling `x_i <- c_i * x_i`.
    pub fn scale_vars(&self, factors: &[Rat]) -> Self {
        assert_eq!(factors.len(), self.dim);
        let mut out = Multinomial::zero(self.dim);
        for (e, c) in &self.terms {
            let mut k = c.clone();
            for (i, &a) in e.iter().enumerate() {
                for _ in 0..a {
                    k *= &factors[i];
                }
            }
            out.add_term(e.clone(), k);
        }
        out
    }

    /// Compile to a fast `f64` evaluator.
    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let factors: Vec<(usize, u32)> = e
                        .iter()
                        .enumerate()
                        .filter(|(_, &a)| a > 0)
                        .map(|(i, &a)| (i, a))
                        .collect();
                    (rat_to_f64(c), factors)
                })
                .collect(),
        }
    }
}

impl fmt::Display for Multinomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            let mag = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let is_const = e.iter().all(|&a| a == 0);
            let coeff_is_one = mag.is_one();
            if !coeff_is_one || is_const {
                write!(f, "{}", mag)?;
            }
            let mut wrote_var = false;
            for (i, &a) in e.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                if wrote_var || !coeff_is_one {
                    write!(f, "*")?;
                }
                write!(f, "x{}", i + 1)?;
                if a > 1 {
                    write!(f, "^{}", a)?;
                }
                wrote_var = true;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Multinomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

/// Compiled `f64` evaluator for one polynomial.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, u32)>)>,
}


impl CompiledPoly {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, factors) in &self.terms {
            let mut t = *c;
            for &(i, a) in factors {
                // Small exponents dominate; avoid powi call overhead for 1/2.
                t *= match a {
                    1 => x[i],
                    2 => x[i] * x[i],
                    _ => x[i].powi(a as i32),
                };
            }
            acc += t;
        }
        acc
    }
}

/// Polynomial vector field on `R^dim`: one [`Multinomial`] per component.
#[derive(Clone, PartialEq, Eq)]
pub struct VectorField {
    dim: usize,
    components: Vec<Multinomial>,
}

impl VectorField {
    pub fn new(components: Vec<Multinomial>) -> Self {
        let dim = components.len();
        assert!(dim > 0, "vector field needs at least one component");
        for c in &components {
            assert_eq!(c.dim(), dim, "component dim must equal ambient dim");
        }
        VectorField { dim, components }
    }

    pub fn zero(dim: usize) -> Self {
        VectorField::new(vec![Multinomial::zero(dim); dim])
    }

    /// The constant coordinate field `d/dx_i` (0-based).
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut comps = vec![Multinomial::zero(dim); dim];
        comps[i] = Multinomial::constant(dim, Rat::one());
        VectorField::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, j: usize) -> &Multinomial {
        &self.components[j]
    }

    pub fn components(&self) -> &[Multinomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let comps: Result<Vec<_>> = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect();
        Ok(VectorField::new(comps?))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let comps: Result<Vec<_>> = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.sub(b))
            .collect();
        Ok(VectorField::new(comps?))
    }

    pub fn scale(&self, c: &Rat) -> Self {
        VectorField::new(self.components.iter().map(|p| p.scale(c)).collect())
    }

    /// Constant linear combination `sum_i coeffs[i] * fields[i]`.
    pub fn linear_combination(fields: &[VectorField], coeffs: &[Rat]) -> Result<Self> {
        assert_eq!(fields.len(), coeffs.len());
        let dim = fields.first().map(|f| f.dim).unwrap_or(0);
        let mut out = VectorField::zero(dim);
        for (f, c) in fields.iter().zip(coeffs) {
            out = out.add(&f.scale(c))?;
        }
        Ok(out)
    }

    /// Apply the field to a scalar polynomial as a derivation:
    /// `X(h) = sum_j X_j * dh/dx_j`.
    pub fn apply(&self, h: &Multinomial) -> Result<Multinomial> {
        let mut out = Multinomial::zero(self.dim);
        for j in 0..self.dim {
            if self.components[j].is_zero() {
                continue;
            }
            out = out.add(&self.components[j].mul(&h.partial(j)?)?)?;
        }
        Ok(out)
    }

    pub fn eval_rat(&self, x: &[Rat]) -> Vec<Rat> {
        self.components.iter().map(|c| c.eval_rat(x)).collect()
    }

    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval_f64(x)).collect()
    }

    pub fn compile(&self) -> CompiledField {
        CompiledField {
            comps: self.components.iter().map(|c| c.compile()).collect(),
        }
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut wrote = false;
        for (j, c) in self.components.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            // Single-term components carry their sign on the separator so the
            // output re-parses under the strict summand grammar; multi-term
            // coefficients are parenthesized.
            let (negative, body) = if c.num_terms() == 1 {
                let coeff = c.terms().next().unwrap().1;
                if coeff.is_negative() {
                    (true, c.neg().to_string())
                } else {
                    (false, c.to_string())
                }
            } else {
                (false, format!("({})", c))
            };
            if wrote {
                write!(f, "{}", if negative { " - " } else { " + " })?;
            } else if negative {
                write!(f, "-")?;
            }
            write!(f, "{} dx{}", body, j + 1)?;
            wrote = true;
        }
        if !wrote {
            write!(f, "0 dx1")?;
        }
        Ok(())
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

/// Compiled `f64` evaluator for a vector field.
#[derive(Clone, Debug)]
pub struct CompiledField {
    comps: Vec<CompiledPoly>,
}

impl CompiledField {
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }
}

/// Sup over a sampling grid of `|d^a v_i|` for all multi-indices `|a| <= j`
/// and all components `i`. A lower bound of the true sup on the box: it
/// serves remainder-bound diagnostics, where under-estimation only makes the
/// reported bound tighter to violate.
pub fn seminorm(v: &VectorField, j: usize, lo: &[f64], hi: &[f64], grid: usize) -> f64 {
    assert_eq!(lo.len(), v.dim());
    assert_eq!(hi.len(), v.dim());
    assert!(grid >= 2, "need at least two grid points per axis");
    // All distinct partial-derivative polynomials up to total order j.
    let mut derivs: Vec<Multinomial> = v.components().to_vec();
    let mut frontier: Vec<Multinomial> = derivs.clone();
    for _ in 0..j {
        let mut next = Vec::new();
        for p in &frontier {
            for i in 0..v.dim() {
                let d = p.partial(i).expect("index in range");
                if !d.is_zero() {
                    next.push(d);
                }
            }
        }
        derivs.extend(next.iter().cloned());
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    let compiled: Vec<CompiledPoly> = derivs.iter().map(|p| p.compile()).collect();
    let dim = v.dim();
    let mut x = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    let mut best: f64 = 0.0;
    loop {
        for (k, xi) in x.iter_mut().enumerate() {
            let t = idx[k] as f64 / (grid - 1) as f64;
            *xi = lo[k] + t * (hi[k] - lo[k]);
        }
        for c in &compiled {
            best = best.max(c.eval(&x).abs());
        }
        // Advance the odometer.
        let mut k = 0;
        loop {
            if k == dim {
                return best;
            }
            idx[k] += 1;
            if idx[k] < grid {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x(dim: usize, i: usize) -> Multinomial {
        Multinomial::var(dim, i)
    }

    #[test]
    fn monomial_product() {
        let p = x(2, 0);
        let sq = p.mul(&p).unwrap();
        assert_eq!(sq, x(2, 0).pow(2));
        assert_eq!(sq.to_string(), "x1^2");
    }

    #[test]
    fn additive_identity() {
        let p = x(3, 0).add(&x(3, 2).scale(&rat(2, 3))).unwrap();
        assert_eq!(p.add(&Multinomial::zero(3)).unwrap(), p);
    }

    #[test]
    fn difference_of_squares() {
        // (x1+x2)(x1-x2) = x1^2 - x2^2, expanded by hand.
        let a = x(2, 0).add(&x(2, 1)).unwrap();
        let b = x(2, 0).sub(&x(2, 1)).unwrap();
        let want = x(2, 0).pow(2).sub(&x(2, 1).pow(2)).unwrap();
        assert_eq!(a.mul(&b).unwrap(), want);
    }

    #[test]
    fn partial_power_rule() {
        // d/dx1 (x1^2 x2) = 2 x1 x2
        let p = x(2, 0).pow(2).mul(&x(2, 1)).unwrap();
        let want = x(2, 0).mul(&x(2, 1)).unwrap().scale(&rat_int(2));
        assert_eq!(p.partial(0).unwrap(), want);
        // d/dx2 (x1) = 0
        assert!(x(2, 0).partial(1).unwrap().is_zero());
        // d/dx1 (x1 + x1 x2) = 1 + x2
        let p = x(2, 0).add(&x(2, 0).mul(&x(2, 1)).unwrap()).unwrap();
        let want = Multinomial::constant(2, Rat::one()).add(&x(2, 1)).unwrap();
        assert_eq!(p.partial(0).unwrap(), want);
    }

    #[test]
    fn partial_index_out_of_range() {
        assert!(x(2, 0).partial(2).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(x(2, 0).add(&x(3, 0)).is_err());
    }

    #[test]
    fn weighted_order_examples() {
        let w = [1u32, 1, 2];
        assert_eq!(x(3, 2).weighted_order(&w), Some(2));
        assert_eq!(x(3, 0).add(&x(3, 2)).unwrap().weighted_order(&w), Some(1));
        assert_eq!(Multinomial::zero(3).weighted_order(&w), None);
    }

    #[test]
    fn seminorm_constant_field() {
        let v = VectorField::coordinate(3, 0);
        for j in 0..3 {
            assert_eq!(seminorm(&v, j, &[-1.0; 3], &[1.0; 3], 5), 1.0);
        }
    }

    #[test]
    fn seminorm_linear_field() {
        // v = x1 d2 on [-2,2]^2: sup |x1| = 2 at j = 0, and the derivative
        // dx1/dx1 = 1 does not change the sup at j = 1.
        let mut comps = vec![Multinomial::zero(2); 2];
        comps[1] = x(2, 0);
        let v = VectorField::new(comps);
        assert_eq!(seminorm(&v, 0, &[-2.0; 2], &[2.0; 2], 33), 2.0);
        assert_eq!(seminorm(&v, 1, &[-2.0; 2], &[2.0; 2], 33), 2.0);
    }

    #[test]
    fn substitute_expands() {
        // p(x1,x2) = x1*x2 with x1 <- y1+y2, x2 <- y1-y2 gives y1^2 - y2^2.
        let p = x(2, 0).mul(&x(2, 1)).unwrap();
        let subs = [x(2, 0).add(&x(2, 1)).unwrap(), x(2, 0).sub(&x(2, 1)).unwrap()];
        let got = p.substitute(&subs).unwrap();
        let want = x(2, 0).pow(2).sub(&x(2, 1).pow(2)).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn display_round_trips_through_parser() {
        let p = x(3, 0)
            .pow(2)
            .scale(&rat(-3, 2))
            .add(&x(3, 2).mul(&x(3, 1)).unwrap())
            .unwrap()
            .add(&Multinomial::constant(3, rat(1, 7)))
            .unwrap();
        let back = parse_expr(&p.to_string(), 3).unwrap();
        assert_eq!(back, p);
    }

    fn arb_poly(dim: usize) -> impl Strategy<Value = Multinomial> {
        prop::collection::vec(
            (
                prop::collection::vec(0u32..3, dim),
                -6i64..=6,
                1i64..=4,
            ),
            0..6,
        )
        .prop_map(move |terms| {
            let mut p = Multinomial::zero(dim);
            for (e, n, d) in terms {
                p.add_term(e, rat(n, d));
            }
            p
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ring_axioms(a in arb_poly(3), b in arb_poly(3), c in arb_poly(3)) {
            let ab_c = a.mul(&b).unwrap().mul(&c).unwrap();
            let a_bc = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            let lhs = a.mul(&b.add(&c).unwrap()).unwrap();
            let rhs = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            // (p+q)-q == p term-for-term
            prop_assert_eq!(a.add(&b).unwrap().sub(&b).unwrap(), a);
        }

        #[test]
        fn weighted_order_is_additive(a in arb_poly(3), b in arb_poly(3)) {
            prop_assume!(!a.is_zero() && !b.is_zero());
            let w = [1u32, 2, 3];
            let oa = a.weighted_order(&w).unwrap();
            let ob = b.weighted_order(&w).unwrap();
            let prod = a.mul(&b).unwrap();
            prop_assert_eq!(prod.weighted_order(&w), Some(oa + ob));
        }

        #[test]
        fn partials_commute(a in arb_poly(3), i in 0usize..3, j in 0usize..3) {
            let dij = a.partial(i).unwrap().partial(j).unwrap();
            let dji = a.partial(j).unwrap().partial(i).unwrap();
            prop_assert_eq!(dij, dji);
        }
    }
}
