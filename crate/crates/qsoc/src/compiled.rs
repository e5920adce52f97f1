//! Flat-term polynomial evaluation for the simulation and control hot paths.
//!
//! The symbolic [`Poly`](crate::poly::Poly) type keeps monomials in a sorted
//! map, which is the right shape for algebra but not for evaluating the same
//! polynomial millions of times inside a trajectory loop. [`CompiledPoly`]
//! freezes a polynomial into a coefficient/factor list that evaluates with no
//! allocation and no branching beyond the term loop, and additionally supports
//! interval evaluation over an axis-aligned box, which is how jump-rate upper
//! bounds for thinning samplers are obtained.

use crate::poly::Poly;

/// One monomial: coefficient times a product of `var^exp` factors.
/// Only variables with nonzero exponent are stored.
#[derive(Debug, Clone)]
struct Term {
    coeff: f64,
    factors: Vec<(u32, u32)>,
}

/// A polynomial frozen for repeated evaluation over a fixed variable layout.
/// Points are full ambient vectors; variables absent from the polynomial are
/// simply never read.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    terms: Vec<Term>,
    /// One past the largest variable index read by any term.
    min_len: usize,
}

impl CompiledPoly {
    pub fn from_poly(poly: &Poly) -> Self {
        let mut terms = Vec::new();
        let mut min_len = 0;
        for (mono, &coeff) in poly.terms() {
            if coeff == 0.0 {
                continue;
            }
            let mut factors = Vec::new();
            for (var, &exp) in mono.exponents().iter().enumerate() {
                if exp > 0 {
                    factors.push((var as u32, exp as u32));
                    min_len = min_len.max(var + 1);
                }
            }
            terms.push(Term { coeff, factors });
        }
        Self { terms, min_len }
    }

    /// Number of point coordinates the evaluator will read.
    pub fn min_point_len(&self) -> usize {
        self.min_len
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert!(point.len() >= self.min_len);
        let mut acc = 0.0;
        for term in &self.terms {
            let mut v = term.coeff;
            for &(var, exp) in &term.factors {
                v *= point[var as usize].powi(exp as i32);
            }
            acc += v;
        }
        acc
    }

    /// Interval enclosure of the range over the box `[lo_i, hi_i]` per
    /// coordinate, by term-wise interval arithmetic. Sound but not tight:
    /// correlations between terms are ignored, so the result over-covers.
    pub fn eval_box(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        debug_assert_eq!(lo.len(), hi.len());
        debug_assert!(lo.len() >= self.min_len);
        let mut acc = (0.0, 0.0);
        for term in &self.terms {
            let mut iv = (term.coeff, term.coeff);
            for &(var, exp) in &term.factors {
                let p = pow_interval(lo[var as usize], hi[var as usize], exp);
                iv = mul_interval(iv, p);
            }
            acc = (acc.0 + iv.0, acc.1 + iv.1);
        }
        acc
    }
}

fn pow_interval(lo: f64, hi: f64, exp: u32) -> (f64, f64) {
    let e = exp as i32;
    let (a, b) = (lo.powi(e), hi.powi(e));
    if exp % 2 == 1 {
        (a, b)
    } else if lo <= 0.0 && hi >= 0.0 {
        (0.0, a.max(b))
    } else {
        (a.min(b), a.max(b))
    }
}

fn mul_interval(x: (f64, f64), y: (f64, f64)) -> (f64, f64) {
    let products = [x.0 * y.0, x.0 * y.1, x.1 * y.0, x.1 * y.1];
    let mut lo = products[0];
    let mut hi = products[0];
    for &p in &products[1..] {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{Poly, VarSet};

    fn vars(n: usize) -> VarSet {
        VarSet::new(n)
    }

    #[test]
    fn matches_symbolic_evaluation() {
        let vs = vars(3);
        // 2 x0² x2 − 3 x1 + 7.
        let p = Poly::from_terms(
            &vs,
            [
                (crate::poly::Monomial::from_exponents(&[2, 0, 1]), 2.0),
                (crate::poly::Monomial::from_exponents(&[0, 1, 0]), -3.0),
                (crate::poly::Monomial::from_exponents(&[0, 0, 0]), 7.0),
            ],
        )
        .unwrap();
        let c = CompiledPoly::from_poly(&p);
        let point = [1.5, -2.0, 0.5];
        let expect = 2.0 * 1.5f64.powi(2) * 0.5 - 3.0 * (-2.0) + 7.0;
        assert!((c.eval(&point) - expect).abs() < 1e-12);
    }

    #[test]
    fn box_bounds_cover_dense_samples() {
        let vs = vars(2);
        let p = Poly::from_terms(
            &vs,
            [
                (crate::poly::Monomial::from_exponents(&[2, 0]), 1.0),
                (crate::poly::Monomial::from_exponents(&[1, 1]), -2.0),
                (crate::poly::Monomial::from_exponents(&[0, 3]), 0.5),
            ],
        )
        .unwrap();
        let c = CompiledPoly::from_poly(&p);
        let lo = [-1.0, -0.5];
        let hi = [2.0, 1.0];
        let (blo, bhi) = c.eval_box(&lo, &hi);
        for i in 0..=20 {
            for j in 0..=20 {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / 20.0;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / 20.0;
                let v = c.eval(&[x, y]);
                assert!(v >= blo - 1e-12 && v <= bhi + 1e-12, "({x},{y}) -> {v}");
            }
        }
    }

    #[test]
    fn even_power_through_zero_starts_at_zero() {
        let vs = vars(1);
        let p = Poly::from_terms(
            &vs,
            [(crate::poly::Monomial::from_exponents(&[4]), 1.0)],
        )
        .unwrap();
        let c = CompiledPoly::from_poly(&p);
        let (lo, hi) = c.eval_box(&[-2.0], &[1.0]);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 16.0);
    }
}
