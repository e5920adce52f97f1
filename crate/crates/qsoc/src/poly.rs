//! Sparse multivariate polynomials over a fixed, ordered variable set.
//!
//! Two coefficient kinds share one representation: plain `f64` ([`Poly`]) and
//! affine expressions in SDP decision variables ([`DecisionPoly`]). Terms are
//! kept in a `BTreeMap` keyed by graded-lexicographic monomial order, so
//! iteration (and everything built on it: SDP assembly, SDPA export) is
//! canonical across runs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Coefficients with magnitude below this are treated as true zeros and pruned.
pub const PRUNE_EPS: f64 = 1e-300;

/// Ordered set of symbolic variables.
///
/// Convention used by the model layer: `t`, then chart coordinates
/// `x1..x_{n^2-1}`, then controls `u1..uK`. The ordering is fixed at
/// construction and shared by reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VariableSet {
    names: Vec<String>,
}

impl VariableSet {
    /// Builds a variable set; names must be unique and nonempty.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Arc<Self>> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidInput("variable set must be nonempty".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidInput("empty variable name".into()));
            }
            if names[..i].contains(a) {
                return Err(Error::InvalidInput(format!(
                    "duplicate variable name `{a}`"
                )));
            }
        }
        Ok(Arc::new(Self { names }))
    }

    /// `t, x1..x_{n_chart}, u1..u_{n_controls}` in that order.
    pub fn state_control(n_chart: usize, n_controls: usize) -> Arc<Self> {
        let mut names = Vec::with_capacity(1 + n_chart + n_controls);
        names.push("t".to_string());
        names.extend((1..=n_chart).map(|i| format!("x{i}")));
        names.extend((1..=n_controls).map(|k| format!("u{k}")));
        Self::new(names).expect("generated names are unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

type Exponents = SmallVec<[u16; 8]>;

/// Exponent vector of one term; length always equals the variable count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Exponents);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(smallvec::smallvec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize, power: u16) -> Result<Self> {
        if index >= nvars {
            return Err(Error::VariableIndex { index, nvars });
        }
        let mut e = Exponents::from_elem(0, nvars);
        e[index] = power;
        Ok(Monomial(e))
    }

    pub fn from_exponents(exps: impl IntoIterator<Item = u16>) -> Self {
        Monomial(exps.into_iter().collect())
    }

    pub fn exponents(&self) -> &[u16] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn degree_of(&self, var: usize) -> u16 {
        self.0[var]
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Product of monomials (exponent sum); errors on u16 overflow.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        debug_assert_eq!(self.0.len(), other.0.len());
        let mut out = self.0.clone();
        for (o, e) in out.iter_mut().zip(other.0.iter()) {
            *o = o.checked_add(*e).ok_or(Error::ExponentOverflow)?;
        }
        Ok(Monomial(out))
    }

    pub fn divides(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    /// `other / self`; caller must ensure `self.divides(other)`.
    pub fn div_into(&self, other: &Self) -> Self {
        Monomial(
            other
                .0
                .iter()
                .zip(self.0.iter())
                .map(|(b, a)| b - a)
                .collect(),
        )
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        let mut v = 1.0;
        for (i, &e) in self.0.iter().enumerate() {
            if e > 0 {
                v *= powi(point[i], e);
            }
        }
        v
    }
}

fn powi(base: f64, exp: u16) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        b *= b;
        e >>= 1;
    }
    acc
}

impl Ord for Monomial {
    /// Graded-lexicographic: higher total degree is larger; on ties the first
    /// differing exponent (in variable order) decides, larger exponent first.
    fn cmp(&self, other: &Self) -> Ordering {
        let (da, db) = (self.degree(), other.degree());
        if da != db {
            return da.cmp(&db);
        }
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            if a != b {
                return a.cmp(b);
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Coefficient algebra shared by plain and decision polynomials.
pub trait Coeff: Clone + fmt::Debug + PartialEq + Send + Sync {
    fn zero() -> Self;
    fn from_const(c: f64) -> Self;
    fn is_negligible(&self) -> bool;
    fn add_assign(&mut self, other: &Self);
    fn scale(&self, k: f64) -> Self;
    /// Product; fails when it would leave the affine class.
    fn mul(&self, other: &Self) -> Result<Self>;
    fn max_abs(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_const(c: f64) -> Self {
        c
    }
    fn is_negligible(&self) -> bool {
        self.abs() < PRUNE_EPS
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn mul(&self, other: &Self) -> Result<Self> {
        Ok(self * other)
    }
    fn max_abs(&self) -> f64 {
        self.abs()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// `constant + Σ weight_i · λ_i` over decision variables `λ_i`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: f64,
    pub linear: BTreeMap<u32, f64>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            constant: c,
            linear: BTreeMap::new(),
        }
    }

    pub fn decision(id: u32) -> Self {
        let mut linear = BTreeMap::new();
        linear.insert(id, 1.0);
        AffineExpr {
            constant: 0.0,
            linear,
        }
    }

    fn prune(mut self) -> Self {
        self.linear.retain(|_, w| w.abs() >= PRUNE_EPS);
        self
    }

    /// Numeric value under a decision-variable assignment.
    pub fn instantiate(&self, assignment: &[f64]) -> f64 {
        let mut v = self.constant;
        for (&id, &w) in &self.linear {
            v += w * assignment[id as usize];
        }
        v
    }
}

impl Coeff for AffineExpr {
    fn zero() -> Self {
        AffineExpr::default()
    }
    fn from_const(c: f64) -> Self {
        AffineExpr::constant(c)
    }
    fn is_negligible(&self) -> bool {
        self.constant.abs() < PRUNE_EPS && self.linear.is_empty()
    }
    fn add_assign(&mut self, other: &Self) {
        self.constant += other.constant;
        for (&id, &w) in &other.linear {
            let e = self.linear.entry(id).or_insert(0.0);
            *e += w;
            if e.abs() < PRUNE_EPS {
                self.linear.remove(&id);
            }
        }
    }
    fn scale(&self, k: f64) -> Self {
        AffineExpr {
            constant: self.constant * k,
            linear: self.linear.iter().map(|(&id, &w)| (id, w * k)).collect(),
        }
        .prune()
    }
    fn mul(&self, other: &Self) -> Result<Self> {
        if self.linear.is_empty() {
            Ok(other.scale(self.constant))
        } else if other.linear.is_empty() {
            Ok(self.scale(other.constant))
        } else {
            Err(Error::AffineViolation)
        }
    }
    fn max_abs(&self) -> f64 {
        self.linear
            .values()
            .fold(self.constant.abs(), |m, w| m.max(w.abs()))
    }
    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.linear.values().all(|w| w.is_finite())
    }
}

/// Sparse polynomial with coefficients in `C` over a shared [`VariableSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<C: Coeff> {
    vars: Arc<VariableSet>,
    terms: BTreeMap<Monomial, C>,
}

/// Plain real-coefficient polynomial.
pub type Poly = Polynomial<f64>;
/// Polynomial whose coefficients are affine in SDP decision variables.
pub type DecisionPoly = Polynomial<AffineExpr>;

impl<C: Coeff> Polynomial<C> {
    pub fn zero(vars: &Arc<VariableSet>) -> Self {
        Polynomial {
            vars: Arc::clone(vars),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &Arc<VariableSet>, c: C) -> Self {
        let mut p = Self::zero(vars);
        if !c.is_negligible() {
            p.terms.insert(Monomial::one(vars.len()), c);
        }
        p
    }

    pub fn var(vars: &Arc<VariableSet>, index: usize) -> Result<Self> {
        let m = Monomial::var(vars.len(), index, 1)?;
        let mut p = Self::zero(vars);
        p.terms.insert(m, C::from_const(1.0));
        Ok(p)
    }

    pub fn from_terms(
        vars: &Arc<VariableSet>,
        terms: impl IntoIterator<Item = (Monomial, C)>,
    ) -> Result<Self> {
        let mut p = Self::zero(vars);
        for (m, c) in terms {
            if m.nvars() != vars.len() {
                return Err(Error::PointLength {
                    expected: vars.len(),
                    got: m.nvars(),
                });
            }
            p.add_term(m, &c);
        }
        Ok(p)
    }

    fn add_term(&mut self, m: Monomial, c: &C) {
        if c.is_negligible() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                e.get_mut().add_assign(c);
                if e.get().is_negligible() {
                    e.remove();
                }
            }
        }
    }

    pub fn vars(&self) -> &Arc<VariableSet> {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, var: usize) -> u16 {
        self.terms
            .keys()
            .map(|m| m.degree_of(var))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(Coeff::max_abs).fold(0.0, f64::max)
    }

    fn check_same_vars(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.vars, &other.vars) || self.vars == other.vars {
            Ok(())
        } else {
            Err(Error::VariableSetMismatch)
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Self {
        if k == 0.0 {
            return Self::zero(&self.vars);
        }
        Polynomial {
            vars: Arc::clone(&self.vars),
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.scale(k)))
                .filter(|(_, c)| !c.is_negligible())
                .collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        let mut out = Self::zero(&self.vars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let m = ma.mul(mb)?;
                let c = ca.mul(cb)?;
                out.add_term(m, &c);
            }
        }
        if !out.terms.values().all(Coeff::is_finite) {
            return Err(Error::NonFinite("polynomial multiplication"));
        }
        Ok(out)
    }

    /// Multiply by a plain polynomial; always legal for decision coefficients.
    pub fn mul_plain(&self, other: &Poly) -> Result<Self> {
        if self.vars.as_ref() != other.vars().as_ref() {
            return Err(Error::VariableSetMismatch);
        }
        let mut out = Self::zero(&self.vars);
        for (ma, ca) in &self.terms {
            for (mb, &k) in other.terms() {
                out.add_term(ma.mul(mb)?, &ca.scale(k));
            }
        }
        Ok(out)
    }

    /// Formal partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Result<Self> {
        if var >= self.vars.len() {
            return Err(Error::VariableIndex {
                index: var,
                nvars: self.vars.len(),
            });
        }
        let mut out = Self::zero(&self.vars);
        for (m, c) in &self.terms {
            let e = m.degree_of(var);
            if e == 0 {
                continue;
            }
            let mut exps: Exponents = m.exponents().iter().copied().collect();
            exps[var] = e - 1;
            out.add_term(Monomial(exps), &c.scale(e as f64));
        }
        Ok(out)
    }

    /// Substitute plain polynomials for variables; `None` passes the variable
    /// through unchanged. Substituted polynomials must share the variable set.
    pub fn compose(&self, subs: &[Option<Poly>]) -> Result<Self> {
        if subs.len() != self.vars.len() {
            return Err(Error::PointLength {
                expected: self.vars.len(),
                got: subs.len(),
            });
        }
        for s in subs.iter().flatten() {
            if s.vars().as_ref() != self.vars.as_ref() {
                return Err(Error::VariableSetMismatch);
            }
        }
        // Power cache per substituted variable, built on demand.
        let mut powers: Vec<Vec<Poly>> = subs
            .iter()
            .map(|s| match s {
                Some(p) => vec![Poly::constant(&self.vars, 1.0), p.clone()],
                None => Vec::new(),
            })
            .collect();
        let mut out = Self::zero(&self.vars);
        for (m, c) in &self.terms {
            // Passthrough part of the monomial.
            let mut passthrough: Exponents = m.exponents().iter().copied().collect();
            let mut factor: Option<Poly> = None;
            for (v, sub) in subs.iter().enumerate() {
                if sub.is_none() {
                    continue;
                }
                let e = passthrough[v];
                passthrough[v] = 0;
                if e == 0 {
                    continue;
                }
                let cache = &mut powers[v];
                while cache.len() <= e as usize {
                    let next = cache.last().unwrap().mul(&cache[1])?;
                    cache.push(next);
                }
                let pw = &cache[e as usize];
                factor = Some(match factor {
                    None => pw.clone(),
                    Some(f) => f.mul(pw)?,
                });
            }
            let base = Polynomial {
                vars: Arc::clone(&self.vars),
                terms: BTreeMap::from([(Monomial(passthrough), c.clone())]),
            };
            let term = match factor {
                None => base,
                Some(f) => base.mul_plain(&f)?,
            };
            out = out.add(&term)?;
        }
        Ok(out)
    }

    /// Term-sum evaluation at a full point (one value per variable).
    pub fn eval(&self, point: &[f64]) -> Result<C> {
        if point.len() != self.vars.len() {
            return Err(Error::PointLength {
                expected: self.vars.len(),
                got: point.len(),
            });
        }
        let mut acc = C::zero();
        for (m, c) in &self.terms {
            acc.add_assign(&c.scale(m.eval(point)));
        }
        Ok(acc)
    }

    /// Copy with all coefficients of magnitude ≤ `eps` removed.
    pub fn clean(&self, eps: f64) -> Self {
        Polynomial {
            vars: Arc::clone(&self.vars),
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.max_abs() > eps)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Leading term in graded-lex order.
    pub fn leading_term(&self) -> Option<(&Monomial, &C)> {
        self.terms.iter().next_back()
    }
}

impl Poly {
    pub fn eval_f64(&self, point: &[f64]) -> Result<f64> {
        self.eval(point)
    }

    /// Lift to a decision polynomial with constant coefficients.
    pub fn lift(&self) -> DecisionPoly {
        DecisionPoly {
            vars: Arc::clone(&self.vars),
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| (m.clone(), AffineExpr::constant(c)))
                .collect(),
        }
    }

    /// Division with remainder by a single divisor under graded-lex order:
    /// returns `(q, r)` with `self = q·d + r` and no term of `r` divisible by
    /// the leading monomial of `d`.
    pub fn divide(&self, divisor: &Poly) -> Result<(Poly, Poly)> {
        self.check_same_vars(divisor)?;
        let (dm, dc) = divisor
            .leading_term()
            .ok_or_else(|| Error::InvalidInput("division by zero polynomial".into()))?;
        let (dm, dc) = (dm.clone(), *dc);
        let mut q = Poly::zero(&self.vars);
        let mut r = Poly::zero(&self.vars);
        let mut work = self.clone();
        while let Some((lm, lc)) = work.leading_term() {
            let (lm, lc) = (lm.clone(), *lc);
            if dm.divides(&lm) {
                let qm = dm.div_into(&lm);
                let qc = lc / dc;
                let mut qt = Poly::zero(&self.vars);
                qt.add_term(qm, &qc);
                work = work.sub(&qt.mul(divisor)?)?;
                // Guard against floating-point residue reintroducing the term.
                if work
                    .terms
                    .get(&lm)
                    .is_some_and(|c| c.abs() < 1e-12 * (1.0 + lc.abs()))
                {
                    work.terms.remove(&lm);
                }
                q = q.add(&qt)?;
            } else {
                r.add_term(lm.clone(), &lc);
                work.terms.remove(&lm);
            }
        }
        Ok((q, r))
    }
}

impl DecisionPoly {
    /// Replace decision variables by numeric values, yielding a plain poly.
    pub fn instantiate(&self, assignment: &[f64]) -> Poly {
        let mut out = Poly::zero(&self.vars);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), &c.instantiate(assignment));
        }
        out
    }

    /// Largest decision-variable id appearing, if any.
    pub fn max_decision_id(&self) -> Option<u32> {
        self.terms
            .values()
            .flat_map(|c| c.linear.keys().copied())
            .max()
    }
}

impl<C: Coeff> fmt::Display for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c:?})")?;
            for (v, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "·{}", self.vars.name(v))?,
                    _ => write!(f, "·{}^{}", self.vars.name(v), e)?,
                }
            }
        }
        Ok(())
    }
}

/// One term of the text encoding used by config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub coeff: f64,
    pub powers: Vec<u16>,
}

impl Poly {
    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms
            .iter()
            .map(|(m, &c)| TermRecord {
                coeff: c,
                powers: m.exponents().to_vec(),
            })
            .collect()
    }

    pub fn from_records(vars: &Arc<VariableSet>, records: &[TermRecord]) -> Result<Self> {
        Self::from_terms(
            vars,
            records
                .iter()
                .map(|r| (Monomial::from_exponents(r.powers.iter().copied()), r.coeff)),
        )
    }
}

/// All monomials over the variables listed in `support` (indices into the full
/// set of `nvars` variables) with total degree ≤ `max_degree`, in graded-lex
/// order. Exponent vectors are full-width.
pub fn monomials_up_to(nvars: usize, support: &[usize], max_degree: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut current = Exponents::from_elem(0u16, nvars);
    fn rec(
        support: &[usize],
        pos: usize,
        remaining: usize,
        current: &mut Exponents,
        out: &mut Vec<Monomial>,
    ) {
        if pos == support.len() {
            out.push(Monomial(current.clone()));
            return;
        }
        for e in 0..=remaining {
            current[support[pos]] = e as u16;
            rec(support, pos + 1, remaining - e, current, out);
        }
        current[support[pos]] = 0;
    }
    rec(support, 0, max_degree, &mut current, &mut out);
    out.sort();
    out
}
