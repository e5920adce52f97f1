//! Controlled open quantum system: operator data, validation, the real
//! coordinate chart on density matrices, and the symbolic chart dynamics.
//!
//! The chart eliminates the two affine constraints (Hermiticity, unit trace)
//! of a density matrix: coordinates are `Re ρ_ii` for `i = 1..n−1`, then
//! `Re ρ_ij` for `i < j` row-major, then `Im ρ_ij` for `i < j` row-major,
//! `n²−1` reals in total. `ρ_nn` is reconstructed as `1 − Σ Re ρ_ii`. The
//! ordering is load-bearing: config files, value-polynomial files, and SDP
//! exports all reference coordinates by this layout.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::poly::{Monomial, Poly, TermRecord, VariableSet};

const HERMITICITY_TOL: f64 = 1e-12;
const CHART_INPUT_TOL: f64 = 1e-10;
pub(crate) const PURITY_ATOL: f64 = 1e-10;
const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Division remainder above this (relative to the numerator scale) fails the
/// jump-map affineness check.
const AFFINENESS_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Complex matrices (dense, row-major) — minimal internal helpers.
// ---------------------------------------------------------------------------

pub(crate) fn cmat_adjoint(n: usize, a: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

pub(crate) fn cmat_trace(n: usize, a: &[C64]) -> C64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

fn hermiticity_defect(n: usize, a: &[C64]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((a[i * n + j] - a[j * n + i].conj()).norm());
        }
    }
    d
}

// ---------------------------------------------------------------------------
// Operators and model data.
// ---------------------------------------------------------------------------

/// Hermitian operator; entries are symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOp {
    dim: usize,
    entries: Vec<C64>,
}

impl HermitianOp {
    /// Checks Hermiticity within 1e-12 (absolute) and stores `(A + A*)/2`.
    pub fn new(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "operator entry count {} does not match dim {}",
                entries.len(),
                dim
            )));
        }
        let defect = hermiticity_defect(dim, &entries);
        if defect > HERMITICITY_TOL {
            return Err(Error::InvalidInput(format!(
                "operator is not Hermitian: max |A_ij - conj(A_ji)| = {defect:.3e}"
            )));
        }
        let adj = cmat_adjoint(dim, &entries);
        let sym: Vec<C64> = entries
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| (a + b) * 0.5)
            .collect();
        Ok(Self { dim, entries: sym })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim + j]
    }
}

/// Measurement back-action kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Homodyne,
    PhotonCounting,
}

/// One measurement channel with jump operator `σ` (not necessarily Hermitian).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementChannel {
    pub dim: usize,
    pub sigma: Vec<C64>,
    pub kind: ChannelKind,
}

impl MeasurementChannel {
    pub fn new(dim: usize, sigma: Vec<C64>, kind: ChannelKind) -> Result<Self> {
        if sigma.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "channel matrix entry count {} does not match dim {}",
                sigma.len(),
                dim
            )));
        }
        Ok(Self { dim, sigma, kind })
    }
}

/// Admissible control set `U ⊂ R^K` as constraint polynomials `q(u) ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlSet {
    /// Per-coordinate bounds; compiles to the degree-1 pairs {u_k − lo_k, hi_k − u_k}.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Euclidean ball of given radius; compiles to {r² − Σ u_k²}.
    Ball { radius: f64 },
    /// Arbitrary constraint polynomials in u (term records over the u
    /// variables only). Compactness is the caller's responsibility.
    Polynomials { polys: Vec<Vec<TermRecord>> },
}

impl ControlSet {
    pub fn dim_matches(&self, k: usize) -> bool {
        match self {
            ControlSet::Box { lo, hi } => lo.len() == k && hi.len() == k,
            ControlSet::Ball { .. } => true,
            ControlSet::Polynomials { polys } => {
                polys.iter().all(|p| p.iter().all(|t| t.powers.len() == k))
            }
        }
    }

    /// Constraint polynomials over the ambient variable set.
    pub fn constraint_polys(&self, vars: &ModelVars) -> Result<Vec<Poly>> {
        let vs = &vars.set;
        let mut out = Vec::new();
        match self {
            ControlSet::Box { lo, hi } => {
                for k in 0..vars.n_controls {
                    let u = Poly::var(vs, vars.u_index(k))?;
                    out.push(u.sub(&Poly::constant(vs, lo[k]))?);
                    out.push(Poly::constant(vs, hi[k]).sub(&u)?);
                }
            }
            ControlSet::Ball { radius } => {
                let mut p = Poly::constant(vs, radius * radius);
                for k in 0..vars.n_controls {
                    let u = Poly::var(vs, vars.u_index(k))?;
                    p = p.sub(&u.mul(&u)?)?;
                }
                out.push(p);
            }
            ControlSet::Polynomials { polys } => {
                for records in polys {
                    // Records are over u variables only; widen to the ambient set.
                    let widened: Vec<TermRecord> = records
                        .iter()
                        .map(|t| {
                            let mut powers = vec![0u16; vars.ambient_len()];
                            for (k, &e) in t.powers.iter().enumerate() {
                                powers[vars.u_index(k)] = e;
                            }
                            TermRecord {
                                coeff: t.coeff,
                                powers,
                            }
                        })
                        .collect();
                    out.push(Poly::from_records(vs, &widened)?);
                }
            }
        }
        Ok(out)
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => u
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= lo[k] - tol && v <= hi[k] + tol),
            ControlSet::Ball { radius } => {
                u.iter().map(|v| v * v).sum::<f64>() <= radius * radius + tol
            }
            ControlSet::Polynomials { .. } => true,
        }
    }

    /// Project onto the set (boxes: clamp; balls: radial rescale).
    pub fn clamp(&self, u: &mut [f64]) {
        match self {
            ControlSet::Box { lo, hi } => {
                for (k, v) in u.iter_mut().enumerate() {
                    *v = v.clamp(lo[k], hi[k]);
                }
            }
            ControlSet::Ball { radius } => {
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius && norm > 0.0 {
                    let s = radius / norm;
                    for v in u.iter_mut() {
                        *v *= s;
                    }
                }
            }
            ControlSet::Polynomials { .. } => {}
        }
    }
}

/// The controlled open system: `H(u) = H0 + Σ u_k H_k` plus measurement
/// channels and the admissible control set.
#[derive(Debug, Clone)]
pub struct QuantumModel {
    pub dim: usize,
    pub h0: HermitianOp,
    pub controls: Vec<HermitianOp>,
    pub channels: Vec<MeasurementChannel>,
    pub control_set: ControlSet,
}

impl QuantumModel {
    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn n_chart(&self) -> usize {
        self.dim * self.dim - 1
    }

    pub fn hd_channels(&self) -> impl Iterator<Item = &MeasurementChannel> {
        self.channels
            .iter()
            .filter(|c| c.kind == ChannelKind::Homodyne)
    }

    pub fn pc_channels(&self) -> impl Iterator<Item = &MeasurementChannel> {
        self.channels
            .iter()
            .filter(|c| c.kind == ChannelKind::PhotonCounting)
    }
}

// ---------------------------------------------------------------------------
// Variable layout.
// ---------------------------------------------------------------------------

/// Ambient variable layout `(t, x1..x_{n²−1}, u1..uK)` shared by every
/// polynomial in a problem instance.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub set: Arc<VariableSet>,
    pub n_chart: usize,
    pub n_controls: usize,
}

impl ModelVars {
    pub fn new(n_chart: usize, n_controls: usize) -> Self {
        Self {
            set: VariableSet::state_control(n_chart, n_controls),
            n_chart,
            n_controls,
        }
    }

    pub fn ambient_len(&self) -> usize {
        1 + self.n_chart + self.n_controls
    }

    pub fn t_index(&self) -> usize {
        0
    }

    pub fn x_index(&self, k: usize) -> usize {
        1 + k
    }

    pub fn u_index(&self, k: usize) -> usize {
        1 + self.n_chart + k
    }

    pub fn x_indices(&self) -> Vec<usize> {
        (0..self.n_chart).map(|k| self.x_index(k)).collect()
    }

    pub fn u_indices(&self) -> Vec<usize> {
        (0..self.n_controls).map(|k| self.u_index(k)).collect()
    }

    /// `(t, x)` indices — the value-polynomial support for finite horizons.
    pub fn tx_indices(&self) -> Vec<usize> {
        let mut v = vec![self.t_index()];
        v.extend(self.x_indices());
        v
    }

    /// All ambient indices.
    pub fn txu_indices(&self) -> Vec<usize> {
        (0..self.ambient_len()).collect()
    }

    pub fn xu_indices(&self) -> Vec<usize> {
        let mut v = self.x_indices();
        v.extend(self.u_indices());
        v
    }

    /// Assemble a full evaluation point from parts.
    pub fn point(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.ambient_len());
        p.push(t);
        p.extend_from_slice(x);
        p.extend_from_slice(u);
        p
    }
}

// ---------------------------------------------------------------------------
// Chart.
// ---------------------------------------------------------------------------

/// Real coordinate chart on Hermitian trace-1 matrices (see module docs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateChart {
    pub dim: usize,
}

impl StateChart {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn n_coords(&self) -> usize {
        self.dim * self.dim - 1
    }

    fn n_offdiag(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    /// Position of the pair `(i, j)`, `i < j`, in row-major upper-triangle order.
    fn pair_pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.dim);
        // Pairs (0,1)..(0,n-1), (1,2)..: offset of row i is i*n - i(i+3)/2 - ... easier directly:
        let n = self.dim;
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn diag_index(&self, i: usize) -> usize {
        debug_assert!(i < self.dim - 1);
        i
    }

    pub fn re_index(&self, i: usize, j: usize) -> usize {
        self.dim - 1 + self.pair_pos(i, j)
    }

    pub fn im_index(&self, i: usize, j: usize) -> usize {
        self.dim - 1 + self.n_offdiag() + self.pair_pos(i, j)
    }

    /// Chart of a Hermitian trace-1 matrix (row-major entries).
    pub fn matrix_to_chart(&self, rho: &[C64]) -> Result<Vec<f64>> {
        let n = self.dim;
        if rho.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "matrix entry count {} does not match dim {n}",
                rho.len()
            )));
        }
        let defect = hermiticity_defect(n, rho);
        if defect > CHART_INPUT_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not Hermitian within {CHART_INPUT_TOL:.0e} (defect {defect:.3e})"
            )));
        }
        let tr = cmat_trace(n, rho);
        if (tr.re - 1.0).abs() > CHART_INPUT_TOL || tr.im.abs() > CHART_INPUT_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix trace {tr} is not 1 within {CHART_INPUT_TOL:.0e}"
            )));
        }
        // Symmetrize before reading off.
        let adj = cmat_adjoint(n, rho);
        let sym: Vec<C64> = rho
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| (a + b) * 0.5)
            .collect();
        let mut x = vec![0.0; self.n_coords()];
        for i in 0..n - 1 {
            x[self.diag_index(i)] = sym[i * n + i].re;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                x[self.re_index(i, j)] = sym[i * n + j].re;
                x[self.im_index(i, j)] = sym[i * n + j].im;
            }
        }
        Ok(x)
    }

    /// Inverse of [`Self::matrix_to_chart`]; always Hermitian with trace 1.
    pub fn chart_to_matrix(&self, x: &[f64]) -> Vec<C64> {
        let n = self.dim;
        let mut rho = vec![C64::new(0.0, 0.0); n * n];
        let mut diag_sum = 0.0;
        for i in 0..n - 1 {
            let v = x[self.diag_index(i)];
            rho[i * n + i] = C64::new(v, 0.0);
            diag_sum += v;
        }
        rho[(n - 1) * n + (n - 1)] = C64::new(1.0 - diag_sum, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = C64::new(x[self.re_index(i, j)], x[self.im_index(i, j)]);
                rho[i * n + j] = v;
                rho[j * n + i] = v.conj();
            }
        }
        rho
    }

    /// `tr ρ(x)²` as a degree-2 polynomial over the ambient variables.
    pub fn purity_polynomial(&self, vars: &ModelVars) -> Poly {
        let vs = &vars.set;
        let n = self.dim;
        let mut p = Poly::zero(vs);
        let mut diag_sum = Poly::constant(vs, 1.0);
        for i in 0..n - 1 {
            let xi = Poly::var(vs, vars.x_index(self.diag_index(i))).unwrap();
            p = p.add(&xi.mul(&xi).unwrap()).unwrap();
            diag_sum = diag_sum.sub(&xi).unwrap();
        }
        p = p.add(&diag_sum.mul(&diag_sum).unwrap()).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                for idx in [self.re_index(i, j), self.im_index(i, j)] {
                    let v = Poly::var(vs, vars.x_index(idx)).unwrap();
                    p = p.add(&v.mul(&v).unwrap().scale(2.0)).unwrap();
                }
            }
        }
        p
    }

    /// Fast numeric `tr ρ(x)²`.
    pub fn purity_value(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut p = 0.0;
        let mut diag_sum = 0.0;
        for i in 0..n - 1 {
            let v = x[self.diag_index(i)];
            p += v * v;
            diag_sum += v;
        }
        p += (1.0 - diag_sum) * (1.0 - diag_sum);
        for i in 0..n {
            for j in (i + 1)..n {
                let re = x[self.re_index(i, j)];
                let im = x[self.im_index(i, j)];
                p += 2.0 * (re * re + im * im);
            }
        }
        p
    }

    /// Chart of the pure state `ψψ*` for a random complex unit vector.
    pub fn random_pure_chart(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        use rand_distr::StandardNormal;
        let n = self.dim;
        let mut psi: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for c in psi.iter_mut() {
            *c /= norm;
        }
        let mut rho = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                rho[i * n + j] = psi[i] * psi[j].conj();
            }
        }
        self.matrix_to_chart(&rho)
            .expect("pure state is Hermitian trace-1")
    }
}

// ---------------------------------------------------------------------------
// Cost, horizon, initial distribution.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Discounted(f64),
}

/// Stage/terminal cost polynomials over the ambient variables.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub stage: Poly,
    pub terminal: Poly,
    pub horizon: Horizon,
}

impl CostSpec {
    pub fn validate(&self, vars: &ModelVars) -> Result<()> {
        match self.horizon {
            Horizon::Finite(t) if t <= 0.0 => {
                return Err(Error::InvalidInput("horizon T must be positive".into()))
            }
            Horizon::Discounted(g) if g <= 0.0 => {
                return Err(Error::InvalidInput(
                    "discount rate gamma must be positive".into(),
                ))
            }
            _ => {}
        }
        if self.terminal.degree_in(vars.t_index()) > 0 {
            return Err(Error::InvalidInput(
                "terminal cost must not depend on t".into(),
            ));
        }
        for k in 0..vars.n_controls {
            if self.terminal.degree_in(vars.u_index(k)) > 0 {
                return Err(Error::InvalidInput(
                    "terminal cost must not depend on u".into(),
                ));
            }
        }
        if matches!(self.horizon, Horizon::Discounted(_))
            && self.stage.degree_in(vars.t_index()) > 0
        {
            return Err(Error::InvalidInput(
                "discounted problems require a time-independent stage cost".into(),
            ));
        }
        Ok(())
    }
}

/// Finite mixture of Dirac atoms on the chart.
#[derive(Debug, Clone)]
pub struct InitialDistribution {
    pub atoms: Vec<(f64, Vec<f64>)>,
}

impl InitialDistribution {
    pub fn dirac(x: Vec<f64>) -> Self {
        Self {
            atoms: vec![(1.0, x)],
        }
    }

    pub fn validate(&self, chart: &StateChart, mixed: bool) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::InvalidInput(
                "initial distribution has no atoms".into(),
            ));
        }
        let mut total = 0.0;
        for (w, x) in &self.atoms {
            if *w <= 0.0 {
                return Err(Error::InvalidInput("atom weights must be positive".into()));
            }
            total += w;
            if x.len() != chart.n_coords() {
                return Err(Error::InvalidInput(format!(
                    "atom chart length {} does not match n²−1 = {}",
                    x.len(),
                    chart.n_coords()
                )));
            }
            let p = chart.purity_value(x);
            if mixed {
                if p > 1.0 + PURITY_ATOL {
                    return Err(Error::InvalidInput(format!(
                        "atom purity {p} exceeds 1 in mixed-state mode"
                    )));
                }
            } else if (p - 1.0).abs() > PURITY_ATOL {
                return Err(Error::InvalidInput(format!(
                    "atom is not pure: tr ρ² = {p} (expected 1 ± {PURITY_ATOL:.0e})"
                )));
            }
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "atom weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Full problem instance and JSON schema.
// ---------------------------------------------------------------------------

/// A validated control problem: model + chart + cost + initial distribution.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub model: QuantumModel,
    pub chart: StateChart,
    pub vars: ModelVars,
    pub cost: CostSpec,
    pub initial: InitialDistribution,
    hash: String,
}

impl ControlProblem {
    pub fn from_parts(
        model: QuantumModel,
        cost: CostSpec,
        initial: InitialDistribution,
    ) -> Result<Self> {
        let chart = StateChart::new(model.dim);
        let vars = ModelVars::new(model.n_chart(), model.n_controls());
        cost.validate(&vars)?;
        initial
            .validate(&chart, false)
            .or_else(|_| initial.validate(&chart, true))?;
        let problem = Self {
            model,
            chart,
            vars,
            cost,
            initial,
            hash: String::new(),
        };
        let file = problem.to_model_file();
        let mut hashed = problem;
        hashed.hash = file.content_hash();
        Ok(hashed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Stable content hash of the resolved model file (first 16 hex chars).
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    /// Serializable form (canonical field order, used for hashing and dumps).
    pub fn to_model_file(&self) -> ModelFile {
        let n = self.model.dim;
        let to_rows = |e: &[C64]| -> Vec<Vec<[f64; 2]>> {
            (0..n)
                .map(|i| (0..n).map(|j| [e[i * n + j].re, e[i * n + j].im]).collect())
                .collect()
        };
        ModelFile {
            dim: n,
            h0: to_rows(self.model.h0.entries()),
            controls: self
                .model
                .controls
                .iter()
                .map(|h| to_rows(h.entries()))
                .collect(),
            channels: self
                .model
                .channels
                .iter()
                .map(|c| ChannelFile {
                    matrix: to_rows(&c.sigma),
                    kind: c.kind,
                })
                .collect(),
            control_set: self.model.control_set.clone(),
            cost: CostFile {
                stage_terms: self.cost.stage.to_records(),
                terminal_terms: self.cost.terminal.to_records(),
            },
            horizon: match self.cost.horizon {
                Horizon::Finite(t) => HorizonFile {
                    t: Some(t),
                    gamma: None,
                },
                Horizon::Discounted(g) => HorizonFile {
                    t: None,
                    gamma: Some(g),
                },
            },
            initial: InitialFile {
                atoms: self
                    .initial
                    .atoms
                    .iter()
                    .map(|(w, x)| AtomFile {
                        weight: *w,
                        state_matrix: to_rows(&self.chart.chart_to_matrix(x)),
                    })
                    .collect(),
            },
        }
    }
}

fn rows_to_cmat(dim: usize, rows: &[Vec<[f64; 2]>]) -> Result<Vec<C64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput(format!("matrix is not {dim}×{dim}")));
    }
    Ok(rows
        .iter()
        .flat_map(|r| r.iter().map(|&[re, im]| C64::new(re, im)))
        .collect())
}

/// JSON model schema (complex entries as `[re, im]` pairs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub h0: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub controls: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub channels: Vec<ChannelFile>,
    pub control_set: ControlSet,
    pub cost: CostFile,
    pub horizon: HorizonFile,
    pub initial: InitialFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    pub matrix: Vec<Vec<[f64; 2]>>,
    pub kind: ChannelKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostFile {
    pub stage_terms: Vec<TermRecord>,
    pub terminal_terms: Vec<TermRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonFile {
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialFile {
    pub atoms: Vec<AtomFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomFile {
    pub weight: f64,
    pub state_matrix: Vec<Vec<[f64; 2]>>,
}

impl ModelFile {
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model file serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    pub fn into_problem(self) -> Result<ControlProblem> {
        let dim = self.dim;
        if dim < 2 {
            return Err(Error::InvalidInput("dim must be at least 2".into()));
        }
        let h0 = HermitianOp::new(dim, rows_to_cmat(dim, &self.h0)?)?;
        let controls: Vec<HermitianOp> = self
            .controls
            .iter()
            .map(|m| HermitianOp::new(dim, rows_to_cmat(dim, m)?))
            .collect::<Result<_>>()?;
        let channels: Vec<MeasurementChannel> = self
            .channels
            .iter()
            .map(|c| MeasurementChannel::new(dim, rows_to_cmat(dim, &c.matrix)?, c.kind))
            .collect::<Result<_>>()?;
        let k = controls.len();
        if !self.control_set.dim_matches(k) {
            return Err(Error::InvalidInput(format!(
                "control set dimension does not match {k} control fields"
            )));
        }
        let model = QuantumModel {
            dim,
            h0,
            controls,
            channels,
            control_set: self.control_set.clone(),
        };
        let chart = StateChart::new(dim);
        let vars = ModelVars::new(model.n_chart(), k);
        let horizon = match (self.horizon.t, self.horizon.gamma) {
            (Some(t), None) => Horizon::Finite(t),
            (None, Some(g)) => Horizon::Discounted(g),
            _ => {
                return Err(Error::InvalidInput(
                    "horizon must specify exactly one of T or gamma".into(),
                ))
            }
        };
        let widen = |records: &[TermRecord]| -> Result<Poly> {
            for r in records {
                if r.powers.len() != vars.ambient_len() {
                    return Err(Error::InvalidInput(format!(
                        "cost term has {} powers, expected {} (t, x.., u..)",
                        r.powers.len(),
                        vars.ambient_len()
                    )));
                }
            }
            Poly::from_records(&vars.set, records)
        };
        let cost = CostSpec {
            stage: widen(&self.cost.stage_terms)?,
            terminal: widen(&self.cost.terminal_terms)?,
            horizon,
        };
        let mut atoms = Vec::new();
        for a in &self.initial.atoms {
            let rho = rows_to_cmat(dim, &a.state_matrix)?;
            atoms.push((a.weight, chart.matrix_to_chart(&rho)?));
        }
        ControlProblem::from_parts(model, cost, InitialDistribution { atoms })
    }
}

// ---------------------------------------------------------------------------
// Polynomial-valued complex matrices and the symbolic dynamics.
// ---------------------------------------------------------------------------

/// Complex matrix with polynomial entries, used to push the matrix-valued
/// dynamics through the chart.
#[derive(Debug, Clone)]
struct PolyMat {
    n: usize,
    re: Vec<Poly>,
    im: Vec<Poly>,
}

impl PolyMat {
    fn zero(n: usize, vs: &Arc<VariableSet>) -> Self {
        Self {
            n,
            re: vec![Poly::zero(vs); n * n],
            im: vec![Poly::zero(vs); n * n],
        }
    }

    fn from_constant(n: usize, m: &[C64], vs: &Arc<VariableSet>) -> Self {
        let mut out = Self::zero(n, vs);
        for (k, c) in m.iter().enumerate() {
            out.re[k] = Poly::constant(vs, c.re);
            out.im[k] = Poly::constant(vs, c.im);
        }
        out
    }

    /// Symbolic ρ(x) with the trace coordinate eliminated.
    fn rho(chart: &StateChart, vars: &ModelVars) -> Result<Self> {
        let vs = &vars.set;
        let n = chart.dim;
        let mut out = Self::zero(n, vs);
        let mut diag_sum = Poly::constant(vs, 1.0);
        for i in 0..n - 1 {
            let xi = Poly::var(vs, vars.x_index(chart.diag_index(i)))?;
            out.re[i * n + i] = xi.clone();
            diag_sum = diag_sum.sub(&xi)?;
        }
        out.re[(n - 1) * n + (n - 1)] = diag_sum;
        for i in 0..n {
            for j in (i + 1)..n {
                let re = Poly::var(vs, vars.x_index(chart.re_index(i, j)))?;
                let im = Poly::var(vs, vars.x_index(chart.im_index(i, j)))?;
                out.re[i * n + j] = re.clone();
                out.im[i * n + j] = im.clone();
                out.re[j * n + i] = re;
                out.im[j * n + i] = im.neg();
            }
        }
        Ok(out)
    }

    fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        for k in 0..self.n * self.n {
            out.re[k] = out.re[k].add(&other.re[k])?;
            out.im[k] = out.im[k].add(&other.im[k])?;
        }
        Ok(out)
    }

    fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    fn scale(&self, k: f64) -> Self {
        Self {
            n: self.n,
            re: self.re.iter().map(|p| p.scale(k)).collect(),
            im: self.im.iter().map(|p| p.scale(k)).collect(),
        }
    }

    /// Entrywise multiply by a real polynomial scalar.
    fn scale_poly(&self, s: &Poly) -> Result<Self> {
        Ok(Self {
            n: self.n,
            re: self.re.iter().map(|p| p.mul(s)).collect::<Result<_>>()?,
            im: self.im.iter().map(|p| p.mul(s)).collect::<Result<_>>()?,
        })
    }

    fn mul(&self, other: &Self) -> Result<Self> {
        let n = self.n;
        let vs = self.re[0].vars();
        let mut out = Self::zero(n, vs);
        for i in 0..n {
            for j in 0..n {
                let mut re = Poly::zero(vs);
                let mut im = Poly::zero(vs);
                for k in 0..n {
                    let (ar, ai) = (&self.re[i * n + k], &self.im[i * n + k]);
                    let (br, bi) = (&other.re[k * n + j], &other.im[k * n + j]);
                    re = re.add(&ar.mul(br)?)?.sub(&ai.mul(bi)?)?;
                    im = im.add(&ar.mul(bi)?)?.add(&ai.mul(br)?)?;
                }
                out.re[i * n + j] = re;
                out.im[i * n + j] = im;
            }
        }
        Ok(out)
    }

    fn adjoint(&self) -> Self {
        let n = self.n;
        let vs = self.re[0].vars();
        let mut out = Self::zero(n, vs);
        for i in 0..n {
            for j in 0..n {
                out.re[j * n + i] = self.re[i * n + j].clone();
                out.im[j * n + i] = self.im[i * n + j].neg();
            }
        }
        out
    }

    /// Multiply by `−i`: `−i(a + bi) = b − ai`.
    fn times_minus_i(&self) -> Self {
        Self {
            n: self.n,
            re: self.im.clone(),
            im: self.re.iter().map(Poly::neg).collect(),
        }
    }

    fn trace(&self) -> Result<(Poly, Poly)> {
        let vs = self.re[0].vars();
        let mut re = Poly::zero(vs);
        let mut im = Poly::zero(vs);
        for i in 0..self.n {
            re = re.add(&self.re[i * self.n + i])?;
            im = im.add(&self.im[i * self.n + i])?;
        }
        Ok((re, im))
    }

    /// Read off chart components; checks the matrix is (symbolically)
    /// Hermitian and traceless up to coefficient tolerance.
    fn read_off_tangent(&self, chart: &StateChart, what: &str) -> Result<Vec<Poly>> {
        let n = self.n;
        let scale = 1.0
            + self
                .re
                .iter()
                .chain(self.im.iter())
                .map(Poly::max_abs_coeff)
                .fold(0.0, f64::max);
        let tol = 1e-10 * scale;
        let (tr_re, tr_im) = self.trace()?;
        if tr_re.max_abs_coeff() > tol || tr_im.max_abs_coeff() > tol {
            return Err(Error::InvalidModel(format!(
                "{what}: image is not traceless (coefficient defect {:.3e})",
                tr_re.max_abs_coeff().max(tr_im.max_abs_coeff())
            )));
        }
        for i in 0..n {
            if self.im[i * n + i].max_abs_coeff() > tol {
                return Err(Error::InvalidModel(format!(
                    "{what}: diagonal entries are not real"
                )));
            }
            for j in (i + 1)..n {
                let dre = self.re[i * n + j].sub(&self.re[j * n + i])?.max_abs_coeff();
                let dim = self.im[i * n + j].add(&self.im[j * n + i])?.max_abs_coeff();
                if dre > tol || dim > tol {
                    return Err(Error::InvalidModel(format!(
                        "{what}: image is not Hermitian (defect {:.3e})",
                        dre.max(dim)
                    )));
                }
            }
        }
        let mut out = vec![Poly::zero(self.re[0].vars()); chart.n_coords()];
        for i in 0..n - 1 {
            out[chart.diag_index(i)] = self.re[i * n + i].clean(0.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                out[chart.re_index(i, j)] = self.re[i * n + j].clean(0.0);
                out[chart.im_index(i, j)] = self.im[i * n + j].clean(0.0);
            }
        }
        Ok(out)
    }
}

/// Chart-space dynamics data extracted from the model.
#[derive(Debug, Clone)]
pub struct SymbolicDynamics {
    /// Effective drift, one polynomial in (x, u) per chart coordinate.
    pub drift: Vec<Poly>,
    /// Diffusion vector fields in x, one set per homodyne channel.
    pub diffusion: Vec<Vec<Poly>>,
    /// Jump rates λ_l(x), one per photon-counting channel.
    pub rates: Vec<Poly>,
    /// Affine post-jump charts h_l(x), one component list per PC channel.
    pub jumps: Vec<Vec<Poly>>,
}

/// Lindblad dissipator image `σρσ* − ½{σ*σ, ρ}` as a chart matrix.
fn dissipator(sigma: &PolyMat, sigma_adj: &PolyMat, rho: &PolyMat) -> Result<PolyMat> {
    let srs = sigma.mul(rho)?.mul(sigma_adj)?;
    let ss = sigma_adj.mul(sigma)?;
    let anti = ss.mul(rho)?.add(&rho.mul(&ss)?)?;
    srs.sub(&anti.scale(0.5))
}

/// Symbolic drift/diffusion/rate/jump data of the filtering equation in chart
/// coordinates. Fails when a PC channel violates the affine-jump requirement.
pub fn symbolic_dynamics(
    model: &QuantumModel,
    chart: &StateChart,
    vars: &ModelVars,
) -> Result<SymbolicDynamics> {
    let vs = &vars.set;
    let n = model.dim;
    let rho = PolyMat::rho(chart, vars)?;

    // H(u) = H0 + Σ u_k H_k.
    let mut h = PolyMat::from_constant(n, model.h0.entries(), vs);
    for (k, hk) in model.controls.iter().enumerate() {
        let u = Poly::var(vs, vars.u_index(k))?;
        h = h.add(&PolyMat::from_constant(n, hk.entries(), vs).scale_poly(&u)?)?;
    }

    // Effective drift: −i[H,ρ] + Σ_all dissipators − Σ_PC (σρσ* − tr(σρσ*)ρ).
    let mut drift_mat = h.mul(&rho)?.sub(&rho.mul(&h)?)?.times_minus_i();
    let mut rates = Vec::new();
    let mut jumps = Vec::new();
    let mut diffusion = Vec::new();
    for channel in &model.channels {
        let sigma = PolyMat::from_constant(n, &channel.sigma, vs);
        let sigma_adj = sigma.adjoint();
        drift_mat = drift_mat.add(&dissipator(&sigma, &sigma_adj, &rho)?)?;
        match channel.kind {
            ChannelKind::Homodyne => {
                // 𝒢ρ = σρ + ρσ* − tr(σρ + ρσ*) ρ.
                let sum = sigma.mul(&rho)?.add(&rho.mul(&sigma_adj)?)?;
                let (tr_re, tr_im) = sum.trace()?;
                if tr_im.max_abs_coeff() > 1e-10 {
                    return Err(Error::InvalidModel(
                        "homodyne innovation trace is not real".into(),
                    ));
                }
                let g = sum.sub(&rho.scale_poly(&tr_re)?)?;
                diffusion.push(g.read_off_tangent(chart, "diffusion")?);
            }
            ChannelKind::PhotonCounting => {
                // Subtract 𝓛_l ρ = σρσ* − λρ from the drift.
                let srs = sigma.mul(&rho)?.mul(&sigma_adj)?;
                let (lambda, lambda_im) = srs.trace()?;
                if lambda_im.max_abs_coeff() > 1e-10 {
                    return Err(Error::InvalidModel("jump rate is not real".into()));
                }
                // Roundoff-level coefficients (relative 1e-12) are treated as
                // zero; a near-degenerate leading term would otherwise wreck
                // the division below.
                let lambda = lambda.clean(1e-12 * lambda.max_abs_coeff());
                drift_mat = drift_mat.sub(&srs.sub(&rho.scale_poly(&lambda)?)?)?;
                // Jump chart: componentwise exact division of σρσ* read-offs by λ.
                let num_components = numerator_chart_components(&srs, chart)?;
                let mut h_components = Vec::new();
                for (ci, p) in num_components.iter().enumerate() {
                    let p = p.clean(1e-12 * p.max_abs_coeff());
                    let (q, r) = p.divide(&lambda)?;
                    let scale = 1.0 + p.max_abs_coeff();
                    if r.max_abs_coeff() > AFFINENESS_TOL * scale || q.degree() > 1 {
                        return Err(Error::InvalidModel(format!(
                            "PC channel jump map is not affine: component {ci} divides with \
                             remainder ∞-norm {:.3e} (quotient degree {})",
                            r.max_abs_coeff(),
                            q.degree()
                        )));
                    }
                    h_components.push(q.clean(1e-14 * scale));
                }
                rates.push(lambda.clean(0.0));
                jumps.push(h_components);
            }
        }
    }

    let drift = drift_mat.read_off_tangent(chart, "drift")?;
    for (k, p) in drift.iter().enumerate() {
        for u in 0..vars.n_controls {
            if p.degree_in(vars.u_index(u)) > 1 {
                return Err(Error::InvalidModel(format!(
                    "drift component {k} is not affine in the controls"
                )));
            }
        }
    }
    Ok(SymbolicDynamics {
        drift,
        diffusion,
        rates,
        jumps,
    })
}

/// Chart read-offs of the (Hermitian, not traceless) jump numerator σρσ*.
/// Only the first n−1 diagonal entries and the upper off-diagonals are needed;
/// the trace is λ by construction.
fn numerator_chart_components(srs: &PolyMat, chart: &StateChart) -> Result<Vec<Poly>> {
    let n = srs.n;
    let mut out = vec![Poly::zero(srs.re[0].vars()); chart.n_coords()];
    for i in 0..n - 1 {
        out[chart.diag_index(i)] = srs.re[i * n + i].clone();
    }
    for i in 0..n {
        for j in (i + 1)..n {
            out[chart.re_index(i, j)] = srs.re[i * n + j].clone();
            out[chart.im_index(i, j)] = srs.im[i * n + j].clone();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub context: String,
    pub message: String,
}

/// Affineness certificate for one photon-counting channel: per-component
/// division remainders of σρσ* read-offs by λ.
#[derive(Debug, Clone, Serialize)]
pub struct JumpAffinenessCheck {
    pub channel: usize,
    pub remainder_norms: Vec<f64>,
    pub max_remainder: f64,
    pub quotient_degree: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub jump_checks: Vec<JumpAffinenessCheck>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.issues {
            s.push_str(&format!(
                "[{:?}] {}: {}\n",
                i.severity, i.context, i.message
            ));
        }
        for c in &self.jump_checks {
            s.push_str(&format!(
                "jump map check, channel {}: {} (max remainder {:.3e}, quotient degree {})\n",
                c.channel,
                if c.pass { "affine" } else { "NOT affine" },
                c.max_remainder,
                c.quotient_degree
            ));
        }
        if self.issues.is_empty() && self.jump_checks.is_empty() {
            s.push_str("no findings\n");
        }
        s
    }
}

/// Structured model validation; never panics. Checks operator Hermiticity,
/// control-set boundedness (box/ball), the affine-jump requirement per PC
/// channel (by exact polynomial division), and initial-atom purity.
pub fn validate_model(problem: &ControlProblem) -> ValidationReport {
    let mut issues = Vec::new();
    let mut jump_checks = Vec::new();
    let model = &problem.model;
    let chart = &problem.chart;
    let vars = &problem.vars;

    let mut check_herm = |name: String, op: &HermitianOp| {
        let defect = hermiticity_defect(op.dim(), op.entries());
        if defect > HERMITICITY_TOL {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                context: name,
                message: format!("not Hermitian (defect {defect:.3e})"),
            });
        }
    };
    check_herm("H0".into(), &model.h0);
    for (k, hk) in model.controls.iter().enumerate() {
        check_herm(format!("H{}", k + 1), hk);
    }

    match &model.control_set {
        ControlSet::Box { lo, hi } => {
            if lo.iter().zip(hi).any(|(a, b)| a >= b) {
                issues.push(ValidationIssue {
                    severity: Severity::Error,
                    context: "control set".into(),
                    message: "box bounds must satisfy lo < hi per coordinate".into(),
                });
            }
        }
        ControlSet::Ball { radius } => {
            if *radius <= 0.0 {
                issues.push(ValidationIssue {
                    severity: Severity::Error,
                    context: "control set".into(),
                    message: "ball radius must be positive".into(),
                });
            }
        }
        ControlSet::Polynomials { polys } => {
            if polys.is_empty() {
                issues.push(ValidationIssue {
                    severity: Severity::Error,
                    context: "control set".into(),
                    message: "constraint list is empty (set must be compact)".into(),
                });
            } else {
                issues.push(ValidationIssue {
                    severity: Severity::Warning,
                    context: "control set".into(),
                    message: "arbitrary constraint polynomials: compactness and the \
                              Positivstellensatz precondition are not auto-verified"
                        .into(),
                });
            }
        }
    }

    // Jump affineness per PC channel (independent of symbolic_dynamics error
    // paths so the report always carries the division evidence).
    let rho = match PolyMat::rho(chart, vars) {
        Ok(r) => Some(r),
        Err(e) => {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                context: "chart".into(),
                message: e.to_string(),
            });
            None
        }
    };
    if let Some(rho) = rho {
        for (l, channel) in model.channels.iter().enumerate() {
            if channel.kind != ChannelKind::PhotonCounting {
                continue;
            }
            let sigma = PolyMat::from_constant(model.dim, &channel.sigma, &vars.set);
            let check = (|| -> Result<JumpAffinenessCheck> {
                let srs = sigma.mul(&rho)?.mul(&sigma.adjoint())?;
                let (lambda, _) = srs.trace()?;
                let lambda = lambda.clean(1e-12 * lambda.max_abs_coeff());
                if lambda.is_zero() {
                    return Ok(JumpAffinenessCheck {
                        channel: l,
                        remainder_norms: vec![],
                        max_remainder: f64::INFINITY,
                        quotient_degree: 0,
                        pass: false,
                    });
                }
                let comps: Vec<Poly> = numerator_chart_components(&srs, chart)?
                    .iter()
                    .map(|p| p.clean(1e-12 * p.max_abs_coeff()))
                    .collect();
                let mut norms = Vec::new();
                let mut degree = 0;
                for p in &comps {
                    let (q, r) = p.divide(&lambda)?;
                    norms.push(r.max_abs_coeff());
                    degree = degree.max(q.degree());
                }
                let max_remainder = norms.iter().copied().fold(0.0, f64::max);
                let scale = 1.0 + comps.iter().map(Poly::max_abs_coeff).fold(0.0, f64::max);
                Ok(JumpAffinenessCheck {
                    channel: l,
                    remainder_norms: norms,
                    max_remainder,
                    quotient_degree: degree,
                    pass: max_remainder <= AFFINENESS_TOL * scale && degree <= 1,
                })
            })();
            match check {
                Ok(c) => {
                    if !c.pass {
                        issues.push(ValidationIssue {
                            severity: Severity::Error,
                            context: format!("channel {l}"),
                            message: format!(
                                "jump map is not affine (max division remainder {:.3e}, \
                                 quotient degree {})",
                                c.max_remainder, c.quotient_degree
                            ),
                        });
                    }
                    jump_checks.push(c);
                }
                Err(e) => issues.push(ValidationIssue {
                    severity: Severity::Error,
                    context: format!("channel {l}"),
                    message: e.to_string(),
                }),
            }
        }
    }

    if let Err(e) = problem.cost.validate(vars) {
        issues.push(ValidationIssue {
            severity: Severity::Error,
            context: "cost".into(),
            message: e.to_string(),
        });
    }
    if let Err(e) = problem.initial.validate(chart, false) {
        // Retry in mixed mode before declaring an error; pure atoms are only
        // mandatory for the strict pure-state programs.
        if problem.initial.validate(chart, true).is_err() {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                context: "initial distribution".into(),
                message: e.to_string(),
            });
        } else {
            issues.push(ValidationIssue {
                severity: Severity::Warning,
                context: "initial distribution".into(),
                message: "atoms are mixed states; only the mixed-state program applies".into(),
            });
        }
    }

    ValidationReport {
        issues,
        jump_checks,
    }
}

// ---------------------------------------------------------------------------
// Misc helpers used by downstream modules.
// ---------------------------------------------------------------------------

/// Monomial over the ambient variables with a single power of variable `index`.
pub fn ambient_var_monomial(vars: &ModelVars, index: usize) -> Monomial {
    let mut e = vec![0u16; vars.ambient_len()];
    e[index] = 1;
    Monomial::from_exponents(e)
}

/// Substitution vector sending chart coordinate `k` to jump component `k`
/// (time and controls untouched), for composing value polynomials with jumps.
pub fn jump_substitution(vars: &ModelVars, jump: &[Poly]) -> Vec<Option<Poly>> {
    let mut subs: Vec<Option<Poly>> = vec![None; vars.ambient_len()];
    for (k, p) in jump.iter().enumerate() {
        subs[vars.x_index(k)] = Some(p.clone());
    }
    subs
}
