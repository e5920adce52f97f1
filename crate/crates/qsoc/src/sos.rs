//! Sum-of-squares restriction of the dynamic-programming inequality.
//!
//! A polynomial `w(t, x)` of degree at most `d` certifies a lower bound
//! `Σ ν₀-weights · w(0, ·)` on the optimal expected cost whenever
//!
//! * `A w + ℓ` lies in the truncated quadratic module of degree `d + 2`
//!   generated by the time window, the state region, and the control
//!   region, and
//! * `m − w(T, ·)` lies in the module of degree `d` over the state region
//!   (finite horizon only; discounted problems use `A w − γ w + ℓ` and
//!   drop the terminal membership).
//!
//! Each membership is witnessed by one unconstrained Gram matrix plus one
//! per region generator, with the generator's multiplier capped at degree
//! `⌊(D − deg a)/2⌋`. Matching coefficients monomial by monomial turns the
//! search over `w` into a semidefinite program: Gram entries become cone
//! columns, the coefficients of `w` become free columns, and each monomial
//! of each membership becomes one equality row. Solving it yields both the
//! bound and a certificate that can be re-verified by direct expansion.

use std::sync::Arc;
use std::time::Instant;

use crate::conic::solver::solve;
use crate::conic::{
    lapack, BlockKind, ConeLayout, ConicProblem, Solution, SolveStatus, SolverSettings, SparseRow,
};
use crate::error::{Error, Result};
use crate::generator::GeneratorContext;
use crate::model::{ControlProblem, Horizon, PURITY_ATOL};
use crate::poly::{monomials_up_to, AffineExpr, DecisionPoly, Monomial, Poly};

/// Hard cap on equality rows per compiled program; beyond this the Schur
/// complement no longer fits the intended memory envelope.
pub const MAX_ROWS: usize = 200_000;

/// Relative tolerance for the re-expansion residual of a certificate.
pub const CERT_RESIDUAL_RTOL: f64 = 1e-6;

/// Absolute floor for the smallest accepted Gram eigenvalue.
pub const CERT_EIG_FLOOR: f64 = -1e-7;

/// One requirement of the form `target ∈ Q_D[constraints]` over a variable
/// subset, with the target affine in the decision coefficients.
#[derive(Debug, Clone)]
pub struct QuadraticModuleMembership {
    pub label: String,
    pub target: DecisionPoly,
    /// Region generators `a_1, …`; the constant generator 1 is implicit.
    pub constraints: Vec<Poly>,
    /// Truncation degree `D`.
    pub degree_bound: usize,
    /// Ambient variable indices the membership ranges over.
    pub active_vars: Vec<usize>,
}

/// A bound-certification program: maximize a linear functional of the
/// value coefficients subject to quadratic-module memberships.
#[derive(Debug, Clone)]
pub struct SosProgram {
    pub vars: Arc<crate::poly::VariableSet>,
    /// Monomial basis of the value polynomial; decision id = position.
    pub value_basis: Vec<Monomial>,
    /// Objective weight per decision id.
    pub objective: Vec<f64>,
    pub memberships: Vec<QuadraticModuleMembership>,
    /// Per-variable scale σ: the program is written in v' = v/σ_v so that
    /// every variable ranges over an O(1) box, which keeps the conic data
    /// well conditioned at high degree. Certificate recovery maps
    /// coefficients back to the original variables.
    pub var_scale: Vec<f64>,
}

/// Provenance of one Gram block inside the compiled cone.
#[derive(Debug, Clone)]
pub struct GramBlockInfo {
    pub membership: usize,
    /// `None` for the unconstrained block, else the constraint index.
    pub constraint: Option<usize>,
    pub basis: Vec<Monomial>,
}

/// Conic form of an [`SosProgram`] plus the bookkeeping needed to recover
/// and re-verify certificates.
#[derive(Debug, Clone)]
pub struct CompiledInstance {
    pub program: SosProgram,
    pub problem: ConicProblem,
    pub blocks: Vec<GramBlockInfo>,
}

/// Outcome of re-checking a solver certificate by direct expansion.
#[derive(Debug, Clone, Copy)]
pub struct CertificateReport {
    /// Largest coefficient of `Σ Gram expansions − target` over all
    /// memberships.
    pub residual: f64,
    /// Acceptance threshold for `residual`.
    pub residual_tol: f64,
    /// Smallest eigenvalue over all Gram blocks.
    pub min_gram_eigenvalue: f64,
    pub ok: bool,
}

/// A certified performance bound at one relaxation degree.
#[derive(Debug, Clone)]
pub struct BoundResult {
    pub degree: usize,
    /// Lower bound on the optimal expected cost.
    pub cost_bound: f64,
    /// Matching upper bound on achievable fidelity.
    pub fidelity_bound: f64,
    pub status: SolveStatus,
    pub certificate: Option<CertificateReport>,
    pub iterations: usize,
    pub rows: usize,
    pub seconds: f64,
    /// The certified value polynomial in `(t, x)`.
    pub value: Poly,
}

fn check_degree(degree: usize) -> Result<()> {
    if degree < 2 || degree % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "relaxation degree must be even and at least 2, got {degree}"
        )));
    }
    Ok(())
}

/// True when any initial atom sits strictly inside the purity ball, which
/// widens the state region from the pure sphere to the full ball.
fn has_mixed_support(problem: &ControlProblem) -> bool {
    problem
        .initial
        .atoms
        .iter()
        .any(|(_, x)| problem.chart.purity_value(x) < 1.0 - PURITY_ATOL)
}

/// State-region generators: both sphere inequalities for pure support,
/// only the outer ball for mixed support.
fn state_region(problem: &ControlProblem) -> Vec<Poly> {
    let vars = &problem.vars;
    let purity = problem.chart.purity_polynomial(vars);
    let one = Poly::constant(&vars.set, 1.0);
    let below = one.sub(&purity).expect("same variable set");
    if has_mixed_support(problem) {
        vec![below]
    } else {
        let above = below.neg();
        vec![below, above]
    }
}

fn value_polynomial(basis: &[Monomial], vars: &Arc<crate::poly::VariableSet>) -> DecisionPoly {
    DecisionPoly::from_terms(
        vars,
        basis
            .iter()
            .enumerate()
            .map(|(k, m)| (m.clone(), AffineExpr::decision(k as u32))),
    )
    .expect("basis monomials share the ambient variable set")
}

/// Objective weights: the ν₀-average of each basis monomial at time zero.
fn initial_average(problem: &ControlProblem, basis: &[Monomial]) -> Vec<f64> {
    let zeros = vec![0.0; problem.vars.n_controls];
    basis
        .iter()
        .map(|mono| {
            problem
                .initial
                .atoms
                .iter()
                .map(|(w, x)| w * mono.eval(&problem.vars.point(0.0, x, &zeros)))
                .sum()
        })
        .collect()
}

/// Build the finite-horizon program at the given relaxation degree.
pub fn build_finite_horizon(problem: &ControlProblem, degree: usize) -> Result<SosProgram> {
    check_degree(degree)?;
    let horizon_t = match problem.cost.horizon {
        Horizon::Finite(t) => t,
        Horizon::Discounted(_) => {
            return Err(Error::InvalidInput(
                "finite-horizon build called on a discounted problem".into(),
            ))
        }
    };
    let vars = &problem.vars;
    let nvars = vars.set.len();
    let ctx = GeneratorContext::from_problem(problem)?;

    let value_basis = monomials_up_to(nvars, &vars.tx_indices(), degree);
    let w = value_polynomial(&value_basis, &vars.set);

    // The program is written in rescaled time τ = t/T so that every domain
    // variable ranges over an O(1) interval; raw t powers up to T^d would
    // otherwise spread the conic coefficients over many orders of magnitude.
    // The chain rule turns ∂_t into (1/T) ∂_τ; the model is autonomous, so
    // no other generator term sees the time variable.
    let running_target = {
        let generated = ctx.apply(&w)?;
        let tweak = w.diff(vars.t_index())?.scale(1.0 / horizon_t - 1.0);
        generated.add(&tweak)?.add(&problem.cost.stage.lift())?
    };
    let t_poly = Poly::var(&vars.set, vars.t_index())?;
    let mut running_constraints = vec![
        t_poly.clone(),
        Poly::constant(&vars.set, 1.0).sub(&t_poly)?,
    ];
    running_constraints.extend(state_region(problem));
    running_constraints.extend(problem.model.control_set.constraint_polys(vars)?);
    let running = QuadraticModuleMembership {
        label: "running".into(),
        target: running_target,
        constraints: running_constraints,
        degree_bound: degree + 2,
        active_vars: vars.txu_indices(),
    };

    // Terminal membership: m − w(τ=1, ·) over the state region of degree d.
    let mut subs: Vec<Option<Poly>> = vec![None; nvars];
    subs[vars.t_index()] = Some(Poly::constant(&vars.set, 1.0));
    let w_final = w.compose(&subs)?;
    let terminal_target = problem.cost.terminal.lift().sub(&w_final)?;
    let terminal = QuadraticModuleMembership {
        label: "terminal".into(),
        target: terminal_target,
        constraints: state_region(problem),
        degree_bound: degree,
        active_vars: vars.x_indices(),
    };

    let objective = initial_average(problem, &value_basis);
    let mut var_scale = vec![1.0; nvars];
    var_scale[vars.t_index()] = horizon_t;
    Ok(SosProgram {
        vars: vars.set.clone(),
        value_basis,
        objective,
        memberships: vec![running, terminal],
        var_scale,
    })
}

/// Build the discounted program at the given relaxation degree. The value
/// polynomial is time-independent and there is no terminal membership.
pub fn build_infinite_horizon(problem: &ControlProblem, degree: usize) -> Result<SosProgram> {
    check_degree(degree)?;
    let gamma = match problem.cost.horizon {
        Horizon::Discounted(g) => g,
        Horizon::Finite(_) => {
            return Err(Error::InvalidInput(
                "discounted build called on a finite-horizon problem".into(),
            ))
        }
    };
    let vars = &problem.vars;
    let ctx = GeneratorContext::from_problem(problem)?;

    let value_basis = monomials_up_to(vars.set.len(), &vars.x_indices(), degree);
    let w = value_polynomial(&value_basis, &vars.set);

    let generated = ctx.apply_discounted(&w, gamma)?;
    let running_target = generated.add(&problem.cost.stage.lift())?;
    let mut constraints = state_region(problem);
    constraints.extend(problem.model.control_set.constraint_polys(vars)?);
    let running = QuadraticModuleMembership {
        label: "running".into(),
        target: running_target,
        constraints,
        degree_bound: degree + 2,
        active_vars: vars.xu_indices(),
    };

    let objective = initial_average(problem, &value_basis);
    let var_scale = vec![1.0; vars.set.len()];
    Ok(SosProgram {
        vars: vars.set.clone(),
        value_basis,
        objective,
        memberships: vec![running],
        var_scale,
    })
}

/// Build the program for the problem's own horizon type.
pub fn build_program(problem: &ControlProblem, degree: usize) -> Result<SosProgram> {
    match problem.cost.horizon {
        Horizon::Finite(_) => build_finite_horizon(problem, degree),
        Horizon::Discounted(_) => build_infinite_horizon(problem, degree),
    }
}

/// Lower the program to conic form: one equality row per membership
/// monomial, one free column per value coefficient, one PSD block per Gram
/// matrix.
pub fn compile(program: SosProgram) -> Result<CompiledInstance> {
    let nvars = program.vars.len();
    let n_decision = program.value_basis.len();

    // Row space: every monomial of every membership, graded-lex within.
    let mut row_maps: Vec<std::collections::BTreeMap<Monomial, u32>> = Vec::new();
    let mut n_rows = 0usize;
    for mem in &program.memberships {
        let monos = monomials_up_to(nvars, &mem.active_vars, mem.degree_bound);
        let mut map = std::collections::BTreeMap::new();
        for mono in monos {
            map.insert(mono, (n_rows + map.len()) as u32);
        }
        n_rows += map.len();
        row_maps.push(map);
        if n_rows > MAX_ROWS {
            return Err(Error::ProgramTooLarge {
                rows: n_rows,
                limit: MAX_ROWS,
            });
        }
    }

    // Column space: decision coefficients first, then Gram blocks in
    // membership order, unconstrained block before constraint blocks.
    let mut blocks: Vec<GramBlockInfo> = Vec::new();
    let mut kinds: Vec<BlockKind> = Vec::new();
    for (mi, mem) in program.memberships.iter().enumerate() {
        let basis = monomials_up_to(nvars, &mem.active_vars, mem.degree_bound / 2);
        kinds.push(BlockKind::Dense(basis.len()));
        blocks.push(GramBlockInfo {
            membership: mi,
            constraint: None,
            basis,
        });
        for (ci, gen) in mem.constraints.iter().enumerate() {
            let deg = gen.degree();
            if deg > mem.degree_bound {
                continue;
            }
            let basis = monomials_up_to(nvars, &mem.active_vars, (mem.degree_bound - deg) / 2);
            kinds.push(BlockKind::Dense(basis.len()));
            blocks.push(GramBlockInfo {
                membership: mi,
                constraint: Some(ci),
                basis,
            });
        }
    }
    let layout = ConeLayout {
        n_free: n_decision,
        blocks: kinds,
    };

    let mut row_entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_rows];
    let mut b = vec![0.0; n_rows];

    // Target side: Σ Gram terms − Σ_k t_k·w_k = t_const per monomial row.
    let one = Poly::constant(&program.vars, 1.0);
    for (mi, mem) in program.memberships.iter().enumerate() {
        for (mono, coeff) in mem.target.terms() {
            let row = *row_maps[mi].get(mono).ok_or_else(|| {
                Error::MalformedProblem(format!(
                    "membership `{}` target monomial of degree {} escapes the \
                     degree-{} module",
                    mem.label,
                    mono.degree(),
                    mem.degree_bound
                ))
            })? as usize;
            b[row] = coeff.constant;
            for (&id, &weight) in &coeff.linear {
                row_entries[row].push((id, -weight));
            }
        }
    }

    // Gram side: pair (p, q) of a block with generator term (γ, g)
    // contributes mult·g to the row of m_p·m_q·γ.
    for (bi, info) in blocks.iter().enumerate() {
        let mem = &program.memberships[info.membership];
        let generator = match info.constraint {
            Some(ci) => &mem.constraints[ci],
            None => &one,
        };
        let map = &row_maps[info.membership];
        let nb = info.basis.len();
        for p in 0..nb {
            for q in p..nb {
                let pair = info.basis[p].mul(&info.basis[q])?;
                let mult = if p == q { 1.0 } else { 2.0 };
                let col = layout.entry_col(bi, p, q) as u32;
                for (gamma, &g) in generator.terms() {
                    let mono = pair.mul(gamma)?;
                    let row = *map.get(&mono).ok_or_else(|| {
                        Error::MalformedProblem(format!(
                            "Gram product degree {} escapes membership `{}`",
                            mono.degree(),
                            mem.label
                        ))
                    })? as usize;
                    row_entries[row].push((col, mult * g));
                }
            }
        }
    }

    let mut c = vec![0.0; layout.n_cols()];
    c[..n_decision].copy_from_slice(&program.objective);

    let rows: Vec<SparseRow> = row_entries.into_iter().map(SparseRow::new).collect();
    let problem = ConicProblem { layout, c, rows, b };
    problem.validate()?;
    Ok(CompiledInstance {
        program,
        problem,
        blocks,
    })
}

/// Read the value polynomial out of a solution's free columns, mapped back
/// to the original (unscaled) variables.
pub fn recover_value_poly(instance: &CompiledInstance, solution: &Solution) -> Result<Poly> {
    let n = instance.program.value_basis.len();
    let scale = &instance.program.var_scale;
    Poly::from_terms(
        &instance.program.vars,
        instance
            .program
            .value_basis
            .iter()
            .zip(&solution.z[..n])
            .map(|(m, &v)| {
                let mut divisor = 1.0;
                for (var, &s) in scale.iter().enumerate() {
                    if s != 1.0 {
                        divisor *= s.powi(m.degree_of(var) as i32);
                    }
                }
                (m.clone(), v / divisor)
            }),
    )
}

/// Re-expand every membership from the solved Gram matrices and compare
/// against the instantiated target; also bound the smallest eigenvalue.
pub fn verify_certificate(
    instance: &CompiledInstance,
    solution: &Solution,
) -> Result<CertificateReport> {
    let n_decision = instance.program.value_basis.len();
    let w_values = &solution.z[..n_decision];
    let one = Poly::constant(&instance.program.vars, 1.0);

    let mut residual = 0.0f64;
    let mut residual_tol = 0.0f64;
    let mut min_eig = f64::INFINITY;

    for (mi, mem) in instance.program.memberships.iter().enumerate() {
        let target = mem.target.instantiate(w_values);
        let mut expansion = Poly::zero(&instance.program.vars);
        for (bi, info) in instance.blocks.iter().enumerate() {
            if info.membership != mi {
                continue;
            }
            let generator = match info.constraint {
                Some(ci) => &mem.constraints[ci],
                None => &one,
            };
            let nb = info.basis.len();
            let mut terms: Vec<(Monomial, f64)> = Vec::with_capacity(nb * (nb + 1) / 2);
            let mut gram = vec![0.0; nb * nb];
            for p in 0..nb {
                for q in p..nb {
                    let v = solution.z[instance.problem.layout.entry_col(bi, p, q)];
                    let mult = if p == q { 1.0 } else { 2.0 };
                    terms.push((info.basis[p].mul(&info.basis[q])?, mult * v));
                    gram[p * nb + q] = v;
                    gram[q * nb + p] = v;
                }
            }
            let witness = Poly::from_terms(&instance.program.vars, terms)?;
            expansion = expansion.add(&witness.mul(generator)?)?;
            let eigs = lapack::eigenvalues(nb, &mut gram)
                .map_err(|e| Error::SolverFailure(format!("certificate eigencheck: {e}")))?;
            if let Some(&lo) = eigs.first() {
                min_eig = min_eig.min(lo);
            }
        }
        let diff = expansion.sub(&target)?;
        residual = residual.max(diff.max_abs_coeff());
        residual_tol = residual_tol.max(CERT_RESIDUAL_RTOL * (1.0 + target.max_abs_coeff()));
    }

    let ok = residual <= residual_tol && min_eig >= CERT_EIG_FLOOR;
    Ok(CertificateReport {
        residual,
        residual_tol,
        min_gram_eigenvalue: min_eig,
        ok,
    })
}

/// Convert a cost bound into a fidelity bound under the problem's horizon
/// normalization: time-averaged for finite horizons, rate-weighted for
/// discounted ones.
pub fn fidelity_bound(problem: &ControlProblem, cost_bound: f64) -> f64 {
    match problem.cost.horizon {
        Horizon::Finite(t) => 1.0 - cost_bound / t,
        Horizon::Discounted(g) => 1.0 - g * cost_bound,
    }
}

/// Build, compile, solve, and verify in one call.
pub fn compute_bound(
    problem: &ControlProblem,
    degree: usize,
    settings: &SolverSettings,
) -> Result<BoundResult> {
    let start = Instant::now();
    let program = build_program(problem, degree)?;
    let instance = compile(program)?;
    let rows = instance.problem.n_rows();
    let solution = solve(&instance.problem, settings)?;
    let value = recover_value_poly(&instance, &solution)?;
    let certificate = if solution.status.is_solved() {
        Some(verify_certificate(&instance, &solution)?)
    } else {
        None
    };
    Ok(BoundResult {
        degree,
        cost_bound: solution.objective,
        fidelity_bound: fidelity_bound(problem, solution.objective),
        status: solution.status,
        certificate,
        iterations: solution.iterations,
        rows,
        seconds: start.elapsed().as_secs_f64(),
        value,
    })
}
