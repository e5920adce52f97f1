//! Infeasible primal-dual predictor-corrector interior-point method for the
//! cone programs of this module.
//!
//! The pair being solved:
//!
//! ```text
//! (P)  max  c_f·x_f + Σ_b ⟨C_b, X_b⟩       (D)  min  b·y
//!      s.t. A_f x_f + A(X) = b                  s.t. A*(y)_b − C_b = Z_b ⪰ 0
//!           X_b ⪰ 0, x_f free                        A_fᵀ y = c_f
//! ```
//!
//! Search directions follow the HKM family: the Schur complement
//! `M_ij = tr(A_i X A_j Z⁻¹)` (symmetric positive definite on the cone
//! interior) is embedded in the augmented system
//!
//! ```text
//! [ M    A_f ] [Δy]   [ A(E + X·Rd·Z⁻¹) − rp ]
//! [ A_fᵀ  0  ] [ v ] = [          rf          ],   Δx_f = −v,
//! ```
//!
//! factorized once per iteration (Bunch-Kaufman) and reused for the
//! predictor (`E = −X`) and the Mehrotra corrector
//! (`E = νZ⁻¹ − X − ΔX_p ΔZ_p Z⁻¹`). Then `ΔZ = A*(Δy) − Rd` and
//! `ΔX = E − X ΔZ Z⁻¹`, symmetrized. Steps stay a fixed fraction from the
//! cone boundary. Everything is deterministic: no randomization, BLAS pinned
//! to one thread.
//!
//! Diagonal blocks are expanded into 1×1 dense blocks internally; the packed
//! column layout is unaffected.

use super::lapack;
use super::{BlockKind, ConicProblem, Solution, SolveStatus, SolverSettings};
use crate::error::Result;

/// Fraction-to-boundary factor.
const TAU: f64 = 0.97;
/// Step cap standing in for +∞ when a direction never leaves the cone.
const HUGE_STEP: f64 = 1e6;
/// Objective magnitude treated as divergence (scaled by data norms).
const DIVERGENCE: f64 = 1e8;

pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> Result<Solution> {
    problem.validate()?;
    lapack::init_blas();

    if problem.layout.blocks.is_empty() {
        return solve_free_lp(problem, settings);
    }
    if problem.rows.iter().all(|r| r.entries.is_empty()) {
        if problem.b.iter().any(|&v| v != 0.0) {
            return Ok(Solution {
                status: SolveStatus::Infeasible,
                z: vec![0.0; problem.layout.n_cols()],
                y: vec![0.0; problem.rows.len()],
                objective: 0.0,
                dual_objective: 0.0,
                iterations: 0,
                primal_infeas: f64::INFINITY,
                dual_infeas: 0.0,
                rel_gap: 0.0,
            });
        }
        return solve_unconstrained(problem);
    }
    solve_ipm(problem, settings)
}

// ---------------------------------------------------------------------------
// Special case: free variables only (an equality-constrained LP).
// ---------------------------------------------------------------------------

/// With only free variables the problem is linear algebra: feasibility of
/// `A x = b`, and boundedness iff `c` lies in the row space of `A`. Both are
/// decided through a spectral pseudo-inverse of `A Aᵀ`.
fn solve_free_lp(problem: &ConicProblem, _settings: &SolverSettings) -> Result<Solution> {
    let m = problem.rows.len();
    let f = problem.layout.n_free;
    // Dense A, column-major m×f.
    let mut a = vec![0.0; m * f];
    for (i, row) in problem.rows.iter().enumerate() {
        for &(col, v) in &row.entries {
            a[(col as usize) * m + i] = v;
        }
    }
    // Gram G = A Aᵀ and its eigen-decomposition for the pseudo-inverse.
    let mut gram = vec![0.0; m * m];
    if m > 0 && f > 0 {
        lapack::gemm(false, true, m, m, f, 1.0, &a, &a, 0.0, &mut gram);
    }
    let mut vecs = gram;
    let w = lapack::eigen_decomposition(m, &mut vecs)?;
    let wmax = w.iter().cloned().fold(0.0, f64::max);
    let cutoff = wmax * 1e-12;
    let pinv_apply = |r: &[f64]| -> Vec<f64> {
        // V diag(w⁺) Vᵀ r.
        let mut coeffs = vec![0.0; m];
        for k in 0..m {
            if w[k] > cutoff {
                let col = &vecs[k * m..(k + 1) * m];
                let dot: f64 = col.iter().zip(r).map(|(a, b)| a * b).sum();
                coeffs[k] = dot / w[k];
            }
        }
        let mut out = vec![0.0; m];
        for k in 0..m {
            if coeffs[k] != 0.0 {
                let col = &vecs[k * m..(k + 1) * m];
                for i in 0..m {
                    out[i] += col[i] * coeffs[k];
                }
            }
        }
        out
    };

    let degenerate = |status: SolveStatus| Solution {
        status,
        z: vec![0.0; f],
        y: vec![0.0; m],
        objective: 0.0,
        dual_objective: 0.0,
        iterations: 0,
        primal_infeas: 0.0,
        dual_infeas: 0.0,
        rel_gap: 0.0,
    };

    // Feasibility: x0 = Aᵀ (A Aᵀ)⁺ b, the least-squares solution.
    let gb = pinv_apply(&problem.b);
    let mut x0 = vec![0.0; f];
    if m > 0 && f > 0 {
        lapack::gemm(true, false, f, 1, m, 1.0, &a, &gb, 0.0, &mut x0);
    }
    let bnorm = problem.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut presid: f64 = 0.0;
    for (i, row) in problem.rows.iter().enumerate() {
        presid = presid.max((row.dot(&x0) - problem.b[i]).abs());
    }
    if presid > 1e-8 * (1.0 + bnorm) {
        let mut sol = degenerate(SolveStatus::Infeasible);
        sol.primal_infeas = presid / (1.0 + bnorm);
        return Ok(sol);
    }

    // Boundedness: y with Aᵀ y = c, via y = (A Aᵀ)⁺ A c.
    let mut ac = vec![0.0; m];
    if m > 0 && f > 0 {
        lapack::gemm(false, false, m, 1, f, 1.0, &a, &problem.c, 0.0, &mut ac);
    }
    let y = pinv_apply(&ac);
    let cnorm = problem.c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut dresid: f64 = 0.0;
    for col in 0..f {
        let mut aty = 0.0;
        for i in 0..m {
            aty += a[col * m + i] * y[i];
        }
        dresid = dresid.max((aty - problem.c[col]).abs());
    }
    if dresid > 1e-8 * (1.0 + cnorm) {
        let mut sol = degenerate(SolveStatus::Unbounded);
        sol.dual_infeas = dresid / (1.0 + cnorm);
        return Ok(sol);
    }

    let pobj = problem.objective_value(&x0);
    let dobj: f64 = problem.b.iter().zip(&y).map(|(b, y)| b * y).sum();
    Ok(Solution {
        status: SolveStatus::Optimal,
        z: x0,
        y,
        objective: pobj,
        dual_objective: dobj,
        iterations: 0,
        primal_infeas: presid / (1.0 + bnorm),
        dual_infeas: dresid / (1.0 + cnorm),
        rel_gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    })
}

// ---------------------------------------------------------------------------
// Special case: no constraints.
// ---------------------------------------------------------------------------

fn solve_unconstrained(problem: &ConicProblem) -> Result<Solution> {
    let layout = &problem.layout;
    let optimal_zero = |status| Solution {
        status,
        z: vec![0.0; layout.n_cols()],
        y: vec![0.0; problem.rows.len()],
        objective: 0.0,
        dual_objective: 0.0,
        iterations: 0,
        primal_infeas: 0.0,
        dual_infeas: 0.0,
        rel_gap: 0.0,
    };
    if problem.c[..layout.n_free].iter().any(|&v| v != 0.0) {
        return Ok(optimal_zero(SolveStatus::Unbounded));
    }
    for (b, blk) in layout.blocks.iter().enumerate() {
        match *blk {
            BlockKind::Diag(n) => {
                for i in 0..n {
                    if problem.c[layout.entry_col(b, i, i)] > 0.0 {
                        return Ok(optimal_zero(SolveStatus::Unbounded));
                    }
                }
            }
            BlockKind::Dense(n) => {
                let mut cmat = vec![0.0; n * n];
                for i in 0..n {
                    for j in i..n {
                        let v = problem.c[layout.entry_col(b, i, j)];
                        if i == j {
                            cmat[i * n + i] = v;
                        } else {
                            cmat[j * n + i] = v / 2.0;
                            cmat[i * n + j] = v / 2.0;
                        }
                    }
                }
                let evals = lapack::eigenvalues(n, &mut cmat)?;
                if evals.last().copied().unwrap_or(0.0) > 1e-12 {
                    return Ok(optimal_zero(SolveStatus::Unbounded));
                }
            }
        }
    }
    // max over the cone of a nonpositive objective: X = 0 is optimal.
    Ok(optimal_zero(SolveStatus::Optimal))
}

// ---------------------------------------------------------------------------
// Interior-point machinery.
// ---------------------------------------------------------------------------

/// Per-block constraint data in CSR layout over global row indices:
/// entries are `(r, c, v)` with `r ≤ c`, `v` the raw packed-column
/// coefficient (off-diagonal matrix entries are `v/2`).
struct BlockRows {
    row_ptr: Vec<usize>,
    ent: Vec<(u32, u32, f64)>,
    /// Rows with at least one entry in this block, ascending.
    active: Vec<u32>,
}

/// Dense state for one (internal) block.
struct Blk {
    n: usize,
    /// First packed column of this block in the global layout.
    col_start: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    zinv: Vec<f64>,
    chol_x: Vec<f64>,
    chol_z: Vec<f64>,
    cmat: Vec<f64>,
    rd: Vec<f64>,
    e: Vec<f64>,
    g: Vec<f64>,
    dx: Vec<f64>,
    dz: Vec<f64>,
    dxp: Vec<f64>,
    dzp: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
}

impl Blk {
    fn new(n: usize, col_start: usize) -> Self {
        let zeros = || vec![0.0; n * n];
        Self {
            n,
            col_start,
            x: zeros(),
            z: zeros(),
            zinv: zeros(),
            chol_x: zeros(),
            chol_z: zeros(),
            cmat: zeros(),
            rd: zeros(),
            e: zeros(),
            g: zeros(),
            dx: zeros(),
            dz: zeros(),
            dxp: zeros(),
            dzp: zeros(),
            t1: zeros(),
            t2: zeros(),
        }
    }
}

/// Adds `sign` times the direction change induced by a dual correction
/// `dy_delta`: ΔZ gains A*(δ), ΔX loses X·A*(δ)·Z⁻¹ symmetrized.
fn nudge_direction(blocks: &mut [Blk], block_rows: &[BlockRows], dy_delta: &[f64], sign: f64) {
    for (ib, blk) in blocks.iter_mut().enumerate() {
        let n = blk.n;
        let br = &block_rows[ib];
        blk.t1.fill(0.0);
        for &iu in &br.active {
            let ii = iu as usize;
            add_row_matrix(
                n,
                &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]],
                dy_delta[ii],
                &mut blk.t1,
            );
        }
        for (o, d) in blk.dz.iter_mut().zip(&blk.t1) {
            *o += sign * d;
        }
        lapack::gemm(
            false,
            false,
            n,
            n,
            n,
            1.0,
            &blk.x,
            &blk.t1,
            0.0,
            &mut blk.t2,
        );
        lapack::gemm(
            false,
            false,
            n,
            n,
            n,
            1.0,
            &blk.t2,
            &blk.zinv,
            0.0,
            &mut blk.t1,
        );
        symmetrize(n, &mut blk.t1);
        for (o, d) in blk.dx.iter_mut().zip(&blk.t1) {
            *o -= sign * d;
        }
    }
}

fn sym_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn symmetrize(n: usize, a: &mut [f64]) {
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[j * n + i] + a[i * n + j]);
            a[j * n + i] = m;
            a[i * n + j] = m;
        }
    }
}

/// `y = K·x` for symmetric `K` stored as its lower triangle, column-major.
fn sym_lower_matvec(n: usize, kl: &[f64], x: &[f64], y: &mut [f64]) {
    y.fill(0.0);
    for j in 0..n {
        let xj = x[j];
        let col = &kl[j * n..(j + 1) * n];
        y[j] += col[j] * xj;
        for i in (j + 1)..n {
            let v = col[i];
            if v != 0.0 {
                y[i] += v * xj;
                y[j] += v * x[i];
            }
        }
    }
}

const REFINE_ROUNDS: usize = 3;

/// Rounds of full-KKT residual correction per direction, and the relative
/// primal-equation residual considered consistent.
const KKT_REFINE_ROUNDS: usize = 3;
const KKT_REFINE_STOP: f64 = 1e-11;

/// Static regularization added to the factored KKT matrix on the retry
/// tier, relative to its largest diagonal entry. The factors stay bounded
/// when the true matrix turns singular near a degenerate optimum;
/// refinement against the true matrix removes the bias wherever the system
/// is consistent.
const STATIC_REG: f64 = 1e-12;

/// Largest primal-equation residual a direction may carry, relative to
/// `1 + ‖b‖`; a first-tier direction above this triggers the regularized
/// retry.
const DIRECTION_TOL: f64 = 1e-8;
/// Residual beyond which even the regularized direction is noise. Stepping
/// along such a direction tears down feasibility, so the solve stops there
/// and the best iterate stands.
const DIRECTION_FAIL: f64 = 1e-5;

/// Back-substitution through the (regularized) LDLᵀ factors plus
/// iterative-refinement rounds against the unfactored matrix. Rounds apply
/// only while the residual shrinks, so a singular system yields the best
/// bounded solution instead of an amplified one.
fn refined_solve(
    n: usize,
    kl_orig: &[f64],
    kl_fact: &[f64],
    ipiv: &[i32],
    rhs: &[f64],
    sol: &mut [f64],
    resid: &mut [f64],
    best: &mut [f64],
) -> Result<()> {
    lapack::ldlt_solve(n, kl_fact, ipiv, sol)?;
    let stop = 1e-14 * (1.0 + max_abs(rhs));
    let mut best_norm = f64::INFINITY;
    for _ in 0..=REFINE_ROUNDS {
        sym_lower_matvec(n, kl_orig, sol, resid);
        for (r, want) in resid.iter_mut().zip(rhs) {
            *r = want - *r;
        }
        let rnorm = max_abs(resid);
        if rnorm >= best_norm {
            break;
        }
        best_norm = rnorm;
        best.copy_from_slice(sol);
        if rnorm <= stop {
            break;
        }
        lapack::ldlt_solve(n, kl_fact, ipiv, resid)?;
        for (s, d) in sol.iter_mut().zip(resid.iter()) {
            *s += d;
        }
    }
    sol.copy_from_slice(best);
    Ok(())
}

/// `out += scale · A_i` with `A_i` the symmetric matrix of one row's entries.
fn add_row_matrix(n: usize, ent: &[(u32, u32, f64)], scale: f64, out: &mut [f64]) {
    for &(r, c, v) in ent {
        let (r, c) = (r as usize, c as usize);
        if r == c {
            out[r * n + r] += scale * v;
        } else {
            let h = 0.5 * scale * v;
            out[c * n + r] += h;
            out[r * n + c] += h;
        }
    }
}

/// `tr(A_i · G)` for a possibly nonsymmetric `G` (column-major).
fn row_dot_mat(n: usize, ent: &[(u32, u32, f64)], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for &(r, c, v) in ent {
        let (r, c) = (r as usize, c as usize);
        if r == c {
            s += v * g[r * n + r];
        } else {
            s += 0.5 * v * (g[c * n + r] + g[r * n + c]);
        }
    }
    s
}

/// Largest step `α` keeping `P + α ΔP ⪰ 0`, given the Cholesky factor of `P`.
fn max_step(n: usize, chol: &[f64], dp: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
    scratch.clear();
    scratch.extend_from_slice(dp);
    lapack::solve_lower_left(n, n, chol, scratch);
    lapack::solve_lower_transpose_right(n, n, chol, scratch);
    let evals = lapack::eigenvalues(n, scratch)?;
    let lambda_min = evals.first().copied().unwrap_or(0.0);
    if lambda_min >= -1e-14 {
        Ok(HUGE_STEP)
    } else {
        Ok(-1.0 / lambda_min)
    }
}

#[derive(Clone, Copy)]
struct Metrics {
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    rel_gap: f64,
}

/// Gap accuracy that still counts as usable when full convergence is out of
/// reach. Feasibility decides whether the returned point is meaningful at
/// all, so its tolerance is never softened this way; the gap only measures
/// how far from optimal the (still valid) point may sit.
const SOFT_GAP: f64 = 1e-5;

impl Metrics {
    /// Uniform quality score: feasibility relative to `tol_feas`, gap
    /// relative to the softer of `tol_gap` and `SOFT_GAP`. Lower is better;
    /// ≤ 100 is the near-optimal window.
    fn score(&self, settings: &SolverSettings) -> f64 {
        (self.pinf / settings.tol_feas)
            .max(self.dinf / settings.tol_feas)
            .max(self.rel_gap / settings.tol_gap.max(SOFT_GAP))
    }
}

/// Iterations without a new best iterate before the solve is cut off.
/// Degenerate optima make late iterations erratic; past this window they
/// no longer recover.
const STALL_PATIENCE: usize = 8;

fn solve_ipm(problem: &ConicProblem, settings: &SolverSettings) -> Result<Solution> {
    let layout = &problem.layout;
    let f = layout.n_free;

    // Row scaling to unit coefficient ∞-norm; empty rows are dropped (after
    // checking consistency) so the Schur complement stays nonsingular.
    let mut kept: Vec<usize> = Vec::new();
    for (i, row) in problem.rows.iter().enumerate() {
        if row.entries.is_empty() {
            if problem.b[i] != 0.0 {
                return Ok(Solution {
                    status: SolveStatus::Infeasible,
                    z: vec![0.0; layout.n_cols()],
                    y: vec![0.0; problem.rows.len()],
                    objective: 0.0,
                    dual_objective: 0.0,
                    iterations: 0,
                    primal_infeas: f64::INFINITY,
                    dual_infeas: 0.0,
                    rel_gap: 0.0,
                });
            }
        } else {
            kept.push(i);
        }
    }
    let m = kept.len();
    let mut scale = vec![1.0; m];
    let mut b = vec![0.0; m];
    for (ii, &i) in kept.iter().enumerate() {
        let s = problem.rows[i].inf_norm();
        scale[ii] = s;
        b[ii] = problem.b[i] / s;
    }

    // Internal blocks: Diag(k) expands to k order-1 blocks.
    let mut blocks: Vec<Blk> = Vec::new();
    // base index of each layout block in `blocks`
    let mut base = Vec::with_capacity(layout.blocks.len());
    for (bi, blk) in layout.blocks.iter().enumerate() {
        base.push(blocks.len());
        match *blk {
            BlockKind::Dense(n) => blocks.push(Blk::new(n, layout.block_start(bi))),
            BlockKind::Diag(k) => {
                let start = layout.block_start(bi);
                for i in 0..k {
                    blocks.push(Blk::new(1, start + i));
                }
            }
        }
    }
    let nb = blocks.len();

    // Scatter constraint entries and the objective into internal blocks.
    let mut block_rows: Vec<BlockRows> = Vec::with_capacity(nb);
    {
        let mut per_block: Vec<Vec<Vec<(u32, u32, f64)>>> =
            (0..nb).map(|_| vec![Vec::new(); m]).collect();
        for (ii, &i) in kept.iter().enumerate() {
            for &(col, v) in &problem.rows[i].entries {
                let col = col as usize;
                if col < f {
                    continue;
                }
                let (lb, r, c) = layout.col_entry(col);
                let (ib, r, c) = match layout.blocks[lb] {
                    BlockKind::Dense(_) => (base[lb], r, c),
                    BlockKind::Diag(_) => (base[lb] + r, 0, 0),
                };
                per_block[ib][ii].push((r as u32, c as u32, v / scale[ii]));
            }
        }
        for rows in per_block {
            let mut row_ptr = Vec::with_capacity(m + 1);
            let mut ent = Vec::new();
            let mut active = Vec::new();
            row_ptr.push(0);
            for (ii, mut list) in rows.into_iter().enumerate() {
                if !list.is_empty() {
                    active.push(ii as u32);
                }
                ent.append(&mut list);
                row_ptr.push(ent.len());
            }
            block_rows.push(BlockRows {
                row_ptr,
                ent,
                active,
            });
        }
    }
    // Free-variable CSR.
    let mut free_ptr = Vec::with_capacity(m + 1);
    let mut free_ent: Vec<(u32, f64)> = Vec::new();
    free_ptr.push(0);
    for (ii, &i) in kept.iter().enumerate() {
        for &(col, v) in &problem.rows[i].entries {
            if (col as usize) < f {
                free_ent.push((col, v / scale[ii]));
            }
        }
        free_ptr.push(free_ent.len());
    }

    // Objective blocks.
    let c_free = &problem.c[..f];
    for blk in blocks.iter_mut() {
        let n = blk.n;
        for i in 0..n {
            for j in i..n {
                let v = problem.c[blk.col_start + i * n - i * (i + 1) / 2 + j];
                if i == j {
                    blk.cmat[i * n + i] = v;
                } else {
                    blk.cmat[j * n + i] = v / 2.0;
                    blk.cmat[i * n + j] = v / 2.0;
                }
            }
        }
    }

    // Initial iterates: X = ξI, Z = ηI, y = 0, x_f = 0. ξ is sized so that
    // A(ξI) lands on the scale of b instead of dwarfing it: starting X orders
    // of magnitude off sends the first iterations on an objective excursion
    // the path then has to walk back.
    let bnorm = max_abs(&b);
    let cnorm = max_abs(&problem.c);
    let mut xi: f64 = 10.0;
    for i in 0..m {
        let mut trw = 0.0;
        for br in &block_rows {
            for &(r, c, v) in &br.ent[br.row_ptr[i]..br.row_ptr[i + 1]] {
                if r == c {
                    trw += v;
                }
            }
        }
        xi = xi.max((1.0 + b[i].abs()) / (1.0 + trw.abs()));
    }
    let eta = 10.0 * (1.0 + cnorm);
    if settings.verbose {
        eprintln!("init xi {xi:.3e} eta {eta:.3e} bnorm {bnorm:.3e} cnorm {cnorm:.3e}");
    }
    for blk in blocks.iter_mut() {
        for i in 0..blk.n {
            blk.x[i * blk.n + i] = xi;
            blk.z[i * blk.n + i] = eta;
        }
    }
    let mut x_free = vec![0.0; f];
    let mut y = vec![0.0; m];

    let total_order: usize = blocks.iter().map(|b| b.n).sum();
    let kdim = m + f;
    let mut kmat = vec![0.0; kdim * kdim];
    let mut kmat_orig = vec![0.0; kdim * kdim];
    let mut rhs = vec![0.0; kdim];
    let mut rhs_save = vec![0.0; kdim];
    let mut resid = vec![0.0; kdim];
    let mut dy = vec![0.0; m];
    let mut dxf = vec![0.0; f];
    let mut consv = vec![0.0; m];
    let mut sol_best = vec![0.0; kdim];
    let mut corr_dy = vec![0.0; m];
    let mut corr_v = vec![0.0; f];
    let mut rp = vec![0.0; m];
    let mut rf = vec![0.0; f];
    let mut scratch: Vec<f64> = Vec::new();
    let mut xsub: Vec<f64> = Vec::new();
    let mut wbuf: Vec<f64> = Vec::new();
    let mut bbuf: Vec<f64> = Vec::new();
    let mut rows_of: Vec<u32> = Vec::new();
    let mut row_pos: Vec<u32> = Vec::new();

    let mut status;
    let mut iterations = 0;
    let mut metrics;

    // Best iterate seen so far, by uniform score; late iterations near a
    // degenerate optimum can regress, and the fallback keeps the solve
    // honest instead of reporting the regressed point.
    let mut best_score = f64::INFINITY;
    let mut best_metrics = Metrics {
        pobj: 0.0,
        dobj: 0.0,
        pinf: f64::INFINITY,
        dinf: f64::INFINITY,
        rel_gap: f64::INFINITY,
    };
    let mut best_x_free = x_free.clone();
    let mut best_y = y.clone();
    let mut best_xz: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .iter()
        .map(|blk| (blk.x.clone(), blk.z.clone()))
        .collect();
    let mut stall = 0usize;

    macro_rules! current_metrics {
        () => {{
            // pobj, rp.
            let mut pobj: f64 = c_free.iter().zip(&x_free).map(|(c, x)| c * x).sum();
            for blk in &blocks {
                pobj += sym_dot(&blk.cmat, &blk.x);
            }
            for ii in 0..m {
                let mut ax: f64 = 0.0;
                for &(col, v) in &free_ent[free_ptr[ii]..free_ptr[ii + 1]] {
                    ax += v * x_free[col as usize];
                }
                for (ib, br) in block_rows.iter().enumerate() {
                    let blk = &blocks[ib];
                    ax += row_dot_mat(blk.n, &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]], &blk.x);
                }
                rp[ii] = b[ii] - ax;
            }
            // Rd per block, rf.
            let mut dinf: f64 = 0.0;
            for (ib, blk) in blocks.iter_mut().enumerate() {
                let br = &block_rows[ib];
                blk.rd.copy_from_slice(&blk.cmat);
                for &ii in &br.active {
                    let ii = ii as usize;
                    add_row_matrix(
                        blk.n,
                        &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]],
                        -y[ii],
                        &mut blk.rd,
                    );
                }
                for (o, z) in blk.rd.iter_mut().zip(&blk.z) {
                    *o += z;
                }
                dinf = dinf.max(max_abs(&blk.rd));
            }
            for col in 0..f {
                rf[col] = c_free[col];
            }
            for ii in 0..m {
                if y[ii] != 0.0 {
                    for &(col, v) in &free_ent[free_ptr[ii]..free_ptr[ii + 1]] {
                        rf[col as usize] -= v * y[ii];
                    }
                }
            }
            let dobj: f64 = b.iter().zip(&y).map(|(b, y)| b * y).sum();
            let pinf = max_abs(&rp) / (1.0 + bnorm);
            let dinf = (dinf / (1.0 + cnorm)).max(max_abs(&rf) / (1.0 + cnorm));
            let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            Metrics {
                pobj,
                dobj,
                pinf,
                dinf,
                rel_gap,
            }
        }};
    }

    loop {
        metrics = current_metrics!();
        if settings.verbose {
            eprintln!(
                "iter {iterations:3}  pobj {:+.9e}  dobj {:+.9e}  pinf {:.2e}  dinf {:.2e}  gap {:.2e}",
                metrics.pobj, metrics.dobj, metrics.pinf, metrics.dinf, metrics.rel_gap
            );
        }
        if metrics.pinf <= settings.tol_feas
            && metrics.dinf <= settings.tol_feas
            && metrics.rel_gap <= settings.tol_gap
        {
            status = SolveStatus::Optimal;
            break;
        }
        let diverge = DIVERGENCE * (1.0 + bnorm + cnorm);
        if metrics.dobj < -diverge && metrics.dinf <= 1e-6 {
            status = SolveStatus::Infeasible;
            break;
        }
        if metrics.pobj > diverge && metrics.pinf <= 1e-6 {
            status = SolveStatus::Unbounded;
            break;
        }
        let score = metrics.score(settings);
        if score < best_score {
            best_score = score;
            best_metrics = metrics;
            best_x_free.copy_from_slice(&x_free);
            best_y.copy_from_slice(&y);
            for ((bx, bz), blk) in best_xz.iter_mut().zip(&blocks) {
                bx.copy_from_slice(&blk.x);
                bz.copy_from_slice(&blk.z);
            }
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_PATIENCE {
                status = SolveStatus::NumericalFailure;
                break;
            }
        }
        if iterations >= settings.max_iter {
            status = SolveStatus::IterationLimit;
            break;
        }
        iterations += 1;

        // Factorizations of the current iterate.
        let mut numerical_failure = false;
        for blk in blocks.iter_mut() {
            let n = blk.n;
            blk.chol_z.copy_from_slice(&blk.z);
            if lapack::cholesky(n, &mut blk.chol_z).is_err() {
                numerical_failure = true;
                break;
            }
            blk.zinv.fill(0.0);
            for i in 0..n {
                blk.zinv[i * n + i] = 1.0;
            }
            if lapack::cholesky_solve(n, &blk.chol_z, n, &mut blk.zinv).is_err() {
                numerical_failure = true;
                break;
            }
            blk.chol_x.copy_from_slice(&blk.x);
            if lapack::cholesky(n, &mut blk.chol_x).is_err() {
                numerical_failure = true;
                break;
            }
        }
        if numerical_failure {
            status = SolveStatus::NumericalFailure;
            break;
        }

        let mu = {
            let s: f64 = blocks.iter().map(|blk| sym_dot(&blk.x, &blk.z)).sum();
            s / total_order as f64
        };

        // Schur complement and KKT matrix (lower triangle).
        kmat.fill(0.0);
        for (ib, br) in block_rows.iter().enumerate() {
            let blk = &blocks[ib];
            let n = blk.n;
            if br.active.is_empty() {
                continue;
            }
            row_pos.resize(n, 0);
            for (ai, &iu) in br.active.iter().enumerate() {
                let ii = iu as usize;
                let ent_i = &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]];
                // Distinct rows touched by A_i.
                rows_of.clear();
                for &(r, c, _) in ent_i {
                    rows_of.push(r);
                    rows_of.push(c);
                }
                rows_of.sort_unstable();
                rows_of.dedup();
                let nr = rows_of.len();
                for (k, &r) in rows_of.iter().enumerate() {
                    row_pos[r as usize] = k as u32;
                }
                // W = rows `rows_of` of A_i·Z⁻¹, stored row-major nr×n.
                wbuf.clear();
                wbuf.resize(nr * n, 0.0);
                for &(r, c, v) in ent_i {
                    let (r, c) = (r as usize, c as usize);
                    if r == c {
                        let dst = &mut wbuf[(row_pos[r] as usize) * n..][..n];
                        let src = &blk.zinv[r * n..(r + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += v * s;
                        }
                    } else {
                        let h = 0.5 * v;
                        let dst = &mut wbuf[(row_pos[r] as usize) * n..][..n];
                        let src = &blk.zinv[c * n..(c + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += h * s;
                        }
                        let dst = &mut wbuf[(row_pos[c] as usize) * n..][..n];
                        let src = &blk.zinv[r * n..(r + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += h * s;
                        }
                    }
                }
                // Xsub = columns `rows_of` of X (n×nr col-major).
                xsub.clear();
                xsub.resize(n * nr, 0.0);
                for (k, &r) in rows_of.iter().enumerate() {
                    let r = r as usize;
                    xsub[k * n..(k + 1) * n].copy_from_slice(&blk.x[r * n..(r + 1) * n]);
                }
                // B = Xsub · W  (n×n col-major; W row-major nr×n acts as the
                // transposed col-major factor).
                bbuf.clear();
                bbuf.resize(n * n, 0.0);
                lapack::gemm(false, true, n, n, nr, 1.0, &xsub, &wbuf, 0.0, &mut bbuf);
                // M[i, j] += tr(A_j B) for active j ≤ i.
                for &ju in &br.active[..=ai] {
                    let jj = ju as usize;
                    let ent_j = &br.ent[br.row_ptr[jj]..br.row_ptr[jj + 1]];
                    let contrib = row_dot_mat(n, ent_j, &bbuf);
                    kmat[jj * kdim + ii] += contrib;
                }
            }
        }
        // Free-variable coupling (lower triangle: rows m..m+f).
        for ii in 0..m {
            for &(col, v) in &free_ent[free_ptr[ii]..free_ptr[ii + 1]] {
                kmat[ii * kdim + m + col as usize] = v;
            }
        }
        kmat_orig.copy_from_slice(&kmat);
        let mut kscale: f64 = 0.0;
        for i in 0..kdim {
            kscale = kscale.max(kmat[i * kdim + i].abs());
        }

        // Two passes (predictor, corrector) share one factorization. The
        // matrix is first factored as assembled; when that factorization is
        // too singular to yield a consistent direction, the iteration is
        // redone with static regularization, whose bounded factors give the
        // residual corrections a usable basis.
        let mut alpha_p = 0.0;
        let mut alpha_d = 0.0;
        let mut failed = false;
        let mut regularized = false;
        'direction: loop {
            if regularized {
                kmat.copy_from_slice(&kmat_orig);
                let delta = STATIC_REG * (1.0 + kscale);
                for i in 0..m {
                    kmat[i * kdim + i] += delta;
                }
                for i in m..kdim {
                    kmat[i * kdim + i] -= delta;
                }
            }
            let ipiv = match lapack::ldlt_factor(kdim, &mut kmat) {
                Ok(p) => p,
                Err(_) => {
                    if !regularized {
                        regularized = true;
                        continue 'direction;
                    }
                    failed = true;
                    break 'direction;
                }
            };

            for pass in 0..2 {
                let nu = if pass == 0 {
                    0.0
                } else {
                    // Mehrotra: probe the affine step, then target σμ.
                    let mut gap_aff = 0.0;
                    for blk in &blocks {
                        let mut t = 0.0;
                        t += sym_dot(&blk.x, &blk.z);
                        t += alpha_p * sym_dot(&blk.dxp, &blk.z);
                        t += alpha_d * sym_dot(&blk.x, &blk.dzp);
                        t += alpha_p * alpha_d * sym_dot(&blk.dxp, &blk.dzp);
                        gap_aff += t;
                    }
                    let mu_aff = (gap_aff / total_order as f64).max(0.0);
                    // Floor the centering weight while the iterate is still
                    // materially infeasible: letting μ collapse before the
                    // equality residuals are in hand parks the iterate on a
                    // non-optimal face of the cone and the gap never closes.
                    // Once feasible, pure Mehrotra closes the gap fastest.
                    let feas = metrics.pinf.max(metrics.dinf);
                    let sigma_min = if feas > 100.0 * settings.tol_feas {
                        0.2
                    } else {
                        0.0
                    };
                    let sigma = ((mu_aff / mu).powi(3)).clamp(sigma_min, 1.0);
                    sigma * mu
                };

                // E and G = E + X·Rd·Z⁻¹ per block.
                for blk in blocks.iter_mut() {
                    let n = blk.n;
                    if pass == 0 {
                        for (e, x) in blk.e.iter_mut().zip(&blk.x) {
                            *e = -x;
                        }
                    } else {
                        // E = νZ⁻¹ − X − ΔX_p ΔZ_p Z⁻¹.
                        lapack::gemm(
                            false,
                            false,
                            n,
                            n,
                            n,
                            1.0,
                            &blk.dxp,
                            &blk.dzp,
                            0.0,
                            &mut blk.t1,
                        );
                        lapack::gemm(
                            false,
                            false,
                            n,
                            n,
                            n,
                            1.0,
                            &blk.t1,
                            &blk.zinv,
                            0.0,
                            &mut blk.t2,
                        );
                        for k in 0..n * n {
                            blk.e[k] = nu * blk.zinv[k] - blk.x[k] - blk.t2[k];
                        }
                    }
                    lapack::gemm(
                        false,
                        false,
                        n,
                        n,
                        n,
                        1.0,
                        &blk.x,
                        &blk.rd,
                        0.0,
                        &mut blk.t1,
                    );
                    lapack::gemm(
                        false,
                        false,
                        n,
                        n,
                        n,
                        1.0,
                        &blk.t1,
                        &blk.zinv,
                        0.0,
                        &mut blk.t2,
                    );
                    for k in 0..n * n {
                        blk.g[k] = blk.e[k] + blk.t2[k];
                    }
                }

                // rhs = [A(G) − rp ; rf].
                for ii in 0..m {
                    let mut gsum = 0.0;
                    for (ib, br) in block_rows.iter().enumerate() {
                        let blk = &blocks[ib];
                        gsum +=
                            row_dot_mat(blk.n, &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]], &blk.g);
                    }
                    rhs[ii] = gsum - rp[ii];
                }
                rhs[m..].copy_from_slice(&rf);
                rhs_save.copy_from_slice(&rhs);
                if refined_solve(
                    kdim,
                    &kmat_orig,
                    &kmat,
                    &ipiv,
                    &rhs_save,
                    &mut rhs,
                    &mut resid,
                    &mut sol_best,
                )
                .is_err()
                {
                    failed = true;
                    break;
                }
                dy.copy_from_slice(&rhs[..m]);
                // Δx_f = −v.
                for (d, v) in dxf.iter_mut().zip(&rhs[m..]) {
                    *d = -v;
                }

                // ΔZ = A*(Δy) − Rd; ΔX = E − X ΔZ Z⁻¹ symmetrized.
                for (ib, blk) in blocks.iter_mut().enumerate() {
                    let n = blk.n;
                    let br = &block_rows[ib];
                    for (o, rd) in blk.dz.iter_mut().zip(&blk.rd) {
                        *o = -rd;
                    }
                    for &iu in &br.active {
                        let ii = iu as usize;
                        add_row_matrix(
                            n,
                            &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]],
                            dy[ii],
                            &mut blk.dz,
                        );
                    }
                    lapack::gemm(
                        false,
                        false,
                        n,
                        n,
                        n,
                        1.0,
                        &blk.x,
                        &blk.dz,
                        0.0,
                        &mut blk.t1,
                    );
                    lapack::gemm(
                        false,
                        false,
                        n,
                        n,
                        n,
                        1.0,
                        &blk.t1,
                        &blk.zinv,
                        0.0,
                        &mut blk.t2,
                    );
                    for k in 0..n * n {
                        blk.dx[k] = blk.e[k] - blk.t2[k];
                    }
                    symmetrize(n, &mut blk.dx);
                }

                // The assembled Schur matrix and the recovered ΔX evaluate the
                // same bilinear form along different floating-point paths, and
                // near a degenerate optimum the mismatch times ‖Δy‖ wrecks
                // primal feasibility. Re-solve against the achieved residual of
                // A(ΔX) + A_f Δx_f = rp while doing so improves consistency;
                // a correction that regresses is rolled back.
                let mut prev_worst = f64::INFINITY;
                let mut have_last = false;
                let mut achieved_cons = f64::INFINITY;
                for round in 0..=KKT_REFINE_ROUNDS {
                    let mut worst: f64 = 0.0;
                    for ii in 0..m {
                        let mut ax: f64 = 0.0;
                        for &(col, v) in &free_ent[free_ptr[ii]..free_ptr[ii + 1]] {
                            ax += v * dxf[col as usize];
                        }
                        for (ib, br) in block_rows.iter().enumerate() {
                            let blk = &blocks[ib];
                            ax += row_dot_mat(
                                blk.n,
                                &br.ent[br.row_ptr[ii]..br.row_ptr[ii + 1]],
                                &blk.dx,
                            );
                        }
                        consv[ii] = rp[ii] - ax;
                        worst = worst.max(consv[ii].abs());
                    }
                    if worst >= prev_worst {
                        if have_last {
                            for (d, v) in dy.iter_mut().zip(&corr_dy) {
                                *d -= v;
                            }
                            for (d, v) in dxf.iter_mut().zip(&corr_v) {
                                *d += v;
                            }
                            nudge_direction(&mut blocks, &block_rows, &corr_dy, -1.0);
                        }
                        achieved_cons = prev_worst.min(worst);
                        break;
                    }
                    achieved_cons = worst;
                    if worst <= KKT_REFINE_STOP * (1.0 + bnorm) || round == KKT_REFINE_ROUNDS {
                        break;
                    }
                    prev_worst = worst;
                    for (r, c) in rhs.iter_mut().zip(&consv) {
                        *r = -c;
                    }
                    rhs[m..].fill(0.0);
                    rhs_save.copy_from_slice(&rhs);
                    if refined_solve(
                        kdim,
                        &kmat_orig,
                        &kmat,
                        &ipiv,
                        &rhs_save,
                        &mut rhs,
                        &mut resid,
                        &mut sol_best,
                    )
                    .is_err()
                    {
                        failed = true;
                        break;
                    }
                    corr_dy.copy_from_slice(&rhs[..m]);
                    corr_v.copy_from_slice(&rhs[m..]);
                    have_last = true;
                    for (d, v) in dy.iter_mut().zip(&corr_dy) {
                        *d += v;
                    }
                    for (d, v) in dxf.iter_mut().zip(&corr_v) {
                        *d -= v;
                    }
                    nudge_direction(&mut blocks, &block_rows, &corr_dy, 1.0);
                }
                if failed {
                    break;
                }
                if achieved_cons > DIRECTION_TOL * (1.0 + bnorm) && !regularized {
                    regularized = true;
                    continue 'direction;
                }
                if achieved_cons > DIRECTION_FAIL * (1.0 + bnorm) {
                    failed = true;
                    break;
                }

                // Step lengths.
                let mut ap = HUGE_STEP;
                let mut ad = HUGE_STEP;
                for blk in blocks.iter_mut() {
                    ap = ap.min(max_step(blk.n, &blk.chol_x, &blk.dx, &mut scratch)?);
                    ad = ad.min(max_step(blk.n, &blk.chol_z, &blk.dz, &mut scratch)?);
                }
                alpha_p = (TAU * ap).min(1.0);
                alpha_d = (TAU * ad).min(1.0);

                if settings.verbose && pass == 1 {
                    eprintln!(
                        "    ap {alpha_p:.3e} ad {alpha_d:.3e} nu {nu:.3e} cons {achieved_cons:.3e} reg {regularized}"
                    );
                }
                if pass == 0 {
                    for blk in blocks.iter_mut() {
                        blk.dxp.copy_from_slice(&blk.dx);
                        blk.dzp.copy_from_slice(&blk.dz);
                    }
                } else {
                    // Take the corrector step.
                    for blk in blocks.iter_mut() {
                        for k in 0..blk.n * blk.n {
                            blk.x[k] += alpha_p * blk.dx[k];
                            blk.z[k] += alpha_d * blk.dz[k];
                        }
                    }
                    for (xf, d) in x_free.iter_mut().zip(&dxf) {
                        *xf += alpha_p * d;
                    }
                    for (yv, d) in y.iter_mut().zip(&dy) {
                        *yv += alpha_d * d;
                    }
                }
            }
            break 'direction;
        }
        if failed {
            status = SolveStatus::NumericalFailure;
            break;
        }
    }

    // Non-converged exits report the best iterate, upgraded to
    // near-optimal when it sits within 100× of every tolerance.
    if matches!(
        status,
        SolveStatus::NumericalFailure | SolveStatus::IterationLimit
    ) && best_score < metrics.score(settings)
    {
        metrics = best_metrics;
        x_free.copy_from_slice(&best_x_free);
        y.copy_from_slice(&best_y);
        for (blk, (bx, bz)) in blocks.iter_mut().zip(&best_xz) {
            blk.x.copy_from_slice(bx);
            blk.z.copy_from_slice(bz);
        }
    }
    if !matches!(
        status,
        SolveStatus::Optimal | SolveStatus::Infeasible | SolveStatus::Unbounded
    ) && metrics.score(settings) <= 100.0
    {
        status = SolveStatus::NearOptimal;
    }

    // Pack the solution; y is unscaled back to the original rows.
    let mut z = vec![0.0; layout.n_cols()];
    z[..f].copy_from_slice(&x_free);
    for blk in &blocks {
        let n = blk.n;
        for i in 0..n {
            for j in i..n {
                z[blk.col_start + i * n - i * (i + 1) / 2 + j] = blk.x[j * n + i];
            }
        }
    }
    let mut y_full = vec![0.0; problem.rows.len()];
    for (ii, &i) in kept.iter().enumerate() {
        y_full[i] = y[ii] / scale[ii];
    }
    let pobj = problem.objective_value(&z);
    let dobj: f64 = problem.b.iter().zip(&y_full).map(|(b, y)| b * y).sum();
    Ok(Solution {
        status,
        z,
        y: y_full,
        objective: pobj,
        dual_objective: dobj,
        iterations,
        primal_infeas: metrics.pinf,
        dual_infeas: metrics.dinf,
        rel_gap: metrics.rel_gap,
    })
}
