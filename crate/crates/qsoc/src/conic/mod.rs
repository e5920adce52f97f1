//! Linear optimization over products of PSD cones with free variables:
//!
//! ```text
//! maximize    c·z
//! subject to  row_i · z = b_i          (i = 1..m)
//!             z = (x_free, X_1, X_2, …),  X_b ⪰ 0
//! ```
//!
//! Packed column layout: free columns first, then one column per upper-tri
//! entry (row-major, i ≤ j) of each dense block, then one per diagonal entry
//! of each diagonal block. A column holds the matrix entry `X_ij` once; a row
//! coefficient `v` on an off-diagonal column stands for the symmetric matrix
//! with `A_ij = A_ji = v/2`, so `⟨A, X⟩ = v·X_ij` matches the packed dot
//! product. The same convention applies to the objective.

pub mod lapack;
pub mod sdpa;
pub mod solver;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One cone factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Dense symmetric PSD block of the given order.
    Dense(usize),
    /// Diagonal (elementwise nonnegative) block of the given order.
    Diag(usize),
}

impl BlockKind {
    pub fn order(&self) -> usize {
        match *self {
            BlockKind::Dense(n) | BlockKind::Diag(n) => n,
        }
    }

    /// Number of packed columns the block occupies.
    pub fn n_cols(&self) -> usize {
        match *self {
            BlockKind::Dense(n) => n * (n + 1) / 2,
            BlockKind::Diag(n) => n,
        }
    }
}

/// Cone structure: free variable count plus the ordered block list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeLayout {
    pub n_free: usize,
    pub blocks: Vec<BlockKind>,
}

impl ConeLayout {
    pub fn n_cols(&self) -> usize {
        self.n_free + self.blocks.iter().map(BlockKind::n_cols).sum::<usize>()
    }

    /// First column of block `b`.
    pub fn block_start(&self, b: usize) -> usize {
        self.n_free
            + self.blocks[..b]
                .iter()
                .map(BlockKind::n_cols)
                .sum::<usize>()
    }

    /// Column of entry `(i, j)` (`i ≤ j`) of dense block `b`, or of diagonal
    /// entry `i` for a diagonal block (then `i == j` is required).
    pub fn entry_col(&self, b: usize, i: usize, j: usize) -> usize {
        let start = self.block_start(b);
        match self.blocks[b] {
            BlockKind::Dense(n) => {
                debug_assert!(i <= j && j < n);
                start + i * n - i * (i + 1) / 2 + j
            }
            BlockKind::Diag(n) => {
                debug_assert!(i == j && i < n);
                start + i
            }
        }
    }

    /// Inverse of [`Self::entry_col`] for columns at or past `n_free`:
    /// `(block, i, j)`.
    pub fn col_entry(&self, col: usize) -> (usize, usize, usize) {
        debug_assert!(col >= self.n_free);
        let mut offset = col - self.n_free;
        for (b, blk) in self.blocks.iter().enumerate() {
            let w = blk.n_cols();
            if offset < w {
                return match *blk {
                    BlockKind::Dense(n) => {
                        let mut i = 0;
                        let mut row_w = n;
                        while offset >= row_w {
                            offset -= row_w;
                            row_w -= 1;
                            i += 1;
                        }
                        (b, i, i + offset)
                    }
                    BlockKind::Diag(_) => (b, offset, offset),
                };
            }
            offset -= w;
        }
        unreachable!("column out of range");
    }

    /// Sum of block orders (the barrier parameter denominator).
    pub fn total_order(&self) -> usize {
        self.blocks.iter().map(BlockKind::order).sum()
    }
}

/// Sparse constraint row over packed columns; kept sorted with unique columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub entries: Vec<(u32, f64)>,
}

impl SparseRow {
    pub fn new(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Self { entries: merged }
    }

    pub fn dot(&self, z: &[f64]) -> f64 {
        self.entries.iter().map(|&(c, v)| v * z[c as usize]).sum()
    }

    pub fn inf_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1.abs()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.1 *= s;
        }
    }
}

/// Full problem instance. See module docs for the sign and packing rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicProblem {
    pub layout: ConeLayout,
    /// Objective over packed columns (maximized).
    pub c: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub b: Vec<f64>,
}

impl ConicProblem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n_cols = self.layout.n_cols();
        if self.c.len() != n_cols {
            return Err(Error::MalformedProblem(format!(
                "objective has {} entries for {} columns",
                self.c.len(),
                n_cols
            )));
        }
        if self.b.len() != self.rows.len() {
            return Err(Error::MalformedProblem(format!(
                "{} right-hand sides for {} rows",
                self.b.len(),
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(c, v) in &row.entries {
                if (c as usize) >= n_cols {
                    return Err(Error::MalformedProblem(format!(
                        "row {i} references column {c} of {n_cols}"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::MalformedProblem(format!(
                        "row {i} has non-finite value"
                    )));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(Error::MalformedProblem(format!(
                            "row {i} columns are not strictly increasing"
                        )));
                    }
                }
                prev = Some(c);
            }
        }
        if self.c.iter().any(|v| !v.is_finite()) || self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedProblem(
                "non-finite objective or rhs".into(),
            ));
        }
        Ok(())
    }

    /// Objective value of a packed point.
    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.c.iter().zip(z).map(|(c, z)| c * z).sum()
    }
}

/// Interior-point stopping criteria.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative primal/dual feasibility tolerance.
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Print one line per iteration to stderr.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// All tolerances met.
    Optimal,
    /// Tolerances met within a factor of 100.
    NearOptimal,
    /// Constraints are inconsistent (dual objective diverges).
    Infeasible,
    /// Objective diverges over the feasible set.
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_solved(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    /// Primal point over packed columns (free values, then block entries).
    pub z: Vec<f64>,
    /// Dual multipliers, one per row.
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub rel_gap: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_column_arithmetic_round_trips() {
        let layout = ConeLayout {
            n_free: 3,
            blocks: vec![BlockKind::Dense(4), BlockKind::Diag(2), BlockKind::Dense(2)],
        };
        assert_eq!(layout.n_cols(), 3 + 10 + 2 + 3);
        assert_eq!(layout.block_start(0), 3);
        assert_eq!(layout.block_start(1), 13);
        assert_eq!(layout.block_start(2), 15);
        for b in 0..3 {
            let order = layout.blocks[b].order();
            for i in 0..order {
                for j in i..order {
                    if matches!(layout.blocks[b], BlockKind::Diag(_)) && i != j {
                        continue;
                    }
                    let col = layout.entry_col(b, i, j);
                    assert_eq!(layout.col_entry(col), (b, i, j));
                }
            }
        }
        // Dense row-major packing: (0,0) (0,1) (0,2) (0,3) (1,1)…
        assert_eq!(layout.entry_col(0, 0, 3), 6);
        assert_eq!(layout.entry_col(0, 1, 1), 7);
        assert_eq!(layout.entry_col(0, 3, 3), 12);
    }

    #[test]
    fn sparse_row_merges_and_sorts() {
        let row = SparseRow::new(vec![(5, 1.0), (2, 2.0), (5, -1.0), (7, 3.0)]);
        assert_eq!(row.entries, vec![(2, 2.0), (7, 3.0)]);
        let z = vec![0.0; 8];
        assert_eq!(row.dot(&z), 0.0);
        assert_eq!(row.inf_norm(), 3.0);
    }

    #[test]
    fn validation_catches_structural_errors() {
        let layout = ConeLayout {
            n_free: 1,
            blocks: vec![BlockKind::Dense(2)],
        };
        let good = ConicProblem {
            layout: layout.clone(),
            c: vec![0.0; 4],
            rows: vec![SparseRow::new(vec![(0, 1.0), (3, 1.0)])],
            b: vec![1.0],
        };
        good.validate().unwrap();
        let bad_col = ConicProblem {
            layout: layout.clone(),
            c: vec![0.0; 4],
            rows: vec![SparseRow {
                entries: vec![(9, 1.0)],
            }],
            b: vec![1.0],
        };
        assert!(bad_col.validate().is_err());
        let bad_len = ConicProblem {
            layout,
            c: vec![0.0; 2],
            rows: vec![],
            b: vec![],
        };
        assert!(bad_len.validate().is_err());
    }
}
