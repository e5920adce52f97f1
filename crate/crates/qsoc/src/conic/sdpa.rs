//! SDPA sparse (`.dat-s`) export and import.
//!
//! The file encodes the native form as an SDPA dual problem
//! `max tr(F0·Y) s.t. tr(Fi·Y) = c_i, Y ⪰ 0`: our objective becomes `F0`,
//! each constraint row becomes one `Fi`, and our right-hand side becomes the
//! SDPA `c` vector. Free columns are split `x = p − q` with `p, q ≥ 0` and
//! placed in one trailing diagonal block of size `2·n_free`, so the exported
//! problem has the same optimal value and needs no side channel.
//!
//! SDPA stores only the upper triangle of each symmetric matrix, one entry
//! per line, with an off-diagonal entry implying its mirror. Our packed
//! coefficient `v` on an off-diagonal column stands for a matrix with both
//! mirror entries equal to `v/2`, so values are halved on export and doubled
//! on import. Values are printed with 17 significant digits, which
//! round-trips every finite `f64` exactly, and entries are emitted in a
//! fixed order (matrix number, then block, then row-major position), so
//! repeated exports of the same problem are byte-identical.
//!
//! The reader tolerates `*` and `"` comment lines, `,{}()` separators, and
//! trailing annotations on header lines (`3 = mDIM`). It maps positive block
//! sizes to dense blocks and negative ones to diagonal blocks; free-variable
//! splits are not undone, since the file does not mark them.

use std::fmt::Write as _;
use std::path::Path;

use super::{BlockKind, ConeLayout, ConicProblem, SparseRow};
use crate::error::{Error, Result};

/// Render `problem` as the text of an SDPA sparse file.
pub fn to_sdpa_string(problem: &ConicProblem) -> Result<String> {
    problem.validate()?;
    let layout = &problem.layout;
    let f = layout.n_free;
    if layout.n_cols() == 0 {
        return Err(Error::InvalidInput(
            "cannot export a problem with no columns".into(),
        ));
    }
    let m = problem.rows.len();
    let nblock = layout.blocks.len() + usize::from(f > 0);

    let mut out = String::new();
    let _ = writeln!(out, "{m}");
    let _ = writeln!(out, "{nblock}");

    let mut sizes: Vec<String> = layout
        .blocks
        .iter()
        .map(|blk| match *blk {
            BlockKind::Dense(n) => format!("{n}"),
            BlockKind::Diag(k) => format!("-{k}"),
        })
        .collect();
    if f > 0 {
        sizes.push(format!("-{}", 2 * f));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));

    let rhs: Vec<String> = problem.b.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "{}", rhs.join(" "));

    let objective: Vec<(usize, f64)> = problem
        .c
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(col, &v)| (col, v))
        .collect();
    emit_matrix(&mut out, 0, layout, &objective);
    for (i, row) in problem.rows.iter().enumerate() {
        let entries: Vec<(usize, f64)> =
            row.entries.iter().map(|&(c, v)| (c as usize, v)).collect();
        emit_matrix(&mut out, i + 1, layout, &entries);
    }
    Ok(out)
}

/// Append the entry lines of one matrix. `entries` are packed-column pairs
/// sorted by column with zeros removed; packed order is already block-major
/// and row-major within each block, so cone entries stream straight through
/// while free columns are buffered for the trailing split block.
fn emit_matrix(out: &mut String, matno: usize, layout: &ConeLayout, entries: &[(usize, f64)]) {
    let f = layout.n_free;
    let free_block = layout.blocks.len() + 1;
    let mut free: Vec<(usize, f64)> = Vec::new();
    for &(col, v) in entries {
        if v == 0.0 {
            continue;
        }
        if col < f {
            free.push((col, v));
            continue;
        }
        let (b, i, j) = layout.col_entry(col);
        let val = if i == j { v } else { v / 2.0 };
        let _ = writeln!(out, "{} {} {} {} {:.16e}", matno, b + 1, i + 1, j + 1, val);
    }
    for &(k, v) in &free {
        let _ = writeln!(
            out,
            "{} {} {} {} {:.16e}",
            matno,
            free_block,
            k + 1,
            k + 1,
            v
        );
    }
    for &(k, v) in &free {
        let _ = writeln!(
            out,
            "{} {} {} {} {:.16e}",
            matno,
            free_block,
            f + k + 1,
            f + k + 1,
            -v
        );
    }
}

/// Write `problem` to `path` in SDPA sparse format.
pub fn write_sdpa_file(path: impl AsRef<Path>, problem: &ConicProblem) -> Result<()> {
    let text = to_sdpa_string(problem)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse an SDPA sparse file back into a [`ConicProblem`] with no free
/// columns (any free-variable split stays split).
pub fn parse_sdpa(text: &str) -> Result<ConicProblem> {
    let mut lines = TokenLines::new(text);

    let m = lines.next_integer("matrix count")? as usize;
    let nblock = lines.next_integer("block count")?;
    if nblock <= 0 {
        return Err(lines.error("block count must be positive"));
    }
    let nblock = nblock as usize;

    let mut sizes: Vec<i64> = Vec::with_capacity(nblock);
    while sizes.len() < nblock {
        lines.fill_integers(&mut sizes, nblock, "block structure")?;
    }
    let mut blocks = Vec::with_capacity(nblock);
    for &s in &sizes {
        match s {
            s if s > 0 => blocks.push(BlockKind::Dense(s as usize)),
            s if s < 0 => blocks.push(BlockKind::Diag((-s) as usize)),
            _ => return Err(lines.error("block of size zero")),
        }
    }
    let layout = ConeLayout { n_free: 0, blocks };

    let mut b: Vec<f64> = Vec::with_capacity(m);
    while b.len() < m {
        lines.fill_floats(&mut b, m, "right-hand side")?;
    }

    let mut c = vec![0.0; layout.n_cols()];
    let mut row_entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
    while let Some((line_no, tokens)) = lines.next_line() {
        let fail = |msg: &str| Error::SdpaParse {
            line: line_no,
            msg: msg.into(),
        };
        if tokens.len() != 5 {
            return Err(fail(&format!(
                "expected 5 fields in entry line, found {}",
                tokens.len()
            )));
        }
        let matno: usize = tokens[0].parse().map_err(|_| fail("bad matrix number"))?;
        let blk: usize = tokens[1].parse().map_err(|_| fail("bad block number"))?;
        let i: usize = tokens[2].parse().map_err(|_| fail("bad row index"))?;
        let j: usize = tokens[3].parse().map_err(|_| fail("bad column index"))?;
        let v: f64 = tokens[4].parse().map_err(|_| fail("bad value"))?;
        if !v.is_finite() {
            return Err(fail("non-finite value"));
        }
        if matno > m {
            return Err(fail(&format!("matrix number {matno} exceeds {m}")));
        }
        if blk == 0 || blk > layout.blocks.len() {
            return Err(fail(&format!("block number {blk} out of range")));
        }
        let kind = layout.blocks[blk - 1];
        let n = kind.order();
        if i == 0 || j == 0 || i > n || j > n {
            return Err(fail(&format!("entry ({i}, {j}) outside order-{n} block")));
        }
        let (lo, hi) = (i.min(j) - 1, i.max(j) - 1);
        if matches!(kind, BlockKind::Diag(_)) && lo != hi {
            return Err(fail("off-diagonal entry in diagonal block"));
        }
        let col = layout.entry_col(blk - 1, lo, hi);
        let packed = if lo == hi { v } else { 2.0 * v };
        if matno == 0 {
            c[col] += packed;
        } else {
            row_entries[matno - 1].push((col as u32, packed));
        }
    }

    let rows: Vec<SparseRow> = row_entries.into_iter().map(SparseRow::new).collect();
    let problem = ConicProblem { layout, c, rows, b };
    problem.validate()?;
    Ok(problem)
}

/// Read and parse an SDPA sparse file.
pub fn read_sdpa_file(path: impl AsRef<Path>) -> Result<ConicProblem> {
    let text = std::fs::read_to_string(path)?;
    parse_sdpa(&text)
}

/// Line-oriented token stream over the non-comment lines of an SDPA file.
/// `,{}()` count as separators; a token that fails to parse ends the data
/// portion of a header line, which tolerates annotations like `3 = mDIM`.
struct TokenLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> TokenLines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            last_line: 0,
        }
    }

    /// Next non-comment, non-empty line as `(1-based line number, tokens)`.
    fn next_line(&mut self) -> Option<(usize, Vec<String>)> {
        for (idx, raw) in self.lines.by_ref() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('*') || trimmed.starts_with('"') {
                continue;
            }
            let cleaned: String = trimmed
                .chars()
                .map(|ch| {
                    if matches!(ch, ',' | '{' | '}' | '(' | ')') {
                        ' '
                    } else {
                        ch
                    }
                })
                .collect();
            let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
            if tokens.is_empty() {
                continue;
            }
            self.last_line = idx + 1;
            return Some((idx + 1, tokens));
        }
        None
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::SdpaParse {
            line: self.last_line,
            msg: msg.into(),
        }
    }

    /// First integer of the next line; the rest of the line is ignored.
    fn next_integer(&mut self, what: &str) -> Result<i64> {
        let (line_no, tokens) = self
            .next_line()
            .ok_or_else(|| self.error(format!("missing {what}")))?;
        tokens[0].parse().map_err(|_| Error::SdpaParse {
            line: line_no,
            msg: format!("bad {what} `{}`", tokens[0]),
        })
    }

    /// Push integers from the next line into `dest` until `want` are
    /// collected or a non-integer token ends the line.
    fn fill_integers(&mut self, dest: &mut Vec<i64>, want: usize, what: &str) -> Result<()> {
        let (line_no, tokens) = self
            .next_line()
            .ok_or_else(|| self.error(format!("missing {what}")))?;
        let before = dest.len();
        for tok in &tokens {
            if dest.len() == want {
                break;
            }
            match tok.parse::<i64>() {
                Ok(v) => dest.push(v),
                Err(_) => break,
            }
        }
        if dest.len() == before {
            return Err(Error::SdpaParse {
                line: line_no,
                msg: format!("expected {what}, found `{}`", tokens[0]),
            });
        }
        Ok(())
    }

    /// Same as [`Self::fill_integers`] for floating-point values.
    fn fill_floats(&mut self, dest: &mut Vec<f64>, want: usize, what: &str) -> Result<()> {
        let (line_no, tokens) = self
            .next_line()
            .ok_or_else(|| self.error(format!("missing {what}")))?;
        let before = dest.len();
        for tok in &tokens {
            if dest.len() == want {
                break;
            }
            match tok.parse::<f64>() {
                Ok(v) => dest.push(v),
                Err(_) => break,
            }
        }
        if dest.len() == before {
            return Err(Error::SdpaParse {
                line: line_no,
                msg: format!("expected {what}, found `{}`", tokens[0]),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_toy() -> ConicProblem {
        // max 2·Y12 subject to tr(Y) = 1 over a 2×2 PSD block.
        let layout = ConeLayout {
            n_free: 0,
            blocks: vec![BlockKind::Dense(2)],
        };
        let c = vec![0.0, 2.0, 0.0];
        let rows = vec![SparseRow::new(vec![(0, 1.0), (2, 1.0)])];
        ConicProblem {
            layout,
            c,
            rows,
            b: vec![1.0],
        }
    }

    #[test]
    fn trace_toy_renders_to_seven_lines_with_halved_objective() {
        let text = to_sdpa_string(&trace_toy()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        // Packed objective 2 on the off-diagonal becomes a stored 1.0.
        let objective_line: Vec<&str> = lines[4].split_whitespace().collect();
        assert_eq!(&objective_line[..4], &["0", "1", "1", "2"]);
        assert_eq!(objective_line[4].parse::<f64>().unwrap(), 1.0);
        assert_eq!(lines[5].split_whitespace().next(), Some("1"));
        assert_eq!(lines[6].split_whitespace().next(), Some("1"));
    }

    #[test]
    fn export_is_byte_stable() {
        let a = to_sdpa_string(&trace_toy()).unwrap();
        let b = to_sdpa_string(&trace_toy()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        // Coefficients chosen to require all 17 digits.
        let layout = ConeLayout {
            n_free: 0,
            blocks: vec![BlockKind::Dense(2), BlockKind::Diag(2)],
        };
        let third = 1.0 / 3.0;
        let c = vec![third, -2.0 * third, 1.0 + 1e-15, 0.1, -0.3];
        let rows = vec![
            SparseRow::new(vec![(0, 7e-17), (1, -third)]),
            SparseRow::new(vec![(3, 1.0), (4, third)]),
        ];
        let problem = ConicProblem {
            layout,
            c,
            rows,
            b: vec![std::f64::consts::PI, -1e-300],
        };
        let text = to_sdpa_string(&problem).unwrap();
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(back.layout, problem.layout);
        assert_eq!(back.c, problem.c);
        assert_eq!(back.b, problem.b);
        assert_eq!(back.rows, problem.rows);
    }

    #[test]
    fn free_columns_split_into_trailing_diagonal_block() {
        let layout = ConeLayout {
            n_free: 2,
            blocks: vec![BlockKind::Dense(2)],
        };
        // max x0 + Y11 s.t. x0 − x1 + Y12 = 0, x1 + tr(Y) = 1.
        let problem = ConicProblem {
            layout,
            c: vec![1.0, 0.0, 1.0, 0.0, 0.0],
            rows: vec![
                SparseRow::new(vec![(0, 1.0), (1, -1.0), (3, 1.0)]),
                SparseRow::new(vec![(1, 1.0), (2, 1.0), (4, 1.0)]),
            ],
            b: vec![0.0, 1.0],
        };
        let text = to_sdpa_string(&problem).unwrap();
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(back.layout.n_free, 0);
        assert_eq!(
            back.layout.blocks,
            vec![BlockKind::Dense(2), BlockKind::Diag(4)]
        );
        // x0 appears as p0 − q0: +1 at diagonal slot 1, −1 at slot 3.
        let start = back.layout.block_start(1);
        let row0 = &back.rows[0];
        let get = |col: usize| {
            row0.entries
                .iter()
                .find(|e| e.0 as usize == col)
                .map(|e| e.1)
        };
        assert_eq!(get(start), Some(1.0));
        assert_eq!(get(start + 2), Some(-1.0));
        assert_eq!(back.c[start], 1.0);
        assert_eq!(back.c[start + 2], -1.0);
    }

    #[test]
    fn reader_tolerates_comments_and_annotated_headers() {
        let text = r#"* a comment line
" another comment
2 = mDIM
2 = nBLOCK
{2, -1}
0.5, 1.5
* interior comment
0 1 1 2 0.25
1 1 1 1 1.0
1 2 1 1 1.0
2 1 2 2 1.0
"#;
        let problem = parse_sdpa(text).unwrap();
        assert_eq!(problem.rows.len(), 2);
        assert_eq!(
            problem.layout.blocks,
            vec![BlockKind::Dense(2), BlockKind::Diag(1)]
        );
        assert_eq!(problem.b, vec![0.5, 1.5]);
        // Off-diagonal 0.25 doubles back to a packed 0.5.
        assert_eq!(problem.c, vec![0.0, 0.5, 0.0, 0.0]);
        assert_eq!(problem.rows[0].entries, vec![(0, 1.0), (3, 1.0)]);
        assert_eq!(problem.rows[1].entries, vec![(2, 1.0)]);
    }

    #[test]
    fn reader_rejects_structural_errors() {
        let bad_block = "1\n1\n2\n1.0\n0 2 1 1 1.0\n";
        assert!(matches!(
            parse_sdpa(bad_block),
            Err(Error::SdpaParse { line: 5, .. })
        ));
        let bad_index = "1\n1\n2\n1.0\n0 1 3 3 1.0\n";
        assert!(matches!(
            parse_sdpa(bad_index),
            Err(Error::SdpaParse { line: 5, .. })
        ));
        let bad_matno = "1\n1\n2\n1.0\n2 1 1 1 1.0\n";
        assert!(matches!(
            parse_sdpa(bad_matno),
            Err(Error::SdpaParse { line: 5, .. })
        ));
        let off_diag_in_diag = "1\n1\n-2\n1.0\n0 1 1 2 1.0\n";
        assert!(matches!(
            parse_sdpa(off_diag_in_diag),
            Err(Error::SdpaParse { line: 5, .. })
        ));
        let short_entry = "1\n1\n2\n1.0\n0 1 1 1\n";
        assert!(matches!(
            parse_sdpa(short_entry),
            Err(Error::SdpaParse { line: 5, .. })
        ));
    }

    #[test]
    fn lower_triangle_entries_fold_onto_upper() {
        let text = "1\n1\n2\n1.0\n0 1 2 1 0.5\n1 1 1 1 1.0\n";
        let problem = parse_sdpa(text).unwrap();
        assert_eq!(problem.c, vec![0.0, 1.0, 0.0]);
    }
}
