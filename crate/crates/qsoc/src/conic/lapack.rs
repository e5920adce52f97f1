//! Thin FFI layer over the system BLAS/LAPACK (linked as openblas) with safe
//! column-major wrappers for the operations the interior-point solver needs.
//! Symmetric matrices are stored as full dense column-major squares; only the
//! referenced triangle has to be populated where noted.

use crate::error::{Error, Result};
use std::ffi::c_char;
use std::sync::Once;

extern "C" {
    fn openblas_set_num_threads(n: i32);

    fn dgemm_(
        transa: *const c_char,
        transb: *const c_char,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *const f64,
        ldb: *const i32,
        beta: *const f64,
        c: *mut f64,
        ldc: *const i32,
    );

    fn dtrsm_(
        side: *const c_char,
        uplo: *const c_char,
        transa: *const c_char,
        diag: *const c_char,
        m: *const i32,
        n: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
    );

    fn dpotrf_(uplo: *const c_char, n: *const i32, a: *mut f64, lda: *const i32, info: *mut i32);

    fn dpotrs_(
        uplo: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn dsytrf_(
        uplo: *const c_char,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        ipiv: *mut i32,
        work: *mut f64,
        lwork: *const i32,
        info: *mut i32,
    );

    fn dsytrs_(
        uplo: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *const f64,
        lda: *const i32,
        ipiv: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn dsyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
}

static BLAS_INIT: Once = Once::new();

/// Pin BLAS to one thread: reductions stay deterministic regardless of the
/// host's core count, and the solver parallelizes at a higher level anyway.
pub fn init_blas() {
    BLAS_INIT.call_once(|| unsafe { openblas_set_num_threads(1) });
}

fn dim(n: usize) -> Result<i32> {
    i32::try_from(n).map_err(|_| Error::MalformedProblem("matrix dimension overflow".into()))
}

const L: c_char = b'L' as c_char;
const N: c_char = b'N' as c_char;
const T: c_char = b'T' as c_char;
const R: c_char = b'R' as c_char;

/// `c ← alpha·op(a)·op(b) + beta·c` with column-major `a (m×k)`, `b (k×n)`,
/// `c (m×n)` after the transposes are applied.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    init_blas();
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (mm, nn, kk) = (dim(m).unwrap(), dim(n).unwrap(), dim(k).unwrap());
    let lda = if trans_a { kk } else { mm };
    let ldb = if trans_b { nn } else { kk };
    let ta = if trans_a { T } else { N };
    let tb = if trans_b { T } else { N };
    debug_assert!(a.len() >= (lda as usize) * if trans_a { m } else { k });
    debug_assert!(b.len() >= (ldb as usize) * if trans_b { k } else { n });
    unsafe {
        dgemm_(
            &ta,
            &tb,
            &mm,
            &nn,
            &kk,
            &alpha,
            a.as_ptr(),
            &lda,
            b.as_ptr(),
            &ldb,
            &beta,
            c.as_mut_ptr(),
            &mm,
        );
    }
}

/// In-place lower Cholesky factor of a symmetric positive definite matrix
/// (lower triangle referenced). Fails when the matrix is not PD.
pub fn cholesky(n: usize, a: &mut [f64]) -> Result<()> {
    init_blas();
    let nn = dim(n)?;
    let mut info = 0i32;
    unsafe { dpotrf_(&L, &nn, a.as_mut_ptr(), &nn, &mut info) };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "Cholesky factorization failed (info {info})"
        )));
    }
    Ok(())
}

/// Solve `A·X = B` in place for `nrhs` right-hand sides given the Cholesky
/// factor from [`cholesky`].
pub fn cholesky_solve(n: usize, chol: &[f64], nrhs: usize, b: &mut [f64]) -> Result<()> {
    init_blas();
    let nn = dim(n)?;
    let rr = dim(nrhs)?;
    let mut info = 0i32;
    unsafe {
        dpotrs_(
            &L,
            &nn,
            &rr,
            chol.as_ptr(),
            &nn,
            b.as_mut_ptr(),
            &nn,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "Cholesky solve failed (info {info})"
        )));
    }
    Ok(())
}

/// `B ← L⁻¹·B` with `L` the lower Cholesky factor (m×m), `B` m×n.
pub fn solve_lower_left(m: usize, n: usize, l: &[f64], b: &mut [f64]) {
    init_blas();
    let (mm, nn) = (dim(m).unwrap(), dim(n).unwrap());
    let one = 1.0;
    unsafe {
        dtrsm_(
            &L,
            &L,
            &N,
            &N,
            &mm,
            &nn,
            &one,
            l.as_ptr(),
            &mm,
            b.as_mut_ptr(),
            &mm,
        )
    };
}

/// `B ← B·L⁻ᵀ` with `L` the lower Cholesky factor (n×n), `B` m×n.
pub fn solve_lower_transpose_right(m: usize, n: usize, l: &[f64], b: &mut [f64]) {
    init_blas();
    let (mm, nn) = (dim(m).unwrap(), dim(n).unwrap());
    let one = 1.0;
    unsafe {
        dtrsm_(
            &R,
            &L,
            &T,
            &N,
            &mm,
            &nn,
            &one,
            l.as_ptr(),
            &nn,
            b.as_mut_ptr(),
            &mm,
        )
    };
}

/// Bunch-Kaufman factorization of a symmetric indefinite matrix, lower
/// triangle referenced. Returns the pivot vector for [`ldlt_solve`].
pub fn ldlt_factor(n: usize, a: &mut [f64]) -> Result<Vec<i32>> {
    init_blas();
    let nn = dim(n)?;
    let mut ipiv = vec![0i32; n.max(1)];
    let mut info = 0i32;
    // Workspace query.
    let mut wkopt = 0.0f64;
    let lwork_query = -1i32;
    unsafe {
        dsytrf_(
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            ipiv.as_mut_ptr(),
            &mut wkopt,
            &lwork_query,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "LDLT workspace query failed (info {info})"
        )));
    }
    let lwork = (wkopt as usize).max(n.max(1));
    let mut work = vec![0.0f64; lwork];
    let lw = dim(lwork)?;
    unsafe {
        dsytrf_(
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            ipiv.as_mut_ptr(),
            work.as_mut_ptr(),
            &lw,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "LDLT factorization failed (info {info}): system is singular"
        )));
    }
    Ok(ipiv)
}

/// Solve `A·x = b` in place given the factorization from [`ldlt_factor`].
pub fn ldlt_solve(n: usize, a: &[f64], ipiv: &[i32], b: &mut [f64]) -> Result<()> {
    init_blas();
    let nn = dim(n)?;
    let one = 1i32;
    let mut info = 0i32;
    unsafe {
        dsytrs_(
            &L,
            &nn,
            &one,
            a.as_ptr(),
            &nn,
            ipiv.as_ptr(),
            b.as_mut_ptr(),
            &nn,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "LDLT solve failed (info {info})"
        )));
    }
    Ok(())
}

/// All eigenvalues (ascending) of a symmetric matrix; destroys `a`.
pub fn eigenvalues(n: usize, a: &mut [f64]) -> Result<Vec<f64>> {
    init_blas();
    if n == 0 {
        return Ok(Vec::new());
    }
    let nn = dim(n)?;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let mut wkopt = 0.0f64;
    let mut iwkopt = 0i32;
    let query = -1i32;
    unsafe {
        dsyevd_(
            &N,
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            &mut wkopt,
            &query,
            &mut iwkopt,
            &query,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "eigenvalue workspace query failed ({info})"
        )));
    }
    let lwork = wkopt as usize;
    let liwork = iwkopt as usize;
    let mut work = vec![0.0f64; lwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    let (lw, liw) = (dim(lwork.max(1))?, dim(liwork.max(1))?);
    unsafe {
        dsyevd_(
            &N,
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lw,
            iwork.as_mut_ptr(),
            &liw,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "eigenvalue computation failed ({info})"
        )));
    }
    Ok(w)
}

/// Eigen-decomposition (values ascending, vectors in the columns of `a`).
pub fn eigen_decomposition(n: usize, a: &mut [f64]) -> Result<Vec<f64>> {
    init_blas();
    if n == 0 {
        return Ok(Vec::new());
    }
    let v = b'V' as c_char;
    let nn = dim(n)?;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let mut wkopt = 0.0f64;
    let mut iwkopt = 0i32;
    let query = -1i32;
    unsafe {
        dsyevd_(
            &v,
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            &mut wkopt,
            &query,
            &mut iwkopt,
            &query,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "eigenvector workspace query failed ({info})"
        )));
    }
    let lwork = wkopt as usize;
    let liwork = iwkopt as usize;
    let mut work = vec![0.0f64; lwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    let (lw, liw) = (dim(lwork.max(1))?, dim(liwork.max(1))?);
    unsafe {
        dsyevd_(
            &v,
            &L,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lw,
            iwork.as_mut_ptr(),
            &liw,
            &mut info,
        )
    };
    if info != 0 {
        return Err(Error::SolverFailure(format!(
            "eigenvector computation failed ({info})"
        )));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small_product() {
        // Column-major: A = [[1,2],[3,4]] stored [1,3,2,4]; B = identity.
        let a = vec![1.0, 3.0, 2.0, 4.0];
        let b = vec![1.0, 0.0, 0.0, 1.0];
        let mut c = vec![0.0; 4];
        gemm(false, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, a);
        // Aᵀ·A = [[10,14],[14,20]].
        gemm(true, false, 2, 2, 2, 1.0, &a, &a, 0.0, &mut c);
        assert_eq!(c, vec![10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn cholesky_and_solve() {
        // A = [[4,2],[2,3]], PD; solve A x = [8, 7] → x = [1.25, 1.5].
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        cholesky(2, &mut a).unwrap();
        let mut b = vec![8.0, 7.0];
        cholesky_solve(2, &a, 1, &mut b).unwrap();
        assert!((b[0] - 1.25).abs() < 1e-12 && (b[1] - 1.5).abs() < 1e-12);
        // Not PD.
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(2, &mut bad).is_err());
    }

    #[test]
    fn ldlt_indefinite_solve() {
        // Saddle system [[2,1],[1,0]] x = [3, 1] → x = [1, 1].
        let mut a = vec![2.0, 1.0, 1.0, 0.0];
        let ipiv = ldlt_factor(2, &mut a).unwrap();
        let mut b = vec![3.0, 1.0];
        ldlt_solve(2, &a, &ipiv, &mut b).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let mut a = vec![2.0, 1.0, 1.0, 2.0];
        let w = eigenvalues(2, &mut a).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn triangular_solves_compose_to_congruence() {
        // W = L⁻¹ S L⁻ᵀ for A = L Lᵀ should satisfy L W Lᵀ = S.
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        cholesky(2, &mut a).unwrap();
        let s = vec![1.0, 0.5, 0.5, 2.0];
        let mut w = s.clone();
        solve_lower_left(2, 2, &a, &mut w);
        solve_lower_transpose_right(2, 2, &a, &mut w);
        // Rebuild L W Lᵀ manually (L is lower part of a).
        let l = [a[0], a[1], 0.0, a[3]]; // col-major with upper junk zeroed
        let mut lw = vec![0.0; 4];
        gemm(false, false, 2, 2, 2, 1.0, &l, &w, 0.0, &mut lw);
        let mut back = vec![0.0; 4];
        gemm(false, true, 2, 2, 2, 1.0, &lw, &l, 0.0, &mut back);
        for (x, y) in back.iter().zip(s.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let orig = vec![3.0, 1.0, 1.0, 2.0];
        let mut a = orig.clone();
        let w = eigen_decomposition(2, &mut a).unwrap();
        // Reconstruct V diag(w) Vᵀ.
        let mut vd = vec![0.0; 4];
        for j in 0..2 {
            for i in 0..2 {
                vd[j * 2 + i] = a[j * 2 + i] * w[j];
            }
        }
        let mut back = vec![0.0; 4];
        gemm(false, true, 2, 2, 2, 1.0, &vd, &a, 0.0, &mut back);
        for (x, y) in back.iter().zip(orig.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
