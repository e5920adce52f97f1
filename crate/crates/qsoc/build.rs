fn main() {
    // Dense linear algebra (Cholesky, LDL^T, symmetric eigensolves, GEMM) is
    // delegated to the system BLAS/LAPACK. OpenBLAS ships both sets of symbols
    // in one shared object on the supported platforms.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
