fn main() {
    // Hermitian eigensolves and dense products go through the system BLAS/LAPACK.
    println!("cargo:rustc-link-search=native=/usr/lib/x86_64-linux-gnu");
    println!("cargo:rustc-link-lib=dylib=openblas");
}
