//! Thin bindings to the system BLAS/LAPACK for dense Hermitian eigensolves and
//! matrix products, plus a few dense helpers used across the crate.
//!
//! All BLAS work is pinned to a single thread so that floating-point reduction
//! order — and therefore every exported artifact — is bit-for-bit reproducible
//! regardless of the caller's thread budget.

use crate::error::{CoreError, Result};
use crate::C64;
use std::sync::Once;

extern "C" {
    fn zheevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut f64,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zgemm_(
        transa: *const u8,
        transb: *const u8,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const C64,
        a: *const C64,
        lda: *const i32,
        b: *const C64,
        ldb: *const i32,
        beta: *const C64,
        c: *mut C64,
        ldc: *const i32,
    );
    fn openblas_set_num_threads(n: i32);
}

static PIN_THREADS: Once = Once::new();

/// Pin the BLAS to one thread (idempotent). Called before every entry point so
/// results never depend on ambient thread configuration.
fn pin_blas() {
    PIN_THREADS.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// Eigendecomposition of a dense Hermitian matrix.
pub struct EighResult {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Column-major eigenvectors: column `j` (entries `j*n..(j+1)*n`) pairs
    /// with `eigenvalues[j]`.
    pub eigenvectors: Vec<C64>,
    /// Matrix dimension.
    pub dim: usize,
}

impl EighResult {
    /// Borrow eigenvector `j` as a slice.
    pub fn vector(&self, j: usize) -> &[C64] {
        &self.eigenvectors[j * self.dim..(j + 1) * self.dim]
    }
}

/// Full eigendecomposition of a Hermitian matrix supplied in column-major
/// order (entry `(i,j)` at `a[i + j*n]`). Consumes the buffer: eigenvectors are
/// computed in place.
pub fn eigh(mut a: Vec<C64>, n: usize) -> Result<EighResult> {
    assert_eq!(a.len(), n * n, "matrix buffer must be n×n");
    pin_blas();
    if n == 0 {
        return Ok(EighResult {
            eigenvalues: vec![],
            eigenvectors: vec![],
            dim: 0,
        });
    }
    let jobz = b'V';
    let uplo = b'L';
    let n_i = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info: i32 = 0;
    // Workspace query.
    let query: i32 = -1;
    let mut wkopt = C64::new(0.0, 0.0);
    let mut rwkopt: f64 = 0.0;
    let mut iwkopt: i32 = 0;
    unsafe {
        zheevd_(
            &jobz,
            &uplo,
            &n_i,
            a.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            &mut wkopt,
            &query,
            &mut rwkopt,
            &query,
            &mut iwkopt,
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(CoreError::EigensolverFailure { info });
    }
    let lwork = wkopt.re as i32;
    let lrwork = rwkopt as i32;
    let liwork = iwkopt;
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        zheevd_(
            &jobz,
            &uplo,
            &n_i,
            a.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(CoreError::EigensolverFailure { info });
    }
    Ok(EighResult {
        eigenvalues: w,
        eigenvectors: a,
        dim: n,
    })
}

/// Which operation to apply to a factor in [`matmul`].
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Use the matrix as stored.
    None,
    /// Use the conjugate transpose.
    ConjTranspose,
}

impl Op {
    fn code(self) -> u8 {
        match self {
            Op::None => b'N',
            Op::ConjTranspose => b'C',
        }
    }
}

/// Dense product `C = op(A)·op(B)` of column-major matrices.
///
/// `op(A)` is `m×k` and `op(B)` is `k×n`; the stored `A` is `m×k` for
/// [`Op::None`] and `k×m` for [`Op::ConjTranspose`] (similarly for `B`).
/// Returns the `m×n` result in column-major order.
pub fn matmul(
    op_a: Op,
    a: &[C64],
    op_b: Op,
    b: &[C64],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<C64> {
    pin_blas();
    let (rows_a, _cols_a) = match op_a {
        Op::None => (m, k),
        Op::ConjTranspose => (k, m),
    };
    let (rows_b, _cols_b) = match op_b {
        Op::None => (k, n),
        Op::ConjTranspose => (n, k),
    };
    assert_eq!(a.len(), m * k, "A buffer size mismatch");
    assert_eq!(b.len(), k * n, "B buffer size mismatch");
    let mut c = vec![C64::new(0.0, 0.0); m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let alpha = C64::new(1.0, 0.0);
    let beta = C64::new(0.0, 0.0);
    let (m_i, n_i, k_i) = (m as i32, n as i32, k as i32);
    let (lda, ldb, ldc) = (rows_a as i32, rows_b as i32, m as i32);
    unsafe {
        zgemm_(
            &op_a.code(),
            &op_b.code(),
            &m_i,
            &n_i,
            &k_i,
            &alpha,
            a.as_ptr(),
            &lda,
            b.as_ptr(),
            &ldb,
            &beta,
            c.as_mut_ptr(),
            &ldc,
        );
    }
    c
}

/// `y = A·x` for a column-major `m×n` matrix.
pub fn matvec(a: &[C64], m: usize, n: usize, x: &[C64]) -> Vec<C64> {
    matmul(Op::None, a, Op::None, x, m, n, 1)
}

/// `y = A†·x` for a column-major `m×n` matrix (result length `n`).
pub fn matvec_adjoint(a: &[C64], m: usize, n: usize, x: &[C64]) -> Vec<C64> {
    matmul(Op::ConjTranspose, a, Op::None, x, n, m, 1)
}

/// Euclidean inner product `⟨x|y⟩ = Σ conj(x_i)·y_i`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
}

/// Squared Euclidean norm.
pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Euclidean norm.
pub fn norm(x: &[C64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// Largest entry magnitude of a vector or matrix buffer.
pub fn max_abs(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
