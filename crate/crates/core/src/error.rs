//! Error types shared by all core modules.

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// The two-level field vanishes (or nearly vanishes) at a phase point, so
    /// no adiabatic construction is possible there.
    #[error("gapless field at Φ = ({phi1:.6}, {phi2:.6}): |h| = {norm:.3e} below threshold {threshold:.3e}")]
    GaplessPoint {
        phi1: f64,
        phi2: f64,
        norm: f64,
        threshold: f64,
    },

    /// The truncation selects no lattice sites.
    #[error("lattice truncation retains no sites")]
    EmptyLattice,

    /// Internal consistency check failed: the assembled matrix is not
    /// Hermitian to the required accuracy.
    #[error("assembled matrix fails the Hermiticity check: max |A - A†| = {defect:.3e} exceeds {allowed:.3e}")]
    NonHermitianAssembly { defect: f64, allowed: f64 },

    /// A Gaussian mode request is inconsistent: the discrete distribution
    /// collapsed to a single site although a finite width was requested.
    #[error("requested number width {requested:.4} collapses to a single lattice site")]
    WidthTooSmall { requested: f64 },

    /// A mode center lies outside the representable number range.
    #[error("mode center n⁰ = {n0} outside the representable range [{min}, {max}]")]
    OutOfRange { n0: i64, min: i64, max: i64 },

    /// Embedding a mode product into the lattice lost too much probability
    /// mass.
    #[error("state truncation lost probability mass {lost:.3e} ≥ {allowed:.3e}")]
    TruncationLoss { lost: f64, allowed: f64 },

    /// The spectral propagator was requested for a matrix above the configured
    /// cap.
    #[error("matrix dimension {dim} exceeds the spectral-method cap {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    /// The LAPACK eigensolver reported failure.
    #[error("Hermitian eigensolver failed with status {info}")]
    EigensolverFailure { info: i32 },

    /// Evolution accumulated too much population near the open boundary.
    #[error("boundary population {mass:.3e} exceeds the hard limit {limit:.3e} at t = {time:.3}")]
    BoundaryContamination { mass: f64, limit: f64, time: f64 },

    /// A propagation step failed to preserve the state norm.
    #[error("propagation step changed the norm by {drift:.3e}, above the allowed {allowed:.3e}")]
    UnitarityLoss { drift: f64, allowed: f64 },

    /// A Krylov step could not reach the requested accuracy even after
    /// repeated step halving.
    #[error("krylov step rejected: error estimate {estimate:.3e} at dt = {dt:.3e}")]
    KrylovBreakdown { estimate: f64, dt: f64 },

    /// An eigenvalue lies too close to a band cut to classify.
    #[error("eigenvalue {energy:.9} within {margin:.3e} of the band cut {cut:.6}; classification ambiguous")]
    DegenerateCut { energy: f64, cut: f64, margin: f64 },

    /// Fidelity of a zero-norm state was requested.
    #[error("fidelity undefined: state norm {norm:.3e} is numerically zero")]
    ZeroState { norm: f64 },

    /// Writing an artifact failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
