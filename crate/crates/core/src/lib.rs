//! Core library for simulating a qubit topologically coupled to two quantum
//! rotor modes.
//!
//! The model is a two-level system whose Bloch field `h(Φ)` is driven by the
//! conjugate phases of two rotor modes with incommensurate frequencies. The
//! library provides:
//!
//! * [`qubit_geometry`] — the parametrized two-level system: eigenstates,
//!   dressed adiabatic states, Berry curvature, quantum metric, Chern numbers,
//!   transport phases.
//! * [`rotor_lattice`] — the truncated number lattice and sparse assembly of
//!   the total Hamiltonian `ħω·N̂ + H(Φ̂)`.
//! * [`states`] — initial-state preparation (Gaussian / Fock modes ⊗ qubit)
//!   and the number ↔ phase-amplitude transforms.
//! * [`propagation`] — spectral and Krylov time evolution with observable
//!   extraction (moments, rotated coordinates, qubit purity, boundary mass).
//! * [`adiabatic`] — band projectors at orders 0 and 1, cat-component weights,
//!   half-space splitting, fidelity diagnostics.
//! * [`semiclassics`] — independent predictions: classical trajectories,
//!   phase-averaged drift/variance, spreading with metric and current terms,
//!   quasi-periods, adiabatic timescale, purity from the metric.
//!
//! Units: `ħ = 1` throughout; energies carry the two-level gap scale and times
//! are usually reported in units of `T₁ = 2π/ω₁`.

pub mod adiabatic;
pub mod error;
pub mod io;
pub mod linalg;
pub mod propagation;
pub mod qubit_geometry;
pub mod rotor_lattice;
pub mod semiclassics;
pub mod states;
pub mod torus;

pub use error::CoreError;

/// Complex scalar used across the crate.
pub type C64 = num_complex::Complex64;

/// Convenience constructor for complex numbers.
#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// The golden ratio (1+√5)/2, the frequency ratio used by the reference
/// experiments.
pub const GOLDEN_RATIO: f64 = 1.618033988749894848204586834365638118;
