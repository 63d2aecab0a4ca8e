//! Initial-state preparation and conversion between number-basis amplitudes
//! and phase-space wave amplitudes.
//!
//! Phase-basis convention: `⟨Φ|N⟩ = e^{−iN·Φ}/(2π)`.  This is the unique
//! kernel consistent with the shift action `e^{iφ̂ᵢ}|nᵢ⟩ = |nᵢ−1⟩` and the
//! commutator `[n̂,φ̂] = i` used by the lattice assembly: demanding
//! `⟨Φ|e^{iφ̂}|n⟩ = e^{iφ}⟨Φ|n⟩ = ⟨Φ|n−1⟩` forces `⟨Φ|n⟩ ∝ e^{−inφ}`.  With
//! it, a free drive `ω·N̂` translates phase densities along `Φ(t) = Φ₀ − ωt`.
//! Localizing a mode at phase `φ⁰` therefore takes amplitudes
//! `c_n ∝ e^{+inφ⁰}`.

use crate::error::{CoreError, Result};
use crate::qubit_geometry::{dressed_state, Band, TwoLevelField};
use crate::rotor_lattice::NumberLattice;
use crate::{c64, C64};
use rustfft::FftPlanner;
use std::f64::consts::TAU;
use std::io::Write as IoWrite;
use std::sync::Arc;

/// One rotor mode over a contiguous number-basis support.
#[derive(Clone, Debug)]
pub struct ModeWavefunction {
    /// First support point.
    pub n_min: i64,
    /// Amplitudes for `n_min, n_min+1, …`, normalized over the support.
    pub amplitudes: Vec<C64>,
    /// Mean quanta of the requested profile.
    pub n0: i64,
    /// Requested number width (zero for a pure Fock mode).
    pub delta_n: f64,
    /// Center phase of the requested profile.
    pub phi0: f64,
    /// Probability mass lost to the support truncation.
    pub truncation_loss: f64,
}

impl ModeWavefunction {
    /// Amplitude at a number, zero outside the support.
    pub fn amplitude(&self, n: i64) -> C64 {
        let k = n - self.n_min;
        if k < 0 || k as usize >= self.amplitudes.len() {
            c64(0.0, 0.0)
        } else {
            self.amplitudes[k as usize]
        }
    }

    /// Inclusive support bounds.
    pub fn support(&self) -> [i64; 2] {
        [self.n_min, self.n_min + self.amplitudes.len() as i64 - 1]
    }

    /// Mean of the number distribution.
    pub fn mean_number(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| (self.n_min + k as i64) as f64 * a.norm_sqr())
            .sum()
    }

    /// Variance of the number distribution.
    pub fn number_variance(&self) -> f64 {
        let mean = self.mean_number();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let d = (self.n_min + k as i64) as f64 - mean;
                d * d * a.norm_sqr()
            })
            .sum()
    }
}

/// Gaussian number-basis mode `c_n ∝ exp(−(n−n⁰)²/(4Δn²))·e^{+inφ⁰}` on an
/// inclusive support window.
pub fn gaussian_mode(
    n0: i64,
    delta_n: f64,
    phi0: f64,
    support: [i64; 2],
) -> Result<ModeWavefunction> {
    assert!(delta_n > 0.0, "width must be positive");
    assert!(support[0] <= support[1], "empty support window");
    let envelope = |n: i64| {
        let d = (n - n0) as f64;
        (-d * d / (4.0 * delta_n * delta_n)).exp()
    };
    // Reference mass over a window wide enough that the tail is below
    // double-precision resolution.
    let reach = (14.0 * delta_n).ceil() as i64 + 2;
    let full_mass: f64 = (n0 - reach..=n0 + reach)
        .map(|n| {
            let a = envelope(n);
            a * a
        })
        .sum();
    let mut amplitudes = Vec::with_capacity((support[1] - support[0] + 1) as usize);
    let mut kept_mass = 0.0;
    let mut occupied = 0usize;
    for n in support[0]..=support[1] {
        let a = envelope(n);
        if a > 1e-12 {
            occupied += 1;
        }
        kept_mass += a * a;
        let phase = phi0 * n as f64;
        amplitudes.push(c64(a * phase.cos(), a * phase.sin()));
    }
    if occupied <= 1 && delta_n > 0.35 {
        return Err(CoreError::WidthTooSmall { requested: delta_n });
    }
    if kept_mass <= 0.0 {
        return Err(CoreError::WidthTooSmall { requested: delta_n });
    }
    let scale = kept_mass.sqrt().recip();
    for a in &mut amplitudes {
        *a *= scale;
    }
    Ok(ModeWavefunction {
        n_min: support[0],
        amplitudes,
        n0,
        delta_n,
        phi0,
        truncation_loss: (1.0 - kept_mass / full_mass).max(0.0),
    })
}

/// Fock mode: a single occupied number state.
pub fn fock_mode(n0: i64, support: [i64; 2]) -> Result<ModeWavefunction> {
    assert!(support[0] <= support[1], "empty support window");
    if n0 < support[0] || n0 > support[1] {
        return Err(CoreError::OutOfRange { n0, min: support[0], max: support[1] });
    }
    let mut amplitudes = vec![c64(0.0, 0.0); (support[1] - support[0] + 1) as usize];
    amplitudes[(n0 - support[0]) as usize] = c64(1.0, 0.0);
    Ok(ModeWavefunction {
        n_min: support[0],
        amplitudes,
        n0,
        delta_n: 0.0,
        phi0: 0.0,
        truncation_loss: 0.0,
    })
}

/// The delocalized quasi-Fock preset: a Gaussian of width `Δn = 1/(2π)`.
pub fn quasi_fock_mode(n0: i64, phi0: f64, support: [i64; 2]) -> Result<ModeWavefunction> {
    gaussian_mode(n0, 0.5 / std::f64::consts::PI, phi0, support)
}

/// A pure qubit state on the Bloch sphere.
#[derive(Clone, Copy, Debug)]
pub struct QubitState {
    /// Amplitudes on {↑, ↓}.
    pub amplitudes: [C64; 2],
}

impl QubitState {
    /// Bloch vector of the state.
    pub fn bloch(&self) -> [f64; 3] {
        crate::qubit_geometry::bloch_of(&self.amplitudes)
    }
}

/// Qubit state from polar angle `θ_q` (0 gives |↑⟩) and azimuth `φ_q`.
pub fn qubit_state(theta_q: f64, phi_q: f64) -> QubitState {
    let (half_sin, half_cos) = (0.5 * theta_q).sin_cos();
    QubitState {
        amplitudes: [
            c64(half_cos, 0.0),
            c64(half_sin * phi_q.cos(), half_sin * phi_q.sin()),
        ],
    }
}

/// A normalized vector over the lattice ⊗ qubit basis.
#[derive(Clone, Debug)]
pub struct TotalState {
    /// The lattice the amplitudes live on.
    pub lattice: Arc<NumberLattice>,
    /// Amplitudes in the fixed site⊗spin ordering (spin fast).
    pub amplitudes: Vec<C64>,
}

impl TotalState {
    /// Zero state on a lattice.
    pub fn zero(lattice: Arc<NumberLattice>) -> Self {
        let dim = lattice.dim();
        TotalState { lattice, amplitudes: vec![c64(0.0, 0.0); dim] }
    }

    /// Squared norm.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescales to unit norm.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if norm < 1e-300 {
            return Err(CoreError::ZeroState { norm });
        }
        let inv = norm.recip();
        for a in &mut self.amplitudes {
            *a *= inv;
        }
        Ok(())
    }

    /// Inner product `⟨self|other⟩`.
    pub fn inner(&self, other: &TotalState) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Site probability (both spin components), by site index.
    pub fn site_probability(&self, site: usize) -> f64 {
        self.amplitudes[2 * site].norm_sqr() + self.amplitudes[2 * site + 1].norm_sqr()
    }

    /// Mean quantum numbers `(⟨n₁⟩, ⟨n₂⟩)` of the (not necessarily
    /// normalized) state, per unit of its own norm.
    pub fn mean_numbers(&self) -> [f64; 2] {
        let mut acc = [0.0, 0.0];
        let mut mass = 0.0;
        for (i, &(n1, n2)) in self.lattice.sites.iter().enumerate() {
            let p = self.site_probability(i);
            acc[0] += p * n1 as f64;
            acc[1] += p * n2 as f64;
            mass += p;
        }
        [acc[0] / mass, acc[1] / mass]
    }

    /// Mean rotated coordinates `(⟨n_E⟩, ⟨n_perp⟩)`.
    pub fn mean_rotated(&self) -> (f64, f64) {
        let mut acc = (0.0, 0.0);
        let mut mass = 0.0;
        for i in 0..self.lattice.len() {
            let p = self.site_probability(i);
            let (ne, np) = self.lattice.rotated(i);
            acc.0 += p * ne;
            acc.1 += p * np;
            mass += p;
        }
        (acc.0 / mass, acc.1 / mass)
    }

    /// Variances of the rotated coordinates `(Var n_E, Var n_perp)`.
    pub fn rotated_variances(&self) -> (f64, f64) {
        let mean = self.mean_rotated();
        let mut acc = (0.0, 0.0);
        let mut mass = 0.0;
        for i in 0..self.lattice.len() {
            let p = self.site_probability(i);
            let (ne, np) = self.lattice.rotated(i);
            acc.0 += p * (ne - mean.0) * (ne - mean.0);
            acc.1 += p * (np - mean.1) * (np - mean.1);
            mass += p;
        }
        (acc.0 / mass, acc.1 / mass)
    }

    /// Qubit polarization vector `Q = ⟨σ⟩ / ⟨1⟩` of the reduced qubit state.
    pub fn qubit_polarization(&self) -> [f64; 3] {
        let mut q = [0.0; 3];
        let mut mass = 0.0;
        for i in 0..self.lattice.len() {
            let up = self.amplitudes[2 * i];
            let dn = self.amplitudes[2 * i + 1];
            let cross = up.conj() * dn;
            q[0] += 2.0 * cross.re;
            q[1] += 2.0 * cross.im;
            q[2] += up.norm_sqr() - dn.norm_sqr();
            mass += up.norm_sqr() + dn.norm_sqr();
        }
        [q[0] / mass, q[1] / mass, q[2] / mass]
    }

    /// Probability mass sitting on the open-boundary rim (sites with a
    /// missing lattice point within the given Manhattan depth).
    pub fn boundary_mass(&self, depth: i64) -> f64 {
        let mask = self.lattice.boundary_mask(depth);
        let mut rim = 0.0;
        for (i, flagged) in mask.iter().enumerate() {
            if *flagged {
                rim += self.site_probability(i);
            }
        }
        rim / self.norm_sqr()
    }

    /// Snapshot export: `n1,n2,re_up,im_up,re_dn,im_dn`, one row per site.
    pub fn write_snapshot_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        writeln!(out, "n1,n2,re_up,im_up,re_dn,im_dn")?;
        for (i, &(n1, n2)) in self.lattice.sites.iter().enumerate() {
            let up = self.amplitudes[2 * i];
            let dn = self.amplitudes[2 * i + 1];
            writeln!(
                out,
                "{},{},{},{},{},{}",
                n1,
                n2,
                crate::io::fmt_f64(up.re),
                crate::io::fmt_f64(up.im),
                crate::io::fmt_f64(dn.re),
                crate::io::fmt_f64(dn.im)
            )?;
        }
        Ok(())
    }
}

/// Product state `|χ₁⟩⊗|χ₂⟩⊗|ψ_q⟩` placed on the retained sites and
/// renormalized; the clipped probability mass is the truncation loss.
pub fn separable_state(
    mode1: &ModeWavefunction,
    mode2: &ModeWavefunction,
    qubit: &QubitState,
    lattice: Arc<NumberLattice>,
) -> Result<TotalState> {
    let mut state = TotalState::zero(lattice);
    let mut placed = 0.0;
    for (i, &(n1, n2)) in state.lattice.sites.iter().enumerate() {
        let c = mode1.amplitude(n1) * mode2.amplitude(n2);
        if c != c64(0.0, 0.0) {
            placed += c.norm_sqr();
            state.amplitudes[2 * i] = c * qubit.amplitudes[0];
            state.amplitudes[2 * i + 1] = c * qubit.amplitudes[1];
        }
    }
    let lost = 1.0 - placed;
    let allowed = 1e-6;
    if lost >= allowed {
        return Err(CoreError::TruncationLoss { lost, allowed });
    }
    state.normalize()?;
    Ok(state)
}

/// Selects the band projection applied by `phase_amplitude`.
#[derive(Clone, Copy)]
pub struct BandChoice<'a> {
    /// Field whose adiabatic states define the bands.
    pub model: &'a TwoLevelField,
    /// Drive frequencies entering the order-1 dressing.
    pub omega: [f64; 2],
    /// Which band to project on.
    pub band: Band,
    /// Dressing order, 0 or 1.
    pub order: u8,
}

/// Wave amplitudes on an `M×M` phase grid: either both spin components, or
/// one band-projected amplitude `χ_ν(Φ) = ⟨ψ_ν(Φ)|χ(Φ)⟩`.
#[derive(Clone, Debug)]
pub struct PhaseAmplitudeMap {
    /// Grid points per axis; `Φ_j = 2π j / M`.
    pub m: usize,
    /// The band projection the map carries, if any (band, dressing order).
    pub band: Option<(Band, u8)>,
    /// One or two complex fields, row-major with `φ₁` fastest.
    pub components: Vec<Vec<C64>>,
}

impl PhaseAmplitudeMap {
    /// Quadrature weight of one grid cell.
    pub fn cell_area(&self) -> f64 {
        (TAU / self.m as f64) * (TAU / self.m as f64)
    }

    /// Grid point coordinates of a flat index.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let j1 = idx % self.m;
        let j2 = idx / self.m;
        [TAU * j1 as f64 / self.m as f64, TAU * j2 as f64 / self.m as f64]
    }

    /// Density at one grid point, summed over stored components.
    pub fn density(&self, idx: usize) -> f64 {
        self.components.iter().map(|c| c[idx].norm_sqr()).sum()
    }

    /// Riemann integral of the density over the torus.
    pub fn total_weight(&self) -> f64 {
        let cell = self.cell_area();
        (0..self.m * self.m).map(|i| self.density(i) * cell).sum()
    }

    /// Export `phi1,phi2,re,im` rows (band map) or
    /// `phi1,phi2,re_up,im_up,re_dn,im_dn` (spin map).
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        if self.components.len() == 1 {
            writeln!(out, "phi1,phi2,re,im")?;
        } else {
            writeln!(out, "phi1,phi2,re_up,im_up,re_dn,im_dn")?;
        }
        for idx in 0..self.m * self.m {
            let p = self.point(idx);
            let mut row = vec![crate::io::fmt_f64(p[0]), crate::io::fmt_f64(p[1])];
            for comp in &self.components {
                row.push(crate::io::fmt_f64(comp[idx].re));
                row.push(crate::io::fmt_f64(comp[idx].im));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// In-place 2D DFT over an `m×m` row-major grid; `forward` applies
/// `e^{−i j·k 2π/m}` (the phase-kernel direction), inverse the conjugate.
fn dft2(values: &mut [C64], m: usize, forward: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if forward {
        planner.plan_fft_forward(m)
    } else {
        planner.plan_fft_inverse(m)
    };
    for row in values.chunks_mut(m) {
        fft.process(row);
    }
    let mut column = vec![c64(0.0, 0.0); m];
    for j1 in 0..m {
        for j2 in 0..m {
            column[j2] = values[j1 + m * j2];
        }
        fft.process(&mut column);
        for j2 in 0..m {
            values[j1 + m * j2] = column[j2];
        }
    }
}

fn lattice_fits_grid(lattice: &NumberLattice, m: usize) {
    let t = &lattice.truncation;
    let span1 = (t.n1_max - t.n1_min + 1) as usize;
    let span2 = (t.n2_max - t.n2_min + 1) as usize;
    assert!(
        m >= span1 && m >= span2,
        "phase grid {m} too coarse for lattice spans {span1}×{span2}"
    );
}

/// Phase-space wave amplitude of a total state on an `M×M` grid.  Without a
/// band choice the two spin components `χ_s(Φ) = Σ_N ⟨Φ|N⟩·amp(N,s)` are
/// returned; with one, the single projected amplitude
/// `χ_ν(Φ) = Σ_s ψ_ν(Φ)_s^* χ_s(Φ)`.
pub fn phase_amplitude(
    state: &TotalState,
    m: usize,
    band: Option<BandChoice<'_>>,
) -> Result<PhaseAmplitudeMap> {
    lattice_fits_grid(&state.lattice, m);
    let mut spin_fields = [vec![c64(0.0, 0.0); m * m], vec![c64(0.0, 0.0); m * m]];
    let fold = |n: i64| -> usize { n.rem_euclid(m as i64) as usize };
    for (i, &(n1, n2)) in state.lattice.sites.iter().enumerate() {
        let at = fold(n1) + m * fold(n2);
        spin_fields[0][at] += state.amplitudes[2 * i];
        spin_fields[1][at] += state.amplitudes[2 * i + 1];
    }
    let scale = 1.0 / TAU;
    for field in &mut spin_fields {
        dft2(field, m, true);
        for v in field.iter_mut() {
            *v *= scale;
        }
    }
    let [up, dn] = spin_fields;
    match band {
        None => Ok(PhaseAmplitudeMap { m, band: None, components: vec![up, dn] }),
        Some(choice) => {
            let mut projected = vec![c64(0.0, 0.0); m * m];
            for j2 in 0..m {
                for j1 in 0..m {
                    let phi = [TAU * j1 as f64 / m as f64, TAU * j2 as f64 / m as f64];
                    let dressed = dressed_state(
                        choice.model,
                        phi,
                        choice.omega,
                        choice.band,
                        choice.order,
                    )?;
                    let at = j1 + m * j2;
                    projected[at] = dressed.psi[0].conj() * up[at]
                        + dressed.psi[1].conj() * dn[at];
                }
            }
            Ok(PhaseAmplitudeMap {
                m,
                band: Some((choice.band, choice.order)),
                components: vec![projected],
            })
        }
    }
}

/// Inverse of `phase_amplitude` without band projection: recovers number
/// amplitudes on the lattice from the two spin fields.  Exact when the grid
/// resolves the lattice spans.
pub fn number_from_phase(map: &PhaseAmplitudeMap, lattice: &NumberLattice) -> Result<TotalState> {
    assert!(map.band.is_none(), "round trip needs the spin-resolved map");
    lattice_fits_grid(lattice, map.m);
    let m = map.m;
    let mut fields = [map.components[0].clone(), map.components[1].clone()];
    for field in &mut fields {
        dft2(field, m, false);
        // Inverse DFT is unnormalized; the quadrature weight contributes
        // (2π/M)² and the kernel 1/(2π), leaving 2π/M².
        let scale = TAU / (m * m) as f64;
        for v in field.iter_mut() {
            *v *= scale;
        }
    }
    let fold = |n: i64| -> usize { n.rem_euclid(m as i64) as usize };
    let mut state = TotalState::zero(Arc::new(lattice.clone()));
    for (i, &(n1, n2)) in lattice.sites.iter().enumerate() {
        let at = fold(n1) + m * fold(n2);
        state.amplitudes[2 * i] = fields[0][at];
        state.amplitudes[2 * i + 1] = fields[1][at];
    }
    Ok(state)
}
