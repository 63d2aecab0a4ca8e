//! The parametrized two-level system: field maps h(Φ), exact eigenstates,
//! frequency-dressed adiabatic states, Berry curvature and Chern numbers via
//! plaquette links, the quantum metric, and the transport phase accumulated
//! along linear phase-space trajectories.

use crate::error::{CoreError, Result};
use crate::torus::{even_subdivisions, simpson, wrap_angle, Grid2};
use crate::{c64, C64};
use rayon::prelude::*;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

/// Finite-difference step for point-wise connection and metric evaluations.
pub const POINT_STEP: f64 = 1e-4;

/// Relative gap threshold below which a phase point counts as gapless.
pub const GAP_THRESHOLD: f64 = 1e-12;

/// Band label for the two-level spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    /// Lower band (energy −|h|).
    Minus,
    /// Upper band (energy +|h|).
    Plus,
}

impl Band {
    /// Signed band index: −1 for the lower band, +1 for the upper band.
    pub fn sign(self) -> f64 {
        match self {
            Band::Minus => -1.0,
            Band::Plus => 1.0,
        }
    }

    /// The opposite band.
    pub fn other(self) -> Band {
        match self {
            Band::Minus => Band::Plus,
            Band::Plus => Band::Minus,
        }
    }

    /// Array position used for band-indexed storage: Minus = 0, Plus = 1.
    pub fn index(self) -> usize {
        match self {
            Band::Minus => 0,
            Band::Plus => 1,
        }
    }

    /// Both bands in storage order.
    pub const BOTH: [Band; 2] = [Band::Minus, Band::Plus];
}

pub(crate) type FieldFn = dyn Fn([f64; 2]) -> [f64; 3] + Send + Sync;

pub(crate) enum FieldKind {
    HalfBhz,
    Flat([f64; 3]),
    Custom(Arc<FieldFn>),
}

/// A 2π-periodic map from the phase torus to a three-component field vector,
/// together with the gap scale Δ that sets its magnitude.
pub struct TwoLevelField {
    gap: f64,
    kind: FieldKind,
}

impl Clone for TwoLevelField {
    fn clone(&self) -> Self {
        let kind = match &self.kind {
            FieldKind::HalfBhz => FieldKind::HalfBhz,
            FieldKind::Flat(h) => FieldKind::Flat(*h),
            FieldKind::Custom(f) => FieldKind::Custom(Arc::clone(f)),
        };
        TwoLevelField { gap: self.gap, kind }
    }
}

impl fmt::Debug for TwoLevelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            FieldKind::HalfBhz => "half-bhz",
            FieldKind::Flat(_) => "flat",
            FieldKind::Custom(_) => "custom",
        };
        write!(f, "TwoLevelField({name}, gap={})", self.gap)
    }
}

impl TwoLevelField {
    /// The built-in winding field
    /// `h(Φ) = (Δ/2·sin φ₁, −Δ/2·sin φ₂, Δ/2·(1 − cos φ₁ − cos φ₂))`.
    pub fn half_bhz(gap: f64) -> Self {
        assert!(gap > 0.0, "gap must be positive");
        TwoLevelField { gap, kind: FieldKind::HalfBhz }
    }

    /// A constant (phase-independent) field vector.
    pub fn flat(gap: f64, h: [f64; 3]) -> Self {
        assert!(gap > 0.0, "gap must be positive");
        TwoLevelField { gap, kind: FieldKind::Flat(h) }
    }

    /// A user-supplied periodic field map. The closure is evaluated on angles
    /// wrapped into `[0, 2π)`, which enforces exact periodicity.
    pub fn custom(gap: f64, f: Arc<FieldFn>) -> Self {
        assert!(gap > 0.0, "gap must be positive");
        TwoLevelField { gap, kind: FieldKind::Custom(f) }
    }

    /// Gap scale Δ.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Structural variant, used by the lattice assembly to pick closed-form
    /// hop coefficients when they exist.
    pub(crate) fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// Field vector at a phase point.
    pub fn at(&self, phi: [f64; 2]) -> [f64; 3] {
        let p = [wrap_angle(phi[0]), wrap_angle(phi[1])];
        match &self.kind {
            FieldKind::HalfBhz => {
                let half = 0.5 * self.gap;
                [
                    half * p[0].sin(),
                    -half * p[1].sin(),
                    half * (1.0 - p[0].cos() - p[1].cos()),
                ]
            }
            FieldKind::Flat(h) => *h,
            FieldKind::Custom(f) => f(p),
        }
    }
}

/// `h·σ` applied to a spinor.
pub fn field_apply(h: [f64; 3], psi: &[C64; 2]) -> [C64; 2] {
    let hx = c64(h[0], 0.0);
    let hy = c64(0.0, h[1]);
    let hz = c64(h[2], 0.0);
    [
        hz * psi[0] + (hx - hy) * psi[1],
        (hx + hy) * psi[0] - hz * psi[1],
    ]
}

/// Spinor inner product `⟨a|b⟩`.
pub fn spinor_dot(a: &[C64; 2], b: &[C64; 2]) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

/// Expectation values of the three Pauli operators.
pub fn bloch_of(psi: &[C64; 2]) -> [f64; 3] {
    let cross = psi[0].conj() * psi[1];
    [
        2.0 * cross.re,
        2.0 * cross.im,
        psi[0].norm_sqr() - psi[1].norm_sqr(),
    ]
}

fn normalize(psi: &mut [C64; 2]) {
    let n = (psi[0].norm_sqr() + psi[1].norm_sqr()).sqrt();
    psi[0] /= n;
    psi[1] /= n;
}

/// Deterministic gauge: rotate the global phase so the larger-magnitude
/// component is real positive (component 0 wins ties).
fn fix_gauge(psi: &mut [C64; 2]) {
    let pick = if psi[1].norm() > psi[0].norm() { 1 } else { 0 };
    let mag = psi[pick].norm();
    if mag > 0.0 {
        let phase = psi[pick] / mag;
        psi[0] /= phase;
        psi[1] /= phase;
    }
}

/// Multiply `psi` by the phase that makes `⟨reference|psi⟩` real positive.
fn align_to(reference: &[C64; 2], psi: &mut [C64; 2]) {
    let ov = spinor_dot(reference, psi);
    let mag = ov.norm();
    if mag > 1e-12 {
        let phase = ov / mag;
        psi[0] /= phase;
        psi[1] /= phase;
    }
}

/// Exact spectral data of `h(Φ)·σ` at one phase point.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    /// Evaluation point (wrapped).
    pub phi: [f64; 2],
    /// Field vector.
    pub h: [f64; 3],
    /// Band energies `[E₋, E₊] = [−|h|, +|h|]`.
    pub e: [f64; 2],
    /// Band Bloch vectors `b_ν = ν·h/|h|`.
    pub bloch: [[f64; 3]; 2],
    /// Gauge-fixed eigenspinors `[ψ₋, ψ₊]`.
    pub psi: [[C64; 2]; 2],
}

impl Eigensystem {
    /// Band energy.
    pub fn energy(&self, band: Band) -> f64 {
        self.e[band.index()]
    }

    /// Gauge-fixed eigenspinor.
    pub fn state(&self, band: Band) -> &[C64; 2] {
        &self.psi[band.index()]
    }

    /// Band Bloch vector.
    pub fn bloch(&self, band: Band) -> [f64; 3] {
        self.bloch[band.index()]
    }
}

/// Diagonalize the two-level field at a phase point.
pub fn eigensystem_at(model: &TwoLevelField, phi: [f64; 2]) -> Result<Eigensystem> {
    let p = [wrap_angle(phi[0]), wrap_angle(phi[1])];
    let h = model.at(p);
    let r = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    if r < GAP_THRESHOLD * model.gap {
        return Err(CoreError::GaplessPoint {
            phi1: p[0],
            phi2: p[1],
            norm: r,
            threshold: GAP_THRESHOLD * model.gap,
        });
    }
    let (x, y, z) = (h[0], h[1], h[2]);
    // Branch on the sign of z for a numerically stable eigenvector pair.
    let (mut psi_plus, mut psi_minus) = if z >= 0.0 {
        let s = (2.0 * r * (r + z)).sqrt();
        (
            [c64((r + z) / s, 0.0), c64(x / s, y / s)],
            [c64(-x / s, y / s), c64((r + z) / s, 0.0)],
        )
    } else {
        let s = (2.0 * r * (r - z)).sqrt();
        (
            [c64(x / s, -y / s), c64((r - z) / s, 0.0)],
            [c64(-(r - z) / s, 0.0), c64(x / s, y / s)],
        )
    };
    fix_gauge(&mut psi_plus);
    fix_gauge(&mut psi_minus);
    Ok(Eigensystem {
        phi: p,
        h,
        e: [-r, r],
        bloch: [
            [-h[0] / r, -h[1] / r, -h[2] / r],
            [h[0] / r, h[1] / r, h[2] / r],
        ],
        psi: [psi_minus, psi_plus],
    })
}

/// Cross-band connection components `A_{μν,i} = i⟨ψ_μ|∂_{φᵢ}ψ_ν⟩` (μ the
/// band opposite to `band`), by central differences with parallel-transport
/// gauge alignment.
pub fn cross_connection(
    model: &TwoLevelField,
    phi: [f64; 2],
    band: Band,
    delta: f64,
) -> Result<[C64; 2]> {
    let es = eigensystem_at(model, phi)?;
    let psi_nu = es.state(band);
    let psi_mu = es.state(band.other());
    let mut out = [c64(0.0, 0.0); 2];
    for dir in 0..2 {
        let mut shift = [0.0, 0.0];
        shift[dir] = delta;
        let mut fwd = *eigensystem_at(model, [phi[0] + shift[0], phi[1] + shift[1]])?.state(band);
        let mut bwd = *eigensystem_at(model, [phi[0] - shift[0], phi[1] - shift[1]])?.state(band);
        align_to(psi_nu, &mut fwd);
        align_to(psi_nu, &mut bwd);
        let dpsi = [
            (fwd[0] - bwd[0]) / (2.0 * delta),
            (fwd[1] - bwd[1]) / (2.0 * delta),
        ];
        out[dir] = c64(0.0, 1.0) * (psi_mu[0].conj() * dpsi[0] + psi_mu[1].conj() * dpsi[1]);
    }
    Ok(out)
}

/// An adiabatic state of one band at one phase point: the exact eigenstate at
/// order 0, or its frequency-dressed first-order deformation.
#[derive(Clone, Debug)]
pub struct DressedState {
    /// Band label.
    pub band: Band,
    /// Dressing order (0 or 1).
    pub order: u8,
    /// Evaluation point (wrapped).
    pub phi: [f64; 2],
    /// Normalized spinor.
    pub psi: [C64; 2],
    /// Adiabatic energy `⟨ψ|H(Φ)|ψ⟩`.
    pub energy: f64,
    /// Bloch vector of the spinor.
    pub bloch: [f64; 3],
}

/// Build the order-0 or order-1 adiabatic state of `band` at `phi`.
///
/// Order 1 adds the opposite-band admixture with coefficient
/// `Σᵢ ωᵢ A_{μν,i} / (E_ν − E_μ)` (ħ = 1) and renormalizes; the gauge is
/// inherited from the order-0 eigenstate.  The sign of the denominator is
/// fixed by the co-moving frame Hamiltonian for the drift Φ(t) = Φ₀ − ωt,
///
/// ```text
/// K = diag(E₋, E₊) + Σᵢ ωᵢ Aᵢ ,
/// ```
///
/// whose first-order eigenvector carries `K_{μν}/(E_ν − E_μ)`; the choice is
/// validated against the exact time-stepped propagator in the tests below.
pub fn dressed_state(
    model: &TwoLevelField,
    phi: [f64; 2],
    omega: [f64; 2],
    band: Band,
    order: u8,
) -> Result<DressedState> {
    assert!(order <= 1, "dressing implemented at orders 0 and 1 only");
    let es = eigensystem_at(model, phi)?;
    let psi0 = es.state(band);
    let mut psi = *psi0;
    if order == 1 && (omega[0] != 0.0 || omega[1] != 0.0) {
        let a = cross_connection(model, phi, band, POINT_STEP)?;
        let mu = band.other();
        let denom = es.energy(band) - es.energy(mu);
        let coeff = (a[0] * omega[0] + a[1] * omega[1]) / denom;
        let psi_mu = es.state(mu);
        psi = [psi0[0] + coeff * psi_mu[0], psi0[1] + coeff * psi_mu[1]];
        normalize(&mut psi);
    }
    let hpsi = field_apply(es.h, &psi);
    let energy = spinor_dot(&psi, &hpsi).re;
    let bloch = bloch_of(&psi);
    Ok(DressedState { band, order, phi: es.phi, psi, energy, bloch })
}

/// Geometry fields of one band sampled on a torus grid.
#[derive(Clone, Debug)]
pub struct BandGeometry {
    /// Adiabatic energy per grid node.
    pub energy: Vec<f64>,
    /// Bloch vector per grid node.
    pub bloch: Vec<[f64; 3]>,
    /// Gauge-fixed spinor per grid node.
    pub states: Vec<[C64; 2]>,
    /// Unit-modulus overlap link to the +φ₁ neighbor.
    pub link1: Vec<C64>,
    /// Unit-modulus overlap link to the +φ₂ neighbor.
    pub link2: Vec<C64>,
    /// Folded plaquette flux (argument of the link product) based at each
    /// node's lower-left corner.
    pub plaquette_flux: Vec<f64>,
    /// Node-centered Berry curvature (average of the four adjacent
    /// plaquettes, divided by the cell area, with the sign of the continuum
    /// curvature).
    pub curvature: Vec<f64>,
    /// Quantum metric `(g₁₁, g₁₂, g₂₂)` per node from central differences of
    /// the Bloch field.
    pub metric: Vec<[f64; 3]>,
}

/// Both bands' geometry on a shared grid.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    /// Sampling grid.
    pub grid: Grid2,
    /// Frequency pair used for dressing.
    pub omega: [f64; 2],
    /// Dressing order.
    pub order: u8,
    bands: [BandGeometry; 2],
}

impl GeometryMap {
    /// Geometry of one band.
    pub fn band(&self, band: Band) -> &BandGeometry {
        &self.bands[band.index()]
    }
}

/// Sample energies, Bloch vectors, links, curvature, and metric of both bands
/// on an `m1 × m2` torus grid.
pub fn geometry_map(
    model: &TwoLevelField,
    omega: [f64; 2],
    order: u8,
    m1: usize,
    m2: usize,
) -> Result<GeometryMap> {
    assert!(m1 >= 8 && m2 >= 8, "geometry grid needs at least 8 points per direction");
    assert!(order <= 1);
    let grid = Grid2::new(m1, m2);
    let rows: Result<Vec<Vec<[DressedState; 2]>>> = (0..m2)
        .into_par_iter()
        .map(|j| {
            (0..m1)
                .map(|i| {
                    let phi = grid.point(i, j);
                    let dm = dressed_state(model, phi, omega, Band::Minus, order)?;
                    let dp = dressed_state(model, phi, omega, Band::Plus, order)?;
                    Ok([dm, dp])
                })
                .collect()
        })
        .collect();
    let rows = rows?;
    let mut bands = [new_band_geometry(grid.len()), new_band_geometry(grid.len())];
    for (j, row) in rows.iter().enumerate() {
        for (i, pair) in row.iter().enumerate() {
            let idx = grid.idx(i, j);
            for (slot, d) in pair.iter().enumerate() {
                bands[slot].energy[idx] = d.energy;
                bands[slot].bloch[idx] = d.bloch;
                bands[slot].states[idx] = d.psi;
            }
        }
    }
    for bg in bands.iter_mut() {
        fill_links_and_curvature(bg, grid);
        fill_metric(bg, grid);
    }
    let [minus, plus] = bands;
    Ok(GeometryMap { grid, omega, order, bands: [minus, plus] })
}

fn new_band_geometry(len: usize) -> BandGeometry {
    BandGeometry {
        energy: vec![0.0; len],
        bloch: vec![[0.0; 3]; len],
        states: vec![[c64(0.0, 0.0); 2]; len],
        link1: vec![c64(0.0, 0.0); len],
        link2: vec![c64(0.0, 0.0); len],
        plaquette_flux: vec![0.0; len],
        curvature: vec![0.0; len],
        metric: vec![[0.0; 3]; len],
    }
}

fn fill_links_and_curvature(bg: &mut BandGeometry, grid: Grid2) {
    let (m1, m2) = (grid.m1, grid.m2);
    for j in 0..m2 {
        for i in 0..m1 {
            let idx = grid.idx(i, j);
            let right = grid.idx((i + 1) % m1, j);
            let up = grid.idx(i, (j + 1) % m2);
            bg.link1[idx] = unit_overlap(&bg.states[idx], &bg.states[right]);
            bg.link2[idx] = unit_overlap(&bg.states[idx], &bg.states[up]);
        }
    }
    for j in 0..m2 {
        for i in 0..m1 {
            let idx = grid.idx(i, j);
            let right = grid.idx((i + 1) % m1, j);
            let up = grid.idx(i, (j + 1) % m2);
            let p = bg.link1[idx] * bg.link2[right] * bg.link1[up].conj() * bg.link2[idx].conj();
            bg.plaquette_flux[idx] = p.arg();
        }
    }
    let area = grid.cell_area();
    for j in 0..m2 {
        for i in 0..m1 {
            let idx = grid.idx(i, j);
            let im = (i + m1 - 1) % m1;
            let jm = (j + m2 - 1) % m2;
            let sum = bg.plaquette_flux[grid.idx(i, j)]
                + bg.plaquette_flux[grid.idx(im, j)]
                + bg.plaquette_flux[grid.idx(i, jm)]
                + bg.plaquette_flux[grid.idx(im, jm)];
            bg.curvature[idx] = -sum / (4.0 * area);
        }
    }
}

fn unit_overlap(a: &[C64; 2], b: &[C64; 2]) -> C64 {
    let ov = spinor_dot(a, b);
    let mag = ov.norm();
    assert!(
        mag > 1e-6,
        "adjacent grid states nearly orthogonal; grid too coarse for this field"
    );
    ov / mag
}

fn fill_metric(bg: &mut BandGeometry, grid: Grid2) {
    let (m1, m2) = (grid.m1, grid.m2);
    for j in 0..m2 {
        for i in 0..m1 {
            let idx = grid.idx(i, j);
            let bx_p = bg.bloch[grid.idx((i + 1) % m1, j)];
            let bx_m = bg.bloch[grid.idx((i + m1 - 1) % m1, j)];
            let by_p = bg.bloch[grid.idx(i, (j + 1) % m2)];
            let by_m = bg.bloch[grid.idx(i, (j + m2 - 1) % m2)];
            let mut d1 = [0.0; 3];
            let mut d2 = [0.0; 3];
            for k in 0..3 {
                d1[k] = (bx_p[k] - bx_m[k]) / (2.0 * grid.h1);
                d2[k] = (by_p[k] - by_m[k]) / (2.0 * grid.h2);
            }
            bg.metric[idx] = [
                0.25 * dot3(d1, d1),
                0.25 * dot3(d1, d2),
                0.25 * dot3(d2, d2),
            ];
        }
    }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Chern number of a band: minus the total plaquette flux over 2π, rounded to
/// the integer it lands on by construction.
pub fn chern_number(map: &GeometryMap, band: Band) -> i32 {
    let total: f64 = map.band(band).plaquette_flux.iter().sum();
    let c = -total / TAU;
    let rounded = c.round();
    assert!(
        (c - rounded).abs() < 1e-6,
        "plaquette flux sum not an integer multiple of 2π: {c}"
    );
    rounded as i32
}

/// Point-wise quantum metric `(g₁₁, g₁₂, g₂₂)` by central differences of the
/// (dressed) Bloch vector with step `delta`.
pub fn metric_at(
    model: &TwoLevelField,
    omega: [f64; 2],
    order: u8,
    phi: [f64; 2],
    delta: f64,
) -> Result<[f64; 3]> {
    let mut derivs = [[0.0; 3]; 2];
    for dir in 0..2 {
        let mut shift = [0.0, 0.0];
        shift[dir] = delta;
        let fwd = dressed_state(model, [phi[0] + shift[0], phi[1] + shift[1]], omega, Band::Minus, order)?;
        let bwd = dressed_state(model, [phi[0] - shift[0], phi[1] - shift[1]], omega, Band::Minus, order)?;
        for k in 0..3 {
            derivs[dir][k] = (fwd.bloch[k] - bwd.bloch[k]) / (2.0 * delta);
        }
    }
    Ok([
        0.25 * dot3(derivs[0], derivs[0]),
        0.25 * dot3(derivs[0], derivs[1]),
        0.25 * dot3(derivs[1], derivs[1]),
    ])
}

/// Point-wise Berry curvature from one small plaquette of side `delta`.
pub fn curvature_at(
    model: &TwoLevelField,
    omega: [f64; 2],
    order: u8,
    band: Band,
    phi: [f64; 2],
    delta: f64,
) -> Result<f64> {
    let p00 = dressed_state(model, phi, omega, band, order)?;
    let p10 = dressed_state(model, [phi[0] + delta, phi[1]], omega, band, order)?;
    let p11 = dressed_state(model, [phi[0] + delta, phi[1] + delta], omega, band, order)?;
    let p01 = dressed_state(model, [phi[0], phi[1] + delta], omega, band, order)?;
    let u1 = spinor_dot(&p00.psi, &p10.psi);
    let u2 = spinor_dot(&p10.psi, &p11.psi);
    let u3 = spinor_dot(&p01.psi, &p11.psi);
    let u4 = spinor_dot(&p00.psi, &p01.psi);
    let prod = u1 * u2 * u3.conj() * u4.conj();
    Ok(-prod.arg() / (delta * delta))
}

/// Transport phase `θ_ν(t; Φ₀)` of the band-`ν` adiabatic state carried along
/// the trajectory `Φ(t′) = Φ₀ − ωt′`:
/// the dynamical part `−∫E_ν dt′` plus the connection part
/// `−Σᵢωᵢ∫A_ν,i dt′`, the latter accumulated through parallel-transport
/// overlaps so that only the gauge of the two endpoint states matters
/// (ħ = 1; first-order dressed quantities).
pub fn transport_phase(
    model: &TwoLevelField,
    omega: [f64; 2],
    band: Band,
    phi0: [f64; 2],
    t: f64,
) -> Result<f64> {
    assert!(t >= 0.0, "transport phase defined for t ≥ 0");
    if t == 0.0 {
        return Ok(0.0);
    }
    let arc = (omega[0].hypot(omega[1]) * t).max(1.0);
    let n = even_subdivisions(arc, TAU / 4000.0);
    let dt = t / n as f64;
    let mut energies = Vec::with_capacity(n + 1);
    let mut connection_sum = 0.0;
    let mut prev: Option<DressedState> = None;
    for k in 0..=n {
        let tk = dt * k as f64;
        let phi = [phi0[0] - omega[0] * tk, phi0[1] - omega[1] * tk];
        let d = dressed_state(model, phi, omega, band, 1)?;
        energies.push(d.energy);
        if let Some(p) = &prev {
            connection_sum += spinor_dot(&p.psi, &d.psi).arg();
        }
        prev = Some(d);
    }
    let dynamical = simpson(&energies, dt);
    Ok(-dynamical - connection_sum)
}
