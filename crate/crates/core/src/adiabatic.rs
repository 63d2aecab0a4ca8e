//! Band projectors on the truncated lattice and cat-component analysis:
//! projection of evolved states onto the adiabatic bands, weight accounting,
//! half-space splitting, and fidelity diagnostics.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::io::fmt_f64;
use crate::linalg::{self, EighResult, Op};
use crate::propagation::Propagator;
use crate::qubit_geometry::{eigensystem_at, Band, GeometryMap, TwoLevelField};
use crate::rotor_lattice::{number_diagonal, rotated_coordinates, NumberLattice};
use crate::states::TotalState;
use crate::{c64, C64};

/// Grid resolution used to locate the band-cut energies of a field.
pub const CUT_GRID: usize = 128;

/// Relative width (in units of the field's gap parameter) of the exclusion
/// margin around a band cut: an eigenvalue inside the margin cannot be
/// classified.
pub const CUT_MARGIN_RELATIVE: f64 = 1e-6;

/// Two projected components count as separated once the Bhattacharyya
/// overlap of their transverse number marginals falls below this value.
pub const SEPARATION_OVERLAP_THRESHOLD: f64 = 1e-3;

/// Packet half-widths above this fraction of a turn make the quadratic
/// weight formula unreliable.
pub const METRIC_APPROX_WIDTH_LIMIT: f64 = 0.15 * std::f64::consts::PI;

/// Energy thresholds separating the two bulk bands of the zero-frequency
/// spectrum.  Everything strictly below `lower` belongs to the lower band,
/// everything strictly above `upper` to the upper band; the in-between
/// window hosts boundary-localized levels.
#[derive(Clone, Copy, Debug)]
pub struct BandCuts {
    /// Largest lower-band energy of the translation-invariant dispersion.
    pub lower: f64,
    /// Smallest upper-band energy of the translation-invariant dispersion.
    pub upper: f64,
}

/// Locates the band cuts of a field by sampling both adiabatic dispersion
/// sheets on a [`CUT_GRID`]² phase grid: the lower cut is the maximum of the
/// lower sheet, the upper cut the minimum of the upper sheet.
pub fn band_cuts(model: &TwoLevelField) -> Result<BandCuts> {
    let m = CUT_GRID;
    let step = std::f64::consts::TAU / m as f64;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for j in 0..m {
        for i in 0..m {
            let es = eigensystem_at(model, [i as f64 * step, j as f64 * step])?;
            lower = lower.max(es.energy(Band::Minus));
            upper = upper.min(es.energy(Band::Plus));
        }
    }
    Ok(BandCuts { lower, upper })
}

/// Splits ascending eigenvalues into (lower band, upper band, in-gap)
/// index sets.  Refuses classification when any eigenvalue sits within
/// `margin` of a cut.
fn partition_energies(
    evals: &[f64],
    cuts: BandCuts,
    margin: f64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut ground = Vec::new();
    let mut excited = Vec::new();
    let mut edge = Vec::new();
    for (k, &e) in evals.iter().enumerate() {
        for cut in [cuts.lower, cuts.upper] {
            if (e - cut).abs() < margin {
                return Err(CoreError::DegenerateCut { energy: e, cut, margin });
            }
        }
        if e < cuts.lower {
            ground.push(k);
        } else if e > cuts.upper {
            excited.push(k);
        } else {
            edge.push(k);
        }
    }
    Ok((ground, excited, edge))
}

/// Band projector in the eigenbasis of the zero-frequency Hamiltonian.
///
/// At order 0 the projector is the exact spectral projector onto the chosen
/// band's eigenvectors.  Order 1 adds the leading drive-induced coupling:
/// cross terms between the band and the opposite band with coefficients
/// `⟨Ψ_l|ħω·N̂|Ψ_k⟩ / (E_k − E_l)` (band index `k`, opposite-band index
/// `l`), plus the Hermitian conjugate.  Both residuals `P² − P` and
/// `[Ĥ, P]` then scale quadratically with the drive frequency.
///
/// Application never materializes the dense projector: a state is
/// transformed into the eigenbasis, masked (and cross-coupled at order 1),
/// and transformed back.
pub struct AdiabaticProjector {
    band: Band,
    order: usize,
    basis: Arc<EighResult>,
    cuts: BandCuts,
    band_set: Vec<usize>,
    opposite: Vec<usize>,
    edge_set: Vec<usize>,
    /// Column-major `opposite.len() × band_set.len()` cross block; empty
    /// at order 0.
    cross: Vec<C64>,
}

impl AdiabaticProjector {
    /// Which band the projector selects.
    pub fn band(&self) -> Band {
        self.band
    }

    /// Projection order (0 or 1).
    pub fn order(&self) -> usize {
        self.order
    }

    /// The zero-frequency eigensystem the projector is built on.
    pub fn basis(&self) -> &Arc<EighResult> {
        &self.basis
    }

    /// Band-cut energies used for the classification.
    pub fn cuts(&self) -> BandCuts {
        self.cuts
    }

    /// Number of eigenvectors assigned to the selected band.
    pub fn band_size(&self) -> usize {
        self.band_set.len()
    }

    /// Number of in-gap (boundary-localized) eigenvectors, excluded from
    /// both bands.
    pub fn edge_size(&self) -> usize {
        self.edge_set.len()
    }

    /// Eigenbasis coefficients of a state.
    fn coefficients(&self, state: &TotalState) -> Vec<C64> {
        assert_eq!(
            state.lattice.dim(),
            self.basis.dim,
            "state and projector live on different lattices"
        );
        linalg::matvec_adjoint(
            &self.basis.eigenvectors,
            self.basis.dim,
            self.basis.dim,
            &state.amplitudes,
        )
    }

    /// Coefficients of the projected state in the eigenbasis.
    fn projected_coefficients(&self, c: &[C64]) -> Vec<C64> {
        let mut y = vec![c64(0.0, 0.0); self.basis.dim];
        for &k in &self.band_set {
            y[k] = c[k];
        }
        if self.order == 1 && !self.cross.is_empty() {
            let nb = self.band_set.len();
            let nc = self.opposite.len();
            let b: Vec<C64> = self.band_set.iter().map(|&k| c[k]).collect();
            let e: Vec<C64> = self.opposite.iter().map(|&l| c[l]).collect();
            let to_opposite = linalg::matvec(&self.cross, nc, nb, &b);
            let to_band = linalg::matvec_adjoint(&self.cross, nc, nb, &e);
            for (j, &k) in self.band_set.iter().enumerate() {
                y[k] += to_band[j];
            }
            for (i, &l) in self.opposite.iter().enumerate() {
                y[l] += to_opposite[i];
            }
        }
        y
    }

    /// Applies the projector: returns the projected state and its weight
    /// `W = ‖P̂|Ψ⟩‖²`.
    pub fn project(&self, state: &TotalState) -> (TotalState, f64) {
        let c = self.coefficients(state);
        let y = self.projected_coefficients(&c);
        let weight = linalg::norm_sqr(&y);
        let amplitudes = linalg::matvec(&self.basis.eigenvectors, self.basis.dim, self.basis.dim, &y);
        (
            TotalState { lattice: state.lattice.clone(), amplitudes },
            weight,
        )
    }

    /// Weight `‖P̂|Ψ⟩‖²` without materializing the projected state.
    pub fn weight(&self, state: &TotalState) -> f64 {
        let c = self.coefficients(state);
        linalg::norm_sqr(&self.projected_coefficients(&c))
    }

    /// Probability mass carried by the in-gap (boundary-localized) levels,
    /// which belong to neither band.
    pub fn edge_weight(&self, state: &TotalState) -> f64 {
        let c = self.coefficients(state);
        self.edge_set.iter().map(|&k| c[k].norm_sqr()).sum()
    }
}

/// Builds a band projector from the eigensystem of the zero-frequency
/// Hamiltonian on a lattice.
///
/// The band cuts are located on a phase grid through [`band_cuts`]; an
/// eigenvalue within `1e−6` of a cut (relative to the field's gap
/// parameter) raises [`CoreError::DegenerateCut`].  At order 1 the cross
/// block couples the band to the opposite band only: that cancels the bulk
/// part of the drive commutator to first order while keeping every energy
/// denominator bounded below by the band gap.  In-gap boundary levels are
/// left out of the correction — they sit arbitrarily close to the cuts, so
/// including them would put near-zero denominators into the coefficients
/// and the "correction" would dwarf the projector itself.
pub fn build_projector(
    basis: &Arc<EighResult>,
    lattice: &Arc<NumberLattice>,
    model: &TwoLevelField,
    omega: [f64; 2],
    band: Band,
    order: usize,
) -> Result<AdiabaticProjector> {
    assert!(order <= 1, "projector orders above 1 are not supported");
    assert_eq!(
        basis.dim,
        lattice.dim(),
        "eigensystem dimension does not match the lattice"
    );
    let cuts = band_cuts(model)?;
    let margin = CUT_MARGIN_RELATIVE * model.gap();
    let (ground, excited, edge_set) = partition_energies(&basis.eigenvalues, cuts, margin)?;
    let (band_set, opposite) = match band {
        Band::Minus => (ground, excited),
        Band::Plus => (excited, ground),
    };
    let cross = if order == 1 {
        cross_block(basis, lattice, omega, &band_set, &opposite)
    } else {
        Vec::new()
    };
    Ok(AdiabaticProjector {
        band,
        order,
        basis: basis.clone(),
        cuts,
        band_set,
        opposite,
        edge_set,
        cross,
    })
}

/// Cross coefficients `C_lk = ⟨Ψ_l|ħω·N̂|Ψ_k⟩ / (E_k − E_l)` for band
/// columns `k` and opposite rows `l`, column-major.
fn cross_block(
    basis: &EighResult,
    lattice: &NumberLattice,
    omega: [f64; 2],
    band_set: &[usize],
    opposite: &[usize],
) -> Vec<C64> {
    let dim = basis.dim;
    let nb = band_set.len();
    let nc = opposite.len();
    if nb == 0 || nc == 0 {
        return Vec::new();
    }
    let diag = number_diagonal(lattice, omega);
    // Band columns scaled row-wise by the drive diagonal.
    let mut scaled_band = Vec::with_capacity(dim * nb);
    for &k in band_set {
        scaled_band.extend(
            basis
                .vector(k)
                .iter()
                .zip(&diag)
                .map(|(a, &v)| a * v),
        );
    }
    let mut opposite_cols = Vec::with_capacity(dim * nc);
    for &l in opposite {
        opposite_cols.extend_from_slice(basis.vector(l));
    }
    let mut block = linalg::matmul(
        Op::ConjTranspose,
        &opposite_cols,
        Op::None,
        &scaled_band,
        nc,
        dim,
        nb,
    );
    for (j, &k) in band_set.iter().enumerate() {
        let ek = basis.eigenvalues[k];
        for (i, &l) in opposite.iter().enumerate() {
            block[i + j * nc] /= ek - basis.eigenvalues[l];
        }
    }
    block
}

/// Largest excursion of a band weight along an evolution:
/// `max_t |W(t) − W(0)|`.
pub fn weight_conservation_probe(
    state: &TotalState,
    projector: &AdiabaticProjector,
    prop: &Propagator,
    times: &[f64],
) -> Result<f64> {
    let w0 = projector.weight(state);
    let evolution = prop.evolve(state, times)?;
    let mut drift = 0.0f64;
    for s in &evolution.states {
        drift = drift.max((projector.weight(s) - w0).abs());
    }
    Ok(drift)
}

/// Splits a state by the transverse number coordinate of each site:
/// amplitudes with `n_perp < n_perp_ref` go to the first state, the rest to
/// the second.  Returns both halves and the weight of the first.
pub fn halfspace_split(
    state: &TotalState,
    omega: [f64; 2],
    n_perp_ref: f64,
) -> (TotalState, TotalState, f64) {
    let mut below = TotalState::zero(state.lattice.clone());
    let mut above = TotalState::zero(state.lattice.clone());
    for (i, &site) in state.lattice.sites.iter().enumerate() {
        let (_, n_perp) = rotated_coordinates(site, omega);
        let target = if n_perp < n_perp_ref { &mut below } else { &mut above };
        target.amplitudes[2 * i] = state.amplitudes[2 * i];
        target.amplitudes[2 * i + 1] = state.amplitudes[2 * i + 1];
    }
    let weight = below.norm_sqr();
    (below, above, weight)
}

/// Normalized overlap `|⟨Ψ₁|Ψ₂⟩|² / (⟨Ψ₁|Ψ₁⟩·⟨Ψ₂|Ψ₂⟩)`.
///
/// Accepts unnormalized states; a numerically zero state raises
/// [`CoreError::ZeroState`].
pub fn fidelity(a: &TotalState, b: &TotalState) -> Result<f64> {
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    for n in [na, nb] {
        if n.sqrt() < 1e-300 {
            return Err(CoreError::ZeroState { norm: n.sqrt() });
        }
    }
    Ok(a.inner(b).norm_sqr() / (na * nb))
}

/// Band weight predicted from a phase-space density and the qubit
/// polarization: `W = (1 + b̄·Q)/2` with `b̄ = ∫ ρ(Φ) b_ν(Φ) dΦ` evaluated
/// by quadrature on the geometry-map grid.
///
/// `density` must hold one value per grid node of `map` and integrate to
/// one over the torus.  For a product state (phase density ⊗ fixed qubit)
/// this reproduces the exact order-0 band weight of the untruncated
/// problem.
pub fn predicted_weight(density: &[f64], map: &GeometryMap, band: Band, q: [f64; 3]) -> f64 {
    assert_eq!(
        density.len(),
        map.grid.len(),
        "density must be sampled on the geometry grid"
    );
    let cell = map.grid.h1 * map.grid.h2;
    let bloch = &map.band(band).bloch;
    let mut b_bar = [0.0f64; 3];
    for (i, &rho) in density.iter().enumerate() {
        let b = bloch[i];
        b_bar[0] += rho * b[0] * cell;
        b_bar[1] += rho * b[1] * cell;
        b_bar[2] += rho * b[2] * cell;
    }
    0.5 * (1.0 + b_bar[0] * q[0] + b_bar[1] * q[1] + b_bar[2] * q[2])
}

/// Small-packet band weight `W = 1 − Δφ₁²·g₁₁ − Δφ₂²·g₂₂` from the quantum
/// metric at the packet center.
///
/// `g` is the metric triple `(g₁₁, g₁₂, g₂₂)`; the off-diagonal entry does
/// not enter because the packet axes are the coordinate axes.  Valid for
/// half-widths up to about [`METRIC_APPROX_WIDTH_LIMIT`]; wider packets
/// produce a warning on stderr and an untrusted value.
pub fn weight_metric_approx(dphi: [f64; 2], g: [f64; 3]) -> f64 {
    if dphi[0] > METRIC_APPROX_WIDTH_LIMIT || dphi[1] > METRIC_APPROX_WIDTH_LIMIT {
        eprintln!(
            "weight_metric_approx: packet half-width ({:.4}, {:.4}) exceeds the quadratic-regime limit {:.4}",
            dphi[0], dphi[1], METRIC_APPROX_WIDTH_LIMIT
        );
    }
    1.0 - dphi[0] * dphi[0] * g[0] - dphi[1] * dphi[1] * g[2]
}

/// Transverse-number marginal on unit-width bins centered at integers.
fn n_perp_marginal(state: &TotalState, omega: [f64; 2]) -> BTreeMap<i64, f64> {
    let mut marginal = BTreeMap::new();
    for (i, &site) in state.lattice.sites.iter().enumerate() {
        let p = state.site_probability(i);
        if p == 0.0 {
            continue;
        }
        let (_, n_perp) = rotated_coordinates(site, omega);
        *marginal.entry(n_perp.round() as i64).or_insert(0.0) += p;
    }
    marginal
}

/// Bhattacharyya coefficient `Σ_b √(p_b·q_b)` of the transverse number
/// marginals of two states (each normalized to unit mass first).  Ranges
/// from 1 for identical marginals to 0 for disjoint ones; a numerically
/// empty state counts as fully overlapping.
pub fn bhattacharyya_overlap(a: &TotalState, b: &TotalState, omega: [f64; 2]) -> f64 {
    let pa = n_perp_marginal(a, omega);
    let pb = n_perp_marginal(b, omega);
    let za: f64 = pa.values().sum();
    let zb: f64 = pb.values().sum();
    if za < 1e-300 || zb < 1e-300 {
        return 1.0;
    }
    let mut overlap = 0.0;
    for (bin, &p) in &pa {
        if let Some(&q) = pb.get(bin) {
            overlap += (p / za * (q / zb)).sqrt();
        }
    }
    overlap
}

/// First time at which the two component series separate: the
/// Bhattacharyya overlap of paired states drops below
/// [`SEPARATION_OVERLAP_THRESHOLD`].  Returns `None` when they never do.
pub fn detect_separation_time(
    minus_components: &[TotalState],
    plus_components: &[TotalState],
    times_over_t1: &[f64],
    omega: [f64; 2],
) -> Option<f64> {
    assert_eq!(minus_components.len(), plus_components.len());
    assert_eq!(minus_components.len(), times_over_t1.len());
    for (i, t) in times_over_t1.iter().enumerate() {
        let overlap = bhattacharyya_overlap(&minus_components[i], &plus_components[i], omega);
        if overlap < SEPARATION_OVERLAP_THRESHOLD {
            return Some(*t);
        }
    }
    None
}

/// Least-squares line through `(x, y)` samples: returns `(slope,
/// intercept)`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    (slope, (sy - slope * sx) / n)
}

/// Summary of how an evolved state splits into counter-drifting band
/// components.
#[derive(Clone, Copy, Debug)]
pub struct CatSplitReport {
    /// Separation time in drive periods: detected when the component
    /// marginals stop overlapping, otherwise the configured fallback.
    pub t_sep_over_t1: f64,
    /// Whether the separation time was detected rather than taken from the
    /// fallback.
    pub detected: bool,
    /// Lower-band weight of the initial state.
    pub w_minus: f64,
    /// Upper-band weight of the initial state.
    pub w_plus: f64,
    /// Weight on in-gap levels, belonging to neither band.
    pub w_edge: f64,
    /// Fitted drift rate of the lower component's `⟨n_perp⟩`, quanta per
    /// drive period.
    pub slope_minus: f64,
    /// Fitted drift rate of the upper component.
    pub slope_plus: f64,
    /// Drift rate the lower band's Chern number dictates.
    pub slope_theory: f64,
    /// Largest deviation of the lower component's `⟨n_perp⟩` from its
    /// fitted line.
    pub osc_minus: f64,
    /// Largest deviation of the upper component's `⟨n_perp⟩` from its
    /// fitted line.
    pub osc_plus: f64,
}

impl CatSplitReport {
    /// JSON rendering with the stable report keys.
    pub fn to_json(&self) -> String {
        format!(
            "{{\n  \"t_sep_over_T1\": {},\n  \"W_minus\": {},\n  \"W_plus\": {},\n  \"W_edge\": {},\n  \"slope_minus\": {},\n  \"slope_plus\": {},\n  \"slope_theory\": {}\n}}\n",
            fmt_f64(self.t_sep_over_t1),
            fmt_f64(self.w_minus),
            fmt_f64(self.w_plus),
            fmt_f64(self.w_edge),
            fmt_f64(self.slope_minus),
            fmt_f64(self.slope_plus),
            fmt_f64(self.slope_theory)
        )
    }
}

/// Analyzes an evolved series: initial band weights, separation time of the
/// projected components, and their transverse drift rates.
///
/// The drift rates are least-squares slopes of each component's `⟨n_perp⟩`
/// against time, fitted over the samples at `t ≥ 2 T₁` when at least two
/// exist (skipping the early transient) and over all samples otherwise.
/// `chern_minus` is the lower band's Chern number, which fixes the
/// theoretical drift rate `−C₋·|ω|·T₁/(2π)` quanta per period.  When the
/// components never stop overlapping, the separation time falls back to
/// `fallback_t_sep_over_t1`.
pub fn cat_split_report(
    states: &[TotalState],
    times_over_t1: &[f64],
    p_minus: &AdiabaticProjector,
    p_plus: &AdiabaticProjector,
    omega: [f64; 2],
    chern_minus: i32,
    fallback_t_sep_over_t1: f64,
) -> CatSplitReport {
    assert_eq!(states.len(), times_over_t1.len());
    assert!(!states.is_empty(), "need at least one state");
    assert_eq!(p_minus.band(), Band::Minus);
    assert_eq!(p_plus.band(), Band::Plus);

    let mut minus_components = Vec::with_capacity(states.len());
    let mut plus_components = Vec::with_capacity(states.len());
    for s in states {
        minus_components.push(p_minus.project(s).0);
        plus_components.push(p_plus.project(s).0);
    }
    let w_minus = minus_components[0].norm_sqr();
    let w_plus = plus_components[0].norm_sqr();
    let w_edge = p_minus.edge_weight(&states[0]);

    let detected_at =
        detect_separation_time(&minus_components, &plus_components, times_over_t1, omega);

    let fit_range: Vec<usize> = {
        let tail: Vec<usize> = (0..times_over_t1.len())
            .filter(|&i| times_over_t1[i] >= 2.0)
            .collect();
        if tail.len() >= 2 {
            tail
        } else {
            (0..times_over_t1.len()).collect()
        }
    };
    let fit_component = |components: &[TotalState]| -> (f64, f64) {
        let x: Vec<f64> = fit_range.iter().map(|&i| times_over_t1[i]).collect();
        let y: Vec<f64> = fit_range
            .iter()
            .map(|&i| components[i].mean_rotated().1)
            .collect();
        if x.len() < 2 {
            return (f64::NAN, f64::NAN);
        }
        let (slope, intercept) = linear_fit(&x, &y);
        let osc = x
            .iter()
            .zip(&y)
            .map(|(&t, &v)| (v - slope * t - intercept).abs())
            .fold(0.0f64, f64::max);
        (slope, osc)
    };
    let (slope_minus, osc_minus) = fit_component(&minus_components);
    let (slope_plus, osc_plus) = fit_component(&plus_components);

    let omega_norm = (omega[0] * omega[0] + omega[1] * omega[1]).sqrt();
    let slope_theory = -(chern_minus as f64) * omega_norm / omega[0];

    CatSplitReport {
        t_sep_over_t1: detected_at.unwrap_or(fallback_t_sep_over_t1),
        detected: detected_at.is_some(),
        w_minus,
        w_plus,
        w_edge,
        slope_minus,
        slope_plus,
        slope_theory,
        osc_minus,
        osc_plus,
    }
}
