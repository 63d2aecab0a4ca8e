//! Truncated two-rotor number lattice and sparse assembly of the coupled
//! Hamiltonian.
//!
//! The Hilbert space is spanned by `|n₁,n₂⟩ ⊗ {↑,↓}` with the spin as the
//! fast (inner) index.  Sites are kept inside a rectangular box intersected
//! with a rotated box `|n_E| ≤ n_E_max`, `|n_perp| ≤ n_perp_max`, where the
//! rotated axes are aligned with the drive frequency vector.  The operators
//! `e^{iφ̂ᵢ}` act as lowering shifts `|nᵢ⟩ → |nᵢ−1⟩`; hops that would leave
//! the retained set are dropped (open boundaries).

use crate::error::{CoreError, Result};
use crate::qubit_geometry::{FieldKind, TwoLevelField};
use crate::{c64, C64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::Write as IoWrite;

/// Phase-grid size per axis used to extract hop coefficients of user-supplied
/// fields.  Fields must have all harmonics strictly below half this size.
const FFT_GRID: usize = 64;
/// Hop blocks with every entry below this magnitude are dropped.
const HOP_TOLERANCE: f64 = 1e-12;
/// Relative Hermiticity defect allowed for an assembled matrix.
const HERMITICITY_TOLERANCE: f64 = 1e-14;

/// Retention rule for the number lattice: a rectangular box intersected with
/// a box in the rotated coordinates attached to the frequency vector.
#[derive(Clone, Copy, Debug)]
pub struct LatticeTruncation {
    /// Inclusive bounds for the first mode's quantum number.
    pub n1_min: i64,
    /// Inclusive upper bound for the first mode.
    pub n1_max: i64,
    /// Inclusive bounds for the second mode's quantum number.
    pub n2_min: i64,
    /// Inclusive upper bound for the second mode.
    pub n2_max: i64,
    /// Half-width of the retained strip along the frequency direction.
    pub n_e_max: f64,
    /// Half-width of the retained strip across the frequency direction.
    pub n_perp_max: f64,
    /// Frequency vector defining the rotated coordinates.
    pub omega: [f64; 2],
}

impl LatticeTruncation {
    /// Box ± the given half-widths around the origin plus the rotated strip.
    pub fn new(
        box1: [i64; 2],
        box2: [i64; 2],
        n_e_max: f64,
        n_perp_max: f64,
        omega: [f64; 2],
    ) -> Self {
        Self {
            n1_min: box1[0],
            n1_max: box1[1],
            n2_min: box2[0],
            n2_max: box2[1],
            n_e_max,
            n_perp_max,
            omega,
        }
    }

    /// Minutes-scale truncation used by the desk presets.
    pub fn desk_default(omega: [f64; 2]) -> Self {
        Self::new([-34, 34], [-30, 30], 16.0, 28.0, omega)
    }

    /// The reference truncation used for the published figures.
    pub fn paper_scale(omega: [f64; 2]) -> Self {
        Self::new([-59, 59], [-52, 52], 30.0, 50.0, omega)
    }

    /// Whether a site survives both the box and the rotated strip.
    pub fn retains(&self, n1: i64, n2: i64) -> bool {
        if n1 < self.n1_min || n1 > self.n1_max || n2 < self.n2_min || n2 > self.n2_max {
            return false;
        }
        let (n_e, n_perp) = rotated_coordinates((n1, n2), self.omega);
        n_e.abs() <= self.n_e_max && n_perp.abs() <= self.n_perp_max
    }
}

/// Rotated number coordinates: the component along the frequency vector and
/// the component across it.  The map is orthogonal, so Euclidean norms are
/// preserved.
pub fn rotated_coordinates(site: (i64, i64), omega: [f64; 2]) -> (f64, f64) {
    let norm = (omega[0] * omega[0] + omega[1] * omega[1]).sqrt();
    assert!(norm > 0.0, "rotated coordinates need a nonzero frequency vector");
    let (n1, n2) = (site.0 as f64, site.1 as f64);
    (
        (omega[0] * n1 + omega[1] * n2) / norm,
        (-omega[1] * n1 + omega[0] * n2) / norm,
    )
}

/// Retained sites with a deterministic dense indexing.
#[derive(Clone, Debug)]
pub struct NumberLattice {
    /// Sites in lexicographic order of `(n₁, n₂)`.
    pub sites: Vec<(i64, i64)>,
    /// The truncation that generated the site set.
    pub truncation: LatticeTruncation,
    index: HashMap<(i64, i64), usize>,
}

impl NumberLattice {
    /// Number of retained sites.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    /// True when no site is retained (never holds for a built lattice).
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Total Hilbert-space dimension including the two-level factor.
    pub fn dim(&self) -> usize {
        2 * self.sites.len()
    }

    /// Dense index of a site, if retained.
    pub fn site_index(&self, site: (i64, i64)) -> Option<usize> {
        self.index.get(&site).copied()
    }

    /// Rotated coordinates of a site by dense index.
    pub fn rotated(&self, idx: usize) -> (f64, f64) {
        rotated_coordinates(self.sites[idx], self.truncation.omega)
    }

    /// Marks sites that have a missing lattice point within the given
    /// Manhattan distance — the rim where open-boundary hop dropping acts.
    pub fn boundary_mask(&self, depth: i64) -> Vec<bool> {
        self.sites
            .iter()
            .map(|&(n1, n2)| {
                for dx in -depth..=depth {
                    let rest = depth - dx.abs();
                    for dy in -rest..=rest {
                        if !self.index.contains_key(&(n1 + dx, n2 + dy)) {
                            return true;
                        }
                    }
                }
                false
            })
            .collect()
    }
}

/// Enumerates the retained sites of a truncation.
pub fn build_lattice(trunc: &LatticeTruncation) -> Result<NumberLattice> {
    assert!(trunc.n1_min <= trunc.n1_max && trunc.n2_min <= trunc.n2_max);
    assert!(trunc.n_e_max > 0.0 || trunc.n_perp_max > 0.0);
    let mut sites = Vec::new();
    for n1 in trunc.n1_min..=trunc.n1_max {
        for n2 in trunc.n2_min..=trunc.n2_max {
            if trunc.retains(n1, n2) {
                sites.push((n1, n2));
            }
        }
    }
    if sites.is_empty() {
        return Err(CoreError::EmptyLattice);
    }
    let index = sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    Ok(NumberLattice { sites, truncation: *trunc, index })
}

/// Sparse Hermitian matrix in compressed-row form with deterministic,
/// column-sorted rows.
#[derive(Clone, Debug)]
pub struct SparseHermitian {
    /// Matrix dimension.
    pub dim: usize,
    /// Row offsets into `col_idx`/`values` (length `dim + 1`).
    pub row_ptr: Vec<usize>,
    /// Column index per stored entry.
    pub col_idx: Vec<usize>,
    /// Value per stored entry.
    pub values: Vec<C64>,
}

impl SparseHermitian {
    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Columns and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Stored value at `(r, c)`, zero if absent.
    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => c64(0.0, 0.0),
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest magnitude of `A − A†` over all stored positions.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            let mut acc = c64(0.0, 0.0);
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut dense = vec![c64(0.0, 0.0); self.dim * self.dim];
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[r * self.dim + c] = v;
            }
        }
        dense
    }

    /// Column-major dense copy (the layout the eigensolver consumes).
    pub fn to_dense_col_major(&self) -> Vec<C64> {
        let mut dense = vec![c64(0.0, 0.0); self.dim * self.dim];
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[r + c * self.dim] = v;
            }
        }
        dense
    }

    /// Coordinate-triplet text dump: a `dim N` header, then one
    /// `row,col,re,im` line per stored entry in row-major order.
    pub fn dump(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        writeln!(out, "dim {}", self.dim)?;
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(
                    out,
                    "{},{},{},{}",
                    r,
                    c,
                    crate::io::fmt_f64(v.re),
                    crate::io::fmt_f64(v.im)
                )?;
            }
        }
        Ok(())
    }
}

/// One hopping term: the site offset `k` and the 2×2 spin block that
/// multiplies the shift `|n⟩ → |n + k⟩` matrix element `⟨n|·|n+k⟩`.
pub type HopBlock = ([i64; 2], [[C64; 2]; 2]);

/// Spin block `Σ_α c_α σ_α` from (complex) component coefficients.
fn spin_block(cx: C64, cy: C64, cz: C64) -> [[C64; 2]; 2] {
    let i = c64(0.0, 1.0);
    [[cz, cx - i * cy], [cx + i * cy, -cz]]
}

fn block_max(b: &[[C64; 2]; 2]) -> f64 {
    b.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Hop decomposition of a phase-periodic field: `h(Φ)·σ = Σ_k B_k e^{ik·Φ̂}`,
/// where `e^{ik·Φ̂}` lowers the site by `k`.  Built-in fields use closed-form
/// coefficients; custom fields are decomposed on a phase grid.
pub fn field_stencil(model: &TwoLevelField) -> Vec<HopBlock> {
    match model.kind() {
        FieldKind::Flat(h) => {
            vec![([0, 0], spin_block(c64(h[0], 0.0), c64(h[1], 0.0), c64(h[2], 0.0)))]
        }
        FieldKind::HalfBhz => {
            let q = model.gap() / 4.0;
            let i = c64(0.0, 1.0);
            let r = c64(q, 0.0);
            let z = c64(0.0, 0.0);
            vec![
                ([0, 0], spin_block(z, z, 2.0 * r)),
                ([1, 0], spin_block(-i * q, z, -r)),
                ([-1, 0], spin_block(i * q, z, -r)),
                ([0, 1], spin_block(z, i * q, -r)),
                ([0, -1], spin_block(z, -i * q, -r)),
            ]
        }
        FieldKind::Custom(_) => sampled_stencil(model),
    }
}

/// Hop coefficients of an arbitrary periodic field from a discrete Fourier
/// transform on a `FFT_GRID`² phase grid.  Harmonics at or above half the
/// grid alias; the caller guarantees finite Fourier content below that.
fn sampled_stencil(model: &TwoLevelField) -> Vec<HopBlock> {
    let n = FFT_GRID;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    // One grid per field component, each transformed along both axes.
    let mut comps: Vec<Vec<C64>> = vec![vec![c64(0.0, 0.0); n * n]; 3];
    for j2 in 0..n {
        for j1 in 0..n {
            let phi = [TAU * j1 as f64 / n as f64, TAU * j2 as f64 / n as f64];
            let h = model.at(phi);
            for (alpha, comp) in comps.iter_mut().enumerate() {
                comp[j1 + n * j2] = c64(h[alpha], 0.0);
            }
        }
    }
    for comp in &mut comps {
        for row in comp.chunks_mut(n) {
            fft.process(row);
        }
        let mut column = vec![c64(0.0, 0.0); n];
        for j1 in 0..n {
            for j2 in 0..n {
                column[j2] = comp[j1 + n * j2];
            }
            fft.process(&mut column);
            for j2 in 0..n {
                comp[j1 + n * j2] = column[j2];
            }
        }
        let scale = 1.0 / (n * n) as f64;
        for v in comp.iter_mut() {
            *v *= scale;
        }
    }
    let unwrap = |m: usize| -> i64 {
        if m < n / 2 {
            m as i64
        } else {
            m as i64 - n as i64
        }
    };
    let mut hops = Vec::new();
    for m2 in 0..n {
        for m1 in 0..n {
            let at = m1 + n * m2;
            let block = spin_block(comps[0][at], comps[1][at], comps[2][at]);
            if block_max(&block) > HOP_TOLERANCE {
                hops.push(([unwrap(m1), unwrap(m2)], block));
            }
        }
    }
    // Deterministic order independent of the grid scan.
    hops.sort_by_key(|(k, _)| (k[0], k[1]));
    hops
}

/// Assembles `Ĥ_tot = ħ ω·N̂ ⊗ 𝟙 + H(Φ̂)` on the retained sites with hops
/// leaving the set dropped.  ħ = 1 throughout.
pub fn assemble_total(
    lattice: &NumberLattice,
    model: &TwoLevelField,
    omega: [f64; 2],
) -> Result<SparseHermitian> {
    if lattice.is_empty() {
        return Err(CoreError::EmptyLattice);
    }
    let hops = field_stencil(model);
    let sites = lattice.len();
    let rows: Vec<[Vec<(usize, C64)>; 2]> = (0..sites)
        .into_par_iter()
        .map(|m| {
            let (n1, n2) = lattice.sites[m];
            let drive = omega[0] * n1 as f64 + omega[1] * n2 as f64;
            let mut up: Vec<(usize, C64)> = Vec::with_capacity(2 * hops.len() + 1);
            let mut dn: Vec<(usize, C64)> = Vec::with_capacity(2 * hops.len() + 1);
            for (k, block) in &hops {
                if let Some(j) = lattice.site_index((n1 + k[0], n2 + k[1])) {
                    for (spin_row, row_acc) in [(0, &mut up), (1, &mut dn)] {
                        for spin_col in 0..2 {
                            let v = block[spin_row][spin_col];
                            if v != c64(0.0, 0.0) {
                                row_acc.push((2 * j + spin_col, v));
                            }
                        }
                    }
                }
            }
            if drive != 0.0 {
                up.push((2 * m, c64(drive, 0.0)));
                dn.push((2 * m + 1, c64(drive, 0.0)));
            }
            for acc in [&mut up, &mut dn] {
                acc.sort_by_key(|&(c, _)| c);
                acc.dedup_by(|later, first| {
                    if later.0 == first.0 {
                        first.1 += later.1;
                        true
                    } else {
                        false
                    }
                });
            }
            [up, dn]
        })
        .collect();
    let dim = 2 * sites;
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for pair in &rows {
        for row in pair {
            for &(c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let matrix = SparseHermitian { dim, row_ptr, col_idx, values };
    let defect = matrix.hermiticity_defect();
    let allowed = HERMITICITY_TOLERANCE * matrix.max_abs().max(1.0);
    if defect > allowed {
        return Err(CoreError::NonHermitianAssembly { defect, allowed });
    }
    Ok(matrix)
}

/// Assembles `H(Φ̂)` alone (the drive term switched off).
pub fn assemble_zero_frequency(
    lattice: &NumberLattice,
    model: &TwoLevelField,
) -> Result<SparseHermitian> {
    assemble_total(lattice, model, [0.0, 0.0])
}

/// Diagonal of the drive term `ħ ω·N̂ ⊗ 𝟙` in the lattice basis.
pub fn number_diagonal(lattice: &NumberLattice, omega: [f64; 2]) -> Vec<f64> {
    let mut diag = Vec::with_capacity(lattice.dim());
    for &(n1, n2) in &lattice.sites {
        let v = omega[0] * n1 as f64 + omega[1] * n2 as f64;
        diag.push(v);
        diag.push(v);
    }
    diag
}
