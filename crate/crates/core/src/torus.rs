//! Geometry of the two-angle torus: wrapping, uniform grids, smooth periodic
//! interpolation, and the quadrature rules used for line integrals.

use std::f64::consts::TAU;

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap a difference of angles into `(-π, π]`.
pub fn wrap_signed(x: f64) -> f64 {
    let r = wrap_angle(x);
    if r > std::f64::consts::PI {
        r - TAU
    } else {
        r
    }
}

/// Uniform `m1 × m2` grid over the torus `[0, 2π)²`.
///
/// Index convention: `idx(i1, i2) = i1 + m1·i2`, so the first angle is the
/// fast-running direction in any flattened buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2 {
    /// Points along the first angle.
    pub m1: usize,
    /// Points along the second angle.
    pub m2: usize,
    /// Spacing `2π / m1`.
    pub h1: f64,
    /// Spacing `2π / m2`.
    pub h2: f64,
}

impl Grid2 {
    /// Create a grid with `m1 × m2` points (`≥ 4` each, required by the
    /// four-point interpolation stencil).
    pub fn new(m1: usize, m2: usize) -> Self {
        assert!(m1 >= 4 && m2 >= 4, "grid needs at least four points per direction");
        Grid2 {
            m1,
            m2,
            h1: TAU / m1 as f64,
            h2: TAU / m2 as f64,
        }
    }

    /// Square grid with `m` points per direction.
    pub fn square(m: usize) -> Self {
        Self::new(m, m)
    }

    /// Flat index of grid node `(i1, i2)`.
    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        i1 + self.m1 * i2
    }

    /// Coordinates of grid node `(i1, i2)`.
    pub fn point(&self, i1: usize, i2: usize) -> [f64; 2] {
        [i1 as f64 * self.h1, i2 as f64 * self.h2]
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.m1 * self.m2
    }

    /// True only for a degenerate grid (construction forbids it).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Area element of one cell, `h1·h2`. Uniform sums weighted by this value
    /// realize the periodic rectangle rule, which is spectrally accurate for
    /// smooth periodic integrands.
    pub fn cell_area(&self) -> f64 {
        self.h1 * self.h2
    }
}

/// Cubic-convolution weights (Catmull–Rom, `a = −1/2`) for fractional
/// position `t ∈ [0,1)` across the four-point stencil `−1..=2`.
fn keys_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * (t3 - t2),
    ]
}

/// Derivatives of [`keys_weights`] with respect to `t`.
fn keys_weights_deriv(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        4.5 * t2 - 5.0 * t,
        -4.5 * t2 + 4.0 * t + 0.5,
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

/// Bicubic periodic interpolant of a scalar field sampled on a [`Grid2`].
///
/// Uses tensor-product cubic convolution, which is C¹ and third-order
/// accurate; gradients are evaluated analytically from the same stencil.
#[derive(Clone, Debug)]
pub struct PeriodicSpline2 {
    grid: Grid2,
    values: Vec<f64>,
}

impl PeriodicSpline2 {
    /// Wrap grid samples (flat layout per [`Grid2::idx`]) into an interpolant.
    pub fn new(grid: Grid2, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "sample count must match grid");
        PeriodicSpline2 { grid, values }
    }

    /// Sampling grid.
    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    /// Raw grid samples.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn stencil(&self, phi: [f64; 2]) -> ([usize; 4], [usize; 4], f64, f64) {
        let u = wrap_angle(phi[0]) / self.grid.h1;
        let v = wrap_angle(phi[1]) / self.grid.h2;
        let i = u.floor() as usize % self.grid.m1;
        let j = v.floor() as usize % self.grid.m2;
        let tu = u - u.floor();
        let tv = v - v.floor();
        let wrap = |base: usize, off: i64, m: usize| -> usize {
            (((base as i64 + off) % m as i64 + m as i64) % m as i64) as usize
        };
        let cols = [
            wrap(i, -1, self.grid.m1),
            wrap(i, 0, self.grid.m1),
            wrap(i, 1, self.grid.m1),
            wrap(i, 2, self.grid.m1),
        ];
        let rows = [
            wrap(j, -1, self.grid.m2),
            wrap(j, 0, self.grid.m2),
            wrap(j, 1, self.grid.m2),
            wrap(j, 2, self.grid.m2),
        ];
        (cols, rows, tu, tv)
    }

    /// Interpolated value at an arbitrary torus point.
    pub fn eval(&self, phi: [f64; 2]) -> f64 {
        let (cols, rows, tu, tv) = self.stencil(phi);
        let wu = keys_weights(tu);
        let wv = keys_weights(tv);
        let mut acc = 0.0;
        for (b, &r) in rows.iter().enumerate() {
            let mut line = 0.0;
            for (a, &c) in cols.iter().enumerate() {
                line += wu[a] * self.values[self.grid.idx(c, r)];
            }
            acc += wv[b] * line;
        }
        acc
    }

    /// Interpolated value and analytic gradient `(∂₁f, ∂₂f)`.
    pub fn eval_with_gradient(&self, phi: [f64; 2]) -> (f64, [f64; 2]) {
        let (cols, rows, tu, tv) = self.stencil(phi);
        let wu = keys_weights(tu);
        let wv = keys_weights(tv);
        let du = keys_weights_deriv(tu);
        let dv = keys_weights_deriv(tv);
        let mut val = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for (b, &r) in rows.iter().enumerate() {
            let mut line = 0.0;
            let mut dline = 0.0;
            for (a, &c) in cols.iter().enumerate() {
                let f = self.values[self.grid.idx(c, r)];
                line += wu[a] * f;
                dline += du[a] * f;
            }
            val += wv[b] * line;
            g1 += wv[b] * dline;
            g2 += dv[b] * line;
        }
        (val, [g1 / self.grid.h1, g2 / self.grid.h2])
    }
}

/// Composite Simpson rule over uniformly spaced samples.
///
/// Requires an odd sample count (an even number of subintervals of width `h`).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "need an odd number of samples ≥ 3");
    let mut acc = values[0] + values[n - 1];
    for (k, &v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Smallest even subdivision count whose substep does not exceed `max_step`.
pub fn even_subdivisions(interval: f64, max_step: f64) -> usize {
    assert!(max_step > 0.0, "substep bound must be positive");
    if interval <= 0.0 {
        return 2;
    }
    let n = (interval / max_step).ceil() as usize;
    let n = n.max(2);
    if n % 2 == 0 {
        n
    } else {
        n + 1
    }
}
