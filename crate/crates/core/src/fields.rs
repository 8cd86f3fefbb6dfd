//! Sample grids and field containers for one transverse dimension.
//!
//! Every plane in the simulation (source, object, reference detector, test
//! detector) is a uniform grid `x_i = x0 + i * dx`. Planes may use different
//! sample counts and spacings. All lengths are SI meters.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 1D sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid1D {
    n: usize,
    dx: f64,
    x0: f64,
}

impl Grid1D {
    pub fn new(n: usize, dx: f64, x0: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 samples, got {n}")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dx}")));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidGrid(format!("origin must be finite, got {x0}")));
        }
        Ok(Self { n, dx, x0 })
    }

    /// Grid symmetric about zero: `x0 = -(n - 1) * dx / 2`.
    pub fn centered(n: usize, dx: f64) -> Result<Self> {
        Self::new(n, dx, 0.0).map(|g| Self {
            x0: -((n - 1) as f64) * dx / 2.0,
            ..g
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn coordinates(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.coordinate(i))
    }

    /// Distance between the first and last sample, `(n - 1) * dx`.
    pub fn span(&self) -> f64 {
        (self.n - 1) as f64 * self.dx
    }

    /// Width covered by the samples' cells, `n * dx`.
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.dx
    }

    pub fn is_centered(&self) -> bool {
        let expected = -((self.n - 1) as f64) * self.dx / 2.0;
        (self.x0 - expected).abs() <= 1e-12 * self.extent()
    }

    /// Index of the sample nearest to `x`, clamped to the grid.
    pub fn nearest_index_clamped(&self, x: f64) -> usize {
        let f = ((x - self.x0) / self.dx).round();
        if f <= 0.0 {
            0
        } else {
            (f as usize).min(self.n - 1)
        }
    }

    /// Index of the sample within `dx / 2` of `x`, if any.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        let i = self.nearest_index_clamped(x);
        // Relative slack so that a centered even grid accepts x = 0.
        let slack = 0.5 * self.dx * (1.0 + 1e-9);
        ((self.coordinate(i) - x).abs() <= slack).then_some(i)
    }
}

#[derive(Deserialize)]
struct RawGrid {
    n: usize,
    dx: f64,
    x0: f64,
}

impl TryFrom<RawGrid> for Grid1D {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid1D::new(raw.n, raw.dx, raw.x0)
    }
}

/// One realization of a scalar complex field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid1D,
    samples: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid1D, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} samples on a grid of {}",
                samples.len(),
                grid.len()
            )));
        }
        if let Some(i) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidField(format!("non-finite sample at index {i}")));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            samples: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.coordinates().map(f).collect())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    /// Multiplies every sample by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            samples: self.samples.iter().map(|z| z * factor).collect(),
        }
    }

    /// `Σ |E_i|² dx`.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }
}

/// Real-valued samples on a grid (intensity profiles, means, image slices).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid1D,
    samples: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid1D, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} samples on a grid of {}",
                samples.len(),
                grid.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite sample at index {i}")));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.coordinates().map(f).collect())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn is_nonnegative(&self) -> bool {
        self.samples.iter().all(|&v| v >= 0.0)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `|E|²` sample by sample.
pub fn intensity(field: &ComplexField) -> RealField {
    RealField {
        grid: field.grid,
        samples: field.samples.iter().map(|z| z.norm_sqr()).collect(),
    }
}
