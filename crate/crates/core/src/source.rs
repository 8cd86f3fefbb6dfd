//! Statistical source models and speckle realizations.
//!
//! A fully incoherent source is delta-correlated, `G(x1, x2) = I(x1) δ(x1 - x2)`.
//! On a grid the delta becomes `δ_ij / dx`, so every sample is an independent
//! circular Gaussian with variance `I(x_i) / dx`. The coherent control is a
//! single fluctuating mode `E(x) = a φ(x) sqrt(I_peak)` with one scalar `a`
//! shared by the whole plane, which makes `G` factorable (rank one).

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{ComplexField, Grid1D, RealField};
use crate::linalg;
use crate::rng::RealizationRng;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    Incoherent,
    /// Single fluctuating mode; `mode` has unit peak magnitude.
    CoherentControl { mode: ComplexField },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    profile: RealField,
    model: SourceModel,
}

impl SourceSpec {
    pub fn incoherent(profile: RealField) -> Result<Self> {
        validate_profile(&profile)?;
        Ok(Self {
            profile,
            model: SourceModel::Incoherent,
        })
    }

    pub fn coherent(profile: RealField, mode: ComplexField) -> Result<Self> {
        validate_profile(&profile)?;
        if mode.grid() != profile.grid() {
            return Err(Error::GridMismatch(
                "coherent mode and intensity profile live on different grids".into(),
            ));
        }
        let peak = mode.samples().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if (peak - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSource(format!(
                "coherent mode must have unit peak magnitude, got {peak}"
            )));
        }
        Ok(Self {
            profile,
            model: SourceModel::CoherentControl { mode },
        })
    }

    /// Coherent control whose mean intensity matches `profile`:
    /// `φ = sqrt(I / I_peak)`.
    pub fn coherent_matching(profile: RealField) -> Result<Self> {
        validate_profile(&profile)?;
        let peak = profile.max();
        let mode = ComplexField::new(
            *profile.grid(),
            profile
                .samples()
                .iter()
                .map(|&v| Complex64::new((v / peak).sqrt(), 0.0))
                .collect(),
        )?;
        Self::coherent(profile, mode)
    }

    pub fn grid(&self) -> &Grid1D {
        self.profile.grid()
    }

    pub fn profile(&self) -> &RealField {
        &self.profile
    }

    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    pub fn is_incoherent(&self) -> bool {
        matches!(self.model, SourceModel::Incoherent)
    }

    /// Discretized mutual coherence `entry(i, j) = <E_i* E_j>`.
    pub fn g11_matrix(&self) -> CorrelationMatrixG11 {
        let grid = *self.grid();
        match &self.model {
            SourceModel::Incoherent => {
                let dx = grid.dx();
                CorrelationMatrixG11 {
                    grid,
                    repr: G11Repr::Diagonal(self.profile.samples().iter().map(|v| v / dx).collect()),
                }
            }
            SourceModel::CoherentControl { mode } => {
                let amp = self.profile.max().sqrt();
                CorrelationMatrixG11 {
                    grid,
                    repr: G11Repr::RankOne(mode.samples().iter().map(|z| z * amp).collect()),
                }
            }
        }
    }

    pub fn draw_realization(&self, realization_index: u64, master_seed: u64) -> ComplexField {
        let mut samples = vec![Complex64::new(0.0, 0.0); self.grid().len()];
        self.fill_realization(realization_index, master_seed, &mut samples);
        ComplexField::new(*self.grid(), samples).expect("realization samples are finite")
    }
}

fn validate_profile(profile: &RealField) -> Result<()> {
    if let Some(i) = profile.samples().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidSource(format!(
            "intensity profile is negative at index {i}"
        )));
    }
    if profile.samples().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidSource("intensity profile is identically zero".into()));
    }
    Ok(())
}

/// Anything that can produce keyed realizations of a source-plane field.
pub trait FieldSampler: Sync {
    fn grid(&self) -> &Grid1D;

    /// Writes realization `realization_index` into `out` (length `grid().len()`).
    /// Must be a pure function of its arguments.
    fn fill_realization(&self, realization_index: u64, master_seed: u64, out: &mut [Complex64]);
}

impl FieldSampler for SourceSpec {
    fn grid(&self) -> &Grid1D {
        self.profile.grid()
    }

    fn fill_realization(&self, realization_index: u64, master_seed: u64, out: &mut [Complex64]) {
        assert_eq!(out.len(), self.grid().len());
        let mut rng = RealizationRng::new(master_seed, realization_index);
        match &self.model {
            SourceModel::Incoherent => {
                let scale = 1.0 / (2.0 * self.grid().dx());
                for (e, &i) in out.iter_mut().zip(self.profile.samples()) {
                    *e = rng.complex_normal() * (i * scale).sqrt();
                }
            }
            SourceModel::CoherentControl { mode } => {
                let a = rng.complex_normal() * (0.5 * self.profile.max()).sqrt();
                for (e, phi) in out.iter_mut().zip(mode.samples()) {
                    *e = a * phi;
                }
            }
        }
    }
}

/// Flat-top intensity profile of full width `width` centered at zero.
///
/// `edge_taper` in `[0, 1]` is the fraction of each half-width given to a
/// raised-cosine roll-off; `0` is a hard-edged top-hat. Samples with
/// `|x| <= (1 - edge_taper) * width / 2` are exactly `peak`.
pub fn flat_top_profile(grid: Grid1D, width: f64, edge_taper: f64, peak: f64) -> Result<RealField> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidSource(format!("source width must be positive, got {width}")));
    }
    if !(0.0..=1.0).contains(&edge_taper) {
        return Err(Error::InvalidSource(format!(
            "edge taper must lie in [0, 1], got {edge_taper}"
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidSource(format!("peak intensity must be positive, got {peak}")));
    }
    let half = width / 2.0;
    let flat = (1.0 - edge_taper) * half;
    RealField::from_fn(grid, |x| {
        let r = x.abs();
        if r <= flat {
            peak
        } else if r <= half && edge_taper > 0.0 {
            let z = (r - flat) / (half - flat);
            peak * 0.5 * (1.0 + (std::f64::consts::PI * z).cos())
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum G11Repr {
    Diagonal(Vec<f64>),
    /// `entry(i, j) = conj(v_i) v_j`
    RankOne(Vec<Complex64>),
}

/// Discretized second-order correlation `G(x_i, x_j) = <E*(x_i) E(x_j)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrixG11 {
    grid: Grid1D,
    repr: G11Repr,
}

impl CorrelationMatrixG11 {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        match &self.repr {
            G11Repr::Diagonal(d) => {
                if i == j {
                    Complex64::new(d[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            G11Repr::RankOne(v) => v[i].conj() * v[j],
        }
    }

    /// Diagonal entries when the matrix is known to be diagonal.
    pub fn as_diagonal(&self) -> Option<&[f64]> {
        match &self.repr {
            G11Repr::Diagonal(d) => Some(d),
            G11Repr::RankOne(_) => None,
        }
    }

    /// The vector `v` of a rank-one matrix `conj(v_i) v_j`.
    pub fn as_rank_one(&self) -> Option<&[Complex64]> {
        match &self.repr {
            G11Repr::RankOne(v) => Some(v),
            G11Repr::Diagonal(_) => None,
        }
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.entry(i, j))
    }

    pub fn trace(&self) -> f64 {
        (0..self.len()).map(|i| self.entry(i, i).re).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.len();
        (0..n).all(|i| (i..n).all(|j| (self.entry(i, j) - self.entry(j, i).conj()).norm() <= tol))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match &self.repr {
            G11Repr::Diagonal(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
            G11Repr::RankOne(_) => linalg::hermitian_eigenvalues(&self.to_dense())[0],
        }
    }

    /// PSD check with floor `-1e-10 * trace`.
    pub fn is_positive_semidefinite(&self) -> bool {
        self.min_eigenvalue() >= -1e-10 * self.trace().abs()
    }
}

/// Source-plane indices `(x1, x1', x2, x2')` of a fourth-order moment
/// `<E*(x1') E*(x2') E(x1) E(x2)>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexQuad {
    pub i1: usize,
    pub i1p: usize,
    pub i2: usize,
    pub i2p: usize,
}

impl IndexQuad {
    pub fn new(i1: usize, i1p: usize, i2: usize, i2p: usize) -> Self {
        Self { i1, i1p, i2, i2p }
    }

    fn max_index(&self) -> usize {
        self.i1.max(self.i1p).max(self.i2).max(self.i2p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    /// Sample fourth moment.
    pub lhs: Complex64,
    /// Gaussian factorization from the mutual coherence matrix.
    pub rhs: Complex64,
    /// Standard error of `lhs`.
    pub stderr: f64,
}

impl MomentCheck {
    pub fn z_score(&self) -> f64 {
        let d = (self.lhs - self.rhs).norm();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z_score() <= sigmas
    }
}

pub fn moment_theorem_check(
    spec: &SourceSpec,
    m_realizations: u64,
    master_seed: u64,
    quad: IndexQuad,
) -> Result<MomentCheck> {
    moment_theorem_checks(spec, m_realizations, master_seed, &[quad]).map(|v| v[0])
}

/// Compares sample fourth moments against the Gaussian moment theorem for
/// several index quads, reusing one set of realizations.
///
/// With `G(a, b) = <E_a* E_b>` the factorization of
/// `<E*_{1'} E*_{2'} E_1 E_2>` is `G(1', 1) G(2', 2) + G(1', 2) G(2', 1)`.
pub fn moment_theorem_checks(
    spec: &SourceSpec,
    m_realizations: u64,
    master_seed: u64,
    quads: &[IndexQuad],
) -> Result<Vec<MomentCheck>> {
    const MIN_REALIZATIONS: u64 = 1000;
    if m_realizations < MIN_REALIZATIONS {
        return Err(Error::InsufficientRealizations {
            required: MIN_REALIZATIONS,
            got: m_realizations,
        });
    }
    let n = spec.grid().len();
    if let Some(q) = quads.iter().find(|q| q.max_index() >= n) {
        return Err(Error::IndexOutOfRange {
            index: q.max_index(),
            n,
        });
    }

    // Welford accumulation of the complex product per quad.
    let mut mean = vec![Complex64::new(0.0, 0.0); quads.len()];
    let mut m2 = vec![0.0f64; quads.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..m_realizations {
        spec.fill_realization(k, master_seed, &mut buf);
        let count = (k + 1) as f64;
        for (q, (mu, s)) in quads.iter().zip(mean.iter_mut().zip(m2.iter_mut())) {
            let z = buf[q.i1p].conj() * buf[q.i2p].conj() * buf[q.i1] * buf[q.i2];
            let delta = z - *mu;
            *mu += delta / count;
            *s += (delta.conj() * (z - *mu)).re;
        }
    }

    let g = spec.g11_matrix();
    let m = m_realizations as f64;
    Ok(quads
        .iter()
        .zip(mean.iter().zip(&m2))
        .map(|(q, (&lhs, &s))| {
            let rhs = g.entry(q.i1p, q.i1) * g.entry(q.i2p, q.i2)
                + g.entry(q.i1p, q.i2) * g.entry(q.i2p, q.i1);
            MomentCheck {
                lhs,
                rhs,
                stderr: (s / (m - 1.0) / m).sqrt(),
            }
        })
        .collect())
}
