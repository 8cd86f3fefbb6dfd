//! Named end-to-end experiments with their oracles and error metrics.
//!
//! The central one is lensless Fourier-transform imaging: with
//! `dr = d1 + d2` the quadratic phases of the two arms cancel and the
//! fluctuation correlation seen by a point test detector at `x_t` is
//!
//! ```text
//! ΔI(x_r) ∝ |T(2π (x_t - x_r) / (λ d2))|²,   T(q) = Σ dx' t(x') e^{i q x'}
//! ```
//!
//! In one transverse dimension the proportionality constant is
//! `I0² / (λ d2)²` for the `1/sqrt(-iλd)` kernel normalization.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    closed_form_dii, conditional_column, conditional_slice, detector_integrated_correlation, estimate_correlation,
    grouped_dii, CorrelationResult,
};
use crate::error::{Error, Result};
use crate::fields::{Grid1D, RealField};
use crate::propagation::{reference_arm, test_arm, ArmResponse, Geometry, ObjectSpec, SamplingViolation};
use crate::source::{FieldSampler, SourceSpec};

/// Two-arm experiment layout shared by every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LenslessConfig {
    pub geometry: Geometry,
    pub source: SourceSpec,
    pub object: ObjectSpec,
    pub grid_ref: Grid1D,
    pub grid_test: Grid1D,
    pub realizations: u64,
    pub master_seed: u64,
    /// Metrics use reference samples with `|x_r - x_t| <= analysis_half_width`.
    pub analysis_half_width: f64,
    /// Position of the point-like test detector.
    pub x_t_target: f64,
}

impl LenslessConfig {
    /// Desk-scale double slit: λ = 0.5 µm, d1 = d2 = 0.1 m, dr = 0.2 m,
    /// slits 20 µm wide at 100 µm separation, a 2 mm source with a
    /// raised-cosine edge and 257-sample detectors over 6 mm.
    pub fn desk_double_slit(realizations: u64, master_seed: u64) -> Result<Self> {
        let geometry = Geometry::new(0.5e-6, 0.1, 0.1, 0.2)?;
        let grid_src = Grid1D::centered(2048, 2e-3 / 2048.0)?;
        let profile = crate::source::flat_top_profile(grid_src, 2e-3, 0.3, 1.0)?;
        let grid_obj = Grid1D::centered(512, 0.6e-3 / 512.0)?;
        let grid_det = Grid1D::centered(257, 6e-3 / 257.0)?;
        Ok(Self {
            geometry,
            source: SourceSpec::incoherent(profile)?,
            object: ObjectSpec::double_slit(grid_obj, 20e-6, 100e-6)?,
            grid_ref: grid_det,
            grid_test: grid_det,
            realizations,
            master_seed,
            analysis_half_width: 0.75e-3,
            x_t_target: 0.0,
        })
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Self {
        Self {
            geometry,
            ..self.clone()
        }
    }

    /// Full width at half maximum of the source intensity profile.
    pub fn source_width(&self) -> f64 {
        let p = self.source.profile();
        let half = 0.5 * p.max();
        p.samples().iter().filter(|&&v| v >= half).count() as f64 * p.grid().dx()
    }

    pub fn source_peak(&self) -> f64 {
        self.source.profile().max()
    }

    fn test_index(&self) -> Result<usize> {
        self.grid_test
            .nearest_index(self.x_t_target)
            .ok_or(Error::NoSampleNear { target: self.x_t_target })
    }

    /// Coordinate of the test sample acting as the point detector.
    pub fn test_position(&self) -> Result<f64> {
        Ok(self.grid_test.coordinate(self.test_index()?))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.analysis_half_width.is_finite() && self.analysis_half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "analysis half-width must be positive, got {}",
                self.analysis_half_width
            )));
        }
        self.test_index()?;
        Ok(())
    }

    /// Non-fatal issues with the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.geometry.is_matched() {
            let g = &self.geometry;
            w.push(format!(
                "geometry: dr = {} m differs from d1 + d2 = {} m; Fourier condition not met",
                g.dr,
                g.d1 + g.d2
            ));
        }
        let extent = self.object.support_extent();
        if self.source_width() < 4.0 * extent {
            w.push(format!(
                "source: width {:e} m is below four times the object extent {:e} m",
                self.source_width(),
                extent
            ));
        }
        w
    }

    /// Reference arm and the full test arm.
    pub fn arms(&self) -> Result<(ArmResponse, ArmResponse)> {
        let gs = *self.source.grid();
        Ok((
            reference_arm(&self.geometry, gs, self.grid_ref)?,
            test_arm(&self.geometry, gs, &self.object, self.grid_test)?,
        ))
    }

    /// Reference arm and a two-column slice of the test arm holding the point
    /// detector; the slice carries every sample the conditional image needs.
    pub fn point_detector_arms(&self) -> Result<(ArmResponse, ArmResponse)> {
        let (arm_r, arm_t) = self.arms()?;
        let j = self.test_index()?;
        let start = j.min(self.grid_test.len() - 2);
        Ok((arm_r, arm_t.restrict_output(start, 2)?))
    }

    pub fn sampling_violations(&self) -> Result<Vec<SamplingViolation>> {
        let (arm_r, arm_t) = self.arms()?;
        Ok(arm_r
            .sampling_violations()
            .iter()
            .chain(arm_t.sampling_violations())
            .cloned()
            .collect())
    }
}

/// `I0² / (λ d2)² · |Σ dx' t(x') e^{i q x'}|²` at `q = 2π (x_t - x_r) / (λ d2)`,
/// evaluated by direct summation.
pub fn dft_modulus_oracle(object: &ObjectSpec, geometry: &Geometry, grid_r: &Grid1D, x_t: f64, i0: f64) -> Result<RealField> {
    geometry.validate()?;
    let lz = geometry.wavelength * geometry.d2;
    let scale = i0 * i0 / (lz * lz);
    let g = object.grid();
    let t = object.transmittance().samples();
    let xs: Vec<f64> = g.coordinates().collect();
    RealField::from_fn(*grid_r, |x_r| {
        let q = std::f64::consts::TAU * (x_t - x_r) / lz;
        let sum: Complex64 = t
            .iter()
            .zip(&xs)
            .filter(|(t, _)| t.norm_sqr() > 0.0)
            .map(|(t, &x)| t * Complex64::from_polar(1.0, q * x))
            .sum();
        (sum * g.dx()).norm_sqr() * scale
    })
}

/// Pearson correlation; `NaN` if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// `‖a - b‖₂ / ‖b‖₂`.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Indices of `grid` with `|x - center| <= half_width`, as a contiguous range.
pub fn region(grid: &Grid1D, center: f64, half_width: f64) -> std::ops::Range<usize> {
    let inside: Vec<usize> = (0..grid.len())
        .filter(|&i| (grid.coordinate(i) - center).abs() <= half_width * (1.0 + 1e-12))
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&a), Some(&b)) => a..b + 1,
        _ => 0..0,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Extremum {
    Minimum,
    Maximum,
}

/// Fringe extrema located as depth-weighted centroids of the runs of samples
/// below (minima) or above (maxima) half the regional maximum. Runs split by
/// at most two samples are merged; runs touching the region edge are dropped.
fn fringe_extrema(curve: &RealField, center: f64, half_width: f64, kind: Extremum) -> Vec<f64> {
    let r = region(curve.grid(), center, half_width);
    if r.len() < 3 {
        return Vec::new();
    }
    let y = &curve.samples()[r.clone()];
    let thr = 0.5 * y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weight = |v: f64| match kind {
        Extremum::Minimum => thr - v,
        Extremum::Maximum => v - thr,
    };
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in y.iter().enumerate() {
        if weight(v) <= 0.0 {
            continue;
        }
        match runs.last_mut() {
            Some((_, end)) if i <= *end + 3 => *end = i,
            _ => runs.push((i, i)),
        }
    }
    let g = curve.grid();
    runs.into_iter()
        .filter(|&(a, b)| a > 0 && b + 1 < y.len())
        .map(|(a, b)| {
            let (mut sw, mut swx) = (0.0, 0.0);
            for (i, &v) in y.iter().enumerate().take(b + 1).skip(a) {
                let w = weight(v).max(0.0).powi(2);
                sw += w;
                swx += w * g.coordinate(r.start + i);
            }
            swx / sw
        })
        .collect()
}

pub fn fringe_minima(curve: &RealField, center: f64, half_width: f64) -> Vec<f64> {
    fringe_extrema(curve, center, half_width, Extremum::Minimum)
}

pub fn fringe_maxima(curve: &RealField, center: f64, half_width: f64) -> Vec<f64> {
    fringe_extrema(curve, center, half_width, Extremum::Maximum)
}

/// Mean spacing of consecutive fringe minima; `None` with fewer than two.
/// Zeros of the fringe term are not displaced by the slowly varying envelope,
/// which biases the maxima instead.
pub fn fringe_period(curve: &RealField, center: f64, half_width: f64) -> Option<f64> {
    let m = fringe_minima(curve, center, half_width);
    (m.len() >= 2).then(|| (m[m.len() - 1] - m[0]) / (m.len() - 1) as f64)
}


/// Image-fidelity metrics computed from the three stored curves alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingMetrics {
    pub pearson_mc_vs_dft: f64,
    pub pearson_cf_vs_dft: f64,
    pub pearson_mc_vs_cf: f64,
    pub rel_l2_mc_vs_cf: f64,
    pub rel_l2_cf_vs_dft: f64,
    /// Regional peak of the closed-form curve over the RMS Monte Carlo residual.
    pub snr: f64,
    pub peak_positions: Vec<f64>,
    pub fringe_period: Option<f64>,
    pub fringe_period_closed_form: Option<f64>,
    pub analysis_center: f64,
    pub analysis_half_width: f64,
    pub region_samples: usize,
}

impl ImagingMetrics {
    pub fn from_curves(
        recovered: &RealField,
        closed_form: &RealField,
        dft: &RealField,
        center: f64,
        half_width: f64,
    ) -> Result<Self> {
        let grid = recovered.grid();
        if closed_form.grid() != grid || dft.grid() != grid {
            return Err(Error::GridMismatch("imaging curves must share one grid".into()));
        }
        let r = region(grid, center, half_width);
        if r.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "analysis region of half-width {half_width:e} m holds {} samples",
                r.len()
            )));
        }
        let mc = &recovered.samples()[r.clone()];
        let cf = &closed_form.samples()[r.clone()];
        let od = &dft.samples()[r.clone()];
        let resid = (mc.iter().zip(cf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / mc.len() as f64).sqrt();
        let cf_peak = cf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            pearson_mc_vs_dft: pearson(mc, od),
            pearson_cf_vs_dft: pearson(cf, od),
            pearson_mc_vs_cf: pearson(mc, cf),
            rel_l2_mc_vs_cf: rel_l2(mc, cf),
            rel_l2_cf_vs_dft: rel_l2(cf, od),
            snr: cf_peak / resid,
            peak_positions: fringe_maxima(recovered, center, half_width),
            fringe_period: fringe_period(recovered, center, half_width),
            fringe_period_closed_form: fringe_period(closed_form, center, half_width),
            analysis_center: center,
            analysis_half_width: half_width,
            region_samples: r.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingReport {
    /// Monte Carlo conditional image `ΔI(x_r)` at the point detector.
    pub recovered: RealField,
    pub oracle_closed_form: RealField,
    pub oracle_dft: RealField,
    pub metrics: ImagingMetrics,
    pub test_position: f64,
    pub geometry_matched: bool,
    pub warnings: Vec<String>,
    pub sampling: Vec<SamplingViolation>,
    pub count: u64,
}

/// Closed-form conditional image and the DFT oracle, without any sampling.
pub fn lensless_closed_form(cfg: &LenslessConfig) -> Result<(RealField, RealField)> {
    cfg.validate()?;
    let (arm_r, arm_t) = cfg.point_detector_arms()?;
    let x_t = cfg.test_position()?;
    let cf = closed_form_dii(&cfg.source.g11_matrix(), &arm_r, &arm_t)?;
    let slice = conditional_column(arm_r.grid_out(), arm_t.grid_out(), &cf, x_t)?;
    let dft = dft_modulus_oracle(&cfg.object, &cfg.geometry, &cfg.grid_ref, x_t, cfg.source_peak())?;
    Ok((slice, dft))
}

pub fn run_lensless(cfg: &LenslessConfig) -> Result<ImagingReport> {
    run_lensless_with(cfg, &cfg.source)
}

/// As [`run_lensless`] but drawing realizations from `sampler`, whose
/// statistics are assumed to match `cfg.source` for the oracles.
pub fn run_lensless_with(cfg: &LenslessConfig, sampler: &dyn FieldSampler) -> Result<ImagingReport> {
    cfg.validate()?;
    let (arm_r, arm_t) = cfg.point_detector_arms()?;
    let x_t = cfg.test_position()?;
    let mc = estimate_correlation(sampler, &arm_r, &arm_t, cfg.realizations, cfg.master_seed)?;
    let recovered = conditional_slice(&mc, x_t)?;
    let (cf, dft) = lensless_closed_form(cfg)?;
    let metrics = ImagingMetrics::from_curves(&recovered, &cf, &dft, x_t, cfg.analysis_half_width)?;
    Ok(ImagingReport {
        recovered,
        oracle_closed_form: cf,
        oracle_dft: dft,
        metrics,
        test_position: x_t,
        geometry_matched: cfg.geometry.is_matched(),
        warnings: cfg.warnings(),
        sampling: cfg.sampling_violations()?,
        count: mc.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityCheck {
    /// Largest `(max - min)` along a line `x_t - x_r = const`, relative to
    /// the maximum of the central region.
    pub max_deviation: f64,
    pub diagonals: usize,
}

/// Measures how far the closed-form correlation departs from a function of
/// `x_t - x_r` alone over the central half of both detector grids.
pub fn difference_coordinate_check(cfg: &LenslessConfig) -> Result<StationarityCheck> {
    cfg.validate()?;
    let (gr, gt) = (cfg.grid_ref, cfg.grid_test);
    if (gr.dx() - gt.dx()).abs() > 1e-12 * gr.dx() {
        return Err(Error::GridMismatch(format!(
            "difference-coordinate check needs equal spacings, got {:e} and {:e}",
            gr.dx(),
            gt.dx()
        )));
    }
    let (arm_r, arm_t) = cfg.arms()?;
    let d = closed_form_dii(&cfg.source.g11_matrix(), &arm_r, &arm_t)?;
    Ok(anti_diagonal_variation(&gr, &gt, &d))
}

fn anti_diagonal_variation(gr: &Grid1D, gt: &Grid1D, d: &Array2<f64>) -> StationarityCheck {
    let mid = |g: &Grid1D| g.x0() + 0.5 * g.span();
    let rr = region(gr, mid(gr), gr.span() / 4.0);
    let rt = region(gt, mid(gt), gt.span() / 4.0);
    let peak = rr
        .clone()
        .flat_map(|i| rt.clone().map(move |j| (i, j)))
        .map(|ix| d[ix])
        .fold(0.0, f64::max);
    let mut lines: std::collections::BTreeMap<isize, (f64, f64, usize)> = Default::default();
    for i in rr.clone() {
        for j in rt.clone() {
            let e = lines.entry(j as isize - i as isize).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
            e.0 = e.0.min(d[[i, j]]);
            e.1 = e.1.max(d[[i, j]]);
            e.2 += 1;
        }
    }
    let mut max_deviation: f64 = 0.0;
    let mut diagonals = 0;
    for (lo, hi, n) in lines.into_values() {
        if n >= 2 && peak > 0.0 {
            diagonals += 1;
            max_deviation = max_deviation.max((hi - lo) / peak);
        }
    }
    StationarityCheck {
        max_deviation,
        diagonals,
    }
}

/// Full-plane Monte Carlo against the closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub result: CorrelationResult,
    pub closed_form: Array2<f64>,
    pub metrics: CorrelationMetrics,
    pub warnings: Vec<String>,
    pub sampling: Vec<SamplingViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMetrics {
    pub rel_l2_mc_vs_cf: f64,
    /// Restricted to cells where the closed form is at least half its maximum.
    pub rel_l2_peak_region: f64,
    pub peak_region_cells: usize,
    /// Largest `dII / (<I_r><I_t>)` of the closed form, from the first moments
    /// of the Monte Carlo run.
    pub max_visibility: f64,
    pub min_dii: f64,
}

/// Cells where `closed_form >= 0.5 * max(closed_form)`.
pub fn peak_region(closed_form: &Array2<f64>) -> Vec<(usize, usize)> {
    let max = closed_form.iter().copied().fold(0.0, f64::max);
    closed_form
        .indexed_iter()
        .filter(|(_, &v)| v >= 0.5 * max)
        .map(|(ix, _)| ix)
        .collect()
}

pub fn correlation_metrics(result: &CorrelationResult, closed_form: &Array2<f64>) -> CorrelationMetrics {
    let mc: Vec<f64> = result.dii.iter().copied().collect();
    let cf: Vec<f64> = closed_form.iter().copied().collect();
    let cells = peak_region(closed_form);
    let mc_p: Vec<f64> = cells.iter().map(|&ix| result.dii[ix]).collect();
    let cf_p: Vec<f64> = cells.iter().map(|&ix| closed_form[ix]).collect();
    let outer = result.outer_means();
    let max_visibility = closed_form
        .indexed_iter()
        .filter(|(ix, _)| outer[*ix] > 0.0)
        .map(|(ix, v)| v / outer[ix])
        .fold(0.0, f64::max);
    CorrelationMetrics {
        rel_l2_mc_vs_cf: rel_l2(&mc, &cf),
        rel_l2_peak_region: rel_l2(&mc_p, &cf_p),
        peak_region_cells: cells.len(),
        max_visibility,
        min_dii: result.min_dii,
    }
}

pub fn run_raw_correlation(cfg: &LenslessConfig) -> Result<CorrelationReport> {
    cfg.validate()?;
    let (arm_r, arm_t) = cfg.arms()?;
    let result = estimate_correlation(&cfg.source, &arm_r, &arm_t, cfg.realizations, cfg.master_seed)?;
    let closed_form = closed_form_dii(&cfg.source.g11_matrix(), &arm_r, &arm_t)?;
    let metrics = correlation_metrics(&result, &closed_form);
    Ok(CorrelationReport {
        result,
        closed_form,
        metrics,
        warnings: cfg.warnings(),
        sampling: cfg.sampling_violations()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherentControlReport {
    pub result: CorrelationResult,
    /// `dII / (<I_r><I_t>)` with `NaN` where the means vanish.
    pub normalized: Array2<f64>,
    /// Normalized correlation at the point detector.
    pub normalized_slice: RealField,
    pub metrics: CoherentMetrics,
    pub warnings: Vec<String>,
    pub sampling: Vec<SamplingViolation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentMetrics {
    pub normalized_mean: f64,
    pub normalized_min: f64,
    pub normalized_max: f64,
    /// `(max - min) / mean` of the normalized correlation.
    pub normalized_spread: f64,
    pub cells: usize,
}

/// Cells whose product of means is below this fraction of the largest are
/// excluded from the normalized statistics.
pub const COHERENT_MEAN_FLOOR: f64 = 1e-6;

/// Replaces the source by a single coherent mode with the same mean
/// intensity profile and runs the full-plane estimator.
pub fn run_coherent_control(cfg: &LenslessConfig) -> Result<CoherentControlReport> {
    cfg.validate()?;
    let source = SourceSpec::coherent_matching(cfg.source.profile().clone())?;
    let (arm_r, arm_t) = cfg.arms()?;
    let result = estimate_correlation(&source, &arm_r, &arm_t, cfg.realizations, cfg.master_seed)?;
    let normalized = result.normalized_dii(COHERENT_MEAN_FLOOR);
    let finite: Vec<f64> = normalized.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InvalidParameter("coherent control has no illuminated cells".into()));
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let j = cfg.test_index()?;
    let slice: Vec<f64> = normalized.column(j).iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    Ok(CoherentControlReport {
        normalized_slice: RealField::new(cfg.grid_ref, slice)?,
        metrics: CoherentMetrics {
            normalized_mean: mean,
            normalized_min: min,
            normalized_max: max,
            normalized_spread: (max - min) / mean,
            cells: finite.len(),
        },
        result,
        normalized,
        warnings: cfg.warnings(),
        sampling: cfg.sampling_violations()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationReport {
    pub integrated: CorrelationResult,
    pub single_shot: CorrelationResult,
    pub metrics: IntegrationMetrics,
    pub warnings: Vec<String>,
    pub sampling: Vec<SamplingViolation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationMetrics {
    pub shots_per_gate: u64,
    pub gates: u64,
    /// Mean single-shot `dII` over the closed-form peak region divided by the
    /// same mean for the integrated run; ideally `shots_per_gate`.
    pub peak_ratio: f64,
    /// Relative L2 distance between the max-normalized matrices.
    pub shape_rel_l2: f64,
    /// Three times the statistical spread expected for `shape_rel_l2`.
    pub shape_tolerance: f64,
}

/// Slow detectors: `shots_per_gate` speckle shots per gate, compared against
/// single-shot gates of the same count.
pub fn run_detector_integration(cfg: &LenslessConfig, shots_per_gate: u64) -> Result<IntegrationReport> {
    cfg.validate()?;
    let (arm_r, arm_t) = cfg.arms()?;
    let gates = cfg.realizations;
    let integrated = detector_integrated_correlation(&cfg.source, &arm_r, &arm_t, shots_per_gate, gates, cfg.master_seed)?;
    let single_shot = detector_integrated_correlation(&cfg.source, &arm_r, &arm_t, 1, gates, cfg.master_seed)?;
    let cf = closed_form_dii(&cfg.source.g11_matrix(), &arm_r, &arm_t)?;
    let cells = peak_region(&cf);
    let region_mean = |m: &Array2<f64>| cells.iter().map(|&ix| m[ix]).sum::<f64>() / cells.len() as f64;
    let peak_ratio = region_mean(&single_shot.dii) / region_mean(&integrated.dii);

    let normalize = |m: &Array2<f64>| {
        let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m.iter().map(|v| v / max).collect::<Vec<_>>()
    };
    let (sk, s1) = (normalize(&integrated.dii), normalize(&single_shot.dii));
    let shape_rel_l2 = rel_l2(&sk, &s1);

    // spread from 10 blocks of each run
    let groups = 10;
    let per_group = (gates / groups).max(2);
    let ek = grouped_dii(&cfg.source, &arm_r, &arm_t, groups, per_group, shots_per_gate, cfg.master_seed)?;
    let e1 = grouped_dii(&cfg.source, &arm_r, &arm_t, groups, per_group, 1, cfg.master_seed)?;
    let max_k = integrated.dii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_1 = single_shot.dii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = (groups * per_group) as f64 / gates as f64;
    let var: f64 = ek
        .stderr
        .iter()
        .zip(&e1.stderr)
        .map(|(a, b)| scale * ((a / max_k).powi(2) + (b / max_1).powi(2)))
        .sum();
    let norm: f64 = s1.iter().map(|v| v * v).sum();
    Ok(IntegrationReport {
        integrated,
        single_shot,
        metrics: IntegrationMetrics {
            shots_per_gate,
            gates,
            peak_ratio,
            shape_rel_l2,
            shape_tolerance: 3.0 * (var / norm).sqrt(),
        },
        warnings: cfg.warnings(),
        sampling: cfg.sampling_violations()?,
    })
}
