//! Paraxial free-space impulse responses and arm response matrices.
//!
//! The free-space kernel over a distance `d` is
//!
//! ```text
//! h_d(x, x') = e^{-ikd} / sqrt(-iλd) · exp(-iπ (x - x')² / (λd)),   k = 2π/λ
//! ```
//!
//! which is the one-transverse-dimension form of the Fresnel kernel with the
//! `e^{-ikd}` phase convention. Its amplitude is `1/sqrt(λ|d|)`, and for any
//! `a`, `b` with `a + b != 0` it satisfies `∫ h_a(x, y) h_b(y, z) dy = h_{a+b}(x, z)`,
//! including negative legs. Quadrature is the midpoint rule: each sample
//! carries weight `dx` of its own grid.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ComplexField, Grid1D};

/// Wavelength and arm distances, all in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub wavelength: f64,
    /// Source to object.
    pub d1: f64,
    /// Object to test detector.
    pub d2: f64,
    /// Source to reference detector.
    pub dr: f64,
}

impl Geometry {
    pub fn new(wavelength: f64, d1: f64, d2: f64, dr: f64) -> Result<Self> {
        let g = Self {
            wavelength,
            d1,
            d2,
            dr,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("d1", self.d1),
            ("d2", self.d2),
            ("dr", self.dr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGeometry(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        std::f64::consts::TAU / self.wavelength
    }

    /// Whether the reference path equals the object path, `dr = d1 + d2`.
    pub fn is_matched(&self) -> bool {
        (self.dr - (self.d1 + self.d2)).abs() <= 1e-12 * (self.d1 + self.d2)
    }

    /// Same geometry with `dr` set to `d1 + d2`.
    pub fn matched(&self) -> Self {
        Self {
            dr: self.d1 + self.d2,
            ..*self
        }
    }
}

/// Complex transmittance of the object plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    t: ComplexField,
}

impl ObjectSpec {
    pub fn new(t: ComplexField) -> Result<Self> {
        if let Some(i) = t.samples().iter().position(|z| z.norm() > 1.0 + 1e-12) {
            return Err(Error::InvalidObject(format!(
                "|t| = {} exceeds 1 at index {i}",
                t.samples()[i].norm()
            )));
        }
        Ok(Self { t })
    }

    /// Opaque screen with fully transmitting slits `(center, width)`.
    /// A sample is open when `|x - center| <= width / 2`.
    pub fn slits(grid: Grid1D, slits: &[(f64, f64)]) -> Result<Self> {
        if let Some(&(c, w)) = slits.iter().find(|(c, w)| !(w.is_finite() && *w > 0.0 && c.is_finite())) {
            return Err(Error::InvalidObject(format!("bad slit at {c} of width {w}")));
        }
        let tol = 1e-9 * grid.dx();
        Self::new(ComplexField::from_fn(grid, |x| {
            let open = slits.iter().any(|&(c, w)| (x - c).abs() <= w / 2.0 + tol);
            Complex64::new(if open { 1.0 } else { 0.0 }, 0.0)
        })?)
    }

    pub fn single_slit(grid: Grid1D, width: f64) -> Result<Self> {
        Self::slits(grid, &[(0.0, width)])
    }

    /// Two slits of equal `width` whose centers are `separation` apart.
    pub fn double_slit(grid: Grid1D, width: f64, separation: f64) -> Result<Self> {
        Self::slits(grid, &[(-separation / 2.0, width), (separation / 2.0, width)])
    }

    pub fn transparent(grid: Grid1D) -> Self {
        Self {
            t: ComplexField::from_fn(grid, |_| Complex64::new(1.0, 0.0)).expect("finite"),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        self.t.grid()
    }

    pub fn transmittance(&self) -> &ComplexField {
        &self.t
    }

    /// Width between the outermost samples with non-zero transmittance.
    pub fn support_extent(&self) -> f64 {
        let s = self.t.samples();
        match (s.iter().position(|z| z.norm() > 0.0), s.iter().rposition(|z| z.norm() > 0.0)) {
            (Some(a), Some(b)) => (b - a + 1) as f64 * self.grid().dx(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmLabel {
    Reference,
    Test,
    FreeSpace,
}

/// A sampling-criterion failure on one propagation leg:
/// `dx <= λ|d| / extent(opposite grid)` on either side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingViolation {
    pub leg: String,
    pub distance: f64,
    pub side: String,
    pub dx: f64,
    pub limit: f64,
}

impl std::fmt::Display for SamplingViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} leg (d = {:e} m): {} spacing {:e} m exceeds limit {:e} m",
            self.leg, self.distance, self.side, self.dx, self.limit
        )
    }
}

pub fn check_sampling(
    leg: &str,
    d: f64,
    wavelength: f64,
    grid_in: &Grid1D,
    grid_out: &Grid1D,
) -> Vec<SamplingViolation> {
    let lz = wavelength * d.abs();
    [("input", grid_in, grid_out), ("output", grid_out, grid_in)]
        .into_iter()
        .filter_map(|(side, g, opposite)| {
            let limit = lz / opposite.extent();
            (g.dx() > limit).then(|| SamplingViolation {
                leg: leg.to_string(),
                distance: d,
                side: side.to_string(),
                dx: g.dx(),
                limit,
            })
        })
        .collect()
}

/// Kernel matrix `entry(i, j) = h_d(x_in_i, x_out_j)`.
pub fn fresnel_kernel(d: f64, wavelength: f64, grid_in: &Grid1D, grid_out: &Grid1D) -> Result<Array2<Complex64>> {
    if d == 0.0 {
        return Err(Error::ZeroDistance);
    }
    if !(d.is_finite() && wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "kernel needs finite d and positive wavelength, got d = {d}, λ = {wavelength}"
        )));
    }
    let k = std::f64::consts::TAU / wavelength;
    // (k d) mod 2π keeps the carrier phase accurate for long distances.
    let carrier = Complex64::from_polar(1.0, -(k * d).rem_euclid(std::f64::consts::TAU));
    let prefactor = carrier / (Complex64::new(0.0, -wavelength * d)).sqrt();
    let chirp = std::f64::consts::PI / (wavelength * d);
    let xin: Vec<f64> = grid_in.coordinates().collect();
    let xout: Vec<f64> = grid_out.coordinates().collect();
    Ok(Array2::from_shape_fn((xin.len(), xout.len()), |(i, j)| {
        let r = xin[i] - xout[j];
        prefactor * Complex64::from_polar(1.0, -chirp * r * r)
    }))
}

/// Discretized impulse response from a source grid to a detector grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResponse {
    grid_in: Grid1D,
    grid_out: Grid1D,
    h: Array2<Complex64>,
    label: ArmLabel,
    wavelength: f64,
    distances: Vec<f64>,
    sampling: Vec<SamplingViolation>,
}

impl ArmResponse {
    /// Single free-space leg; any non-zero `d`, including negative.
    pub fn free_space(d: f64, wavelength: f64, grid_in: Grid1D, grid_out: Grid1D) -> Result<Self> {
        let h = fresnel_kernel(d, wavelength, &grid_in, &grid_out)?;
        Ok(Self {
            grid_in,
            grid_out,
            h,
            label: ArmLabel::FreeSpace,
            wavelength,
            distances: vec![d],
            sampling: check_sampling("free-space", d, wavelength, &grid_in, &grid_out),
        })
    }

    /// Wraps an existing response matrix of shape `(n_in, n_out)`.
    pub fn from_matrix(
        grid_in: Grid1D,
        grid_out: Grid1D,
        h: Array2<Complex64>,
        label: ArmLabel,
        wavelength: f64,
        distances: Vec<f64>,
    ) -> Result<Self> {
        if h.dim() != (grid_in.len(), grid_out.len()) {
            return Err(Error::GridMismatch(format!(
                "response of shape {:?} between grids of {} and {} samples",
                h.dim(),
                grid_in.len(),
                grid_out.len()
            )));
        }
        if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidField("non-finite response entry".into()));
        }
        Ok(Self {
            grid_in,
            grid_out,
            h,
            label,
            wavelength,
            distances,
            sampling: Vec::new(),
        })
    }

    pub fn grid_in(&self) -> &Grid1D {
        &self.grid_in
    }

    pub fn grid_out(&self) -> &Grid1D {
        &self.grid_out
    }

    pub fn matrix(&self) -> ArrayView2<'_, Complex64> {
        self.h.view()
    }

    pub fn label(&self) -> ArmLabel {
        self.label
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn sampling_violations(&self) -> &[SamplingViolation] {
        &self.sampling
    }

    /// Keeps output samples `start..start + len` (at least two). Sampling flags
    /// of the full arm are retained.
    pub fn restrict_output(&self, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > self.grid_out.len() {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                n: self.grid_out.len(),
            });
        }
        let grid_out = Grid1D::new(len, self.grid_out.dx(), self.grid_out.coordinate(start))?;
        Ok(Self {
            grid_out,
            h: self.h.slice(ndarray::s![.., start..start + len]).to_owned(),
            ..self.clone()
        })
    }

    /// Propagates a batch of fields stored as rows, `out = dx_in · E · h`.
    pub fn propagate_rows(&self, fields: ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
        if fields.ncols() != self.grid_in.len() {
            return Err(Error::GridMismatch(format!(
                "fields of {} samples into an arm expecting {}",
                fields.ncols(),
                self.grid_in.len()
            )));
        }
        let mut out = fields.dot(&self.h);
        let w = Complex64::new(self.grid_in.dx(), 0.0);
        out.mapv_inplace(|z| z * w);
        Ok(out)
    }
}

/// Reference arm: free space from the source to the reference detector over `dr`.
pub fn reference_arm(geom: &Geometry, grid_src: Grid1D, grid_ref: Grid1D) -> Result<ArmResponse> {
    geom.validate()?;
    let mut arm = ArmResponse::free_space(geom.dr, geom.wavelength, grid_src, grid_ref)?;
    arm.label = ArmLabel::Reference;
    for v in &mut arm.sampling {
        v.leg = "source-reference".into();
    }
    Ok(arm)
}

/// Test arm: free space over `d1`, the object transmittance, free space over `d2`.
///
/// `h = A · diag(t · dx_obj) · B` with `A = h_{d1}(source, object)` and
/// `B = h_{d2}(object, test)`. Opaque object samples contribute nothing and
/// are skipped.
pub fn test_arm(geom: &Geometry, grid_src: Grid1D, object: &ObjectSpec, grid_test: Grid1D) -> Result<ArmResponse> {
    geom.validate()?;
    let grid_obj = *object.grid();
    let mut sampling = check_sampling("source-object", geom.d1, geom.wavelength, &grid_src, &grid_obj);
    sampling.extend(check_sampling("object-test", geom.d2, geom.wavelength, &grid_obj, &grid_test));

    let t = object.transmittance().samples();
    let open: Vec<usize> = (0..t.len()).filter(|&i| t[i].norm() > 0.0).collect();
    let h = if open.is_empty() {
        Array2::zeros((grid_src.len(), grid_test.len()))
    } else {
        let a = fresnel_kernel(geom.d1, geom.wavelength, &grid_src, &grid_obj)?;
        let b = fresnel_kernel(geom.d2, geom.wavelength, &grid_obj, &grid_test)?;
        let dx = grid_obj.dx();
        let a_open = Array2::from_shape_fn((grid_src.len(), open.len()), |(i, k)| a[[i, open[k]]]);
        let b_open = Array2::from_shape_fn((open.len(), grid_test.len()), |(k, j)| t[open[k]] * dx * b[[open[k], j]]);
        a_open.dot(&b_open)
    };
    Ok(ArmResponse {
        grid_in: grid_src,
        grid_out: grid_test,
        h,
        label: ArmLabel::Test,
        wavelength: geom.wavelength,
        distances: vec![geom.d1, geom.d2],
        sampling,
    })
}

/// `out_j = Σ_i dx_in · E_i · h[i][j]` on the arm's output grid.
pub fn propagate(field: &ComplexField, arm: &ArmResponse) -> Result<ComplexField> {
    if field.grid() != arm.grid_in() {
        return Err(Error::GridMismatch(
            "field grid differs from the arm's input grid".into(),
        ));
    }
    let e = Array1::from(field.samples().to_vec());
    let w = Complex64::new(arm.grid_in().dx(), 0.0);
    let out = e.dot(&arm.h).mapv(|z| z * w);
    ComplexField::new(*arm.grid_out(), out.to_vec())
}

/// Outcome of propagating a Gaussian beam over two legs against one leg of
/// the summed distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionCheck {
    pub d_first: f64,
    pub d_second: f64,
    /// `‖two-leg − one-leg‖ / ‖one-leg‖` on the output grid.
    pub rel_l2: f64,
    pub sampling_violations: usize,
}

/// Propagates an apodized (Gaussian) beam over `d_first` then `d_second` and
/// directly over `d_first + d_second`.
///
/// Grids are derived from the wavelength and distances: the waist has a
/// Rayleigh range of a tenth of the total distance, samples are a twentieth
/// of the waist, and the intermediate plane covers four beam radii at the
/// widest leg.
pub fn composition_check(wavelength: f64, d_first: f64, d_second: f64) -> Result<CompositionCheck> {
    let total = d_first + d_second;
    if total == 0.0 || d_first == 0.0 || d_second == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let z_r = total.abs() / 10.0;
    let w0 = (z_r * wavelength / std::f64::consts::PI).sqrt();
    let dx = w0 / 20.0;
    let d_max = d_first.abs().max(d_second.abs()).max(total.abs());
    let w_max = w0 * (1.0 + (d_max / z_r).powi(2)).sqrt();
    let n_mid = ((8.0 * w_max / dx).ceil() as usize).max(256) | 1;
    let g_in = Grid1D::centered(257, dx)?;
    let g_mid = Grid1D::centered(n_mid, dx)?;
    let g_out = g_in;
    let beam = ComplexField::from_fn(g_in, |x| Complex64::new((-(x / w0).powi(2)).exp(), 0.0))?;
    let a = ArmResponse::free_space(d_first, wavelength, g_in, g_mid)?;
    let b = ArmResponse::free_space(d_second, wavelength, g_mid, g_out)?;
    let c = ArmResponse::free_space(total, wavelength, g_in, g_out)?;
    let two = propagate(&propagate(&beam, &a)?, &b)?;
    let one = propagate(&beam, &c)?;
    let num: f64 = two.samples().iter().zip(one.samples()).map(|(p, q)| (p - q).norm_sqr()).sum();
    let den: f64 = one.samples().iter().map(|q| q.norm_sqr()).sum();
    Ok(CompositionCheck {
        d_first,
        d_second,
        rel_l2: (num / den).sqrt(),
        sampling_violations: a.sampling.len() + b.sampling.len() + c.sampling.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn gaussian(grid: Grid1D, w0: f64, center: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x| c((-((x - center) / w0).powi(2)).exp(), 0.0)).unwrap()
    }

    #[test]
    fn kernel_on_axis_and_magnitude() {
        let lambda = 0.5e-6;
        let d = 0.1;
        let g = Grid1D::centered(5, 1e-5).unwrap();
        let k = fresnel_kernel(d, lambda, &g, &g).unwrap();
        let pre = Complex64::from_polar(1.0, -(2.0 * PI / lambda) * d) / c(0.0, -lambda * d).sqrt();
        for i in 0..5 {
            assert!((k[[i, i]] - pre).norm() < 1e-9 * pre.norm());
        }
        let mag = 1.0 / (lambda * d).sqrt();
        assert!(k.iter().all(|z| (z.norm() - mag).abs() < 1e-9 * mag));
    }

    #[test]
    fn kernel_quadratic_phase_argument() {
        // λ = 0.5 µm, d = 0.1 m, separation 0.5 mm: argument -π(2.5e-7)/(5e-8) = -5π.
        let lambda = 0.5e-6;
        let d = 0.1;
        let a = Grid1D::new(2, 1e-3, 0.0).unwrap();
        let b = Grid1D::new(2, 1e-3, 0.5e-3).unwrap();
        let k = fresnel_kernel(d, lambda, &a, &b).unwrap();
        let on_axis = fresnel_kernel(d, lambda, &a, &a).unwrap()[[0, 0]];
        // entry(0, 0): x_in = 0, x_out = 0.5 mm
        let ratio = k[[0, 0]] / on_axis;
        let expected = Complex64::from_polar(1.0, -5.0 * PI);
        assert!((ratio - expected).norm() < 1e-9);
    }

    #[test]
    fn kernel_rejects_zero_distance() {
        let g = Grid1D::centered(4, 1e-6).unwrap();
        assert!(matches!(fresnel_kernel(0.0, 1e-6, &g, &g), Err(Error::ZeroDistance)));
        assert!(fresnel_kernel(-0.1, 1e-6, &g, &g).is_ok());
    }

    #[test]
    fn reference_arm_properties() {
        let geom = Geometry::new(0.5e-6, 0.1, 0.1, 0.2).unwrap();
        let g = Grid1D::centered(32, 5e-6).unwrap();
        let arm = reference_arm(&geom, g, g).unwrap();
        let h = arm.matrix();
        let mag = 1.0 / (0.5e-6f64 * 0.2).sqrt();
        for i in 0..32 {
            for j in 0..32 {
                assert!((h[[i, j]] - h[[j, i]]).norm() < 1e-9 * mag);
                assert!((h[[i, j]].norm() - mag).abs() < 1e-9 * mag);
            }
        }
        assert_eq!(arm.label(), ArmLabel::Reference);

        let out = Grid1D::centered(7, 2e-5).unwrap();
        let arm = reference_arm(&geom, g, out).unwrap();
        let direct = fresnel_kernel(0.2, 0.5e-6, &g, &out).unwrap();
        for j in 0..7 {
            for i in 0..32 {
                assert_eq!(arm.matrix()[[i, j]], direct[[i, j]]);
            }
        }
        assert!(reference_arm(&Geometry { dr: -0.2, ..geom }, g, g).is_err());
    }

    #[test]
    fn opaque_object_gives_zero_test_arm() {
        let geom = Geometry::new(0.5e-6, 0.1, 0.1, 0.2).unwrap();
        let g = Grid1D::centered(16, 5e-6).unwrap();
        let obj = ObjectSpec::slits(g, &[]).unwrap();
        let arm = test_arm(&geom, g, &obj, g).unwrap();
        assert!(arm.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_open_sample_is_one_term_quadrature() {
        let geom = Geometry::new(0.5e-6, 0.1, 0.15, 0.25).unwrap();
        let gs = Grid1D::centered(12, 5e-6).unwrap();
        let go = Grid1D::centered(9, 3e-6).unwrap();
        let gt = Grid1D::centered(10, 8e-6).unwrap();
        let mut t = vec![c(0.0, 0.0); 9];
        t[6] = c(0.6, 0.3);
        let obj = ObjectSpec::new(ComplexField::new(go, t.clone()).unwrap()).unwrap();
        let arm = test_arm(&geom, gs, &obj, gt).unwrap();
        let a = fresnel_kernel(0.1, 0.5e-6, &gs, &go).unwrap();
        let b = fresnel_kernel(0.15, 0.5e-6, &go, &gt).unwrap();
        for i in 0..12 {
            for j in 0..10 {
                let expected = a[[i, 6]] * t[6] * 3e-6 * b[[6, j]];
                assert!((arm.matrix()[[i, j]] - expected).norm() <= 1e-12 * expected.norm());
            }
        }
    }

    #[test]
    fn transparent_test_arm_matches_combined_kernel() {
        let lambda = 0.5e-6;
        let geom = Geometry::new(lambda, 0.05, 0.05, 0.1).unwrap();
        let gs = Grid1D::centered(64, 4e-6).unwrap();
        let gt = Grid1D::centered(64, 4e-6).unwrap();
        // object grid much wider than the light cone
        let go = Grid1D::centered(8192, 1.25e-6).unwrap();
        let arm = test_arm(&geom, gs, &ObjectSpec::transparent(go), gt).unwrap();
        let direct = fresnel_kernel(0.1, lambda, &gs, &gt).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 16..48 {
            for j in 16..48 {
                num += (arm.matrix()[[i, j]] - direct[[i, j]]).norm_sqr();
                den += direct[[i, j]].norm_sqr();
            }
        }
        assert!((num / den).sqrt() <= 1e-2, "{}", (num / den).sqrt());
    }

    #[test]
    fn propagation_is_linear_and_phase_covariant() {
        let lambda = 0.5e-6;
        let g = Grid1D::centered(40, 3e-6).unwrap();
        let arm = ArmResponse::free_space(0.05, lambda, g, g).unwrap();
        let e1 = gaussian(g, 2e-5, 1e-5);
        let e2 = ComplexField::from_fn(g, |x| c(0.0, (x * 4e4).sin())).unwrap();
        let (a, b) = (c(0.3, -1.2), c(2.0, 0.5));
        let combo = ComplexField::new(
            g,
            e1.samples().iter().zip(e2.samples()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let p1 = propagate(&e1, &arm).unwrap();
        let p2 = propagate(&e2, &arm).unwrap();
        let pc = propagate(&combo, &arm).unwrap();
        let expected: Vec<Complex64> = p1.samples().iter().zip(p2.samples()).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_l2(pc.samples(), &expected) < 1e-13);

        let phase = Complex64::from_polar(1.0, 1.1);
        let rotated = propagate(&e1.scaled(phase), &arm).unwrap();
        assert!(rel_l2(rotated.samples(), p1.scaled(phase).samples()) < 1e-13);

        let zero = propagate(&ComplexField::zeros(g), &arm).unwrap();
        assert!(zero.samples().iter().all(|z| z.norm() == 0.0));
        let other = Grid1D::centered(41, 3e-6).unwrap();
        assert!(propagate(&ComplexField::zeros(other), &arm).is_err());
    }

    #[test]
    fn gaussian_beam_width_matches_paraxial_formula() {
        let (lambda, d, w0) = (0.5e-6, 0.1, 50e-6);
        let gin = Grid1D::centered(256, 2e-6).unwrap();
        let gout = Grid1D::centered(512, 5e-6).unwrap();
        let arm = ArmResponse::free_space(d, lambda, gin, gout).unwrap();
        assert!(arm.sampling_violations().is_empty());
        let out = crate::fields::intensity(&propagate(&gaussian(gin, w0, 0.0), &arm).unwrap());
        let total: f64 = out.samples().iter().sum();
        let second: f64 = gout.coordinates().zip(out.samples()).map(|(x, v)| x * x * v).sum::<f64>() / total;
        // intensity exp(-2x²/w²) has second moment w²/4
        let measured = 2.0 * second.sqrt();
        let expected = w0 * (1.0 + (lambda * d / (PI * w0 * w0)).powi(2)).sqrt();
        assert!((measured / expected - 1.0).abs() < 0.01, "{measured} vs {expected}");
    }

    #[test]
    fn energy_is_conserved() {
        let (lambda, d) = (0.5e-6, 0.1);
        let gin = Grid1D::centered(256, 2e-6).unwrap();
        let gout = Grid1D::centered(512, 5e-6).unwrap();
        let arm = ArmResponse::free_space(d, lambda, gin, gout).unwrap();
        let e = gaussian(gin, 40e-6, 20e-6);
        let out = propagate(&e, &arm).unwrap();
        assert!((out.power() / e.power() - 1.0).abs() < 5e-3);
    }

    #[test]
    fn sampling_criterion_flags_aliasing() {
        let (lambda, d) = (0.5e-6, 0.1);
        let fine = Grid1D::centered(256, 2e-6).unwrap();
        let coarse = Grid1D::centered(64, 100e-6).unwrap();
        assert!(check_sampling("leg", d, lambda, &fine, &fine).is_empty());
        let v = check_sampling("leg", d, lambda, &fine, &coarse);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].side, "output");
        assert!(v[0].limit < 100e-6);
    }

    #[test]
    fn object_constructors() {
        let g = Grid1D::centered(512, 0.6e-3 / 512.0).unwrap();
        let obj = ObjectSpec::double_slit(g, 20e-6, 100e-6).unwrap();
        let open = obj.transmittance().samples().iter().filter(|z| z.re == 1.0).count();
        assert!((30..=36).contains(&open), "{open}");
        assert!((obj.support_extent() - 120e-6).abs() < 3.0 * g.dx());
        let over = ComplexField::new(Grid1D::centered(2, 1.0).unwrap(), vec![c(1.0, 0.1); 2]).unwrap();
        assert!(ObjectSpec::new(over).is_err());
    }

    #[test]
    fn matched_geometry_flag() {
        let g = Geometry::new(0.5e-6, 0.1, 0.1, 0.2).unwrap();
        assert!(g.is_matched());
        assert!(!Geometry { dr: 0.22, ..g }.is_matched());
        assert!(Geometry { dr: 0.22, ..g }.matched().is_matched());
        assert!(Geometry::new(0.0, 0.1, 0.1, 0.2).is_err());
    }

    #[test]
    fn two_legs_compose_with_negative_leg() {
        for (a, b) in [(0.04, 0.06), (0.15, -0.05), (-0.05, 0.15)] {
            let c = composition_check(0.5e-6, a, b).unwrap();
            assert!(c.rel_l2 <= 1e-3, "{a} {b}: {}", c.rel_l2);
            assert_eq!(c.sampling_violations, 0);
        }
        assert!(composition_check(0.5e-6, 0.1, -0.1).is_err());
    }
}
