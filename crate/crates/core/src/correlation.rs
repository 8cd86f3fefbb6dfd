//! Intensity-correlation estimators and their closed-form counterparts.
//!
//! The Monte Carlo side accumulates `Σ I_r`, `Σ I_t` and `Σ I_r ⊗ I_t` over
//! speckle realizations. The closed-form side evaluates, for a source with
//! mutual coherence `G(a, b) = <E_a* E_b>`,
//!
//! ```text
//! <I_k(j)>        = Σ_{i,i'} dx² conj(h_k[i][j]) G(i, i') h_k[i'][j]
//! A(j_r, j_t)     = Σ_{i,i'} dx² G(i', i) h_r[i][j_r] conj(h_t[i'][j_t])
//! <ΔI_r ΔI_t>     = |A|²
//! <I_r I_t>       = <I_r> <I_t> + |A|²
//! ```
//!
//! For a diagonal (incoherent) `G` the double sum collapses to
//! `A = Σ_i dx I(x_i) h_r[i][j_r] conj(h_t[i][j_t])`.

use ndarray::{s, Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{ComplexField, Grid1D, RealField};
use crate::propagation::ArmResponse;
use crate::source::{CorrelationMatrixG11, FieldSampler};

/// Running sums over realizations; nothing is normalized until [`finalize`].
///
/// [`finalize`]: CorrelationAccumulator::finalize
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulator {
    grid_r: Grid1D,
    grid_t: Grid1D,
    sum_ir: Vec<f64>,
    sum_it: Vec<f64>,
    sum_irit: Array2<f64>,
    count: u64,
}

impl CorrelationAccumulator {
    pub fn new(grid_r: Grid1D, grid_t: Grid1D) -> Self {
        Self {
            grid_r,
            grid_t,
            sum_ir: vec![0.0; grid_r.len()],
            sum_it: vec![0.0; grid_t.len()],
            sum_irit: Array2::zeros((grid_r.len(), grid_t.len())),
            count: 0,
        }
    }

    pub fn grid_r(&self) -> &Grid1D {
        &self.grid_r
    }

    pub fn grid_t(&self) -> &Grid1D {
        &self.grid_t
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum_ir(&self) -> &[f64] {
        &self.sum_ir
    }

    pub fn sum_it(&self) -> &[f64] {
        &self.sum_it
    }

    pub fn sum_irit(&self) -> &Array2<f64> {
        &self.sum_irit
    }

    /// Adds one realization of the two detector fields.
    pub fn accumulate(&mut self, e_r: &ComplexField, e_t: &ComplexField) -> Result<()> {
        if e_r.grid() != &self.grid_r || e_t.grid() != &self.grid_t {
            return Err(Error::GridMismatch(
                "detector fields do not match the accumulator grids".into(),
            ));
        }
        let ir: Vec<f64> = e_r.samples().iter().map(|z| z.norm_sqr()).collect();
        let it: Vec<f64> = e_t.samples().iter().map(|z| z.norm_sqr()).collect();
        self.add_intensities(&ir, &it);
        Ok(())
    }

    /// Adds one realization given directly as detector intensities.
    pub fn accumulate_intensities(&mut self, ir: &[f64], it: &[f64]) -> Result<()> {
        if ir.len() != self.grid_r.len() || it.len() != self.grid_t.len() {
            return Err(Error::GridMismatch(format!(
                "intensities of length ({}, {}) for grids of ({}, {})",
                ir.len(),
                it.len(),
                self.grid_r.len(),
                self.grid_t.len()
            )));
        }
        self.add_intensities(ir, it);
        Ok(())
    }

    fn add_intensities(&mut self, ir: &[f64], it: &[f64]) {
        for (s, v) in self.sum_ir.iter_mut().zip(ir) {
            *s += v;
        }
        for (s, v) in self.sum_it.iter_mut().zip(it) {
            *s += v;
        }
        for (mut row, &a) in self.sum_irit.axis_iter_mut(Axis(0)).zip(ir) {
            let row = row.as_slice_mut().expect("standard layout");
            for (s, &b) in row.iter_mut().zip(it) {
                *s += a * b;
            }
        }
        self.count += 1;
    }

    /// Element-wise addition of another accumulator's sums.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.grid_r != self.grid_r || other.grid_t != self.grid_t {
            return Err(Error::GridMismatch("cannot merge accumulators over different grids".into()));
        }
        for (s, v) in self.sum_ir.iter_mut().zip(&other.sum_ir) {
            *s += v;
        }
        for (s, v) in self.sum_it.iter_mut().zip(&other.sum_it) {
            *s += v;
        }
        self.sum_irit += &other.sum_irit;
        self.count += other.count;
        Ok(())
    }

    pub fn finalize(&self) -> Result<CorrelationResult> {
        if self.count < 2 {
            return Err(Error::InsufficientRealizations {
                required: 2,
                got: self.count,
            });
        }
        let m = self.count as f64;
        let mean_ir: Vec<f64> = self.sum_ir.iter().map(|s| s / m).collect();
        let mean_it: Vec<f64> = self.sum_it.iter().map(|s| s / m).collect();
        let g22 = self.sum_irit.mapv(|s| s / m);
        let mut dii = g22.clone();
        for ((jr, jt), v) in dii.indexed_iter_mut() {
            *v -= mean_ir[jr] * mean_it[jt];
        }
        let min_dii = dii.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(CorrelationResult {
            grid_r: self.grid_r,
            grid_t: self.grid_t,
            mean_ir: RealField::new(self.grid_r, mean_ir)?,
            mean_it: RealField::new(self.grid_t, mean_it)?,
            g22,
            dii,
            count: self.count,
            min_dii,
        })
    }
}

/// Normalized ensemble statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub grid_r: Grid1D,
    pub grid_t: Grid1D,
    pub mean_ir: RealField,
    pub mean_it: RealField,
    /// `<I_r I_t>`, shape `(n_r, n_t)`.
    pub g22: Array2<f64>,
    /// `<ΔI_r ΔI_t> = g22 - <I_r> ⊗ <I_t>`; not clamped.
    pub dii: Array2<f64>,
    pub count: u64,
    pub min_dii: f64,
}

impl CorrelationResult {
    pub fn outer_means(&self) -> Array2<f64> {
        outer(self.mean_ir.samples(), self.mean_it.samples())
    }

    /// `dII / (<I_r> <I_t>)`, with `NaN` where the product of means is below
    /// `floor` times its maximum.
    pub fn normalized_dii(&self, floor: f64) -> Array2<f64> {
        let o = self.outer_means();
        let cutoff = floor * o.iter().copied().fold(0.0, f64::max);
        Array2::from_shape_fn(o.dim(), |ix| {
            if o[ix] > cutoff {
                self.dii[ix] / o[ix]
            } else {
                f64::NAN
            }
        })
    }
}

pub fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn check_closed_form_grids(g11: &CorrelationMatrixG11, arm_r: &ArmResponse, arm_t: &ArmResponse) -> Result<()> {
    if arm_r.grid_in() != g11.grid() || arm_t.grid_in() != g11.grid() {
        return Err(Error::GridMismatch(
            "both arms must start on the source grid of the coherence matrix".into(),
        ));
    }
    Ok(())
}

/// Cross-coherence amplitude `A(j_r, j_t)`; `|A|²` is the fluctuation correlation.
pub fn closed_form_amplitude(
    g11: &CorrelationMatrixG11,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
) -> Result<Array2<Complex64>> {
    check_closed_form_grids(g11, arm_r, arm_t)?;
    let dx = g11.grid().dx();
    let hr = arm_r.matrix();
    let ht = arm_t.matrix();
    if let Some(diag) = g11.as_diagonal() {
        let mut weighted = hr.to_owned();
        for (mut row, &g) in weighted.axis_iter_mut(Axis(0)).zip(diag) {
            let w = Complex64::new(dx * dx * g, 0.0);
            row.mapv_inplace(|z| z * w);
        }
        Ok(weighted.t().dot(&ht.mapv(|z| z.conj())))
    } else {
        let v = g11.as_rank_one().expect("coherence matrix is diagonal or rank one");
        let ur = mode_response(v, dx, arm_r);
        let ut = mode_response(v, dx, arm_t);
        Ok(Array2::from_shape_fn((ur.len(), ut.len()), |(a, b)| ur[a] * ut[b].conj()))
    }
}

/// `dx Σ_i v_i h[i][j]`.
fn mode_response(v: &[Complex64], dx: f64, arm: &ArmResponse) -> Vec<Complex64> {
    let h = arm.matrix();
    (0..h.ncols())
        .map(|j| v.iter().zip(h.column(j)).map(|(a, b)| a * b).sum::<Complex64>() * dx)
        .collect()
}

/// Mean detector intensity `<I_k(j)>` implied by `G` for one arm.
pub fn closed_form_mean_intensity(g11: &CorrelationMatrixG11, arm: &ArmResponse) -> Result<Vec<f64>> {
    if arm.grid_in() != g11.grid() {
        return Err(Error::GridMismatch("arm does not start on the source grid".into()));
    }
    let dx = g11.grid().dx();
    let h = arm.matrix();
    if let Some(diag) = g11.as_diagonal() {
        Ok((0..h.ncols())
            .map(|j| {
                h.column(j)
                    .iter()
                    .zip(diag)
                    .map(|(z, g)| z.norm_sqr() * g)
                    .sum::<f64>()
                    * dx
                    * dx
            })
            .collect())
    } else {
        let v = g11.as_rank_one().expect("coherence matrix is diagonal or rank one");
        Ok(mode_response(v, dx, arm).iter().map(|z| z.norm_sqr()).collect())
    }
}

/// Closed-form `<ΔI_r ΔI_t> = |A|²`.
pub fn closed_form_dii(g11: &CorrelationMatrixG11, arm_r: &ArmResponse, arm_t: &ArmResponse) -> Result<Array2<f64>> {
    Ok(closed_form_amplitude(g11, arm_r, arm_t)?.mapv(|z| z.norm_sqr()))
}

/// Closed-form `<I_r I_t> = <I_r><I_t> + |A|²`.
pub fn closed_form_g22(g11: &CorrelationMatrixG11, arm_r: &ArmResponse, arm_t: &ArmResponse) -> Result<Array2<f64>> {
    let dii = closed_form_dii(g11, arm_r, arm_t)?;
    let mr = closed_form_mean_intensity(g11, arm_r)?;
    let mt = closed_form_mean_intensity(g11, arm_t)?;
    Ok(outer(&mr, &mt) + dii)
}

/// Column of a `(n_r, n_t)` matrix at the test sample nearest `x_t_target`.
pub fn conditional_column(grid_r: &Grid1D, grid_t: &Grid1D, matrix: &Array2<f64>, x_t_target: f64) -> Result<RealField> {
    if matrix.dim() != (grid_r.len(), grid_t.len()) {
        return Err(Error::GridMismatch(format!(
            "matrix of shape {:?} for grids of ({}, {})",
            matrix.dim(),
            grid_r.len(),
            grid_t.len()
        )));
    }
    let j = grid_t
        .nearest_index(x_t_target)
        .ok_or(Error::NoSampleNear { target: x_t_target })?;
    RealField::new(*grid_r, matrix.column(j).to_vec())
}

/// Point-detector slice `ΔI_0(x_r) = dII[:, j*]`.
pub fn conditional_slice(result: &CorrelationResult, x_t_target: f64) -> Result<RealField> {
    conditional_column(&result.grid_r, &result.grid_t, &result.dii, x_t_target)
}

/// Number of realizations drawn per batch. Batch boundaries are fixed
/// multiples of this size, independent of the worker count.
pub const REALIZATIONS_PER_BATCH: u64 = 64;

/// Batches processed concurrently before being folded into the total.
const BATCH_WINDOW: usize = 16;

fn check_arms(sampler: &dyn FieldSampler, arm_r: &ArmResponse, arm_t: &ArmResponse) -> Result<()> {
    if arm_r.grid_in() != sampler.grid() || arm_t.grid_in() != sampler.grid() {
        return Err(Error::GridMismatch("arms must start on the source grid".into()));
    }
    Ok(())
}

/// Accumulates gates `gates.start..gates.end` sequentially, `shots_per_gate`
/// consecutive realizations per gate. Gate `g` uses realization indices
/// `g * K .. (g + 1) * K`, and its intensities are the average over those shots.
pub fn accumulate_gates(
    sampler: &dyn FieldSampler,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
    gates: std::ops::Range<u64>,
    shots_per_gate: u64,
    master_seed: u64,
) -> Result<CorrelationAccumulator> {
    check_arms(sampler, arm_r, arm_t)?;
    if shots_per_gate == 0 {
        return Err(Error::InvalidParameter("shots per gate must be at least 1".into()));
    }
    let mut acc = CorrelationAccumulator::new(*arm_r.grid_out(), *arm_t.grid_out());
    let n_src = sampler.grid().len();
    let gates_per_batch = (REALIZATIONS_PER_BATCH / shots_per_gate).max(1);
    let mut start = gates.start;
    while start < gates.end {
        // align batch ends to multiples of gates_per_batch
        let end = ((start / gates_per_batch + 1) * gates_per_batch).min(gates.end);
        let rows = ((end - start) * shots_per_gate) as usize;
        let mut fields = Array2::<Complex64>::zeros((rows, n_src));
        for (r, mut row) in fields.axis_iter_mut(Axis(0)).enumerate() {
            let index = start * shots_per_gate + r as u64;
            sampler.fill_realization(index, master_seed, row.as_slice_mut().expect("row-major"));
        }
        let er = arm_r.propagate_rows(fields.view())?;
        let et = arm_t.propagate_rows(fields.view())?;
        let k_inv = 1.0 / shots_per_gate as f64;
        let k = shots_per_gate as usize;
        for g in 0..(end - start) as usize {
            let shots = g * k..(g + 1) * k;
            let ir = gate_average(er.slice(s![shots.clone(), ..]), k_inv);
            let it = gate_average(et.slice(s![shots, ..]), k_inv);
            acc.add_intensities(&ir, &it);
        }
        start = end;
    }
    Ok(acc)
}

fn gate_average(fields: ndarray::ArrayView2<'_, Complex64>, k_inv: f64) -> Vec<f64> {
    let mut out = vec![0.0; fields.ncols()];
    for row in fields.axis_iter(Axis(0)) {
        for (o, z) in out.iter_mut().zip(row) {
            *o += z.norm_sqr();
        }
    }
    if k_inv != 1.0 {
        out.iter_mut().for_each(|v| *v *= k_inv);
    }
    out
}

/// Monte Carlo ensemble over `gates` detector gates of `shots_per_gate` shots.
///
/// Batches of contiguous gates are evaluated in parallel on the current rayon
/// pool and folded into the total in batch order, so the sums are bitwise
/// identical for any number of workers.
pub fn ensemble_accumulator(
    sampler: &dyn FieldSampler,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
    gates: u64,
    shots_per_gate: u64,
    master_seed: u64,
) -> Result<CorrelationAccumulator> {
    check_arms(sampler, arm_r, arm_t)?;
    if shots_per_gate == 0 {
        return Err(Error::InvalidParameter("shots per gate must be at least 1".into()));
    }
    let gates_per_batch = (REALIZATIONS_PER_BATCH / shots_per_gate).max(1);
    let batches: Vec<std::ops::Range<u64>> = (0..gates.div_ceil(gates_per_batch))
        .map(|b| b * gates_per_batch..((b + 1) * gates_per_batch).min(gates))
        .collect();
    let mut total = CorrelationAccumulator::new(*arm_r.grid_out(), *arm_t.grid_out());
    for window in batches.chunks(BATCH_WINDOW) {
        let partials = window
            .par_iter()
            .map(|range| accumulate_gates(sampler, arm_r, arm_t, range.clone(), shots_per_gate, master_seed))
            .collect::<Result<Vec<_>>>()?;
        for p in &partials {
            total.merge(p)?;
        }
    }
    Ok(total)
}

/// Plain estimator: one realization per sample of the ensemble.
pub fn estimate_correlation(
    sampler: &dyn FieldSampler,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
    realizations: u64,
    master_seed: u64,
) -> Result<CorrelationResult> {
    ensemble_accumulator(sampler, arm_r, arm_t, realizations, 1, master_seed)?.finalize()
}

/// Slow-detector model: each of `gates` measurements integrates
/// `shots_per_gate` independent speckle shots.
pub fn detector_integrated_correlation(
    sampler: &dyn FieldSampler,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
    shots_per_gate: u64,
    gates: u64,
    master_seed: u64,
) -> Result<CorrelationResult> {
    if gates < 2 {
        return Err(Error::InsufficientRealizations {
            required: 2,
            got: gates,
        });
    }
    ensemble_accumulator(sampler, arm_r, arm_t, gates, shots_per_gate, master_seed)?.finalize()
}

/// Fluctuation correlation with an empirical standard error.
///
/// The ensemble is split into `groups` consecutive blocks of `per_group`
/// gates; the error is the spread of the block estimates divided by
/// `sqrt(groups)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEstimate {
    pub dii: Array2<f64>,
    pub stderr: Array2<f64>,
    pub groups: u64,
    pub per_group: u64,
}

pub fn grouped_dii(
    sampler: &dyn FieldSampler,
    arm_r: &ArmResponse,
    arm_t: &ArmResponse,
    groups: u64,
    per_group: u64,
    shots_per_gate: u64,
    master_seed: u64,
) -> Result<GroupedEstimate> {
    if groups < 2 || per_group < 2 {
        return Err(Error::InsufficientRealizations {
            required: 4,
            got: groups * per_group,
        });
    }
    let blocks = (0..groups)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&g| {
            accumulate_gates(sampler, arm_r, arm_t, g * per_group..(g + 1) * per_group, shots_per_gate, master_seed)?
                .finalize()
                .map(|r| r.dii)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = groups as f64;
    let mut mean = Array2::<f64>::zeros(blocks[0].dim());
    for b in &blocks {
        mean += b;
    }
    mean /= k;
    let mut var = Array2::<f64>::zeros(mean.dim());
    for b in &blocks {
        var.zip_mut_with(&(b - &mean), |v, d| *v += d * d);
    }
    let stderr = var.mapv(|v| (v / (k - 1.0) / k).sqrt());
    Ok(GroupedEstimate {
        dii: mean,
        stderr,
        groups,
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{reference_arm, Geometry};
    use crate::source::SourceSpec;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_setup(n_src: usize) -> (SourceSpec, ArmResponse, ArmResponse) {
        let geom = Geometry::new(0.5e-6, 0.05, 0.05, 0.1).unwrap();
        let gs = Grid1D::centered(n_src, 8e-6).unwrap();
        let gd = Grid1D::centered(9, 40e-6).unwrap();
        let profile = RealField::from_fn(gs, |x| 1.0 + 0.3 * (x * 2e4).cos()).unwrap();
        let spec = SourceSpec::incoherent(profile).unwrap();
        let arm = reference_arm(&geom, gs, gd).unwrap();
        let other = ArmResponse::free_space(0.07, 0.5e-6, gs, gd).unwrap();
        (spec, arm, other)
    }

    #[test]
    fn single_realization_g22_is_outer_product() {
        let g = Grid1D::centered(3, 1.0).unwrap();
        let er = ComplexField::new(g, vec![c(1.0, 0.0), c(0.0, 2.0), c(1.0, 1.0)]).unwrap();
        let et = ComplexField::new(g, vec![c(3.0, 0.0), c(0.0, 0.0), c(0.5, 0.5)]).unwrap();
        let mut acc = CorrelationAccumulator::new(g, g);
        acc.accumulate(&er, &et).unwrap();
        assert!(matches!(acc.finalize(), Err(Error::InsufficientRealizations { got: 1, .. })));
        assert_eq!(acc.sum_irit()[[1, 0]], 4.0 * 9.0);
        assert_eq!(acc.sum_irit()[[2, 2]], 2.0 * 0.5);
        assert_eq!(acc.count(), 1);
    }

    #[test]
    fn constant_intensities_have_no_fluctuation_correlation() {
        let g = Grid1D::centered(4, 1.0).unwrap();
        let e = ComplexField::new(g, vec![c(1.0, 2.0), c(0.5, 0.0), c(0.0, 0.0), c(3.0, -1.0)]).unwrap();
        let mut acc = CorrelationAccumulator::new(g, g);
        for _ in 0..5 {
            acc.accumulate(&e, &e).unwrap();
        }
        let r = acc.finalize().unwrap();
        assert!(r.dii.iter().all(|v| v.abs() <= 1e-12 * 100.0));
    }

    #[test]
    fn merge_of_disjoint_ranges_equals_union() {
        let (spec, arm_r, arm_t) = small_setup(32);
        let whole = accumulate_gates(&spec, &arm_r, &arm_t, 0..300, 1, 5).unwrap();
        let mut a = accumulate_gates(&spec, &arm_r, &arm_t, 0..128, 1, 5).unwrap();
        let b = accumulate_gates(&spec, &arm_r, &arm_t, 128..300, 1, 5).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.count(), whole.count());
        for (x, y) in a.sum_irit().iter().zip(whole.sum_irit()) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        assert!(a.merge(&CorrelationAccumulator::new(Grid1D::centered(2, 1.0).unwrap(), *arm_t.grid_out())).is_err());
    }

    #[test]
    fn ensemble_is_independent_of_pool_size() {
        let (spec, arm_r, arm_t) = small_setup(32);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble_accumulator(&spec, &arm_r, &arm_t, 1500, 1, 17).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert!(a.sum_irit().iter().zip(b.sum_irit()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.sum_ir().iter().zip(b.sum_ir()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn accumulate_matches_single_field_propagation() {
        let (spec, arm_r, arm_t) = small_setup(16);
        let batched = accumulate_gates(&spec, &arm_r, &arm_t, 0..10, 1, 2).unwrap();
        let mut direct = CorrelationAccumulator::new(*arm_r.grid_out(), *arm_t.grid_out());
        for k in 0..10 {
            let e = spec.draw_realization(k, 2);
            let er = crate::propagation::propagate(&e, &arm_r).unwrap();
            let et = crate::propagation::propagate(&e, &arm_t).unwrap();
            direct.accumulate(&er, &et).unwrap();
        }
        for (x, y) in batched.sum_irit().iter().zip(direct.sum_irit()) {
            assert!((x - y).abs() <= 1e-10 * y.abs());
        }
    }

    /// Quadruple-sum oracle straight from the definitions, dense `G`.
    fn brute_force_dii(g: &Array2<Complex64>, dx: f64, hr: &Array2<Complex64>, ht: &Array2<Complex64>) -> Array2<f64> {
        let n = g.nrows();
        Array2::from_shape_fn((hr.ncols(), ht.ncols()), |(jr, jt)| {
            let mut a = c(0.0, 0.0);
            for i in 0..n {
                for ip in 0..n {
                    a += g[[ip, i]] * hr[[i, jr]] * ht[[ip, jt]].conj();
                }
            }
            (a * dx * dx).norm_sqr()
        })
    }

    #[test]
    fn closed_form_matches_brute_force_for_diagonal_g() {
        let (spec, arm_r, arm_t) = small_setup(24);
        let g = spec.g11_matrix();
        let fast = closed_form_dii(&g, &arm_r, &arm_t).unwrap();
        let slow = brute_force_dii(&g.to_dense(), 8e-6, &arm_r.matrix().to_owned(), &arm_t.matrix().to_owned());
        let scale = slow.iter().copied().fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn closed_form_matches_brute_force_for_complex_mode() {
        let (_, arm_r, arm_t) = small_setup(24);
        let gs = *arm_r.grid_in();
        let mode = ComplexField::from_fn(gs, |x| Complex64::from_polar(1.0, x * 5e4)).unwrap();
        let spec = SourceSpec::coherent(RealField::new(gs, vec![2.0; 24]).unwrap(), mode).unwrap();
        let g = spec.g11_matrix();
        let fast = closed_form_dii(&g, &arm_r, &arm_t).unwrap();
        let slow = brute_force_dii(&g.to_dense(), 8e-6, &arm_r.matrix().to_owned(), &arm_t.matrix().to_owned());
        let scale = slow.iter().copied().fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        // factorable G: both terms of g22 are equal
        let g22 = closed_form_g22(&g, &arm_r, &arm_t).unwrap();
        for (a, b) in g22.iter().zip(&fast) {
            assert!((a - 2.0 * b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn closed_form_identical_arms_is_symmetric_with_diagonal_maximum() {
        let geom = Geometry::new(0.5e-6, 0.05, 0.05, 0.1).unwrap();
        let g = Grid1D::centered(32, 6e-6).unwrap();
        let arm = reference_arm(&geom, g, g).unwrap();
        let spec = SourceSpec::incoherent(RealField::new(g, vec![1.0; 32]).unwrap()).unwrap();
        let d = closed_form_dii(&spec.g11_matrix(), &arm, &arm).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert!((d[[i, j]] - d[[j, i]]).abs() <= 1e-12 * d[[i, i]]);
                assert!(d[[i, j]] <= d[[i, i]].max(d[[j, j]]) * (1.0 + 1e-12));
                // Cauchy-Schwarz with <I> on the diagonal
                assert!(d[[i, j]] <= (d[[i, i]] * d[[j, j]]).sqrt() * (1.0 + 1e-12));
            }
        }
        let g22 = closed_form_g22(&spec.g11_matrix(), &arm, &arm).unwrap();
        let mean = closed_form_mean_intensity(&spec.g11_matrix(), &arm).unwrap();
        for i in 0..32 {
            assert!((g22[[i, i]] - 2.0 * mean[i] * mean[i]).abs() <= 1e-10 * g22[[i, i]]);
        }
    }

    #[test]
    fn single_bright_sample_gives_factorable_correlation() {
        let (_, arm_r, arm_t) = small_setup(16);
        let gs = *arm_r.grid_in();
        let mut p = vec![0.0; 16];
        p[0] = 1.0;
        let spec = SourceSpec::incoherent(RealField::new(gs, p).unwrap()).unwrap();
        // one bright sample: |A|² = <I_r><I_t>, full visibility everywhere
        let d = closed_form_dii(&spec.g11_matrix(), &arm_r, &arm_t).unwrap();
        let m = closed_form_mean_intensity(&spec.g11_matrix(), &arm_r).unwrap();
        let mt = closed_form_mean_intensity(&spec.g11_matrix(), &arm_t).unwrap();
        for ((jr, jt), v) in d.indexed_iter() {
            assert!((v - m[jr] * mt[jt]).abs() <= 1e-10 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn decomposition_identity_holds() {
        let (spec, arm_r, arm_t) = small_setup(24);
        let g = spec.g11_matrix();
        let g22 = closed_form_g22(&g, &arm_r, &arm_t).unwrap();
        let d = closed_form_dii(&g, &arm_r, &arm_t).unwrap();
        let o = outer(
            &closed_form_mean_intensity(&g, &arm_r).unwrap(),
            &closed_form_mean_intensity(&g, &arm_t).unwrap(),
        );
        let scale = g22.iter().copied().fold(0.0, f64::max);
        for ((a, b), c) in g22.iter().zip(&d).zip(&o) {
            assert!((a - b - c).abs() <= 1e-14 * scale);
            assert!(*a >= *c);
        }
    }

    #[test]
    fn mean_intensity_matches_monte_carlo() {
        let (spec, arm_r, arm_t) = small_setup(32);
        let r = estimate_correlation(&spec, &arm_r, &arm_t, 10_000, 9).unwrap();
        let expected = closed_form_mean_intensity(&spec.g11_matrix(), &arm_r).unwrap();
        for (m, e) in r.mean_ir.samples().iter().zip(&expected) {
            // thermal intensity: std = mean
            let se = e / (r.count as f64).sqrt();
            assert!((m - e).abs() <= 5.0 * se, "{m} vs {e}");
        }
    }

    #[test]
    fn incoherent_dii_is_nonnegative_within_noise() {
        let (spec, arm_r, arm_t) = small_setup(32);
        let r = estimate_correlation(&spec, &arm_r, &arm_t, 4000, 3).unwrap();
        let o = r.outer_means();
        let m = (r.count as f64).sqrt();
        for (d, o) in r.dii.iter().zip(&o) {
            // sqrt(<I_r²><I_t²>) = 2 <I_r><I_t> for thermal light
            assert!(*d >= -3.0 * 2.0 * o / m);
        }
        assert_eq!(r.min_dii, r.dii.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn coherent_control_is_structureless() {
        let (_, arm_r, arm_t) = small_setup(32);
        let gs = *arm_r.grid_in();
        let profile = RealField::from_fn(gs, |x| 1.0 + 0.3 * (x * 2e4).cos()).unwrap();
        let spec = SourceSpec::coherent_matching(profile).unwrap();
        let r = estimate_correlation(&spec, &arm_r, &arm_t, 5000, 1).unwrap();
        let n = r.normalized_dii(1e-6);
        let first = n.iter().copied().find(|v| v.is_finite()).unwrap();
        for v in n.iter().filter(|v| v.is_finite()) {
            assert!((v - 1.0).abs() < 0.1);
            assert!((v - first).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_coherent_field_has_zero_fluctuations() {
        struct Fixed(Grid1D);
        impl FieldSampler for Fixed {
            fn grid(&self) -> &Grid1D {
                &self.0
            }
            fn fill_realization(&self, _: u64, _: u64, out: &mut [Complex64]) {
                out.iter_mut().enumerate().for_each(|(i, z)| *z = c(1.0, i as f64 * 0.1));
            }
        }
        let (_, arm_r, arm_t) = small_setup(16);
        let fixed = Fixed(*arm_r.grid_in());
        let r = estimate_correlation(&fixed, &arm_r, &arm_t, 100, 0).unwrap();
        let scale = r.outer_means().iter().copied().fold(0.0, f64::max);
        assert!(r.dii.iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn one_shot_gates_reproduce_plain_estimator() {
        let (spec, arm_r, arm_t) = small_setup(16);
        let plain = estimate_correlation(&spec, &arm_r, &arm_t, 200, 4).unwrap();
        let gated = detector_integrated_correlation(&spec, &arm_r, &arm_t, 1, 200, 4).unwrap();
        assert_eq!(plain, gated);
        assert!(detector_integrated_correlation(&spec, &arm_r, &arm_t, 0, 200, 4).is_err());
        assert!(detector_integrated_correlation(&spec, &arm_r, &arm_t, 2, 1, 4).is_err());
    }

    #[test]
    fn conditional_slice_picks_nearest_column() {
        let gr = Grid1D::centered(3, 1.0).unwrap();
        let gt = Grid1D::centered(5, 1.0).unwrap();
        let m = Array2::from_shape_fn((3, 5), |(i, j)| (10 * i + j) as f64);
        let s = conditional_column(&gr, &gt, &m, 0.0).unwrap();
        assert_eq!(s.samples(), &[2.0, 12.0, 22.0]);
        let s = conditional_column(&gr, &gt, &m, 1.2).unwrap();
        assert_eq!(s.samples(), &[3.0, 13.0, 23.0]);
        assert!(matches!(
            conditional_column(&gr, &gt, &m, 10.0),
            Err(Error::NoSampleNear { .. })
        ));
    }

    #[test]
    fn monte_carlo_dii_matches_closed_form() {
        let (spec, arm_r, arm_t) = small_setup(32);
        let est = grouped_dii(&spec, &arm_r, &arm_t, 20, 500, 1, 21).unwrap();
        let cf = closed_form_dii(&spec.g11_matrix(), &arm_r, &arm_t).unwrap();
        let z: Vec<f64> = est.dii.iter().zip(&cf).zip(&est.stderr).map(|((m, c), s)| (m - c) / s).collect();
        let within2 = z.iter().filter(|z| z.abs() <= 2.0).count();
        assert!(z.iter().all(|z| z.abs() <= 5.0), "{z:?}");
        assert!(within2 as f64 >= 0.85 * z.len() as f64);
    }

    #[test]
    fn complex_mode_monte_carlo_matches_closed_form() {
        // a tilted mode makes G complex; the wrong index order would flip
        // the sign of the tilt-induced shift between the arms
        let (_, arm_r, arm_t) = small_setup(32);
        let gs = *arm_r.grid_in();
        let mode = ComplexField::from_fn(gs, |x| Complex64::from_polar((-(x / 1e-4).powi(2)).exp(), x * 4e4)).unwrap();
        let peak = mode.samples().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mode = mode.scaled(Complex64::new(1.0 / peak, 0.0));
        let spec = SourceSpec::coherent(RealField::new(gs, vec![1.0; 32]).unwrap(), mode).unwrap();
        let est = grouped_dii(&spec, &arm_r, &arm_t, 20, 500, 1, 8).unwrap();
        let cf = closed_form_dii(&spec.g11_matrix(), &arm_r, &arm_t).unwrap();
        let scale = cf.iter().copied().fold(0.0, f64::max);
        for ((m, c), s) in est.dii.iter().zip(&cf).zip(&est.stderr) {
            assert!((m - c).abs() <= 5.0 * s + 1e-9 * scale);
        }
        assert!(grouped_dii(&spec, &arm_r, &arm_t, 1, 500, 1, 8).is_err());
    }
}
