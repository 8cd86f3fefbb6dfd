//! C ABI over the simulation engine.
//!
//! Handles are opaque pointers created by `gi_config_from_json` or `gi_run_*`
//! and released by the matching `gi_*_free`. Every fallible call returns a [`GiStatus`];
//! on failure a message is retrievable with [`gi_last_error`] on the same
//! thread. Array outputs are copied into caller buffers whose length is
//! passed explicitly; a short buffer yields `GI_STATUS_BUFFER_TOO_SMALL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ghost_imaging::config::RunConfig;
use ghost_imaging::correlation::CorrelationResult;
use ghost_imaging::fields::Grid1D;
use ghost_imaging::propagation::fresnel_kernel;
use ghost_imaging::scenarios::{self, ImagingReport, LenslessConfig};

/// Return code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Compute = 4,
    BufferTooSmall = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Curves stored in a lensless imaging report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiCurve {
    Recovered = 0,
    OracleClosedForm = 1,
    OracleDft = 2,
}

/// Scalar metrics of a lensless imaging report. Absent values read as NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiMetric {
    PearsonMcVsDft = 0,
    PearsonCfVsDft = 1,
    PearsonMcVsCf = 2,
    RelL2McVsCf = 3,
    RelL2CfVsDft = 4,
    Snr = 5,
    FringePeriod = 6,
    FringePeriodClosedForm = 7,
}

impl GiCurve {
    fn from_raw(v: u32) -> Option<Self> {
        [Self::Recovered, Self::OracleClosedForm, Self::OracleDft].into_iter().find(|c| *c as u32 == v)
    }
}

impl GiMetric {
    fn from_raw(v: u32) -> Option<Self> {
        use GiMetric::*;
        [PearsonMcVsDft, PearsonCfVsDft, PearsonMcVsCf, RelL2McVsCf, RelL2CfVsDft, Snr, FringePeriod, FringePeriodClosedForm]
            .into_iter()
            .find(|m| *m as u32 == v)
    }
}

/// Matrices and vectors stored in a correlation handle.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiCorrelationData {
    /// `rows * cols`, row-major over (reference, test).
    Dii = 0,
    G22 = 1,
    /// `rows` values.
    MeanIr = 2,
    /// `cols` values.
    MeanIt = 3,
}

impl GiCorrelationData {
    fn from_raw(v: u32) -> Option<Self> {
        [Self::Dii, Self::G22, Self::MeanIr, Self::MeanIt].into_iter().find(|d| *d as u32 == v)
    }
}

/// Parsed and validated run configuration.
pub struct GiConfig {
    run: RunConfig,
    layout: LenslessConfig,
}

/// Result of a lensless Fourier imaging run.
pub struct GiReport {
    report: ImagingReport,
}

/// Full-plane correlation estimate.
pub struct GiCorrelation {
    result: CorrelationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: GiStatus, msg: impl Into<String>) -> GiStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting panics into `GI_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> GiStatus) -> GiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            fail(GiStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, GiStatus> {
    // SAFETY: caller passes a pointer from the matching constructor or null.
    unsafe { p.as_ref() }.ok_or_else(|| fail(GiStatus::NullPointer, format!("{what} is null")))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> GiStatus {
    if out.is_null() {
        return fail(GiStatus::NullPointer, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            GiStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    // SAFETY: `out` is non-null and the caller guarantees `len` writable values.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    GiStatus::Ok
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, GiStatus> {
    let threads = if workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(|p| p.install(f))
        .map_err(|e| fail(GiStatus::Compute, format!("cannot start {threads} workers: {e}")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON run configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gi_config_from_json(json: *const c_char, out: *mut *mut GiConfig) -> GiStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(GiStatus::NullPointer, "json and out must be non-null");
        }
        // SAFETY: checked non-null; caller guarantees NUL termination.
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(e) => return fail(GiStatus::InvalidUtf8, e.to_string()),
        };
        let run = match RunConfig::from_json_str(text) {
            Ok(c) => c,
            Err(e) => return fail(GiStatus::Config, e.to_string()),
        };
        let layout = match run.to_lensless() {
            Ok(l) => l,
            Err(e) => return fail(GiStatus::Config, e.to_string()),
        };
        // SAFETY: `out` checked non-null.
        unsafe { *out = Box::into_raw(Box::new(GiConfig { run, layout })) };
        GiStatus::Ok
    })
}

/// # Safety
/// `cfg` must come from [`gi_config_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gi_config_free(cfg: *mut GiConfig) {
    if !cfg.is_null() {
        // SAFETY: pointer came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Overrides the realization count.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn gi_config_set_realizations(cfg: *mut GiConfig, realizations: u64) -> GiStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let Some(c) = (unsafe { cfg.as_mut() }) else {
            return fail(GiStatus::NullPointer, "config is null");
        };
        if realizations == 0 {
            return fail(GiStatus::InvalidArgument, "realizations must be at least 1");
        }
        c.run.realizations = realizations;
        c.layout.realizations = realizations;
        GiStatus::Ok
    })
}

/// Scenario hash (64 hex digits) written as a NUL-terminated string.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gi_config_scenario_hash(cfg: *const GiConfig, buf: *mut c_char, len: usize) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let c = match unsafe { deref(cfg, "config") } {
            Ok(c) => c,
            Err(s) => return s,
        };
        if buf.is_null() {
            return fail(GiStatus::NullPointer, "buffer is null");
        }
        let h = c.run.scenario_hash();
        if len < h.len() + 1 {
            return fail(GiStatus::BufferTooSmall, format!("hash needs {} bytes", h.len() + 1));
        }
        // SAFETY: `buf` holds at least `h.len() + 1` bytes.
        unsafe {
            std::ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
            *buf.add(h.len()) = 0;
        }
        GiStatus::Ok
    })
}

/// Runs lensless Fourier imaging on the configured layout. `workers == 0`
/// uses all available cores; results do not depend on it.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gi_run_lensless(cfg: *const GiConfig, workers: usize, out: *mut *mut GiReport) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let c = match unsafe { deref(cfg, "config") } {
            Ok(c) => c,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(GiStatus::NullPointer, "out is null");
        }
        match with_workers(workers, || scenarios::run_lensless(&c.layout)) {
            Ok(Ok(report)) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(GiReport { report })) };
                GiStatus::Ok
            }
            Ok(Err(e)) => fail(GiStatus::Compute, e.to_string()),
            Err(s) => s,
        }
    })
}

/// # Safety
/// `report` must come from [`gi_run_lensless`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gi_report_free(report: *mut GiReport) {
    if !report.is_null() {
        // SAFETY: pointer came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Number of samples per curve, with the reference grid origin and spacing.
///
/// # Safety
/// `report` must be live; output pointers may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn gi_report_grid(report: *const GiReport, n: *mut usize, x0: *mut f64, dx: *mut f64) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let r = match unsafe { deref(report, "report") } {
            Ok(r) => r,
            Err(s) => return s,
        };
        let g = r.report.recovered.grid();
        // SAFETY: each pointer is written only when non-null.
        unsafe {
            if !n.is_null() {
                *n = g.len();
            }
            if !x0.is_null() {
                *x0 = g.x0();
            }
            if !dx.is_null() {
                *dx = g.dx();
            }
        }
        GiStatus::Ok
    })
}

/// Copies the curve selected by a [`GiCurve`] value into `out[0..len]`.
///
/// # Safety
/// `report` must be live and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gi_report_curve(report: *const GiReport, curve: u32, out: *mut f64, len: usize) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let r = match unsafe { deref(report, "report") } {
            Ok(r) => &r.report,
            Err(s) => return s,
        };
        let Some(curve) = GiCurve::from_raw(curve) else {
            return fail(GiStatus::InvalidArgument, format!("unknown curve {curve}"));
        };
        let field = match curve {
            GiCurve::Recovered => &r.recovered,
            GiCurve::OracleClosedForm => &r.oracle_closed_form,
            GiCurve::OracleDft => &r.oracle_dft,
        };
        // SAFETY: forwarded buffer contract.
        unsafe { copy_out(field.samples(), out, len) }
    })
}

/// Reads the metric selected by a [`GiMetric`] value.
///
/// # Safety
/// `report` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gi_report_metric(report: *const GiReport, metric: u32, out: *mut f64) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let m = match unsafe { deref(report, "report") } {
            Ok(r) => &r.report.metrics,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(GiStatus::NullPointer, "out is null");
        }
        let Some(metric) = GiMetric::from_raw(metric) else {
            return fail(GiStatus::InvalidArgument, format!("unknown metric {metric}"));
        };
        let v = match metric {
            GiMetric::PearsonMcVsDft => m.pearson_mc_vs_dft,
            GiMetric::PearsonCfVsDft => m.pearson_cf_vs_dft,
            GiMetric::PearsonMcVsCf => m.pearson_mc_vs_cf,
            GiMetric::RelL2McVsCf => m.rel_l2_mc_vs_cf,
            GiMetric::RelL2CfVsDft => m.rel_l2_cf_vs_dft,
            GiMetric::Snr => m.snr,
            GiMetric::FringePeriod => m.fringe_period.unwrap_or(f64::NAN),
            GiMetric::FringePeriodClosedForm => m.fringe_period_closed_form.unwrap_or(f64::NAN),
        };
        // SAFETY: `out` checked non-null.
        unsafe { *out = v };
        GiStatus::Ok
    })
}

/// Monte Carlo estimate of the full correlation plane on the configured
/// layout, with the configured source and realization count.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gi_run_correlation(cfg: *const GiConfig, workers: usize, out: *mut *mut GiCorrelation) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let c = match unsafe { deref(cfg, "config") } {
            Ok(c) => c,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(GiStatus::NullPointer, "out is null");
        }
        match with_workers(workers, || scenarios::run_raw_correlation(&c.layout)) {
            Ok(Ok(r)) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(GiCorrelation { result: r.result })) };
                GiStatus::Ok
            }
            Ok(Err(e)) => fail(GiStatus::Compute, e.to_string()),
            Err(s) => s,
        }
    })
}

/// # Safety
/// `corr` must come from [`gi_run_correlation`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gi_correlation_free(corr: *mut GiCorrelation) {
    if !corr.is_null() {
        // SAFETY: pointer came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(corr) });
    }
}

/// Matrix shape and realization count.
///
/// # Safety
/// `corr` must be live; output pointers may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn gi_correlation_shape(corr: *const GiCorrelation, rows: *mut usize, cols: *mut usize, count: *mut u64) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let r = match unsafe { deref(corr, "correlation") } {
            Ok(c) => &c.result,
            Err(s) => return s,
        };
        // SAFETY: each pointer is written only when non-null.
        unsafe {
            if !rows.is_null() {
                *rows = r.grid_r.len();
            }
            if !cols.is_null() {
                *cols = r.grid_t.len();
            }
            if !count.is_null() {
                *count = r.count;
            }
        }
        GiStatus::Ok
    })
}

/// Copies the array selected by a [`GiCorrelationData`] value into `out[0..len]`.
///
/// # Safety
/// `corr` must be live and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gi_correlation_data(corr: *const GiCorrelation, which: u32, out: *mut f64, len: usize) -> GiStatus {
    guard(|| {
        // SAFETY: see function contract.
        let r = match unsafe { deref(corr, "correlation") } {
            Ok(c) => &c.result,
            Err(s) => return s,
        };
        let Some(which) = GiCorrelationData::from_raw(which) else {
            return fail(GiStatus::InvalidArgument, format!("unknown correlation array {which}"));
        };
        let data: Vec<f64> = match which {
            GiCorrelationData::Dii => r.dii.iter().copied().collect(),
            GiCorrelationData::G22 => r.g22.iter().copied().collect(),
            GiCorrelationData::MeanIr => r.mean_ir.samples().to_vec(),
            GiCorrelationData::MeanIt => r.mean_it.samples().to_vec(),
        };
        // SAFETY: forwarded buffer contract.
        unsafe { copy_out(&data, out, len) }
    })
}

/// Fresnel kernel matrix `h(x_in_i, x_out_j)` for distance `d`, written
/// row-major as interleaved (re, im) pairs: `2 * n_in * n_out` values.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gi_fresnel_kernel(
    d: f64,
    wavelength: f64,
    n_in: usize,
    dx_in: f64,
    x0_in: f64,
    n_out: usize,
    dx_out: f64,
    x0_out: f64,
    out: *mut f64,
    len: usize,
) -> GiStatus {
    guard(|| {
        let grids = Grid1D::new(n_in, dx_in, x0_in).and_then(|a| Grid1D::new(n_out, dx_out, x0_out).map(|b| (a, b)));
        let (gi, go) = match grids {
            Ok(g) => g,
            Err(e) => return fail(GiStatus::InvalidArgument, e.to_string()),
        };
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return fail(GiStatus::InvalidArgument, "wavelength must be positive");
        }
        let k = match fresnel_kernel(d, wavelength, &gi, &go) {
            Ok(k) => k,
            Err(e) => return fail(GiStatus::InvalidArgument, e.to_string()),
        };
        let flat: Vec<f64> = k.iter().flat_map(|z| [z.re, z.im]).collect();
        // SAFETY: forwarded buffer contract.
        unsafe { copy_out(&flat, out, len) }
    })
}
