#ifndef GHOST_IMAGING_H
#define GHOST_IMAGING_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Return code of every fallible call.
typedef enum {
  GI_STATUS_OK = 0,
  GI_STATUS_NULL_POINTER = 1,
  GI_STATUS_INVALID_UTF8 = 2,
  GI_STATUS_CONFIG = 3,
  GI_STATUS_COMPUTE = 4,
  GI_STATUS_BUFFER_TOO_SMALL = 5,
  GI_STATUS_INVALID_ARGUMENT = 6,
  GI_STATUS_PANIC = 7,
} GiStatus;

// Curves stored in a lensless imaging report.
typedef enum {
  GI_CURVE_RECOVERED = 0,
  GI_CURVE_ORACLE_CLOSED_FORM = 1,
  GI_CURVE_ORACLE_DFT = 2,
} GiCurve;

// Scalar metrics of a lensless imaging report. Absent values read as NaN.
typedef enum {
  GI_METRIC_PEARSON_MC_VS_DFT = 0,
  GI_METRIC_PEARSON_CF_VS_DFT = 1,
  GI_METRIC_PEARSON_MC_VS_CF = 2,
  GI_METRIC_REL_L2_MC_VS_CF = 3,
  GI_METRIC_REL_L2_CF_VS_DFT = 4,
  GI_METRIC_SNR = 5,
  GI_METRIC_FRINGE_PERIOD = 6,
  GI_METRIC_FRINGE_PERIOD_CLOSED_FORM = 7,
} GiMetric;

// Matrices and vectors stored in a correlation handle.
typedef enum {
  // `rows * cols`, row-major over (reference, test).
  GI_CORRELATION_DATA_DII = 0,
  GI_CORRELATION_DATA_G22 = 1,
  // `rows` values.
  GI_CORRELATION_DATA_MEAN_IR = 2,
  // `cols` values.
  GI_CORRELATION_DATA_MEAN_IT = 3,
} GiCorrelationData;

// Parsed and validated run configuration.
typedef struct GiConfig GiConfig;

// Full-plane correlation estimate.
typedef struct GiCorrelation GiCorrelation;

// Result of a lensless Fourier imaging run.
typedef struct GiReport GiReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *gi_last_error(void);

// Library version as a static NUL-terminated string.
const char *gi_version(void);

// Parses a JSON run configuration.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
GiStatus gi_config_from_json(const char *json, GiConfig **out);

// # Safety
// `cfg` must come from [`gi_config_from_json`] or be null.
void gi_config_free(GiConfig *cfg);

// Overrides the realization count.
//
// # Safety
// `cfg` must be a live config handle.
GiStatus gi_config_set_realizations(GiConfig *cfg, uint64_t realizations);

// Scenario hash (64 hex digits) written as a NUL-terminated string.
//
// # Safety
// `buf` must hold `len` bytes.
GiStatus gi_config_scenario_hash(const GiConfig *cfg, char *buf, uintptr_t len);

// Runs lensless Fourier imaging on the configured layout. `workers == 0`
// uses all available cores; results do not depend on it.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
GiStatus gi_run_lensless(const GiConfig *cfg, uintptr_t workers, GiReport **out);

// # Safety
// `report` must come from [`gi_run_lensless`] or be null.
void gi_report_free(GiReport *report);

// Number of samples per curve, with the reference grid origin and spacing.
//
// # Safety
// `report` must be live; output pointers may be null to skip them.
GiStatus gi_report_grid(const GiReport *report, uintptr_t *n, double *x0, double *dx);

// Copies the curve selected by a [`GiCurve`] value into `out[0..len]`.
//
// # Safety
// `report` must be live and `out` must hold `len` values.
GiStatus gi_report_curve(const GiReport *report, uint32_t curve, double *out, uintptr_t len);

// Reads the metric selected by a [`GiMetric`] value.
//
// # Safety
// `report` must be live and `out` valid.
GiStatus gi_report_metric(const GiReport *report, uint32_t metric, double *out);

// Monte Carlo estimate of the full correlation plane on the configured
// layout, with the configured source and realization count.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
GiStatus gi_run_correlation(const GiConfig *cfg, uintptr_t workers, GiCorrelation **out);

// # Safety
// `corr` must come from [`gi_run_correlation`] or be null.
void gi_correlation_free(GiCorrelation *corr);

// Matrix shape and realization count.
//
// # Safety
// `corr` must be live; output pointers may be null to skip them.
GiStatus gi_correlation_shape(const GiCorrelation *corr,
                              uintptr_t *rows,
                              uintptr_t *cols,
                              uint64_t *count);

// Copies the array selected by a [`GiCorrelationData`] value into `out[0..len]`.
//
// # Safety
// `corr` must be live and `out` must hold `len` values.
GiStatus gi_correlation_data(const GiCorrelation *corr, uint32_t which, double *out, uintptr_t len);

// Fresnel kernel matrix `h(x_in_i, x_out_j)` for distance `d`, written
// row-major as interleaved (re, im) pairs: `2 * n_in * n_out` values.
//
// # Safety
// `out` must hold `len` values.
GiStatus gi_fresnel_kernel(double d,
                           double wavelength,
                           uintptr_t n_in,
                           double dx_in,
                           double x0_in,
                           uintptr_t n_out,
                           double dx_out,
                           double x0_out,
                           double *out,
                           uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GHOST_IMAGING_H */
