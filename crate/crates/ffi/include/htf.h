#ifndef HTF_FFI_H
#define HTF_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HtfStatus {
  HTF_STATUS_OK = 0,
  HTF_STATUS_NULL_POINTER = 1,
  HTF_STATUS_INVALID_UTF8 = 2,
  HTF_STATUS_INVALID_ARGUMENT = 3,
  HTF_STATUS_CONFIG = 4,
  HTF_STATUS_NUMERICAL = 5,
  HTF_STATUS_IO = 6,
  HTF_STATUS_DIVERGED = 7,
  HTF_STATUS_BUFFER_TOO_SMALL = 8,
  HTF_STATUS_PANIC = 9,
} HtfStatus;

// Solved or predicted temperature field on a rectilinear grid.
typedef struct HtfField HtfField;

// A finished forward run.
typedef struct HtfForwardRun HtfForwardRun;

// Noisy sensor readings.
typedef struct HtfMeasurements HtfMeasurements;

// Headline numbers of a field comparison. Global means are NaN when no
// reference level is nonzero.
typedef struct HtfErrorSummary {
  double max_pointwise_l1;
  double max_pointwise_l2;
  double mean_global_l1;
  double mean_global_l2;
  uintptr_t undefined_levels;
} HtfErrorSummary;

// Identified layer properties.
typedef struct HtfEstimate {
  double alpha;
  double kappa;
  double rho_c;
} HtfEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *htf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *htf_version(void);

// Solves a two-region problem with the finite-difference oracle.
// `solver_json` may be null for the default solver settings.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum HtfStatus htf_oracle_solve(const char *problem_json,
                                const char *solver_json,
                                struct HtfField **out_field);

// Number of spatial nodes and stored time levels.
//
// # Safety
// `field` must come from this library; the outputs must be writable.
enum HtfStatus htf_field_shape(const struct HtfField *field, uintptr_t *nx, uintptr_t *nt);

// Copies the node positions and level times.
//
// # Safety
// `x` and `t` must hold at least `nx` and `nt` doubles.
enum HtfStatus htf_field_axes(const struct HtfField *field,
                              double *x,
                              uintptr_t nx,
                              double *t,
                              uintptr_t nt);

// Copies the values level by level (`values[level * nx + node]`).
//
// # Safety
// `values` must hold at least `len` doubles.
enum HtfStatus htf_field_values(const struct HtfField *field, double *values, uintptr_t len);

// Bilinear interpolation of the field at `(x, t)`.
//
// # Safety
// `field` must come from this library; `value` must be writable.
enum HtfStatus htf_field_value_at(const struct HtfField *field, double x, double t, double *value);

// # Safety
// `field` must be null or come from this library, and is invalid afterwards.
void htf_field_free(struct HtfField *field);

// Compares a prediction with a reference on the same grid.
//
// # Safety
// Both fields must come from this library; `summary` must be writable.
enum HtfStatus htf_compare(const struct HtfField *prediction,
                           const struct HtfField *reference,
                           struct HtfErrorSummary *summary);

// Synthetic sensor data for the identification scenario. `data_json`
// may be null for the default sensor layout and noise level.
//
// # Safety
// `data_json` must be null or NUL-terminated; `out` must be writable.
enum HtfStatus htf_generate_measurements(double alpha,
                                         double kappa,
                                         uint64_t seed,
                                         const char *data_json,
                                         struct HtfMeasurements **out_set);

// Builds a measurement set from caller arrays of length `len`.
//
// # Safety
// `x`, `t` and `u` must each hold `len` doubles.
enum HtfStatus htf_measurements_new(const double *x,
                                    const double *t,
                                    const double *u,
                                    uintptr_t len,
                                    struct HtfMeasurements **out_set);

// # Safety
// `set` must come from this library; `len` must be writable.
enum HtfStatus htf_measurements_len(const struct HtfMeasurements *set, uintptr_t *len);

// Copies the readings into three caller arrays.
//
// # Safety
// `x`, `t` and `u` must each hold at least `len` doubles.
enum HtfStatus htf_measurements_copy(const struct HtfMeasurements *set,
                                     double *x,
                                     double *t,
                                     double *u,
                                     uintptr_t len);

// # Safety
// `set` must be null or come from this library, and is invalid afterwards.
void htf_measurements_free(struct HtfMeasurements *set);

// Trains the forward model from a JSON forward configuration.
//
// # Safety
// `config_json` must be NUL-terminated; `out_run` must be writable.
enum HtfStatus htf_train_forward(const char *config_json, struct HtfForwardRun **out_run);

// Error summary of a forward run against its oracle reference.
//
// # Safety
// `run` must come from this library; `summary` must be writable.
enum HtfStatus htf_forward_summary(const struct HtfForwardRun *run,
                                   struct HtfErrorSummary *summary);

// Number of completed epochs, less than configured if training diverged.
//
// # Safety
// `run` must come from this library; `epochs` must be writable.
enum HtfStatus htf_forward_epochs(const struct HtfForwardRun *run, uintptr_t *epochs);

// New handle to the predicted field on the evaluation grid.
//
// # Safety
// `run` must come from this library; `out_field` must be writable.
enum HtfStatus htf_forward_prediction(const struct HtfForwardRun *run, struct HtfField **out_field);

// # Safety
// `run` must be null or come from this library, and is invalid afterwards.
void htf_forward_free(struct HtfForwardRun *run);

// Two-stage identification of the layer properties from measurements.
//
// # Safety
// `config_json` must be NUL-terminated; `set` must come from this
// library; `estimate` must be writable.
enum HtfStatus htf_train_inverse(const char *config_json,
                                 const struct HtfMeasurements *set,
                                 struct HtfEstimate *estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HTF_FFI_H */
