#ifndef TTCM_H
#define TTCM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TtcmStatus {
  TTCM_STATUS_OK = 0,
  TTCM_STATUS_NULL_POINTER = 1,
  TTCM_STATUS_INVALID_INPUT = 2,
  TTCM_STATUS_DEGENERATE_PARAMS = 3,
  TTCM_STATUS_INSUFFICIENT_SAMPLES = 4,
  TTCM_STATUS_NO_CONVERGENCE = 5,
  TTCM_STATUS_NUMERICAL_FAILURE = 6,
  TTCM_STATUS_HYPOTHESIS_UNMET = 7,
  TTCM_STATUS_IO = 8,
  TTCM_STATUS_PANIC = 9,
} TtcmStatus;

/**
 * A validated configuration.
 */
typedef struct TtcmConfig TtcmConfig;

/**
 * Outcome of a joint fit.
 */
typedef struct TtcmFit TtcmFit;

/**
 * Sampled curves on a shared time grid.
 */
typedef struct TtcmTacs TtcmTacs;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *ttcm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ttcm_version(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from a `*_to_json` call and not be freed twice.
 */
void ttcm_string_free(char *s);

/**
 * Eigenvalues `alpha1 > alpha2` of the tissue system.
 *
 * # Safety
 * `alpha1` and `alpha2` must be valid for writes.
 */
enum TtcmStatus ttcm_compute_alphas(double k2,
                                    double k3,
                                    double k4,
                                    double *alpha1,
                                    double *alpha2);

/**
 * Parses a configuration from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum TtcmStatus ttcm_config_from_json(const char *json, struct TtcmConfig **out);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void ttcm_config_free(struct TtcmConfig *config);

/**
 * # Safety
 * `config` must be a live handle or NULL.
 */
size_t ttcm_config_n_regions(const struct TtcmConfig *config);

/**
 * Serializes the configuration; free the result with [`ttcm_string_free`].
 *
 * # Safety
 * `config` must be a live handle and `out` valid for writes.
 */
enum TtcmStatus ttcm_config_to_json(const struct TtcmConfig *config, char **out);

/**
 * Tissue curve of region `region` (0-based) at `n` times into `values`.
 *
 * # Safety
 * `times` and `values` must hold `n` elements.
 */
enum TtcmStatus ttcm_eval_ct(const struct TtcmConfig *config,
                             size_t region,
                             const double *times,
                             size_t n,
                             double *values);

/**
 * Noiseless tissue curves for every region on `n` strictly increasing
 * positive times.
 *
 * # Safety
 * `times` must hold `n` elements and `out` be valid for writes.
 */
enum TtcmStatus ttcm_simulate(const struct TtcmConfig *config,
                              const double *times,
                              size_t n,
                              struct TtcmTacs **out);

/**
 * Builds a table from `n_regions` curves stored row-major in `values`
 * (`n_regions × n_times`). Regions are named `r1, r2, ...`.
 *
 * # Safety
 * `times` must hold `n_times` and `values` `n_regions·n_times` elements.
 */
enum TtcmStatus ttcm_tacs_new(const double *times,
                              size_t n_times,
                              const double *values,
                              size_t n_regions,
                              struct TtcmTacs **out);

/**
 * # Safety
 * `tacs` must come from this library and not be used afterwards.
 */
void ttcm_tacs_free(struct TtcmTacs *tacs);

/**
 * # Safety
 * `tacs` must be a live handle; the out pointers must be valid for writes.
 */
enum TtcmStatus ttcm_tacs_dims(const struct TtcmTacs *tacs, size_t *n_regions, size_t *n_times);

/**
 * Copies the curve of region `region` into `values` (`len` must equal the
 * number of times).
 *
 * # Safety
 * `values` must hold `len` elements.
 */
enum TtcmStatus ttcm_tacs_curve(const struct TtcmTacs *tacs,
                                size_t region,
                                double *values,
                                size_t len);

/**
 * Whether the configuration satisfies the region-richness condition.
 *
 * # Safety
 * `config` must be a live handle and `satisfied` valid for writes.
 */
enum TtcmStatus ttcm_check_richness(const struct TtcmConfig *config, double tol, bool *satisfied);

/**
 * Joint fit. `options_json` holds fit options (NULL for defaults with
 * `p = 1`). On [`TtcmStatus::NoConvergence`] the best result is still
 * written to `out`.
 *
 * # Safety
 * `tacs` must be a live handle, `options_json` NULL or NUL-terminated, and
 * `out` valid for writes.
 */
enum TtcmStatus ttcm_fit_joint(const struct TtcmTacs *tacs,
                               const char *options_json,
                               struct TtcmFit **out);

/**
 * # Safety
 * `fit` must come from this library and not be used afterwards.
 */
void ttcm_fit_free(struct TtcmFit *fit);

/**
 * Sum of squared residuals, or NaN for a NULL handle.
 *
 * # Safety
 * `fit` must be a live handle or NULL.
 */
double ttcm_fit_sse(const struct TtcmFit *fit);

/**
 * # Safety
 * `fit` must be a live handle or NULL.
 */
bool ttcm_fit_converged(const struct TtcmFit *fit);

/**
 * New configuration handle holding the fitted (gauge-fixed) configuration.
 *
 * # Safety
 * `fit` must be a live handle and `out` valid for writes.
 */
enum TtcmStatus ttcm_fit_config(const struct TtcmFit *fit, struct TtcmConfig **out);

/**
 * Serializes the fit result; free the result with [`ttcm_string_free`].
 *
 * # Safety
 * `fit` must be a live handle and `out` valid for writes.
 */
enum TtcmStatus ttcm_fit_to_json(const struct TtcmFit *fit, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTCM_H */
