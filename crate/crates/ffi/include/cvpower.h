#ifndef CVPOWER_H
#define CVPOWER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bit set in `*out_warnings` when `l0` is outside the fitted range.
 */
#define CVPOWER_WARN_EXTRAPOLATION 1

/**
 * Bit set when `d0` is outside [0.4, 1.4].
 */
#define CVPOWER_WARN_EFFECT_RANGE 2

/**
 * Bit set when the formula value was clamped to 1.
 */
#define CVPOWER_WARN_CLAMPED 4

typedef enum CvpowerStatus {
  CVPOWER_STATUS_OK = 0,
  CVPOWER_STATUS_INVALID_INPUT = 1,
  CVPOWER_STATUS_RANGE = 2,
  CVPOWER_STATUS_TARGET_UNREACHABLE = 3,
  CVPOWER_STATUS_INFEASIBLE_SPLIT = 4,
  CVPOWER_STATUS_PARSE = 5,
  CVPOWER_STATUS_IO = 6,
  CVPOWER_STATUS_NULL_POINTER = 7,
  CVPOWER_STATUS_FAILED = 8,
  CVPOWER_STATUS_PANIC = 9,
} CvpowerStatus;

typedef enum CvpowerMethod {
  CVPOWER_METHOD_SINGLE_HOLDOUT = 0,
  CVPOWER_METHOD_KFOLD = 1,
  CVPOWER_METHOD_TRAIN_VAL_TEST = 2,
  CVPOWER_METHOD_NESTED_KFOLD = 3,
} CvpowerMethod;

/**
 * Calculator coefficients and confidence tables.
 */
typedef struct CvpowerModel CvpowerModel;

/**
 * A Monte Carlo scenario definition.
 */
typedef struct CvpowerScenario CvpowerScenario;

/**
 * Results of a finished scenario.
 */
typedef struct CvpowerSummary CvpowerSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cvpower_last_error(char *buf, size_t len);

/**
 * Returns a handle to the built-in model. Never null.
 */
struct CvpowerModel *cvpower_model_default(void);

/**
 * Loads a model from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CvpowerStatus cvpower_model_load(const char *path, struct CvpowerModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void cvpower_model_free(struct CvpowerModel *model);

/**
 * Required pairs for a significant model. `out_warnings` may be null.
 *
 * # Safety
 * `model` must be a live handle; `out_n` writable; `out_warnings` null or writable.
 */
enum CvpowerStatus cvpower_required_sample_size(const struct CvpowerModel *model,
                                                double d0,
                                                size_t m0,
                                                size_t l0,
                                                uint64_t *out_n,
                                                uint32_t *out_warnings);

/**
 * Interpolated nested-CV C22 in percent.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum CvpowerStatus cvpower_nested_model_confidence(const struct CvpowerModel *model,
                                                   double d0,
                                                   double m0,
                                                   double n0,
                                                   double *out);

/**
 * Smallest number of pairs reaching `target` percent C22.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum CvpowerStatus cvpower_recommended_sample_size(const struct CvpowerModel *model,
                                                   double d0,
                                                   double m0,
                                                   double target,
                                                   uint64_t *out);

/**
 * # Safety
 * `out_small` and `out_large` must be writable.
 */
enum CvpowerStatus cvpower_adjust_unbalanced(uint64_t n_r,
                                             double gamma_db,
                                             uint64_t *out_small,
                                             uint64_t *out_large);

/**
 * # Safety
 * `out` must be writable.
 */
enum CvpowerStatus cvpower_effective_d(double d, double gamma_d, double *out);

/**
 * Balanced scenario selecting `l` features, alpha 0.05, beta 0.2. `method`
 * is a `CvpowerMethod` value.
 *
 * # Safety
 * `out` must be writable.
 */
enum CvpowerStatus cvpower_scenario_new(size_t n_per_class,
                                        size_t m,
                                        size_t l,
                                        double d_effect,
                                        int32_t method,
                                        size_t repetitions,
                                        uint64_t master_seed,
                                        struct CvpowerScenario **out);

/**
 * # Safety
 * `scenario` must be null or a live handle.
 */
void cvpower_scenario_free(struct CvpowerScenario *scenario);

/**
 * Runs the scenario on `workers` threads (0 = machine default).
 *
 * # Safety
 * `scenario` must be a live handle; `out` writable.
 */
enum CvpowerStatus cvpower_scenario_run(const struct CvpowerScenario *scenario,
                                        size_t workers,
                                        struct CvpowerSummary **out);

/**
 * # Safety
 * `summary` must be null or a live handle.
 */
void cvpower_summary_free(struct CvpowerSummary *summary);

/**
 * Mean and sample std of the per-repetition accuracies.
 *
 * # Safety
 * `summary` must be a live handle; outputs writable.
 */
enum CvpowerStatus cvpower_summary_accuracy(const struct CvpowerSummary *summary,
                                            double *out_mean,
                                            double *out_std);

/**
 * The H0 upper bound when `d_effect` was 0, otherwise the Ha lower bound.
 * `out_is_h0` receives 1 for the former and 0 for the latter.
 *
 * # Safety
 * `summary` must be a live handle; outputs writable.
 */
enum CvpowerStatus cvpower_summary_bound(const struct CvpowerSummary *summary,
                                         double *out_bound,
                                         int32_t *out_is_h0);

/**
 * `C_{l,d}` as a fraction.
 *
 * # Safety
 * `summary` must be a live handle; `out` writable.
 */
enum CvpowerStatus cvpower_summary_confidence(const struct CvpowerSummary *summary,
                                              size_t d,
                                              double *out);

/**
 * Copies up to `len` per-repetition accuracies into `buf` and returns the
 * total count through `out_count`. `buf` may be null to query the count.
 *
 * # Safety
 * `summary` must be a live handle; `buf` null or `len` writable doubles.
 */
enum CvpowerStatus cvpower_summary_accuracies(const struct CvpowerSummary *summary,
                                              double *buf,
                                              size_t len,
                                              size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVPOWER_H */
