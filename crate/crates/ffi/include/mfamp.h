#ifndef MFAMP_H
#define MFAMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfampStatus {
  MFAMP_STATUS_OK = 0,
  MFAMP_STATUS_INVALID_ARGUMENT = 1,
  MFAMP_STATUS_NULL_POINTER = 2,
  MFAMP_STATUS_DIVERGENCE = 3,
  MFAMP_STATUS_NUMERICAL = 4,
  MFAMP_STATUS_IO = 5,
  MFAMP_STATUS_FORMAT = 6,
  MFAMP_STATUS_BUFFER_TOO_SMALL = 7,
  MFAMP_STATUS_PANIC = 8,
} MfampStatus;

typedef enum MfampMode {
  MFAMP_MODE_CALIBRATION = 0,
  MFAMP_MODE_DICTIONARY = 1,
} MfampMode;

typedef enum MfampSpinodalKind {
  MFAMP_SPINODAL_KIND_AT = 0,
  MFAMP_SPINODAL_KIND_NO_HARD_PHASE = 1,
  MFAMP_SPINODAL_KIND_BEYOND_RANGE = 2,
} MfampSpinodalKind;

/**
 * The outcome of one message-passing run.
 */
typedef struct MfampAmpResult MfampAmpResult;

/**
 * A generated or loaded problem instance.
 */
typedef struct MfampInstance MfampInstance;

/**
 * Model parameters. `eta` may be `INFINITY` for dictionary learning.
 */
typedef struct MfampParams {
  double alpha;
  double pi;
  double rho;
  double delta;
  double eta;
} MfampParams;

typedef struct MfampAmpOptions {
  double damping;
  uint64_t max_iter;
  double conv_tol;
  double init_jitter;
  double delta_floor;
  enum MfampMode mode;
  /**
   * Nonzero to use `jitter_seed`; otherwise the instance seed is used.
   */
  uint8_t has_jitter_seed;
  uint64_t jitter_seed;
  /**
   * Nonzero for per-column variance estimates.
   */
  uint8_t column_variances;
} MfampAmpOptions;

typedef struct MfampPoint {
  uint64_t t;
  double e;
  double d;
  double residual;
} MfampPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mfamp_version(void);

/**
 * Copies the last error message of this thread into `buf`, NUL-terminated
 * and truncated to `len`. Returns the length of the full message, or 0 when
 * the last call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t mfamp_last_error(char *buf, size_t len);

/**
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
enum MfampStatus mfamp_instance_generate(const struct MfampParams *params,
                                         size_t n,
                                         uint64_t seed,
                                         struct MfampInstance **out_instance);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MfampStatus mfamp_instance_load(const char *path, struct MfampInstance **out_instance);

/**
 * # Safety
 * `instance` must come from this library; `path` must be NUL-terminated.
 */
enum MfampStatus mfamp_instance_save(const struct MfampInstance *instance, const char *path);

/**
 * Writes `N`, `M` and `P`.
 *
 * # Safety
 * `instance` must come from this library; the outputs must be writable.
 */
enum MfampStatus mfamp_instance_dims(const struct MfampInstance *instance,
                                     size_t *n,
                                     size_t *m,
                                     size_t *p);

/**
 * Copies the M×P measurements in row-major order.
 *
 * # Safety
 * `buf` must be valid for `len` doubles.
 */
enum MfampStatus mfamp_instance_copy_y(const struct MfampInstance *instance,
                                       double *buf,
                                       size_t len);

/**
 * # Safety
 * `instance` must be null or come from this library and not be used again.
 */
void mfamp_instance_free(struct MfampInstance *instance);

/**
 * Fills `opts` with the library defaults.
 *
 * # Safety
 * `opts` must be writable.
 */
enum MfampStatus mfamp_amp_options_default(struct MfampAmpOptions *opts);

/**
 * Runs message passing. On divergence the partial run is still returned
 * through `out_result` and the status is `Divergence`.
 *
 * # Safety
 * `instance` must come from this library, `opts` may be null for defaults,
 * and `out_result` must be writable.
 */
enum MfampStatus mfamp_amp_run(const struct MfampInstance *instance,
                               const struct MfampAmpOptions *opts,
                               struct MfampAmpResult **out_result);

/**
 * Number of recorded trajectory points (initial state included).
 *
 * # Safety
 * `result` must come from this library.
 */
enum MfampStatus mfamp_amp_result_len(const struct MfampAmpResult *result, size_t *len);

/**
 * # Safety
 * `result` must come from this library and `point` be writable.
 */
enum MfampStatus mfamp_amp_result_point(const struct MfampAmpResult *result,
                                        size_t index,
                                        struct MfampPoint *point);

/**
 * # Safety
 * `result` must come from this library; the outputs must be writable.
 */
enum MfampStatus mfamp_amp_result_summary(const struct MfampAmpResult *result,
                                          uint8_t *converged,
                                          uint64_t *iterations,
                                          uint64_t *clamped);

/**
 * Copies the N×P signal estimate in row-major order.
 *
 * # Safety
 * `buf` must be valid for `len` doubles.
 */
enum MfampStatus mfamp_amp_result_copy_signal(const struct MfampAmpResult *result,
                                              double *buf,
                                              size_t len);

/**
 * # Safety
 * `result` must be null or come from this library and not be used again.
 */
void mfamp_amp_result_free(struct MfampAmpResult *result);

/**
 * Iterates state evolution from the uninformative start (`informed == 0`) or
 * from `(epsilon, epsilon)`, writing the last point.
 *
 * # Safety
 * Pointers must be valid; `converged` may be null.
 */
enum MfampStatus mfamp_se_run(const struct MfampParams *params,
                              uint8_t informed,
                              double epsilon,
                              double *e,
                              double *d,
                              uint8_t *converged);

/**
 * # Safety
 * `params` must be valid and `phi` writable.
 */
enum MfampStatus mfamp_potential(const struct MfampParams *params, double e, double d, double *phi);

/**
 * Bayes-optimal `(E*, D*)` and the potential there.
 *
 * # Safety
 * `params` must be valid and the outputs writable.
 */
enum MfampStatus mfamp_mmse(const struct MfampParams *params, double *e, double *d, double *phi);

/**
 * Exact-recovery threshold `α/(α−ρ)`; `InvalidArgument` when `α ≤ ρ`.
 *
 * # Safety
 * `value` must be writable.
 */
enum MfampStatus mfamp_pi_star(double alpha, double rho, double *value);

/**
 * Spinodal sample ratio. `value` is NaN unless `kind` is `At`.
 *
 * # Safety
 * The outputs must be writable.
 */
enum MfampStatus mfamp_spinodal_pi(double alpha,
                                   double rho,
                                   double eta,
                                   double delta,
                                   double tol,
                                   enum MfampSpinodalKind *kind,
                                   double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFAMP_H */
