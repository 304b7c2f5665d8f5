#ifndef QSDLAB_H
#define QSDLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QsdlabStatus {
  QSDLAB_STATUS_OK = 0,
  QSDLAB_STATUS_NULL_POINTER = 1,
  QSDLAB_STATUS_INVALID_ARGUMENT = 2,
  QSDLAB_STATUS_CONFIG = 3,
  QSDLAB_STATUS_NUMERICAL = 4,
  QSDLAB_STATUS_BUFFER_TOO_SMALL = 5,
  QSDLAB_STATUS_PANIC = 6,
} QsdlabStatus;

typedef struct QsdlabGrid QsdlabGrid;

typedef struct QsdlabKernel QsdlabKernel;

typedef struct QsdlabProtocol QsdlabProtocol;

typedef struct QsdlabQsd QsdlabQsd;

/**
 * Scalar summary of a solution.
 */
typedef struct QsdlabQsdSummary {
  double rho;
  double one_minus_rho;
  double theta;
  double expected_t0;
  double residual;
  double gap_estimate;
  size_t iterations;
} QsdlabQsdSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *qsdlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qsdlab_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum QsdlabStatus qsdlab_grid_new(size_t d, uint32_t n, struct QsdlabGrid **out);

/**
 * Number of states, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t qsdlab_grid_len(const struct QsdlabGrid *grid);

/**
 * Number of interior states, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t qsdlab_grid_interior_len(const struct QsdlabGrid *grid);

/**
 * Writes the `d` coordinates of state `rank` into `out`.
 *
 * # Safety
 * `grid` must be a live handle and `out` must hold `len` doubles.
 */
enum QsdlabStatus qsdlab_grid_coords(const struct QsdlabGrid *grid,
                                     size_t rank,
                                     double *out,
                                     size_t len);

/**
 * # Safety
 * `grid` must be null or a handle not yet freed.
 */
void qsdlab_grid_free(struct QsdlabGrid *grid);

/**
 * Uniform-aspiration imitation for the `d x d` row-major payoff matrix.
 *
 * # Safety
 * `payoff` must hold `d * d` doubles; `out` must be writable.
 */
enum QsdlabStatus qsdlab_protocol_aspiration_uniform(const double *payoff,
                                                     size_t d,
                                                     double scale,
                                                     struct QsdlabProtocol **out);

/**
 * Protocol described by the `[model]` section of a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum QsdlabStatus qsdlab_protocol_from_toml(const char *toml, struct QsdlabProtocol **out);

/**
 * Writes the mean field at `x` (length `d`) into `out` (length `d`).
 *
 * # Safety
 * `protocol` must be live; `x` and `out` must hold `d` doubles each.
 */
enum QsdlabStatus qsdlab_protocol_mean_field(const struct QsdlabProtocol *protocol,
                                             const double *x,
                                             size_t d,
                                             double *out);

/**
 * # Safety
 * `protocol` must be null or a handle not yet freed.
 */
void qsdlab_protocol_free(struct QsdlabProtocol *protocol);

/**
 * Assembles the transition kernel of `protocol` on `grid`.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum QsdlabStatus qsdlab_kernel_new(const struct QsdlabProtocol *protocol,
                                    const struct QsdlabGrid *grid,
                                    struct QsdlabKernel **out);

/**
 * # Safety
 * `kernel` must be null or a handle not yet freed.
 */
void qsdlab_kernel_free(struct QsdlabKernel *kernel);

/**
 * Power iteration on the interior block. Non-positive `tol` or zero
 * `max_iter` select the library defaults.
 *
 * # Safety
 * `kernel` must be live; `out` must be writable.
 */
enum QsdlabStatus qsdlab_qsd_solve(const struct QsdlabKernel *kernel,
                                   double tol,
                                   size_t max_iter,
                                   struct QsdlabQsd **out);

/**
 * # Safety
 * `solution` must be live; `out` must be writable.
 */
enum QsdlabStatus qsdlab_qsd_summary(const struct QsdlabQsd *solution,
                                     struct QsdlabQsdSummary *out);

/**
 * Copies the QSD (indexed by interior position) into `out`. With a null
 * `out`, only reports the required length through `needed`.
 *
 * # Safety
 * `solution` must be live; `out` must hold `len` doubles when non-null;
 * `needed` may be null.
 */
enum QsdlabStatus qsdlab_qsd_mu(const struct QsdlabQsd *solution,
                                double *out,
                                size_t len,
                                size_t *needed);

/**
 * # Safety
 * `solution` must be null or a handle not yet freed.
 */
void qsdlab_qsd_free(struct QsdlabQsd *solution);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSDLAB_H */
