#ifndef FLAMES_H
#define FLAMES_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlamesStatus {
  FLAMES_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  FLAMES_STATUS_NULL = 1,
  FLAMES_STATUS_INVALID = 2,
  FLAMES_STATUS_PARSE = 3,
  /**
   * A batch was older than the state it was applied to.
   */
  FLAMES_STATUS_TEMPORAL = 4,
  FLAMES_STATUS_UNSTABLE = 5,
  FLAMES_STATUS_IO = 6,
  /**
   * A Rust panic was caught; the handle involved should be freed.
   */
  FLAMES_STATUS_PANIC = 7,
} FlamesStatus;

/**
 * A spike-aware HiPPO kernel together with its running state.
 */
typedef struct FlamesKernel FlamesKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *flames_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *flames_version(void);

/**
 * Creates a kernel with the LegS base matrix, uniform decay `alpha0` and
 * seeded Gaussian couplings. The state starts at zero at time `t0`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle into.
 */
enum FlamesStatus flames_kernel_new(size_t order,
                                    size_t input_dim,
                                    size_t output_dim,
                                    double alpha0,
                                    uint64_t seed,
                                    double t0,
                                    struct FlamesKernel **out);

/**
 * Releases a kernel. Null is ignored.
 *
 * # Safety
 * `kernel` must come from [`flames_kernel_new`] and not be used afterwards.
 */
void flames_kernel_free(struct FlamesKernel *kernel);

/**
 * Writes the state size, input and output widths. Any out pointer may be
 * null.
 *
 * # Safety
 * `kernel` must be a live handle; non-null out pointers must be writable.
 */
enum FlamesStatus flames_kernel_dims(struct FlamesKernel *kernel,
                                     size_t *order,
                                     size_t *input_dim,
                                     size_t *output_dim);

/**
 * Advances the state to time `t` with `values` (one per input channel)
 * held over the elapsed interval.
 *
 * # Safety
 * `values` must point to `len` readable doubles.
 */
enum FlamesStatus flames_kernel_step(struct FlamesKernel *kernel,
                                     double t,
                                     const double *values,
                                     size_t len);

/**
 * Writes `C x` into `out` (`len ≥ output_dim`).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum FlamesStatus flames_kernel_readout(struct FlamesKernel *kernel, double *out, size_t len);

/**
 * Copies the state vector into `out` (`len ≥ order`) and its time into
 * `t` when non-null.
 *
 * # Safety
 * `out` must point to `len` writable doubles; `t` may be null.
 */
enum FlamesStatus flames_kernel_state(struct FlamesKernel *kernel,
                                      double *out,
                                      size_t len,
                                      double *t);

/**
 * Zeroes the state and sets its time to `t0`.
 *
 * # Safety
 * `kernel` must be a live handle.
 */
enum FlamesStatus flames_kernel_reset(struct FlamesKernel *kernel, double t0);

/**
 * Writes the `order x order` LegS matrix in row-major order.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum FlamesStatus flames_hippo_legs(size_t order, double *out, size_t len);

/**
 * Linear convolution of `input` (length `n`) with real `taps` (length
 * `taps_len`), truncated to `n` samples and written to `out`.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths; `out` holds `n`.
 */
enum FlamesStatus flames_fft_convolve(const double *taps,
                                      size_t taps_len,
                                      const double *input,
                                      size_t n,
                                      double *out);

/**
 * Runs the model on an event file. `config_json` is a JSON object of
 * settings (`"{}"` for the tiny preset). On success `*out_json` receives
 * the scores and summary as a JSON string to release with
 * [`flames_string_free`].
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_json` must be writable.
 */
enum FlamesStatus flames_model_run(const char *config_json,
                                   const char *events_path,
                                   uint64_t seed,
                                   char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void flames_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLAMES_H */
