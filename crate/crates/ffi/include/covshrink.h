#ifndef COVSHRINK_H
#define COVSHRINK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_CONFIG = 2,
  CS_STATUS_DATA = 3,
  CS_STATUS_NUMERIC = 4,
  CS_STATUS_PANIC = 5,
} CsStatus;

/**
 * Opaque symmetric matrix with its estimator label.
 */
typedef struct CsMatrix CsMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Estimates a covariance matrix from `n × p` row-major data.
 *
 * `method` is a method name such as `"msgcor"` or a JSON object such as
 * `{"name":"adap","delta":1.5}`. `truth` may be NULL unless the method is an
 * oracle. `k_factor` sets `K = round(k_factor · p)` for the g-modeling
 * methods.
 *
 * # Safety
 * `data` must point to `n * p` doubles, `method` to a NUL-terminated string,
 * `truth` to a live handle or NULL, and `out` to writable storage.
 */
enum CsStatus cs_estimate(const double *data,
                          size_t n,
                          size_t p,
                          const char *method,
                          const struct CsMatrix *truth,
                          uint64_t seed,
                          double k_factor,
                          struct CsMatrix **out);

/**
 * Population covariance of simulation model `model_id` (1 to 6).
 *
 * # Safety
 * `out` must point to writable storage.
 */
enum CsStatus cs_make_sigma(uint8_t model_id, size_t p, uint64_t seed, struct CsMatrix **out);

/**
 * Draws `n` rows of `N(0, sigma)` into `out`, row-major, `n * p` doubles.
 *
 * # Safety
 * `sigma` must be a live handle and `out` must hold `out_len` doubles.
 */
enum CsStatus cs_sample_mvn(const struct CsMatrix *sigma,
                            size_t n,
                            uint64_t seed,
                            double *out,
                            size_t out_len);

/**
 * Positive-definite correction; `grid_size = 20`, `alpha_max = 10` are the
 * usual settings.
 *
 * # Safety
 * `m` must be a live handle and `out` writable.
 */
enum CsStatus cs_correct_pd(const struct CsMatrix *m,
                            size_t grid_size,
                            double alpha_max,
                            struct CsMatrix **out);

/**
 * `‖A − B‖_F / p`.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum CsStatus cs_scaled_frobenius_loss(const struct CsMatrix *a,
                                       const struct CsMatrix *b,
                                       double *out);

/**
 * Dimension `p`, or 0 for NULL.
 *
 * # Safety
 * `m` must be a live handle or NULL.
 */
size_t cs_matrix_dim(const struct CsMatrix *m);

/**
 * # Safety
 * `m` must be a live handle and `out` writable.
 */
enum CsStatus cs_matrix_get(const struct CsMatrix *m, size_t i, size_t j, double *out);

/**
 * Copies all `p * p` entries, row-major, into `buf`.
 *
 * # Safety
 * `m` must be a live handle and `buf` must hold `len` doubles.
 */
enum CsStatus cs_matrix_copy(const struct CsMatrix *m, double *buf, size_t len);

/**
 * Estimator label of the matrix, valid while the handle lives.
 *
 * # Safety
 * `m` must be a live handle or NULL.
 */
const char *cs_matrix_method(const struct CsMatrix *m);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void cs_matrix_free(struct CsMatrix *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVSHRINK_H */
