#ifndef NUCNORM_H
#define NUCNORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum NucnormStatus {
  NUCNORM_STATUS_OK = 0,
  NUCNORM_STATUS_NULL_POINTER = 1,
  NUCNORM_STATUS_INVALID_INPUT = 2,
  NUCNORM_STATUS_SOLVER_ABORT = 3,
  NUCNORM_STATUS_PANIC = 4,
} NucnormStatus;

/**
 * Dense real matrix.
 */
typedef struct NucnormMatrix NucnormMatrix;

/**
 * Matrix completion problem: observed positions and values.
 */
typedef struct NucnormProblem NucnormProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *nucnorm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nucnorm_version(void);

/**
 * Creates a `rows x cols` matrix from `rows * cols` row-major values.
 *
 * # Safety
 * `values` must point to `rows * cols` readable doubles; `out` must be a
 * valid pointer.
 */
enum NucnormStatus nucnorm_matrix_new(size_t rows,
                                      size_t cols,
                                      const double *values,
                                      struct NucnormMatrix **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library not yet freed.
 */
void nucnorm_matrix_free(struct NucnormMatrix *m);

/**
 * Row count, 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t nucnorm_matrix_rows(const struct NucnormMatrix *m);

/**
 * Column count, 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t nucnorm_matrix_cols(const struct NucnormMatrix *m);

/**
 * Copies the entries in row-major order into `out`, which holds `len`
 * doubles; `len` must equal rows * cols.
 *
 * # Safety
 * `m` must be a live handle and `out` must point to `len` writable doubles.
 */
enum NucnormStatus nucnorm_matrix_copy(const struct NucnormMatrix *m, double *out, size_t len);

/**
 * Creates a completion problem observing `values[t]` at
 * `(row_index[t], col_index[t])` for `t < count`, 0-based.
 *
 * # Safety
 * The three arrays must hold `count` readable elements; `out` must be valid.
 */
enum NucnormStatus nucnorm_problem_new(size_t rows,
                                       size_t cols,
                                       const size_t *row_index,
                                       const size_t *col_index,
                                       const double *values,
                                       size_t count,
                                       struct NucnormProblem **out);

/**
 * # Safety
 * `p` must be NULL or a handle from this library not yet freed.
 */
void nucnorm_problem_free(struct NucnormProblem *p);

/**
 * Number of observed entries, 0 for NULL.
 *
 * # Safety
 * `p` must be NULL or a live handle.
 */
size_t nucnorm_problem_len(const struct NucnormProblem *p);

/**
 * Random rank-`rank` instance with `samples` observed entries. Either out
 * pointer may be NULL if that object is not wanted.
 *
 * # Safety
 * Non-NULL out pointers must be valid for writes.
 */
enum NucnormStatus nucnorm_generate(size_t rows,
                                    size_t cols,
                                    size_t rank,
                                    size_t samples,
                                    uint64_t seed,
                                    struct NucnormProblem **problem_out,
                                    struct NucnormMatrix **truth_out);

/**
 * Solves `problem` with a named profile (`fpc1`, `fpc2`, `fpc3`, `fpca`,
 * `bregman`, `fpca-easy`); NULL selects `fpc1`. `seed` drives the
 * approximate SVD sampler.
 *
 * # Safety
 * `problem` must be a live handle, `profile` NULL or a NUL-terminated
 * string, and `out` valid for writes.
 */
enum NucnormStatus nucnorm_solve(const struct NucnormProblem *problem,
                                 const char *profile,
                                 uint64_t seed,
                                 struct NucnormMatrix **out);

/**
 * `‖x − truth‖_F / ‖truth‖_F`.
 *
 * # Safety
 * Both handles must be live and `out` valid for writes.
 */
enum NucnormStatus nucnorm_rel_error(const struct NucnormMatrix *x,
                                     const struct NucnormMatrix *truth,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUCNORM_H */
