#ifndef PMEFRONT_H
#define PMEFRONT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The first four match the command-line exit codes.
 */
typedef enum PmfStatus {
  PMF_STATUS_OK = 0,
  PMF_STATUS_CONFIG_ERROR = 1,
  PMF_STATUS_PRECONDITION_ERROR = 2,
  PMF_STATUS_NUMERICAL_ERROR = 3,
  PMF_STATUS_NULL_POINTER = 4,
  PMF_STATUS_BUFFER_TOO_SMALL = 5,
  PMF_STATUS_PANIC = 6,
} PmfStatus;

/**
 * Boundary classification of the linearized operator at `h = 0`.
 */
typedef enum PmfClassification {
  PMF_CLASSIFICATION_SATISFIES_B_PRIME = 0,
  PMF_CLASSIFICATION_SATISFIES_B = 1,
  PMF_CLASSIFICATION_SATISFIES_B_DOUBLE_PRIME_ONLY = 2,
  PMF_CLASSIFICATION_FAILS = 3,
} PmfClassification;

/**
 * Opaque pressure problem on a grid.
 */
typedef struct PmfProblem PmfProblem;

/**
 * Opaque result of a solver run.
 */
typedef struct PmfRun PmfRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pmf_last_error(char *buf, size_t len);

/**
 * Quadratic-pressure problem of exponent `m` in `dim` dimensions (1 or 2),
 * taken at time `t0` on its support with `resolution` nodes per direction.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum PmfStatus pmf_problem_quadratic_pressure(double m,
                                              uint32_t dim,
                                              double a0,
                                              double t0,
                                              size_t resolution,
                                              struct PmfProblem **out);

/**
 * Problem on the interval `[a, b]` with initial pressure given by an
 * expression in `x`.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `out` must be valid for one
 * handle.
 */
enum PmfStatus pmf_problem_interval(double m,
                                    double a,
                                    double b,
                                    size_t resolution,
                                    const char *source,
                                    struct PmfProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from a `pmf_problem_*` constructor
 * that has not been freed.
 */
void pmf_problem_free(struct PmfProblem *problem);

/**
 * Number of grid nodes of the problem.
 *
 * # Safety
 * `problem` must be a live handle.
 */
size_t pmf_problem_node_count(const struct PmfProblem *problem);

/**
 * Classifies the boundary behaviour of the linearized operator at `h = 0`.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be valid for one value.
 */
enum PmfStatus pmf_check_fichera(const struct PmfProblem *problem,
                                 double tol_zero,
                                 double tol_strict,
                                 enum PmfClassification *out);

/**
 * Runs the implicit height solver from a cold start at `t_start` to `t_end`.
 * `force` nonzero skips the boundary-condition gate.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be valid for one handle.
 */
enum PmfStatus pmf_solve(const struct PmfProblem *problem,
                         double dt,
                         double t_start,
                         double t_end,
                         int32_t force,
                         struct PmfRun **out);

/**
 * # Safety
 * `run` must be null or a handle from [`pmf_solve`] that has not been freed.
 */
void pmf_run_free(struct PmfRun *run);

/**
 * Time reached by the run; below `t_end` when it stopped early.
 *
 * # Safety
 * `run` must be a live handle.
 */
double pmf_run_attained_t(const struct PmfRun *run);

/**
 * Copies the final height into `buf`, which holds `len` values.
 *
 * # Safety
 * `run` must be a live handle; `buf` must point to `len` writable values.
 */
enum PmfStatus pmf_run_final_height(const struct PmfRun *run, double *buf, size_t len);

/**
 * Writes the front points at the final sample, flattened by coordinate,
 * into `buf` and their count into `count`. A null `buf` only reports the
 * count.
 *
 * # Safety
 * `run` must be a live handle; `count` must be valid; `buf` must be null
 * or hold `len` writable values.
 */
enum PmfStatus pmf_run_front(const struct PmfRun *run, double *buf, size_t len, size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMEFRONT_H */
