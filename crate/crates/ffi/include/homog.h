#ifndef HOMOG_H
#define HOMOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum HomogStatus {
  HOMOG_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an out-of-range argument.
  HOMOG_STATUS_INVALID_ARGUMENT = 1,
  // Malformed field, expression or grid.
  HOMOG_STATUS_CONFIG = 2,
  // Coefficient not positive, potential not centred.
  HOMOG_STATUS_HYPOTHESIS = 3,
  // A linear or nonlinear solve failed.
  HOMOG_STATUS_SOLVER = 4,
  // Internal panic caught at the boundary.
  HOMOG_STATUS_INTERNAL = 5,
} HomogStatus;

// On-demand nonlinear cell solver for fixed coefficients.
typedef struct HomogCellEvaluator HomogCellEvaluator;

// Nodal values of a solution of the oscillating problem.
typedef struct HomogSolution HomogSolution;

// Effective coefficients of the linear (p = 2) model, row-major.
typedef struct HomogLinearModel {
  uint32_t dim;
  double abar[4];
  double bbar[2];
  double cbar[2];
  double sbar;
  double min_eigenvalue;
} HomogLinearModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the library; static, never freed.
const char *homog_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *homog_last_error(void);

// Linear effective model for coefficient `a` and potential `v` given as
// presets or expressions, on a cell grid with `m` elements per axis.
//
// # Safety
// `a` and `v` must be nul-terminated strings; `out` must be writable.
enum HomogStatus homog_linear_effective(uint32_t dim,
                                        const char *a,
                                        const char *v,
                                        uint32_t m,
                                        struct HomogLinearModel *out);

// Creates a cell evaluator for exponent `p >= 2` on `m` cell elements per axis.
//
// # Safety
// `a` and `v` must be nul-terminated strings; `out` must be writable.
enum HomogStatus homog_cell_evaluator_new(uint32_t dim,
                                          const char *a,
                                          const char *v,
                                          double p,
                                          uint32_t m,
                                          struct HomogCellEvaluator **out);

// Effective flux q (two entries, the second zero in 1D) and coupling v at (θ, ξ).
//
// # Safety
// `eval` must come from [`homog_cell_evaluator_new`]; `xi` must point to two
// values; `q` to two writable values and `v` to one.
enum HomogStatus homog_cell_evaluate(const struct HomogCellEvaluator *eval,
                                     double theta,
                                     const double *xi,
                                     double *q,
                                     double *v);

// # Safety
// `eval` must be null or come from [`homog_cell_evaluator_new`], freed once.
void homog_cell_evaluator_free(struct HomogCellEvaluator *eval);

// Solves the oscillating problem on the unit interval or square with
// ε = 1/`eps_inv`, load expression `f` and `elements_per_period` elements per period.
//
// # Safety
// String arguments must be nul-terminated; `out` must be writable.
enum HomogStatus homog_solve_epsilon(uint32_t dim,
                                     const char *a,
                                     const char *v,
                                     const char *f,
                                     double p,
                                     uint32_t eps_inv,
                                     uint32_t elements_per_period,
                                     struct HomogSolution **out);

// Number of nodal values, boundary nodes included.
//
// # Safety
// `sol` must be null or a live solution handle.
size_t homog_solution_len(const struct HomogSolution *sol);

// Copies up to `len` nodal values into `buf` (row-major in 2D); returns the number copied.
//
// # Safety
// `sol` must be a live solution handle and `buf` writable for `len` values.
size_t homog_solution_values(const struct HomogSolution *sol, double *buf, size_t len);

// # Safety
// `sol` must be null or come from [`homog_solve_epsilon`], freed once.
void homog_solution_free(struct HomogSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMOG_H */
