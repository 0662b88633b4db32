/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MATCHOPT_H
#define MATCHOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MoStatus {
  MO_STATUS_OK = 0,
  MO_STATUS_INVALID_INPUT = 1,
  MO_STATUS_NUMERICAL = 2,
  MO_STATUS_DEGENERATE = 3,
  MO_STATUS_REFUSED = 4,
  // The solve ran out of iterations; the handle is still returned.
  MO_STATUS_NOT_CONVERGED = 5,
  MO_STATUS_NULL_POINTER = 6,
  MO_STATUS_PANIC = 7,
  MO_STATUS_INTERNAL = 8,
} MoStatus;

// Validated cost matrix with its bound.
typedef struct MoCost MoCost;

// Convex combination of permutations.
typedef struct MoMixture MoMixture;

// Solved transport plan (exact assignment when `1/eta = 0`).
typedef struct MoPlan MoPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the next call into the library.
const char *mo_last_error(void);

// Library version as a static NUL-terminated string.
const char *mo_version(void);

// Copies `n * n` row-major costs. `c_bar <= 0` uses the largest entry as the bound.
enum MoStatus mo_cost_new(const double *data, size_t n, double c_bar, struct MoCost **out);

void mo_cost_free(struct MoCost *cost);

size_t mo_cost_n(const struct MoCost *cost);

// Solves the plan at regularization `inv_eta = 1/eta`. Returns `NOT_CONVERGED`
// with a valid handle in `*out` when the iteration budget runs out.
enum MoStatus mo_solve(const struct MoCost *cost,
                       double inv_eta,
                       double tol,
                       size_t max_iter,
                       struct MoPlan **out);

void mo_plan_free(struct MoPlan *plan);

size_t mo_plan_n(const struct MoPlan *plan);

bool mo_plan_converged(const struct MoPlan *plan);

size_t mo_plan_iterations(const struct MoPlan *plan);

// Writes the `n * n` coupling, row-major, into `out` of length `len`.
enum MoStatus mo_plan_coupling(const struct MoPlan *plan, double *out, size_t len);

// Writes the dual potentials into `f` and `g`, each of length `n`. Fails for unregularized plans.
enum MoStatus mo_plan_potentials(const struct MoPlan *plan, double *f, double *g, size_t n);

// `sum_ij c_ij pi_ij` for the plan under `cost`.
enum MoStatus mo_plan_expected_cost(const struct MoPlan *plan,
                                    const struct MoCost *cost,
                                    double *out);

// Exact assignment: `sigma` receives `n` column indices, `total` the average matched cost.
enum MoStatus mo_assignment(const struct MoCost *cost, size_t *sigma, double *total);

enum MoStatus mo_bvn_decompose(const struct MoPlan *plan, struct MoMixture **out);

void mo_mixture_free(struct MoMixture *mix);

size_t mo_mixture_len(const struct MoMixture *mix);

// Weight and permutation of component `k`; `sigma` must hold `n` entries.
enum MoStatus mo_mixture_component(const struct MoMixture *mix,
                                   size_t k,
                                   double *weight,
                                   size_t *sigma);

// Draws one permutation with probability equal to its weight; deterministic in `seed`.
enum MoStatus mo_mixture_sample(const struct MoMixture *mix, uint64_t seed, size_t *sigma);

// `e^{2 eta c_bar} (l1 + l2^2) + log(n)/eta`. `*vacuous` is set when the bound overflows to `+inf`.
enum MoStatus mo_regret_bound(double l1,
                              double l2,
                              double eta,
                              double c_bar,
                              size_t n,
                              double *total,
                              bool *vacuous);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MATCHOPT_H */
