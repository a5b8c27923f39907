#ifndef MODBAYES_H
#define MODBAYES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MbStatus {
  MB_STATUS_OK = 0,
  MB_STATUS_NULL_POINTER = 1,
  MB_STATUS_INVALID_INPUT = 2,
  MB_STATUS_CONFIG_ERROR = 3,
  MB_STATUS_DATA_ERROR = 4,
  MB_STATUS_GATE_FAILED = 5,
  MB_STATUS_NUMERICAL_ERROR = 6,
  MB_STATUS_PANIC = 7,
} MbStatus;

// Uniformity measure selector.
typedef enum MbMeasure {
  MB_MEASURE_CENTERED_L2 = 0,
  MB_MEASURE_WRAPAROUND_L2 = 1,
} MbMeasure;

// Opaque trained Gaussian process.
typedef struct MbGp MbGp;

// Log posterior callback: `theta` has `dim` entries.
typedef double (*MbLogDensity)(const double *theta, size_t dim, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Free with
// [`mb_string_free`].
char *mb_last_error_message(void);

// # Safety
// `s` must come from this library and not have been freed.
void mb_string_free(char *s);

// Squared discrepancy of `n x d` points in the unit cube.
//
// # Safety
// `u` holds `n * d` doubles; `out` is writable.
enum MbStatus mb_discrepancy(const double *u,
                             size_t n,
                             size_t d,
                             enum MbMeasure measure,
                             double *out);

// Maximin Latin hypercube on `[0,1]^d`, written row-major to `out`.
//
// # Safety
// `out` holds `n * d` doubles.
enum MbStatus mb_maximin_lhs(size_t n, size_t d, size_t restarts, uint64_t seed, double *out);

// Densitometer correction; `in_range` is set to 1 when it applied.
//
// # Safety
// Both pointers are writable.
enum MbStatus mb_correct_void_fraction(double measured, double *corrected, int32_t *in_range);

// Fits a GP to `n x d` inputs; `n_starts = 0` keeps the library default.
// The handle written to `out` is released with [`mb_gp_free`].
//
// # Safety
// `x` holds `n * d` doubles, `y` holds `n`, `out` is writable.
enum MbStatus mb_gp_fit(const double *x,
                        size_t n,
                        size_t d,
                        const double *y,
                        double nugget,
                        size_t n_starts,
                        uint64_t seed,
                        struct MbGp **out);

// Predictive mean and variance at `m` points.
//
// # Safety
// `gp` is a live handle; `x` holds `m * d` doubles; `mean` and `variance`
// hold `m` doubles each (`variance` may be NULL).
enum MbStatus mb_gp_predict(const struct MbGp *gp,
                            const double *x,
                            size_t m,
                            double *mean,
                            double *variance);

// Mean squared leave-one-out residual.
//
// # Safety
// `gp` is a live handle; `out` is writable.
enum MbStatus mb_gp_loocv(const struct MbGp *gp, double *out);

// Serialized model; free the string with [`mb_string_free`].
//
// # Safety
// `gp` is a live handle; `out` is writable.
enum MbStatus mb_gp_to_json(const struct MbGp *gp, char **out);

// # Safety
// `gp` is NULL or a handle from [`mb_gp_fit`] not yet freed.
void mb_gp_free(struct MbGp *gp);

// Partitions `n` tests with design rows `x` (`n x d`). `assignment[i]` is set
// to 1 for inverse-UQ tests and 0 for validation tests; `n_iuq` receives
// their count.
//
// # Safety
// `ids` holds `n` entries, `x` holds `n * d`, `assignment` holds `n`,
// `n_iuq` is writable.
enum MbStatus mb_sequential_tsa(const int64_t *ids,
                                const double *x,
                                size_t n,
                                size_t d,
                                double alpha,
                                double beta,
                                enum MbMeasure measure,
                                int32_t *assignment,
                                size_t *n_iuq);

// Adaptive Metropolis over a caller-supplied log density. `init_std` gives
// the warm-up proposal; `samples` receives `n_samples x dim` row-major.
//
// # Safety
// `init` and `init_std` hold `dim` doubles, `samples` holds
// `n_samples * dim`, `acceptance_rate` is writable or NULL. `log_density`
// must be safe to call with `user_data`.
enum MbStatus mb_adaptive_metropolis(MbLogDensity log_density,
                                     void *user_data,
                                     const double *init,
                                     const double *init_std,
                                     size_t dim,
                                     size_t n_samples,
                                     size_t warmup,
                                     uint64_t seed,
                                     double *samples,
                                     double *acceptance_rate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODBAYES_H */
