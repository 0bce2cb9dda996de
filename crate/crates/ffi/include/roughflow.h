#ifndef ROUGHFLOW_H
#define ROUGHFLOW_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_PARSE = 3,
  RF_STATUS_NUMERIC = 4,
  RF_STATUS_PRECONDITION = 5,
  RF_STATUS_PANIC = 6,
} RfStatus;

/**
 * Family of polynomial vector fields.
 */
typedef struct RfFields RfFields;

/**
 * Path sampled on a uniform grid.
 */
typedef struct RfPath RfPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rf_last_error(void);

/**
 * fBm covariance `½(s^{2H} + t^{2H} - |t-s|^{2H})`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum RfStatus rf_covariance(double s, double t, double hurst, double *out);

/**
 * Parse a field file (`m d` header then `d` blocks of `m` polynomial lines).
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` valid for one write.
 */
enum RfStatus rf_fields_parse(const char *text, struct RfFields **out);

/**
 * The Yamato family on ℝ³ with three driving components.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum RfStatus rf_fields_yamato(struct RfFields **out);

/**
 * # Safety
 * `f` must come from this library and not be used afterwards; null is ignored.
 */
void rf_fields_free(struct RfFields *f);

/**
 * State dimension `m` and number of fields `d`.
 *
 * # Safety
 * `f` must be a live handle; `m` and `d` valid for one write each.
 */
enum RfStatus rf_fields_dims(const struct RfFields *f, uintptr_t *m, uintptr_t *d);

/**
 * Whether every bracket of length `n` vanishes.
 *
 * # Safety
 * `f` must be a live handle and `out` valid for one write.
 */
enum RfStatus rf_fields_is_nilpotent(const struct RfFields *f, uintptr_t n, bool *out);

/**
 * Rank of the brackets of length ≤ `up_to` at `x`.
 *
 * # Safety
 * `x` must hold `len` values, `f` must be live and `out` valid for one write.
 */
enum RfStatus rf_fields_hormander_rank(const struct RfFields *f,
                                       const double *x,
                                       uintptr_t len,
                                       uintptr_t up_to,
                                       uintptr_t *out);

/**
 * Path `index` of the stream `seed` of `d`-dimensional fBm on
 * `n_points` uniform points of `[0, horizon]`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum RfStatus rf_sample_fbm(double hurst,
                            double horizon,
                            uintptr_t n_points,
                            uintptr_t d,
                            uint64_t seed,
                            uint64_t index,
                            struct RfPath **out);

/**
 * Path from row-major values (`n_points × d`, first row zero).
 *
 * # Safety
 * `values` must hold `n_points * d` values and `out` be valid for one write.
 */
enum RfStatus rf_path_from_values(double horizon,
                                  uintptr_t n_points,
                                  uintptr_t d,
                                  const double *values,
                                  struct RfPath **out);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards; null is ignored.
 */
void rf_path_free(struct RfPath *p);

/**
 * Number of grid points and components.
 *
 * # Safety
 * `p` must be live; `n_points` and `d` valid for one write each.
 */
enum RfStatus rf_path_len(const struct RfPath *p, uintptr_t *n_points, uintptr_t *d);

/**
 * Copy the row-major values (`n_points × d`) into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum RfStatus rf_path_values(const struct RfPath *p, double *out, uintptr_t len);

/**
 * Row-major `d × d` second-level iterated integral `B²_{st}`.
 *
 * # Safety
 * `p` must be live and `out` hold `len ≥ d²` values.
 */
enum RfStatus rf_levy_area(const struct RfPath *p, double s, double t, double *out, uintptr_t len);

/**
 * `y_t = exp(Z_t)(a)` for fields nilpotent of order `order`.
 *
 * # Safety
 * `a` must hold `m` values and `out` hold `out_len ≥ m` values.
 */
enum RfStatus rf_strichartz_solve(const struct RfFields *f,
                                  const struct RfPath *p,
                                  uintptr_t order,
                                  const double *a,
                                  uintptr_t m,
                                  double t,
                                  double *out,
                                  uintptr_t out_len);

/**
 * Closed-form Yamato solution at `t` for a 3-dimensional driver.
 *
 * # Safety
 * `a` must hold 3 values and `out` hold `out_len ≥ 3` values.
 */
enum RfStatus rf_yamato_explicit(const struct RfPath *p,
                                 const double *a,
                                 double t,
                                 double *out,
                                 uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUGHFLOW_H */
