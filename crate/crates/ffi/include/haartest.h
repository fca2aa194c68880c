#ifndef HAARTEST_H
#define HAARTEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HtStatus {
  HT_STATUS_OK = 0,
  HT_STATUS_NULL_POINTER = 1,
  HT_STATUS_INVALID_ARGUMENT = 2,
  HT_STATUS_CONFIG = 3,
  HT_STATUS_CHECK_FAILED = 4,
  HT_STATUS_NUMERICAL = 5,
  HT_STATUS_IO = 6,
  HT_STATUS_PANIC = 7,
} HtStatus;

typedef struct HtGrid HtGrid;

typedef struct HtMeasure HtMeasure;

typedef struct HtOperator HtOperator;

typedef struct HtComparability {
  double norm;
  double testing;
  double testing_dual;
  double ratio;
  bool converged;
} HtComparability;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *ht_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ht_version(void);

/**
 * Unit-cube grid in `dim` dimensions refined to `max_level`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum HtStatus ht_grid_new(size_t dim, uint32_t max_level, struct HtGrid **out);

/**
 * # Safety
 * `grid` must come from [`ht_grid_new`] and not be freed twice. NULL is ignored.
 */
void ht_grid_free(struct HtGrid *grid);

/**
 * Number of finest-level cells, or 0 for NULL.
 *
 * # Safety
 * `grid` must be NULL or a live handle.
 */
size_t ht_grid_cell_count(const struct HtGrid *grid);

/**
 * Measure from a spec string such as `"lebesgue"` or `"doubling:2:7"`.
 *
 * # Safety
 * `grid` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
 */
enum HtStatus ht_measure_new(const struct HtGrid *grid, const char *spec, struct HtMeasure **out);

/**
 * Measure with the given mass on each finest-level cell.
 *
 * # Safety
 * `masses` must point to `len` readable doubles.
 */
enum HtStatus ht_measure_from_cells(const struct HtGrid *grid,
                                    const double *masses,
                                    size_t len,
                                    struct HtMeasure **out);

/**
 * # Safety
 * `m` must come from a measure constructor and not be freed twice. NULL is ignored.
 */
void ht_measure_free(struct HtMeasure *m);

/**
 * # Safety
 * `m` must be a live handle and `out` valid for writes.
 */
enum HtStatus ht_measure_total(const struct HtMeasure *m, double *out);

/**
 * Truncated operator with the default truncation for the grid.
 * `kernel` is `hilbert`, `fractional_integral`, `riesz_like` or `zero`.
 *
 * # Safety
 * `grid` must be live, `kernel` NUL-terminated and `out` valid for writes.
 */
enum HtStatus ht_operator_new(const struct HtGrid *grid,
                              const char *kernel,
                              double lambda,
                              struct HtOperator **out);

/**
 * # Safety
 * `op` must come from [`ht_operator_new`] and not be freed twice. NULL is ignored.
 */
void ht_operator_free(struct HtOperator *op);

/**
 * Global Haar testing constant over levels `0..depth`; `dual` swaps the
 * roles of the measures and transposes the kernel.
 *
 * # Safety
 * All handles must be live and `out` valid for writes.
 */
enum HtStatus ht_haar_testing(const struct HtOperator *op,
                              const struct HtMeasure *sigma,
                              const struct HtMeasure *omega,
                              uint32_t depth,
                              bool dual,
                              double *out);

/**
 * Tested operator norm against both Haar testing constants.
 *
 * # Safety
 * All handles must be live and `out` valid for writes.
 */
enum HtStatus ht_comparability(const struct HtOperator *op,
                               const struct HtMeasure *sigma,
                               const struct HtMeasure *omega,
                               uint32_t depth,
                               uint32_t rotation_samples,
                               uint64_t seed,
                               struct HtComparability *out);

/**
 * Fractional A₂ characteristic over dyadic cubes of levels `0..depth`.
 *
 * # Safety
 * Both measures must be live and `out` valid for writes.
 */
enum HtStatus ht_a2_lambda(const struct HtMeasure *sigma,
                           const struct HtMeasure *omega,
                           double lambda,
                           uint32_t depth,
                           double *out);

/**
 * Run a TOML config and return the JSON report without run metadata.
 * A failed check still yields the report, with status
 * [`HtStatus::CheckFailed`]. Free the string with [`ht_string_free`].
 *
 * # Safety
 * `config` must be NUL-terminated and `out` valid for writes.
 */
enum HtStatus ht_run_json(const char *config, char **out);

/**
 * # Safety
 * `s` must come from [`ht_run_json`] and not be freed twice. NULL is ignored.
 */
void ht_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAARTEST_H */
