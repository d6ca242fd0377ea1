#ifndef POISSON_DENOISE_H
#define POISSON_DENOISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PdnStatus {
  PDN_STATUS_OK = 0,
  PDN_STATUS_NULL_POINTER = 1,
  PDN_STATUS_INVALID_INPUT = 2,
  PDN_STATUS_DEGENERATE_CONTRAST = 3,
  PDN_STATUS_COUNT_EXCEEDS_K = 4,
  PDN_STATUS_SHAPE_MISMATCH = 5,
  PDN_STATUS_TOO_LARGE = 6,
  /**
   * LBP divergence or a failed dense factorization.
   */
  PDN_STATUS_NUMERICAL = 7,
  PDN_STATUS_PANIC = 8,
} PdnStatus;

typedef enum PdnMethod {
  PDN_METHOD_OURS = 0,
  PDN_METHOD_EXACT = 1,
  PDN_METHOD_GLBP = 2,
  PDN_METHOD_MEDIAN = 3,
} PdnMethod;

/**
 * Count image handle.
 */
typedef struct PdnCounts PdnCounts;

/**
 * Real-valued field handle.
 */
typedef struct PdnField PdnField;

/**
 * Restoration output handle.
 */
typedef struct PdnResult PdnResult;

/**
 * Restoration settings. Start from `pdn_config_default`.
 */
typedef struct PdnConfig {
  /**
   * Binomial trial count; 0 picks `max(256, 2 * max count)`.
   */
  uint32_t k;
  double h;
  double alpha0;
  double xi0;
  double lbp_tol;
  size_t lbp_max_sweeps;
  double damping;
  double em_tol;
  size_t em_max_iters;
  bool mean_field;
} PdnConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct PdnConfig pdn_config_default(void);

/**
 * Message for the last failed call on this thread. Valid until the next
 * call into the library on the same thread; never NULL.
 */
const char *pdn_last_error_message(void);

/**
 * Copies `width * height` counts (row-major) into a new handle.
 */
enum PdnStatus pdn_counts_new(const uint32_t *data,
                              size_t width,
                              size_t height,
                              struct PdnCounts **out);

void pdn_counts_free(struct PdnCounts *counts);

size_t pdn_counts_width(const struct PdnCounts *counts);

size_t pdn_counts_height(const struct PdnCounts *counts);

/**
 * Borrowed row-major data, valid while `counts` lives.
 */
const uint32_t *pdn_counts_data(const struct PdnCounts *counts);

/**
 * Copies `width * height` finite values (row-major) into a new handle.
 */
enum PdnStatus pdn_field_new(const double *data,
                             size_t width,
                             size_t height,
                             struct PdnField **out);

void pdn_field_free(struct PdnField *field);

size_t pdn_field_width(const struct PdnField *field);

size_t pdn_field_height(const struct PdnField *field);

/**
 * Borrowed row-major data, valid while `field` lives.
 */
const double *pdn_field_data(const struct PdnField *field);

/**
 * Affinely maps `image` onto `[lambda_min, lambda_max]`.
 */
enum PdnStatus pdn_scale_to_source(const struct PdnField *image,
                                   double lambda_min,
                                   double lambda_max,
                                   struct PdnField **out);

/**
 * Draws Poisson counts for a strictly positive intensity field.
 */
enum PdnStatus pdn_poisson_sample(const struct PdnField *lambda,
                                  uint64_t seed,
                                  struct PdnCounts **out);

/**
 * Restores intensities from counts. `config` may be NULL for defaults.
 */
enum PdnStatus pdn_restore(const struct PdnCounts *counts,
                           enum PdnMethod method,
                           const struct PdnConfig *config,
                           struct PdnResult **out);

void pdn_result_free(struct PdnResult *result);

/**
 * Borrowed restored field, valid while `result` lives.
 */
const struct PdnField *pdn_result_lambda(const struct PdnResult *result);

/**
 * Final smoothness `α`; NaN for the median filter.
 */
double pdn_result_alpha(const struct PdnResult *result);

size_t pdn_result_iterations(const struct PdnResult *result);

bool pdn_result_converged(const struct PdnResult *result);

/**
 * PSNR of `test` against `reference` using the reference's dynamic range.
 */
enum PdnStatus pdn_psnr(const struct PdnField *test, const struct PdnField *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POISSON_DENOISE_H */
