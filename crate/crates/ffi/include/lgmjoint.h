#ifndef LGMJOINT_H
#define LGMJOINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LgmStatus {
  LGM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LGM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  LGM_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad input: unreadable file, malformed config or data, unknown name.
   */
  LGM_STATUS_VALIDATION = 3,
  /**
   * Numerical failure: non-convergence, indefinite Hessian, non-finite values.
   */
  LGM_STATUS_NUMERICAL = 4,
  /**
   * Requested element does not exist.
   */
  LGM_STATUS_NOT_FOUND = 5,
  /**
   * Internal error (a caught panic).
   */
  LGM_STATUS_INTERNAL = 6,
} LgmStatus;

/**
 * How the hyperparameter posterior is explored.
 */
typedef enum LgmStrategy {
  /**
   * Use the strategy named in the configuration.
   */
  LGM_STRATEGY_FROM_CONFIG = 0,
  /**
   * Empirical Bayes: a single point at the mode.
   */
  LGM_STRATEGY_EB = 1,
  /**
   * Grid over standardized hyperparameter space.
   */
  LGM_STRATEGY_GRID = 2,
} LgmStrategy;

typedef enum LgmFormat {
  LGM_FORMAT_JSON = 0,
  LGM_FORMAT_TEXT = 1,
} LgmFormat;

/**
 * A fitted model.
 */
typedef struct LgmFit LgmFit;

typedef struct LgmSummaryOptions {
  /**
   * Random effects as standard deviations and correlations.
   */
  bool sdcor;
  /**
   * Fixed survival effects as hazard ratios.
   */
  bool hr;
  uintptr_t n_transform;
  uintptr_t n_criteria;
  uint64_t seed;
} LgmSummaryOptions;

typedef struct LgmPredictOptions {
  double horizon;
  uintptr_t n_time_points;
  uintptr_t n_sample;
  uintptr_t n_sample_re;
  bool inv_link;
  bool survival;
  bool cif;
  /**
   * Start of survival prediction; negative means the last observed time.
   */
  double csurv;
  uint64_t seed;
} LgmPredictOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *lgm_version(void);

/**
 * Message of the last failed call on this thread ("" after a success).
 */
const char *lgm_last_error(void);

/**
 * Releases a string returned through an `out` parameter. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void lgm_string_free(char *s);

/**
 * Fits a model. `config` is the JSON model description; `long_csv` and
 * `surv_csv` are CSV contents (not paths) and may be null.
 *
 * # Safety
 * String arguments are null or NUL-terminated; `out` is writable.
 */
enum LgmStatus lgm_fit(const char *config,
                       const char *long_csv,
                       const char *surv_csv,
                       enum LgmStrategy strategy,
                       struct LgmFit **out);

/**
 * Reads a fit archive directory.
 *
 * # Safety
 * `dir` is NUL-terminated; `out` is writable.
 */
enum LgmStatus lgm_fit_load(const char *dir, struct LgmFit **out);

/**
 * Writes a fit archive directory, creating it if needed.
 *
 * # Safety
 * `h` is a live handle; `dir` is NUL-terminated.
 */
enum LgmStatus lgm_fit_save(const struct LgmFit *h, const char *dir);

/**
 * Releases a fit handle. Null is ignored.
 *
 * # Safety
 * `h` is null or a live handle not used afterwards.
 */
void lgm_fit_free(struct LgmFit *h);

/**
 * Number of latent elements (fixed effects, random effects, baselines).
 *
 * # Safety
 * `h` is null or a live handle.
 */
uintptr_t lgm_fit_n_latent(const struct LgmFit *h);

/**
 * Name of latent element `i`, owned by the handle; null when out of range.
 *
 * # Safety
 * `h` is null or a live handle.
 */
const char *lgm_fit_latent_name(const struct LgmFit *h, uintptr_t i);

/**
 * Posterior mean, sd and 95% interval of a latent element or free
 * hyperparameter (internal scale) by name. Any output pointer may be null.
 *
 * # Safety
 * `h` is a live handle; `name` is NUL-terminated; outputs are null or writable.
 */
enum LgmStatus lgm_fit_marginal(const struct LgmFit *h,
                                const char *name,
                                double *mean,
                                double *sd,
                                double *q025,
                                double *q975);

/**
 * Default summary options.
 */
struct LgmSummaryOptions lgm_summary_options_default(void);

/**
 * Posterior summary as JSON or text. `opts` may be null for defaults.
 *
 * # Safety
 * `h` is a live handle; `opts` is null or valid; `out` is writable.
 */
enum LgmStatus lgm_fit_summary(const struct LgmFit *h,
                               const struct LgmSummaryOptions *opts,
                               enum LgmFormat format,
                               char **out);

/**
 * Default prediction options up to `horizon`.
 */
struct LgmPredictOptions lgm_predict_options_default(double horizon);

/**
 * Predictions for the subjects in `newdata_csv` (CSV contents). Writes the
 * longitudinal and survival tables as CSV; either output pointer may be
 * null to skip it.
 *
 * # Safety
 * `h` is a live handle; `newdata_csv` is NUL-terminated; `opts` is valid;
 * outputs are null or writable.
 */
enum LgmStatus lgm_predict(const struct LgmFit *h,
                           const char *newdata_csv,
                           const struct LgmPredictOptions *opts,
                           char **out_long,
                           char **out_surv);

/**
 * Runs a verification suite; writes the checks as JSON and whether all passed.
 *
 * # Safety
 * `suite` is NUL-terminated; outputs are null or writable.
 */
enum LgmStatus lgm_verify(const char *suite, char **out_json, bool *all_passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LGMJOINT_H */
