#ifndef SDTR_H
#define SDTR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  SDTR_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  SDTR_STATUS_NULL_ARGUMENT = 1,
  /**
   * A parameter is out of range.
   */
  SDTR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or inconsistent input data, or an I/O failure.
   */
  SDTR_STATUS_DATA = 3,
  /**
   * Rank deficiency, non-convergence or a non-finite objective.
   */
  SDTR_STATUS_NUMERICAL = 4,
  /**
   * The output buffer is too small; the required length was reported.
   */
  SDTR_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal panic; the handle arguments should be considered invalid.
   */
  SDTR_STATUS_PANIC = 6,
} SdtrStatus;

typedef enum {
  SDTR_METHOD_CQ = 0,
  SDTR_METHOD_CSQL = 1,
  SDTR_METHOD_CSOL = 2,
} SdtrMethod;

typedef enum {
  SDTR_CENSORING_KAPLAN_MEIER = 0,
  SDTR_CENSORING_NONE = 1,
} SdtrCensoring;

typedef struct SdtrCohort SdtrCohort;

typedef struct SdtrModel SdtrModel;

/**
 * Fit settings; obtain defaults from [`sdtr_fit_options_default`].
 */
typedef struct {
  /**
   * An [`SdtrCensoring`] value.
   */
  int32_t censoring;
  double survival_floor;
  double epsilon;
  uint32_t max_iter;
  bool zero_init;
  double k;
  double l1;
} SdtrFitOptions;

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sdtr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdtr_version(void);

SdtrFitOptions sdtr_fit_options_default(void);

/**
 * Loads a long-format cohort CSV. `horizon == 0` and `tau <= 0` select
 * the defaults inferred from the file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
SdtrStatus sdtr_cohort_load(const char *path,
                            uint32_t horizon,
                            double tau,
                            uint64_t seed,
                            SdtrCohort **out);

/**
 * Simulates `n` patients of the diabetes model (`scenario` 1 or 2).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
SdtrStatus sdtr_cohort_simulate(uint8_t scenario,
                                uint32_t horizon,
                                uint32_t n,
                                uint64_t seed,
                                SdtrCohort **out);

/**
 * Number of subjects and stages.
 *
 * # Safety
 * `cohort` must come from this library; output pointers may be null.
 */
SdtrStatus sdtr_cohort_shape(const SdtrCohort *cohort, size_t *subjects, size_t *horizon);

/**
 * # Safety
 * `cohort` must be null or come from this library and not be used afterwards.
 */
void sdtr_cohort_free(SdtrCohort *cohort);

/**
 * Fits `method` (an [`SdtrMethod`] value) to `cohort`. `options` may be
 * null for defaults.
 *
 * # Safety
 * `cohort` must come from this library, `options` must be null or valid,
 * and `out` a valid pointer.
 */
SdtrStatus sdtr_fit(const SdtrCohort *cohort,
                    int32_t method,
                    const SdtrFitOptions *options,
                    SdtrModel **out);

/**
 * Copies the decision coefficients used at `stage` (1-based) into `buf`.
 * `len` receives the number of coefficients; with `buf` null or `cap` too
 * small only `len` is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `model` must come from this library, `buf` must hold `cap` doubles,
 * and `len` must be a valid pointer.
 */
SdtrStatus sdtr_model_decision_coefficients(const SdtrModel *model,
                                            uint32_t stage,
                                            double *buf,
                                            size_t cap,
                                            size_t *len);

/**
 * IPCW value estimate of the model's rule on `cohort`, with its standard
 * error. The censoring and propensity models are refit on `cohort` as
 * recorded in the model.
 *
 * # Safety
 * `model` and `cohort` must come from this library; `value` must be valid,
 * `std_error` may be null.
 */
SdtrStatus sdtr_model_value(const SdtrModel *model,
                            const SdtrCohort *cohort,
                            double *value,
                            double *std_error);

/**
 * Writes the model as versioned JSON.
 *
 * # Safety
 * `model` must come from this library and `path` be a NUL-terminated string.
 */
SdtrStatus sdtr_model_save(const SdtrModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
SdtrStatus sdtr_model_load(const char *path, SdtrModel **out);

/**
 * # Safety
 * `model` must be null or come from this library and not be used afterwards.
 */
void sdtr_model_free(SdtrModel *model);

#endif  /* SDTR_H */
