#ifndef HYBRIDCUB_H
#define HYBRIDCUB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_NULL_POINTER = 1,
  HC_STATUS_INVALID_ARGUMENT = 2,
  HC_STATUS_RULE_ERROR = 3,
  HC_STATUS_FILTER_ERROR = 4,
  HC_STATUS_SCENARIO_ERROR = 5,
  HC_STATUS_PANIC = 6,
} HcStatus;

// Rule families accepted by [`hc_rule_new`].
typedef enum HcRuleKind {
  HC_RULE_KIND_CNF_I = 0,
  HC_RULE_KIND_CNF_II = 1,
  HC_RULE_KIND_CNF_III = 2,
  HC_RULE_KIND_CNF_IV = 3,
  HC_RULE_KIND_CNF_V = 4,
  HC_RULE_KIND_CNF_VI = 5,
  HC_RULE_KIND_UKF = 6,
} HcRuleKind;

// Opaque square-root filter holding its current Gaussian belief.
typedef struct HcFilter HcFilter;

// Opaque finished scenario run.
typedef struct HcResult HcResult;

// Opaque cubature rule.
typedef struct HcRule HcRule;

// Opaque parsed scenario.
typedef struct HcScenario HcScenario;

// Model callback: read `n_in` values from `x`, write `n_out` values to
// `out`, return 0 on success.
typedef int (*HcModelFn)(void *user, const double *x, size_t n_in, double *out, size_t n_out);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be valid for `len` bytes or null.
size_t hc_last_error(char *buf, size_t len);

// Build a rule of `kind` in dimension `n`.
//
// # Safety
// `out` must be a valid pointer.
enum HcStatus hc_rule_new(enum HcRuleKind kind, size_t n, struct HcRule **out);

// # Safety
// `rule` must come from [`hc_rule_new`] or be null.
void hc_rule_free(struct HcRule *rule);

// Number of points; 0 for a null handle.
//
// # Safety
// `rule` must be a live handle or null.
size_t hc_rule_len(const struct HcRule *rule);

// # Safety
// `rule` must be a live handle or null.
size_t hc_rule_dim(const struct HcRule *rule);

// # Safety
// `rule` must be a live handle or null.
size_t hc_rule_degree(const struct HcRule *rule);

// `sum |w| / sum w`; NaN for a null handle.
//
// # Safety
// `rule` must be a live handle or null.
double hc_rule_stability_factor(const struct HcRule *rule);

// Copy weights (`len` values) and points (`len * dim`, row-major).
// Either output may be null to skip it.
//
// # Safety
// Non-null outputs must hold the stated number of doubles.
enum HcStatus hc_rule_copy(const struct HcRule *rule, double *weights, double *points);

// Create a filter over a copy of `rule`, starting from mean `mean` (n) and
// covariance square root `sqrt_cov` (n x n, row-major, lower triangular).
//
// # Safety
// Pointers must be valid for the stated sizes; `out` must be valid.
enum HcStatus hc_filter_new(const struct HcRule *rule,
                            const double *mean,
                            const double *sqrt_cov,
                            struct HcFilter **out);

// # Safety
// `filter` must come from [`hc_filter_new`] or be null.
void hc_filter_free(struct HcFilter *filter);

// Time update through `model` (n -> n) with process-noise square root
// `sqrt_q` (n x n, row-major).
//
// # Safety
// `filter` must be live; `sqrt_q` must hold n*n doubles; `model` must be
// safe to call with `user`.
enum HcStatus hc_filter_predict(struct HcFilter *filter,
                                HcModelFn model,
                                void *user,
                                const double *sqrt_q);

// Measurement update with `m` outputs: `z` (m), measurement map (n -> m)
// and noise square root `sqrt_r` (m x m, row-major).
//
// # Safety
// As [`hc_filter_predict`], with `z` holding m and `sqrt_r` m*m doubles.
enum HcStatus hc_filter_update(struct HcFilter *filter,
                               HcModelFn model,
                               void *user,
                               size_t m,
                               const double *z,
                               const double *sqrt_r);

// State dimension; 0 for a null handle.
//
// # Safety
// `filter` must be live or null.
size_t hc_filter_dim(const struct HcFilter *filter);

// Copy the mean (n) and covariance (n x n, row-major); either may be null.
//
// # Safety
// Non-null outputs must hold the stated number of doubles.
enum HcStatus hc_filter_belief(const struct HcFilter *filter, double *mean, double *cov);

// Load a scenario file with `n_overrides` `key=value` overrides.
//
// # Safety
// `path` and each override must be NUL-terminated strings; `out` valid.
enum HcStatus hc_scenario_load(const char *path,
                               const char *const *overrides,
                               size_t n_overrides,
                               struct HcScenario **out);

// # Safety
// `scenario` must come from [`hc_scenario_load`] or be null.
void hc_scenario_free(struct HcScenario *scenario);

// Calibrate (unless thresholds are configured) and run every estimator.
//
// # Safety
// `scenario` must be live; `out` valid.
enum HcStatus hc_scenario_run(const struct HcScenario *scenario, struct HcResult **out);

// # Safety
// `result` must come from [`hc_scenario_run`] or be null.
void hc_result_free(struct HcResult *result);

// Number of estimators in the run; 0 for a null handle.
//
// # Safety
// `result` must be live or null.
size_t hc_result_estimators(const struct HcResult *result);

// Per-estimator counts: Monte-Carlo runs, runs with a detection, runs
// with at least one false-alarm sample. Outputs may be null.
//
// # Safety
// `result` must be live; non-null outputs must be valid.
enum HcStatus hc_result_counts(const struct HcResult *result,
                               size_t estimator,
                               size_t *runs,
                               size_t *detected,
                               size_t *false_alarm_runs);

// Write the CSV/JSON artifacts below directory `dir`.
//
// # Safety
// `result` must be live; `dir` a NUL-terminated string.
enum HcStatus hc_result_write(const struct HcResult *result, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRIDCUB_H */
