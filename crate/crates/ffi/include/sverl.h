#ifndef SVERL_H
#define SVERL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. The nonzero values match the exit codes of the `sverl`
 * command where the two overlap.
 */
typedef enum SverlStatus {
  SVERL_STATUS_OK = 0,
  SVERL_STATUS_IO = 1,
  SVERL_STATUS_NULL_ARGUMENT = 2,
  SVERL_STATUS_UNKNOWN_ENVIRONMENT = 3,
  SVERL_STATUS_SOLVER = 4,
  SVERL_STATUS_CONDITIONING = 5,
  SVERL_STATUS_MISMATCH = 6,
  SVERL_STATUS_INVALID_INPUT = 7,
  SVERL_STATUS_BUFFER_TOO_SMALL = 8,
  SVERL_STATUS_PANIC = 9,
} SverlStatus;

typedef enum SverlTarget {
  SVERL_TARGET_BEHAVIOUR = 0,
  SVERL_TARGET_OUTCOME = 1,
  SVERL_TARGET_PREDICTION = 2,
} SverlTarget;

typedef enum SverlRemoval {
  SVERL_REMOVAL_CONDITIONAL = 0,
  SVERL_REMOVAL_MARGINAL = 1,
} SverlRemoval;

/**
 * A solved environment ready to explain.
 */
typedef struct SverlExplainer SverlExplainer;

/**
 * Endpoints of an explanation: `v(empty)`, `v(all features)` and the
 * efficiency residual `grand - baseline - sum(phi)`.
 */
typedef struct SverlSummary {
  double baseline;
  double grand;
  double residual;
} SverlSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next sverl call on the same thread.
 */
const char *sverl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sverl_version(void);

/**
 * Opens a catalog environment by name, or an interchange JSON file by
 * path, and solves it with the default tolerance.
 *
 * # Safety
 * `env_or_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SverlStatus sverl_explainer_open(const char *env_or_path, struct SverlExplainer **out);

/**
 * # Safety
 * `h` must come from [`sverl_explainer_open`] and not be used afterwards.
 */
void sverl_explainer_free(struct SverlExplainer *h);

/**
 * Number of features, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t sverl_explainer_n_features(const struct SverlExplainer *h);

/**
 * Number of non-terminal states, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t sverl_explainer_n_states(const struct SverlExplainer *h);

/**
 * Steady-state probability of the state named by `state`
 * (e.g. `"direction=R,distance=10"`).
 *
 * # Safety
 * `h` must be a live handle, `state` a NUL-terminated string and `out` a
 * valid pointer.
 */
enum SverlStatus sverl_state_probability(const struct SverlExplainer *h,
                                         const char *state,
                                         double *out);

/**
 * Exact Shapley values. `action` is required for behaviour targets and
 * must be null otherwise. `phi` receives one value per feature; `summary`
 * may be null.
 *
 * # Safety
 * Pointers must be valid; `phi` must hold `len` doubles.
 */
enum SverlStatus sverl_explain_exact(const struct SverlExplainer *h,
                                     enum SverlTarget t,
                                     const char *state,
                                     const char *action,
                                     enum SverlRemoval r,
                                     double *phi,
                                     size_t len,
                                     struct SverlSummary *summary);

/**
 * Monte Carlo Shapley values from `samples` draws seeded by `seed`.
 * `std_error` may be null; otherwise it receives one standard error per
 * feature.
 *
 * # Safety
 * Pointers must be valid; `phi` and a non-null `std_error` must hold
 * `len` doubles.
 */
enum SverlStatus sverl_explain_mc(const struct SverlExplainer *h,
                                  enum SverlTarget t,
                                  const char *state,
                                  const char *action,
                                  enum SverlRemoval r,
                                  uint64_t samples,
                                  uint64_t seed,
                                  double *phi,
                                  double *std_error,
                                  size_t len,
                                  struct SverlSummary *summary);

/**
 * Runs a JSON explanation request against the handle's environment and
 * returns the report as canonical JSON. Free the result with
 * [`sverl_string_free`].
 *
 * # Safety
 * `h` must be a live handle, `request_json` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum SverlStatus sverl_explain_json(const struct SverlExplainer *h,
                                    const char *request_json,
                                    char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sverl_string_free(char *s);

/**
 * Recomputes a reference table by id. `pass` receives whether every row
 * matched; a mismatch also returns [`SverlStatus::Mismatch`].
 *
 * # Safety
 * `id` must be a NUL-terminated string and `pass` a valid pointer.
 */
enum SverlStatus sverl_reproduce(const char *id, bool *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVERL_H */
