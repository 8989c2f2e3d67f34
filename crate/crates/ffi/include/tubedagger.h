#ifndef TUBEDAGGER_H
#define TUBEDAGGER_H

#pragma once

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes. `TD_OK` is zero; everything else is a failure.
typedef enum TdStatus {
  TD_OK = 0,
  // A required pointer argument was null.
  TD_ERR_NULL = 1,
  // An argument was out of range or not valid UTF-8.
  TD_ERR_INVALID_ARGUMENT = 2,
  // A vector had the wrong length.
  TD_ERR_SHAPE = 3,
  // A JSON payload could not be parsed.
  TD_ERR_PARSE = 4,
  // A payload parsed but violated an invariant.
  TD_ERR_VALIDATION = 5,
  TD_ERR_IO = 6,
  // Tube sampling stopped before reaching the coverage target.
  TD_ERR_COVERAGE = 7,
  // Numerical failure such as a diverged integration.
  TD_ERR_NUMERICAL = 8,
  // A Rust panic was caught at the boundary.
  TD_ERR_PANIC = 9,
} TdStatus;

typedef enum TdMode {
  TD_MODE_AUTONOMOUS = 0,
  TD_MODE_SUPERVISOR = 1,
} TdMode;

typedef enum TdActor {
  TD_ACTOR_EXPERT = 0,
  TD_ACTOR_NOVICE = 1,
} TdActor;

// Opaque policy handle: a scripted expert, an MLP or an ensemble.
typedef struct TdPolicy TdPolicy;

// Opaque reach-tube handle.
typedef struct TdTube TdTube;

// Tube-building parameters; start from [`td_tube_config_default`].
typedef struct TdTubeConfig {
  double gamma;
  double mu;
  double initial_radius;
  size_t batch_size;
  size_t max_batches;
  size_t coverage_samples;
} TdTubeConfig;

// Outcome of one gate step.
typedef struct TdGateStep {
  double rho;
  enum TdActor actor;
  enum TdMode next_mode;
} TdGateStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer stays valid
// until the next call into the library from the same thread.
const char *td_last_error(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void td_string_free(char *s);

struct TdTubeConfig td_tube_config_default(void);

// Builds a tube around the scripted expert of `env`.
//
// # Safety
// `env` must be a nul-terminated string, `config` and `out` valid pointers.
enum TdStatus td_tube_build(const char *env,
                            const struct TdTubeConfig *config,
                            uint64_t seed,
                            struct TdTube **out);

// Reads a tube JSON file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum TdStatus td_tube_load(const char *path, struct TdTube **out);

// Parses a tube from a JSON string.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum TdStatus td_tube_from_json(const char *json, struct TdTube **out);

// Serializes a tube; free the result with [`td_string_free`].
//
// # Safety
// `tube` must be a live handle and `out` a valid pointer.
enum TdStatus td_tube_to_json(const struct TdTube *tube, char **out);

// Releases a tube. Null is ignored.
//
// # Safety
// `tube` must come from this library and must not be used afterwards.
void td_tube_free(struct TdTube *tube);

// Number of slices (`horizon + 1`) and state dimension.
//
// # Safety
// `tube` must be a live handle; `len` and `dim` valid pointers.
enum TdStatus td_tube_shape(const struct TdTube *tube, size_t *len, size_t *dim);

// Membership value of `state` in slice `step`; values `<= 1` are inside.
//
// # Safety
// `tube` must be a live handle, `state` must point to `len` doubles and `out` be valid.
enum TdStatus td_tube_membership(const struct TdTube *tube,
                                 size_t step,
                                 const double *state,
                                 size_t len,
                                 double *out);

// One hysteresis gate step: the expert acts iff the mode is supervisor or the membership
// exceeds `beta_plus`, and control returns to the novice once it drops below
// `beta_minus`. `(0, 0)` is accepted and hands every off-center step to the expert.
//
// # Safety
// `tube` must be a live handle, `state` must point to `len` doubles and `out` be valid.
enum TdStatus td_tube_gate(const struct TdTube *tube,
                           double beta_minus,
                           double beta_plus,
                           size_t step,
                           const double *state,
                           size_t len,
                           enum TdMode mode,
                           struct TdGateStep *out);

// Slice-wise containment of `imitator` in `expert`. `first_violation` receives the first
// failing slice index, or `SIZE_MAX` when every slice is contained.
//
// # Safety
// Both tubes must be live handles; `contained` and `first_violation` valid pointers.
enum TdStatus td_tube_contained(const struct TdTube *imitator,
                                const struct TdTube *expert,
                                bool *contained,
                                size_t *first_violation);

// The scripted expert of `env`.
//
// # Safety
// `env` must be a nul-terminated string and `out` a valid pointer.
enum TdStatus td_policy_expert(const char *env, struct TdPolicy **out);

// Loads an MLP or ensemble checkpoint written by the training loops.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum TdStatus td_policy_load(const char *path, struct TdPolicy **out);

// Releases a policy. Null is ignored.
//
// # Safety
// `policy` must come from this library and must not be used afterwards.
void td_policy_free(struct TdPolicy *policy);

// Writes the action for `state` into `action`, which holds `action_len` doubles.
//
// # Safety
// `policy` must be a live handle; `state` must point to `state_len` doubles and
// `action` to `action_len` writable doubles.
enum TdStatus td_policy_act(const struct TdPolicy *policy,
                            const double *state,
                            size_t state_len,
                            double *action,
                            size_t action_len);

// Median and population standard deviation of `episodes` policy-only rollouts.
//
// # Safety
// `policy` must be a live handle, `env` a nul-terminated string, `median` and `std`
// valid pointers.
enum TdStatus td_policy_evaluate(const struct TdPolicy *policy,
                                 const char *env,
                                 size_t episodes,
                                 uint64_t seed,
                                 double *median,
                                 double *std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUBEDAGGER_H */
