#ifndef RETRIAL_H
#define RETRIAL_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RetrialStatus {
  RETRIAL_STATUS_OK = 0,
  RETRIAL_STATUS_NULL_ARGUMENT = 1,
  RETRIAL_STATUS_INVALID_CONFIG = 2,
  RETRIAL_STATUS_UNSTABLE = 3,
  RETRIAL_STATUS_CONVERGENCE = 4,
  RETRIAL_STATUS_BUDGET = 5,
  RETRIAL_STATUS_DOMAIN = 6,
  RETRIAL_STATUS_IO = 7,
  RETRIAL_STATUS_PANIC = 8,
} RetrialStatus;

/**
 * Model parameters.
 */
typedef struct RetrialConfig RetrialConfig;

/**
 * A solved instance together with its performance measures.
 */
typedef struct RetrialSolution RetrialSolution;

typedef struct RetrialMeasures {
  double l_b;
  double l_orb;
  double l_s;
  double p_b1;
  double p_bb1;
  double p_b2;
  double p_bb2;
  double e_b;
  double captured_mass;
  /**
   * Highest orbit level kept.
   */
  uintptr_t n;
  uintptr_t k0;
} RetrialMeasures;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next failing call.
 */
const char *retrial_last_error(void);

/**
 * Library version, static storage.
 */
const char *retrial_version(void);

/**
 * Parse a configuration from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RetrialStatus retrial_config_parse(const char *toml, struct RetrialConfig **out);

/**
 * Load a configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RetrialStatus retrial_config_load(const char *path, struct RetrialConfig **out);

/**
 * Set one of `g`, `c`, `lambda_o`, `lambda_h`, `lambda_r`. The handle is left unchanged on error.
 *
 * # Safety
 * `cfg` must come from this library and `name` be NUL-terminated.
 */
enum RetrialStatus retrial_config_set(struct RetrialConfig *cfg, const char *name, double value);

/**
 * # Safety
 * `cfg` must come from this library or be null.
 */
void retrial_config_free(struct RetrialConfig *cfg);

/**
 * Load `rho` and whether the solver accepts the instance as stable.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RetrialStatus retrial_stability(const struct RetrialConfig *cfg, double *rho, bool *stable);

/**
 * Compute the stationary distribution and its measures.
 *
 * # Safety
 * `cfg` must come from this library and `out` be a valid pointer.
 */
enum RetrialStatus retrial_solve(const struct RetrialConfig *cfg, struct RetrialSolution **out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum RetrialStatus retrial_solution_measures(const struct RetrialSolution *sol,
                                             struct RetrialMeasures *out);

/**
 * `P(i, b)`: orbit size `i`, `b` busy servers.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RetrialStatus retrial_solution_joint(const struct RetrialSolution *sol,
                                          uintptr_t i,
                                          uintptr_t b,
                                          double *out);

/**
 * Copy `P(i, •)` for `i = 0..min(len, N + 1)` into `buf` and return the number of levels held.
 *
 * # Safety
 * `buf` must hold `len` doubles, or be null with `len = 0`.
 */
uintptr_t retrial_solution_orbit_marginal(const struct RetrialSolution *sol,
                                          double *buf,
                                          uintptr_t len);

/**
 * # Safety
 * `sol` must come from this library or be null.
 */
void retrial_solution_free(struct RetrialSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RETRIAL_H */
