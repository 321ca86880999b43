#ifndef ALIP_H
#define ALIP_H

/* Generated by cbindgen from alip-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  /**
   * Success.
   */
  ALIP_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ALIP_ERR_NULL = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  ALIP_ERR_UTF8 = 2,
  /**
   * File could not be read or parsed.
   */
  ALIP_ERR_MODEL = 3,
  /**
   * The solver or pipeline rejected the input.
   */
  ALIP_ERR_RUN = 4,
  /**
   * An index or buffer size was out of range.
   */
  ALIP_ERR_BOUNDS = 5,
  /**
   * Metric undefined for the given input (zero ground truth or length
   * mismatch).
   */
  ALIP_ERR_METRICS = 6,
  /**
   * Unexpected internal failure.
   */
  ALIP_ERR_INTERNAL = 7,
} AlipStatus;

/**
 * Opaque compiled household model.
 */
typedef struct AlipModel AlipModel;

/**
 * Opaque disaggregation result.
 */
typedef struct AlipResult AlipResult;

/**
 * Pipeline configuration, mirrors the library defaults when obtained from
 * `alip_config_default`.
 */
typedef struct {
  /**
   * Enable the augmentation constraint rows.
   */
  bool constraints;
  /**
   * Enable the state-transition-diagram correction.
   */
  bool std_correction;
  /**
   * Enable the lagged median filter.
   */
  bool median;
  /**
   * Enable the transient LP refinement.
   */
  bool lp_refine;
  /**
   * Median lag L.
   */
  size_t median_lag;
} AlipConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread. Never null.
 */
const char *alip_last_error(void);

/**
 * Default pipeline configuration: every enhancement on, lag 4.
 */
AlipConfig alip_config_default(void);

/**
 * Loads and compiles a household model from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
AlipStatus alip_model_load(const char *path, AlipModel **out);

/**
 * Frees a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `alip_model_load` and not be freed twice.
 */
void alip_model_free(AlipModel *model);

/**
 * Number of appliances in the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t alip_model_num_appliances(const AlipModel *model);

/**
 * Total number of non-OFF states in the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t alip_model_num_states(const AlipModel *model);

/**
 * Copies the id of appliance `j` into `buf` (NUL-terminated, truncated to
 * `cap` bytes). Returns `AlipErrBounds` when `j` is out of range.
 *
 * # Safety
 * `model` must be a live handle; `buf` must hold at least `cap` bytes.
 */
AlipStatus alip_model_appliance_id(const AlipModel *model, size_t j, char *buf, size_t cap);

/**
 * Runs the disaggregation pipeline over `len` aggregate readings.
 *
 * # Safety
 * `readings` must point to `len` doubles; `model`, `config`, and `out`
 * must be valid pointers.
 */
AlipStatus alip_run(const AlipModel *model,
                    const double *readings,
                    size_t len,
                    const AlipConfig *config,
                    AlipResult **out);

/**
 * Frees a result handle. Null is ignored.
 *
 * # Safety
 * `result` must come from `alip_run` and not be freed twice.
 */
void alip_result_free(AlipResult *result);

/**
 * Number of timesteps in the result, or 0 for a null handle.
 *
 * # Safety
 * `result` must be a live handle or null.
 */
size_t alip_result_len(const AlipResult *result);

/**
 * Refined power draw of appliance `j` at timestep `k`, written to `out`.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
AlipStatus alip_result_power_at(const AlipResult *result, size_t k, size_t j, double *out);

/**
 * Local state (0 = OFF) of appliance `j` at timestep `k`, written to `out`.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
AlipStatus alip_result_state_at(const AlipResult *result, size_t k, size_t j, size_t *out);

/**
 * Copies the full power column of appliance `j` (one value per timestep)
 * into `buf`, which must hold at least `alip_result_len` doubles.
 *
 * # Safety
 * `result` must be a live handle; `buf` must hold `cap` doubles.
 */
AlipStatus alip_result_power_series(const AlipResult *result, size_t j, double *buf, size_t cap);

/**
 * How many appliance-timestep pairs each cleanup stage rewrote, plus the
 * number of LP-refined samples.
 *
 * # Safety
 * `result` must be a live handle; out pointers may be null to skip fields.
 */
AlipStatus alip_result_counters(const AlipResult *result,
                                size_t *std_corrections,
                                size_t *median_corrections,
                                size_t *lp_refined_samples);

/**
 * Overall accuracy ACC between two row-major t-by-n matrices.
 *
 * # Safety
 * `gt` and `est` must each point to `t * n` doubles; `out` must be valid.
 */
AlipStatus alip_acc(const double *gt, const double *est, size_t t, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALIP_H */
