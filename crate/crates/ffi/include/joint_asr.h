#ifndef JOINT_ASR_H
#define JOINT_ASR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum JasrStatus {
  JASR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  JASR_STATUS_NULL_ARGUMENT = 1,
  JASR_STATUS_INVALID_UTF8 = 2,
  JASR_STATUS_MISSING_PATH = 3,
  /**
   * Bad configuration or a malformed or mismatched file.
   */
  JASR_STATUS_CONFIG = 4,
  /**
   * Input that cannot be processed (too short, infeasible alignment,
   * empty reference).
   */
  JASR_STATUS_DATA = 5,
  /**
   * Shape or contract violation in the arguments.
   */
  JASR_STATUS_INVALID_ARGUMENT = 6,
  JASR_STATUS_INTERNAL = 7,
  /**
   * A panic was caught at the boundary.
   */
  JASR_STATUS_PANIC = 8,
} JasrStatus;

/**
 * A loaded n-gram language model.
 */
typedef struct JasrLm JasrLm;

/**
 * A loaded acoustic model.
 */
typedef struct JasrModel JasrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *jasr_last_error(void);

/**
 * Library version as a static string.
 */
const char *jasr_version(void);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JasrStatus jasr_model_load(const char *path, struct JasrModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`jasr_model_load`] and not be used afterwards.
 */
void jasr_model_free(struct JasrModel *model);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum JasrStatus jasr_model_num_params(const struct JasrModel *model, size_t *out);

/**
 * Sample rate the model expects, in Hz.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum JasrStatus jasr_model_sample_rate(const struct JasrModel *model, size_t *out);

/**
 * Loads an n-gram LM written by the `eval` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JasrStatus jasr_lm_load(const char *path, struct JasrLm **out);

/**
 * Releases an LM handle. Null is ignored.
 *
 * # Safety
 * `lm` must come from [`jasr_lm_load`] and not be used afterwards.
 */
void jasr_lm_free(struct JasrLm *lm);

/**
 * Transcribes raw samples. `beam_size` 0 selects best-path decoding; `lm`
 * may be null, otherwise it is fused with weights `alpha` and `beta` (which
 * needs `beam_size >= 1`). The text is returned in `*out` and must be freed
 * with [`jasr_string_free`].
 *
 * # Safety
 * `samples` must point to `len` doubles; `model` and `out` must be valid;
 * `lm` must be null or valid.
 */
enum JasrStatus jasr_transcribe(const struct JasrModel *model,
                                const double *samples,
                                size_t len,
                                uint32_t beam_size,
                                const struct JasrLm *lm,
                                double alpha,
                                double beta,
                                char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void jasr_string_free(char *s);

/**
 * Negative log-likelihood of `tokens` under row-major `frames × vocab`
 * log-probabilities. Infeasible targets give `+inf` with status OK.
 *
 * # Safety
 * `logprobs` must point to `frames * vocab` doubles, `tokens` to `num_tokens`
 * values, and `out` must be valid.
 */
enum JasrStatus jasr_ctc_loss(const double *logprobs,
                              size_t frames,
                              size_t vocab,
                              const uint32_t *tokens,
                              size_t num_tokens,
                              uint32_t blank,
                              double *out);

/**
 * Word error rate of `hypothesis` against `reference`.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` valid.
 */
enum JasrStatus jasr_wer(const char *reference, const char *hypothesis, double *out);

/**
 * Character error rate of `hypothesis` against `reference`.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` valid.
 */
enum JasrStatus jasr_cer(const char *reference, const char *hypothesis, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JOINT_ASR_H */
