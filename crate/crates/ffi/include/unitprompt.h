#ifndef UNITPROMPT_H
#define UNITPROMPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Greedy decoding: the most probable unit at every step.
 */
#define UP_DECODE_GREEDY 0

/**
 * Temperature sampling, seeded by `UpDecodeConfig::seed`.
 */
#define UP_DECODE_SAMPLE 1

typedef enum UpStatus {
  UP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  UP_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8, or an enum-like value was unknown.
   */
  UP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration or decoding parameters.
   */
  UP_STATUS_CONFIG = 3,
  /**
   * A file could not be read or written.
   */
  UP_STATUS_IO = 4,
  /**
   * A checkpoint file is malformed or of the wrong kind.
   */
  UP_STATUS_CHECKPOINT = 5,
  /**
   * The prompt set does not fit the backbone.
   */
  UP_STATUS_MISMATCH = 6,
  /**
   * A unit id lies outside the vocabulary.
   */
  UP_STATUS_VOCABULARY = 7,
  /**
   * A sequence does not fit the model's position budget.
   */
  UP_STATUS_LENGTH = 8,
  /**
   * The output buffer is too small; the required length was written.
   */
  UP_STATUS_BUFFER_TOO_SMALL = 9,
  /**
   * Any other library error.
   */
  UP_STATUS_FAILED = 10,
  /**
   * The library panicked; this is a bug.
   */
  UP_STATUS_PANIC = 11,
} UpStatus;

/**
 * Opaque frozen backbone.
 */
typedef struct UpBackbone UpBackbone;

/**
 * Opaque prompt set.
 */
typedef struct UpPrompts UpPrompts;

/**
 * Decoding parameters. `mode` is `UP_DECODE_GREEDY` or `UP_DECODE_SAMPLE`.
 */
typedef struct UpDecodeConfig {
  uint32_t mode;
  double temperature;
  size_t max_len;
  uint64_t seed;
} UpDecodeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *up_last_error_message(void);

/**
 * Loads a backbone checkpoint and freezes it.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UpStatus up_backbone_load(const char *path, struct UpBackbone **out);

/**
 * Releases a backbone. Null is ignored.
 *
 * # Safety
 * `backbone` must come from `up_backbone_load` and not be freed twice.
 */
void up_backbone_free(struct UpBackbone *backbone);

/**
 * Vocabulary size of the backbone, reserved ids included.
 *
 * # Safety
 * `backbone` must be a live handle; `out` must be writable.
 */
enum UpStatus up_backbone_vocab_size(const struct UpBackbone *backbone, uint32_t *out);

/**
 * Loads a prompt checkpoint. When `backbone` is non-null the prompt set is
 * checked against it and `UpStatus::Mismatch` is returned if it does not fit.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `backbone` null or a live handle;
 * `out` writable.
 */
enum UpStatus up_prompts_load(const char *path,
                              const struct UpBackbone *backbone,
                              struct UpPrompts **out);

/**
 * Releases a prompt set. Null is ignored.
 *
 * # Safety
 * `prompts` must come from `up_prompts_load` and not be freed twice.
 */
void up_prompts_free(struct UpPrompts *prompts);

/**
 * Prompt length `L` of a prompt set.
 *
 * # Safety
 * `prompts` must be a live handle; `out` writable.
 */
enum UpStatus up_prompts_len(const struct UpPrompts *prompts, size_t *out);

/**
 * Generates a unit sequence from `src`, conditioned on `prompts` (null for
 * the bare backbone). The units are written to `out` and their count to
 * `out_len`. If `out_cap` is too small, nothing is written to `out`,
 * `out_len` receives the required length and `UpStatus::BufferTooSmall` is
 * returned; decoding is deterministic, so the call can be repeated.
 *
 * # Safety
 * `backbone` must be a live handle, `prompts` null or a live handle, `src`
 * readable for `src_len` units, `config` readable, `out` writable for
 * `out_cap` units and `out_len` writable.
 */
enum UpStatus up_generate(const struct UpBackbone *backbone,
                          const struct UpPrompts *prompts,
                          const uint32_t *src,
                          size_t src_len,
                          const struct UpDecodeConfig *config,
                          uint32_t *out,
                          size_t out_cap,
                          size_t *out_len);

/**
 * Levenshtein distance between two unit sequences.
 *
 * # Safety
 * Each sequence must be readable for its length; `out` writable.
 */
enum UpStatus up_edit_distance(const uint32_t *reference,
                               size_t reference_len,
                               const uint32_t *hypothesis,
                               size_t hypothesis_len,
                               size_t *out);

/**
 * Edit distance divided by the reference length (0 for two empty sequences).
 *
 * # Safety
 * Each sequence must be readable for its length; `out` writable.
 */
enum UpStatus up_error_rate(const uint32_t *reference,
                            size_t reference_len,
                            const uint32_t *hypothesis,
                            size_t hypothesis_len,
                            double *out);

/**
 * Sentence BLEU-1 through BLEU-`max_n` on a 0–100 scale, written to
 * `out[0..max_n]`.
 *
 * # Safety
 * Each sequence must be readable for its length; `out` writable for `max_n` values.
 */
enum UpStatus up_bleu(const uint32_t *candidate,
                      size_t candidate_len,
                      const uint32_t *reference,
                      size_t reference_len,
                      size_t max_n,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNITPROMPT_H */
