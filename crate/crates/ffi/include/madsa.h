#ifndef MADSA_H
#define MADSA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MadsaStatus {
  MADSA_STATUS_OK = 0,
  MADSA_STATUS_NULL_POINTER = 1,
  MADSA_STATUS_INVALID_UTF8 = 2,
  MADSA_STATUS_INVALID_INPUT = 3,
  MADSA_STATUS_NUMERIC = 4,
  MADSA_STATUS_IO = 5,
  MADSA_STATUS_CHECKPOINT = 6,
  MADSA_STATUS_PANIC = 7,
} MadsaStatus;

/**
 * One conversation with a [`MadsaSystem`].
 */
typedef struct MadsaSession MadsaSession;

/**
 * A loaded dialogue model, assessor and PHQ bank.
 */
typedef struct MadsaSystem MadsaSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *madsa_last_error(void);

/**
 * Loads a system from checkpoints written by `madsa train`. `phq_bank` may
 * be null for the bundled questionnaire.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum MadsaStatus madsa_system_load(const char *dialogue_checkpoint,
                                   const char *assessor_checkpoint,
                                   const char *phq_bank,
                                   struct MadsaSystem **out);

/**
 * # Safety
 * `system` must come from [`madsa_system_load`] and not be freed twice.
 */
void madsa_system_free(struct MadsaSystem *system);

struct MadsaSession *madsa_session_new(void);

/**
 * # Safety
 * `session` must come from [`madsa_session_new`] and not be freed twice.
 */
void madsa_session_free(struct MadsaSession *session);

/**
 * Number of turns (user and system) in the session, or 0 for null.
 *
 * # Safety
 * `session` must be null or a live handle.
 */
uintptr_t madsa_session_turns(const struct MadsaSession *session);

/**
 * Sends one user message. On success `*out_json` holds
 * `{"response", "gate", "turn_index"}`. The session is unchanged on error.
 *
 * # Safety
 * Handles must be live; `text` NUL-terminated; `out_json` writable.
 */
enum MadsaStatus madsa_session_message(const struct MadsaSystem *system,
                                       struct MadsaSession *session,
                                       const char *text,
                                       char **out_json);

/**
 * Severity report for the session so far as JSON. Never changes the session.
 *
 * # Safety
 * Handles must be live; `out_json` writable.
 */
enum MadsaStatus madsa_session_assess(const struct MadsaSystem *system,
                                      const struct MadsaSession *session,
                                      char **out_json);

/**
 * Writes the session transcript as JSON lines to `path`.
 *
 * # Safety
 * `session` must be live; `path` NUL-terminated.
 */
enum MadsaStatus madsa_session_save_transcript(const struct MadsaSession *session,
                                               const char *path);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void madsa_string_free(char *s);

/**
 * PHQ-8 screening rule: `*out` is true when the eight scores sum to 10 or
 * more.
 *
 * # Safety
 * `scores` must point to 8 bytes; `out` must be writable.
 */
enum MadsaStatus madsa_detect_depression(const uint8_t *scores, bool *out);

/**
 * Quadratic weighted kappa of `n` ratings on `levels` ordinal levels.
 *
 * # Safety
 * `y` and `y_hat` must point to `n` values; `out` must be writable.
 */
enum MadsaStatus madsa_qwk(const uintptr_t *y,
                           const uintptr_t *y_hat,
                           uintptr_t n,
                           uintptr_t levels,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MADSA_H */
