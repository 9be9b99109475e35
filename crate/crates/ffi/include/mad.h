#ifndef MAD_H
#define MAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  MAD_STATUS_OK = 0,
  MAD_STATUS_NULL_ARGUMENT = 1,
  MAD_STATUS_INVALID_UTF8 = 2,
  MAD_STATUS_IO = 3,
  MAD_STATUS_MODEL_FILE = 4,
  MAD_STATUS_HASH_MISMATCH = 5,
  MAD_STATUS_EMPTY_UTTERANCE = 6,
  MAD_STATUS_INTERNAL = 7,
  MAD_STATUS_PANIC = 8,
} MadStatus;

/**
 * A loaded model. Shared by every session created from it.
 */
typedef struct MadModel MadModel;

/**
 * One conversation. Keeps its model alive.
 */
typedef struct MadSession MadSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
MadStatus mad_model_load(const char *path, MadModel **out);

/**
 * Releases a model handle. Sessions created from it stay usable.
 *
 * # Safety
 * `model` must come from [`mad_model_load`] and not be freed twice. Null is ignored.
 */
void mad_model_free(MadModel *model);

/**
 * Writes the model description (slots, act types, dimensions) as JSON.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
MadStatus mad_model_info(const MadModel *model, char **out);

/**
 * Starts a conversation with an empty memory state.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
MadStatus mad_session_new(const MadModel *model, MadSession **out);

/**
 * Releases a session handle.
 *
 * # Safety
 * `session` must come from [`mad_session_new`] and not be freed twice. Null is ignored.
 */
void mad_session_free(MadSession *session);

/**
 * Advances the session by one user utterance and writes the turn result as
 * JSON. An utterance with no tokens yields [`MadStatus::EmptyUtterance`] and
 * leaves the session unchanged.
 *
 * # Safety
 * `session` must be a live handle, `utterance` a nul-terminated string and
 * `out` a valid pointer.
 */
MadStatus mad_session_submit(MadSession *session, const char *utterance, char **out);

/**
 * Writes every turn result of the session so far as a JSON array.
 *
 * # Safety
 * `session` must be a live handle and `out` a valid pointer.
 */
MadStatus mad_session_transcript(const MadSession *session, char **out);

/**
 * Clears the memory state and transcript.
 *
 * # Safety
 * `session` must be a live handle.
 */
MadStatus mad_session_reset(MadSession *session);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice. Null is ignored.
 */
void mad_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *mad_last_error(void);

/**
 * Library version as a static string.
 */
const char *mad_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAD_H */
