#ifndef COVIEW_H
#define COVIEW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvStatus {
  CV_STATUS_OK = 0,
  CV_STATUS_NULL_ARGUMENT = 1,
  CV_STATUS_INVALID_UTF8 = 2,
  // Malformed JSON or a value outside its domain.
  CV_STATUS_INVALID_INPUT = 3,
  // The operation is not allowed in the session's current stage.
  CV_STATUS_WRONG_STAGE = 4,
  // The acting role may not perform the operation.
  CV_STATUS_WRONG_ACTOR = 5,
  // A file could not be read or parsed.
  CV_STATUS_IO = 6,
  CV_STATUS_PROVIDER = 7,
  CV_STATUS_PANIC = 99,
} CvStatus;

typedef enum CvRole {
  CV_ROLE_PARENT = 0,
  CV_ROLE_YOUTH = 1,
  CV_ROLE_CO = 2,
} CvRole;

typedef enum CvStage {
  CV_STAGE_INITIAL_PROPOSAL = 0,
  CV_STAGE_SELF_EVALUATION = 1,
  CV_STAGE_PERSPECTIVE_TAKING = 2,
  CV_STAGE_FINAL_PROPOSAL = 3,
  CV_STAGE_FINALIZED = 4,
  // Not produced by sessions started through this API.
  CV_STAGE_AWAITING_INITIAL_PANEL = 5,
} CvStage;

typedef enum CvOutcome {
  // Session still running.
  CV_OUTCOME_PENDING = 0,
  CV_OUTCOME_CONSENSUS_REACHED = 1,
  CV_OUTCOME_CONSENSUS_FAILED = 2,
} CvOutcome;

typedef enum CvAlignment {
  CV_ALIGNMENT_ALIGNED = 0,
  CV_ALIGNMENT_MISALIGNED = 1,
  CV_ALIGNMENT_INFORMATIONAL = 2,
} CvAlignment;

typedef enum CvScale {
  CV_SCALE_PREFERENCE = 0,
  CV_SCALE_PRESENCE = 1,
} CvScale;

// Opaque common guideline set.
typedef struct CvGuidelines CvGuidelines;

// Opaque consensus session.
typedef struct CvSession CvSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL after a successful call. The
// pointer stays valid until the next call into this library on the thread.
const char *cv_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void cv_string_free(char *s);

// Starts a session. `panel_json` is a panel document
// (`{"role": ..., "entries": {...}}`); `config_json` may be NULL for defaults.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum CvStatus cv_session_start(const char *session_id,
                               enum CvRole initiator,
                               const char *panel_json,
                               const char *config_json,
                               int64_t now_ms,
                               struct CvSession **out);

// # Safety
// `s` must be a live session handle.
enum CvStatus cv_session_accept(struct CvSession *s, enum CvRole actor, int64_t now_ms);

// `changes_json` is a list of `{"keyword": ..., "position": {"kind": "keep"|"drop"|"change", "weight": n}}`.
//
// # Safety
// `s` must be a live session handle; `changes_json` NUL-terminated.
enum CvStatus cv_session_modify(struct CvSession *s,
                                enum CvRole actor,
                                const char *changes_json,
                                int64_t now_ms);

// # Safety
// `s` must be a live session handle; strings NUL-terminated.
enum CvStatus cv_session_reason(struct CvSession *s,
                                enum CvRole actor,
                                const char *keyword,
                                const char *reason,
                                int64_t now_ms);

// `position_json` is `{"kind": "keep"|"drop"}` or `{"kind": "change", "weight": n}`.
//
// # Safety
// `s` must be a live session handle; strings NUL-terminated.
enum CvStatus cv_session_position(struct CvSession *s,
                                  enum CvRole actor,
                                  const char *keyword,
                                  const char *position_json,
                                  int64_t now_ms);

// # Safety
// `s` must be a live session handle.
enum CvStatus cv_session_advance(struct CvSession *s, int64_t now_ms);

// # Safety
// `s` must be a live session handle; `out` writable.
enum CvStatus cv_session_stage(const struct CvSession *s, enum CvStage *out);

// Full session state as JSON.
//
// # Safety
// `s` must be a live session handle; `out` writable.
enum CvStatus cv_session_snapshot_json(const struct CvSession *s, char **out);

// The session's event log as a JSON array, suitable for [`cv_session_replay`].
//
// # Safety
// `s` must be a live session handle; `out` writable.
enum CvStatus cv_session_events_json(const struct CvSession *s, char **out);

// Rebuilds a session from its event log.
//
// # Safety
// `events_json` NUL-terminated; `out` writable.
enum CvStatus cv_session_replay(const char *events_json, struct CvSession **out);

// Co-preference panel JSON and outcome of a finalized session.
//
// # Safety
// `s` must be a live session handle; outputs writable.
enum CvStatus cv_session_finalize(const struct CvSession *s,
                                  char **out_panel_json,
                                  enum CvOutcome *out_outcome);

// # Safety
// `s` must come from this library and not have been freed. NULL is ignored.
void cv_session_free(struct CvSession *s);

// # Safety
// `out` must be writable.
enum CvStatus cv_classify(int32_t weight, int32_t score, enum CvAlignment *out);

// Display label for a value on either scale; out-of-range values clamp.
// The returned string is static and must not be freed.
const char *cv_label_of(int32_t value, enum CvScale scale);

// # Safety
// `raw` NUL-terminated; `out` writable.
enum CvStatus cv_normalize_keyword(const char *raw, char **out);

// Parses and validates a guideline document.
//
// # Safety
// `json` NUL-terminated; `out` writable.
enum CvStatus cv_guidelines_load(const char *json, struct CvGuidelines **out);

// The built-in guideline set.
//
// # Safety
// `out` writable.
enum CvStatus cv_guidelines_default(struct CvGuidelines **out);

// Serialized guideline document.
//
// # Safety
// `g` a live handle; `out` writable.
enum CvStatus cv_guidelines_json(const struct CvGuidelines *g, char **out);

// Prompt context for the guidelines personalized with a co-preference panel.
//
// # Safety
// `g` a live handle; `co_panel_json` NUL-terminated; `out` writable.
enum CvStatus cv_guidelines_render(const struct CvGuidelines *g,
                                   const char *co_panel_json,
                                   char **out);

// # Safety
// `g` must come from this library and not have been freed. NULL is ignored.
void cv_guidelines_free(struct CvGuidelines *g);

// Runs the censorship pipeline with the deterministic mock provider and
// writes `{"result": ..., "feedback": ...}`. `guidelines` and
// `lexicon_path` may be NULL for the built-in defaults.
//
// # Safety
// Strings NUL-terminated; `guidelines` NULL or a live handle; `out` writable.
enum CvStatus cv_censor_bundle(const char *video_id,
                               const char *frames_dir,
                               const char *subtitles,
                               const char *co_panel_json,
                               const struct CvGuidelines *guidelines,
                               const char *lexicon_path,
                               int64_t produced_at_ms,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVIEW_H */
