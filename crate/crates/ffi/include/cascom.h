#ifndef CASCOM_H
#define CASCOM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Execution strategy of a pipeline.
typedef enum CascomMode {
  CASCOM_MODE_PRECOMPILED = 0,
  CASCOM_MODE_DYNAMIC_DISPATCH = 1,
} CascomMode;

// Result code of every call.
typedef enum CascomStatus {
  CASCOM_STATUS_OK = 0,
  CASCOM_STATUS_NULL_ARGUMENT = 1,
  CASCOM_STATUS_INVALID_UTF8 = 2,
  CASCOM_STATUS_INVALID_JSON = 3,
  CASCOM_STATUS_KB_ERROR = 4,
  CASCOM_STATUS_NOT_FOUND = 5,
  CASCOM_STATUS_NO_SOLUTION = 6,
  CASCOM_STATUS_INVALID_REQUEST = 7,
  CASCOM_STATUS_GENERATE_ERROR = 8,
  CASCOM_STATUS_RUN_ERROR = 9,
  // The pipeline reached its record limit.
  CASCOM_STATUS_END_OF_STREAM = 10,
  CASCOM_STATUS_IO = 11,
  CASCOM_STATUS_PANIC = 99,
} CascomStatus;

// A loaded, immutable knowledge base.
typedef struct CascomKb CascomKb;

// A generated pipeline and its record iterator.
typedef struct CascomPipeline CascomPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *cascom_last_error(void);

// Static, human-readable name of a `CascomStatus` value; "unknown" for
// anything else.
const char *cascom_status_name(int32_t status);

// Library version as a static string.
const char *cascom_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void cascom_string_free(char *s);

// Loads the knowledge base bundled with the library.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum CascomStatus cascom_kb_bundled(struct CascomKb **out);

// Parses a knowledge base document. `strict` rejects unknown keys.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CascomStatus cascom_kb_from_json(const char *json, bool strict, struct CascomKb **out);

// Reads and parses a knowledge base file in strict mode.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CascomStatus cascom_kb_load(const char *path, struct CascomKb **out);

// Releases a knowledge base. Null is ignored.
//
// # Safety
// `kb` must come from this library and must not be used afterwards.
void cascom_kb_free(struct CascomKb *kb);

// Monotonic content version of a knowledge base, or 0 for null.
//
// # Safety
// `kb` must be null or a live handle.
uint64_t cascom_kb_version(const struct CascomKb *kb);

// Serializes the knowledge base document.
//
// # Safety
// `kb` must be a live handle; `out` must be writable.
enum CascomStatus cascom_kb_to_json(const struct CascomKb *kb, char **out);

// Solves a task and ranks its grounded solutions with equal priorities.
// `options_json` may be null or `{"maxDepth", "allowConversions", "maxSolutions"}`.
//
// On success `out` receives `{"taskId", "priorities", "solutions", ...}`.
// When the task has no solution the status is `NoSolution` and `out`
// receives the error body with its `gapReport`.
//
// # Safety
// `kb` must be a live handle, strings NUL-terminated, `out` writable.
enum CascomStatus cascom_solve(const struct CascomKb *kb,
                               const char *task_id,
                               const char *options_json,
                               char **out);

// Grounds and re-ranks solutions under `priorities_json` (`{"weights": {...}}`).
// `solutions_json` is one solution, a list, or a `solve` result. `out`
// receives the ranked list, best first.
//
// # Safety
// `kb` must be a live handle, strings NUL-terminated, `out` writable.
enum CascomStatus cascom_rank(const struct CascomKb *kb,
                              const char *solutions_json,
                              const char *priorities_json,
                              char **out);

// Generates a pipeline for a grounded solution, exporting the task outputs
// and accepted context. `mode` is a `CascomMode` value; `records` bounds the
// stream, 0 meaning unbounded.
//
// # Safety
// `kb` must be a live handle, `solution_json` NUL-terminated, `out` writable.
enum CascomStatus cascom_pipeline_new(const struct CascomKb *kb,
                                      const char *solution_json,
                                      int32_t mode,
                                      uint64_t records,
                                      struct CascomPipeline **out);

// Releases a pipeline. Null is ignored.
//
// # Safety
// `p` must come from this library and must not be used afterwards.
void cascom_pipeline_free(struct CascomPipeline *p);

// JSON pipeline definition.
//
// # Safety
// `p` must be a live handle; `out` writable.
enum CascomStatus cascom_pipeline_definition(const struct CascomPipeline *p, char **out);

// Virtual sensor XML document of the pipeline.
//
// # Safety
// `p` must be a live handle; `out` writable.
enum CascomStatus cascom_pipeline_xml(const struct CascomPipeline *p, char **out);

// Next stream item as one JSON object, either a record or an error record.
// Returns `EndOfStream`, leaving `out` null, once the record limit is reached.
//
// # Safety
// `p` must be a live handle; `out` writable.
enum CascomStatus cascom_pipeline_next(struct CascomPipeline *p, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCOM_H */
