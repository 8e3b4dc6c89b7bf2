#ifndef MIIVGRAPH_H
#define MIIVGRAPH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MiivStatus {
  MIIV_STATUS_OK = 0,
  MIIV_STATUS_NULL_ARGUMENT = 1,
  MIIV_STATUS_INVALID_UTF8 = 2,
  MIIV_STATUS_PARSE_ERROR = 3,
  MIIV_STATUS_INVALID_MODEL = 4,
  MIIV_STATUS_UNKNOWN_VARIABLE = 5,
  MIIV_STATUS_TRANSFORM_FAILED = 6,
  MIIV_STATUS_PANIC = 7,
} MiivStatus;

/**
 * Opaque model handle.
 */
typedef struct MiivModel MiivModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses model syntax into a new handle stored in `*out`.
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MiivStatus miiv_model_parse(const char *src, struct MiivModel **out);

/**
 * Reads a model from its JSON interchange form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MiivStatus miiv_model_from_json(const char *json, struct MiivModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void miiv_model_free(struct MiivModel *model);

/**
 * JSON interchange form of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer. Free the
 * result with [`miiv_string_free`].
 */
enum MiivStatus miiv_model_to_json(const struct MiivModel *model, char **out);

/**
 * Identification report as JSON. Zero caps select the defaults.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer. Free the
 * result with [`miiv_string_free`].
 */
enum MiivStatus miiv_identify_json(const struct MiivModel *model,
                                   size_t max_sets,
                                   size_t max_cond,
                                   char **out);

/**
 * Regression and provenance of the full transform of one equation, as
 * JSON.
 *
 * # Safety
 * `model` must be a live handle, `equation` a NUL-terminated string and
 * `out` a valid pointer. Free the result with [`miiv_string_free`].
 */
enum MiivStatus miiv_transform_json(const struct MiivModel *model,
                                    const char *equation,
                                    char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void miiv_string_free(char *s);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *miiv_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIIVGRAPH_H */
