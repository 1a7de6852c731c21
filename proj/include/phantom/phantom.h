/* Copyright 2026 The Phantom Authors
 * SPDX-License-Identifier: Apache-2.0 */

/* C interface to the phantom library. All functions return a status code;
 * on failure phantom_last_error() describes the most recent error on the
 * calling thread. Strings returned through char** are owned by the caller
 * and released with phantom_string_free(). */

#ifndef PHANTOM_PHANTOM_H_
#define PHANTOM_PHANTOM_H_

#include <stdint.h>

#if defined(_WIN32)
#define PHANTOM_API __declspec(dllexport)
#else
#define PHANTOM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum phantom_status {
  PHANTOM_OK = 0,
  PHANTOM_ERR_DIMENSION = 1,
  PHANTOM_ERR_INVALID_ARGUMENT = 2,
  PHANTOM_ERR_STATE = 3,
  PHANTOM_ERR_IO = 4,
  PHANTOM_ERR_FORMAT = 5,
  PHANTOM_ERR_CONFIG = 6,
  PHANTOM_ERR_CHECK_FAILED = 7, /* command ran but its check did not pass */
  PHANTOM_ERR_NULL_ARGUMENT = 8,
  PHANTOM_ERR_INTERNAL = 9
} phantom_status;

typedef struct phantom_config phantom_config;
typedef struct phantom_model phantom_model;

PHANTOM_API const char* phantom_version(void);
PHANTOM_API const char* phantom_status_name(phantom_status status);
/* Message of the last failed call on this thread; "" if none. */
PHANTOM_API const char* phantom_last_error(void);
PHANTOM_API void phantom_string_free(char* s);

/* Run configuration: key = value settings with defaults. */
PHANTOM_API phantom_status phantom_config_create(phantom_config** out);
PHANTOM_API void phantom_config_destroy(phantom_config* config);
PHANTOM_API phantom_status phantom_config_load_file(phantom_config* config, const char* path);
PHANTOM_API phantom_status phantom_config_set(phantom_config* config, const char* key, const char* value);
PHANTOM_API phantom_status phantom_config_get(const phantom_config* config, const char* key, char** value);
PHANTOM_API phantom_status phantom_config_dump(const phantom_config* config, char** text);

/* Runs a subcommand (train, generate, bench, gradcheck, params, ablate,
 * synth-data). *output receives the command's report even when the status
 * is PHANTOM_ERR_CHECK_FAILED; it is set to NULL on other errors. */
PHANTOM_API phantom_status phantom_run(const char* command, const phantom_config* config, char** output);

/* Models built from a config (preset and flags); weights from `seed`. */
PHANTOM_API phantom_status phantom_model_create(const phantom_config* config, phantom_model** out);
PHANTOM_API void phantom_model_destroy(phantom_model* model);
PHANTOM_API phantom_status phantom_model_load(phantom_model* model, const char* path);
PHANTOM_API phantom_status phantom_model_save(const phantom_model* model, const char* path);
PHANTOM_API phantom_status phantom_model_parameter_count(const phantom_model* model, uint64_t* count);
/* Decodes an answer to `question`; image_path may be NULL. */
PHANTOM_API phantom_status phantom_model_generate(phantom_model* model, const char* question, const char* image_path,
                                                  char** answer);

/* head_dim^2 * 12 * layers for a named preset. */
PHANTOM_API phantom_status phantom_mhca_param_count(const char* preset, uint64_t* count);

#ifdef __cplusplus
}
#endif

#endif /* PHANTOM_PHANTOM_H_ */
