// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/phantom.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "phantom/checkpoint.hpp"
#include "phantom/data.hpp"
#include "phantom/inference.hpp"
#include "phantom/run_config.hpp"

struct phantom_config {
  phantom::RunConfig config;
};

struct phantom_model {
  std::unique_ptr<phantom::PhantomModel> model;
  phantom::DecodeConfig decode;
};

namespace {

thread_local std::string g_last_error;

phantom_status fail(phantom_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

phantom_status from_code(phantom::ErrorCode code) {
  switch (code) {
    case phantom::ErrorCode::kDimension: return PHANTOM_ERR_DIMENSION;
    case phantom::ErrorCode::kInvalidArgument: return PHANTOM_ERR_INVALID_ARGUMENT;
    case phantom::ErrorCode::kState: return PHANTOM_ERR_STATE;
    case phantom::ErrorCode::kIo: return PHANTOM_ERR_IO;
    case phantom::ErrorCode::kFormat: return PHANTOM_ERR_FORMAT;
    case phantom::ErrorCode::kConfig: return PHANTOM_ERR_CONFIG;
  }
  return PHANTOM_ERR_INTERNAL;
}

template <typename F>
phantom_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const phantom::Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(PHANTOM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PHANTOM_ERR_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* phantom_version(void) { return "0.1.0"; }

const char* phantom_status_name(phantom_status status) {
  switch (status) {
    case PHANTOM_OK: return "ok";
    case PHANTOM_ERR_DIMENSION: return "dimension";
    case PHANTOM_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case PHANTOM_ERR_STATE: return "state";
    case PHANTOM_ERR_IO: return "io";
    case PHANTOM_ERR_FORMAT: return "format";
    case PHANTOM_ERR_CONFIG: return "config";
    case PHANTOM_ERR_CHECK_FAILED: return "check_failed";
    case PHANTOM_ERR_NULL_ARGUMENT: return "null_argument";
    case PHANTOM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* phantom_last_error(void) { return g_last_error.c_str(); }

void phantom_string_free(char* s) { std::free(s); }

phantom_status phantom_config_create(phantom_config** out) {
  if (out == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_config_create: out is NULL");
  return guarded([&] {
    *out = new phantom_config();
    return PHANTOM_OK;
  });
}

void phantom_config_destroy(phantom_config* config) { delete config; }

phantom_status phantom_config_load_file(phantom_config* config, const char* path) {
  if (config == nullptr || path == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_config_load_file: NULL argument");
  return guarded([&] {
    config->config.load_file(path);
    return PHANTOM_OK;
  });
}

phantom_status phantom_config_set(phantom_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr) {
    return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_config_set: NULL argument");
  }
  return guarded([&] {
    config->config.set(key, value);
    return PHANTOM_OK;
  });
}

phantom_status phantom_config_get(const phantom_config* config, const char* key, char** value) {
  if (config == nullptr || key == nullptr || value == nullptr) {
    return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_config_get: NULL argument");
  }
  *value = nullptr;
  return guarded([&] {
    *value = copy_string(config->config.get(key));
    return PHANTOM_OK;
  });
}

phantom_status phantom_config_dump(const phantom_config* config, char** text) {
  if (config == nullptr || text == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_config_dump: NULL argument");
  *text = nullptr;
  return guarded([&] {
    *text = copy_string(config->config.dump());
    return PHANTOM_OK;
  });
}

phantom_status phantom_run(const char* command, const phantom_config* config, char** output) {
  if (command == nullptr || config == nullptr || output == nullptr) {
    return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_run: NULL argument");
  }
  *output = nullptr;
  return guarded([&] {
    const phantom::CommandResult r = phantom::run_command(command, config->config);
    *output = copy_string(r.output);
    if (r.exit_code != 0) return fail(PHANTOM_ERR_CHECK_FAILED, std::string(command) + ": check failed");
    return PHANTOM_OK;
  });
}

phantom_status phantom_model_create(const phantom_config* config, phantom_model** out) {
  if (config == nullptr || out == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_model_create: NULL argument");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<phantom_model>();
    m->model = std::make_unique<phantom::PhantomModel>(config->config.model_config(), config->config.integer("seed"));
    m->decode = config->config.decode_config();
    *out = m.release();
    return PHANTOM_OK;
  });
}

void phantom_model_destroy(phantom_model* model) { delete model; }

phantom_status phantom_model_load(phantom_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_model_load: NULL argument");
  return guarded([&] {
    phantom::load_checkpoint(*model->model, path);
    return PHANTOM_OK;
  });
}

phantom_status phantom_model_save(const phantom_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_model_save: NULL argument");
  return guarded([&] {
    phantom::save_checkpoint(*model->model, path);
    return PHANTOM_OK;
  });
}

phantom_status phantom_model_parameter_count(const phantom_model* model, uint64_t* count) {
  if (model == nullptr || count == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_model_parameter_count: NULL argument");
  return guarded([&] {
    *count = model->model->params().parameter_count();
    return PHANTOM_OK;
  });
}

phantom_status phantom_model_generate(phantom_model* model, const char* question, const char* image_path, char** answer) {
  if (model == nullptr || question == nullptr || answer == nullptr) {
    return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_model_generate: NULL argument");
  }
  *answer = nullptr;
  return guarded([&] {
    phantom::Tensor image;
    if (image_path != nullptr) image = phantom::load_features(image_path);
    const auto prompt = phantom::encode_prompt(question, image.defined() ? image.size(0) : 0);
    const phantom::Hypothesis h = phantom::generate(*model->model, prompt, image, model->decode);
    *answer = copy_string(phantom::ByteTokenizer::decode(h.tokens));
    return PHANTOM_OK;
  });
}

phantom_status phantom_mhca_param_count(const char* preset, uint64_t* count) {
  if (preset == nullptr || count == nullptr) return fail(PHANTOM_ERR_NULL_ARGUMENT, "phantom_mhca_param_count: NULL argument");
  return guarded([&] {
    *count = phantom::count_mhca_params(phantom::preset(preset));
    return PHANTOM_OK;
  });
}

}  // extern "C"
