// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

// Links against the shared library only.

#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "phantom/phantom.h"

namespace {

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  phantom_string_free(s);
  return out;
}

struct Config {
  phantom_config* ptr = nullptr;
  Config() { REQUIRE(phantom_config_create(&ptr) == PHANTOM_OK); }
  ~Config() { phantom_config_destroy(ptr); }
  void set(const char* k, const char* v) { REQUIRE(phantom_config_set(ptr, k, v) == PHANTOM_OK); }
};

struct Model {
  phantom_model* ptr = nullptr;
  explicit Model(const Config& c) { REQUIRE(phantom_model_create(c.ptr, &ptr) == PHANTOM_OK); }
  ~Model() { phantom_model_destroy(ptr); }
};

std::filesystem::path scratch(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "phantom_capi_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(phantom_status_name(PHANTOM_OK)) == "ok");
  CHECK(std::string(phantom_status_name(PHANTOM_ERR_CHECK_FAILED)) == "check_failed");
  CHECK(std::string(phantom_status_name(PHANTOM_ERR_CONFIG)) == "config");
  CHECK(std::string(phantom_version()).size() > 0);
}

TEST_CASE("config set, get and dump") {
  Config c;
  char* v = nullptr;
  REQUIRE(phantom_config_get(c.ptr, "preset", &v) == PHANTOM_OK);
  CHECK(take(v) == "tiny");
  c.set("seed", "42");
  REQUIRE(phantom_config_get(c.ptr, "seed", &v) == PHANTOM_OK);
  CHECK(take(v) == "42");

  CHECK(phantom_config_set(c.ptr, "no_such_key", "1") == PHANTOM_ERR_CONFIG);
  CHECK(std::string(phantom_last_error()).find("no_such_key") != std::string::npos);
  CHECK(phantom_config_set(c.ptr, "pd", "maybe") == PHANTOM_ERR_CONFIG);
  CHECK(phantom_config_set(c.ptr, "preset", "phantom-9b") == PHANTOM_ERR_CONFIG);

  char* text = nullptr;
  REQUIRE(phantom_config_dump(c.ptr, &text) == PHANTOM_OK);
  const std::string dump = take(text);
  CHECK(dump.find("seed = 42") != std::string::npos);

  // A dumped config loads back to the same dump.
  const auto path = scratch("dump.cfg");
  std::FILE* f = std::fopen(path.c_str(), "w");
  REQUIRE(f != nullptr);
  std::fputs(dump.c_str(), f);
  std::fclose(f);
  Config d;
  REQUIRE(phantom_config_load_file(d.ptr, path.c_str()) == PHANTOM_OK);
  REQUIRE(phantom_config_dump(d.ptr, &text) == PHANTOM_OK);
  CHECK(take(text) == dump);
  CHECK(phantom_config_load_file(d.ptr, "/nonexistent/x.cfg") == PHANTOM_ERR_CONFIG);
}

TEST_CASE("NULL arguments are rejected") {
  uint64_t n = 0;
  char* s = nullptr;
  phantom_config* c = nullptr;
  CHECK(phantom_config_create(nullptr) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_config_set(nullptr, "seed", "1") == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_config_get(nullptr, "seed", &s) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_run(nullptr, c, &s) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_model_create(nullptr, nullptr) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_model_generate(nullptr, "q", nullptr, &s) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(phantom_mhca_param_count(nullptr, &n) == PHANTOM_ERR_NULL_ARGUMENT);
  CHECK(std::string(phantom_last_error()).find("NULL") != std::string::npos);
  phantom_config_destroy(nullptr);
  phantom_model_destroy(nullptr);
  phantom_string_free(nullptr);
}

TEST_CASE("MHCA parameter counts by preset") {
  uint64_t n = 0;
  REQUIRE(phantom_mhca_param_count("phantom-0.5b", &n) == PHANTOM_OK);
  CHECK(n == 1179648);
  REQUIRE(phantom_mhca_param_count("phantom-1.8b", &n) == PHANTOM_OK);
  CHECK(n == 4718592);
  REQUIRE(phantom_mhca_param_count("phantom-3.8b", &n) == PHANTOM_OK);
  CHECK(n == 3538944);
  REQUIRE(phantom_mhca_param_count("phantom-7b", &n) == PHANTOM_OK);
  CHECK(n == 6291456);
  CHECK(phantom_mhca_param_count("gpt", &n) != PHANTOM_OK);
}

TEST_CASE("model lifecycle") {
  Config c;
  c.set("seed", "3");
  c.set("max_new_tokens", "6");
  Model m(c);
  uint64_t n = 0;
  REQUIRE(phantom_model_parameter_count(m.ptr, &n) == PHANTOM_OK);
  CHECK(n > 0);

  char* a = nullptr;
  REQUIRE(phantom_model_generate(m.ptr, "2+3?", nullptr, &a) == PHANTOM_OK);
  const std::string first = take(a);
  CHECK(first.size() <= 6 * 4);

  const auto path = scratch("model.pckpt");
  REQUIRE(phantom_model_save(m.ptr, path.c_str()) == PHANTOM_OK);
  c.set("seed", "4");
  Model other(c);
  REQUIRE(phantom_model_load(other.ptr, path.c_str()) == PHANTOM_OK);
  REQUIRE(phantom_model_generate(other.ptr, "2+3?", nullptr, &a) == PHANTOM_OK);
  CHECK(take(a) == first);

  CHECK(phantom_model_load(other.ptr, "/nonexistent/m.pckpt") == PHANTOM_ERR_IO);
  CHECK(phantom_model_generate(m.ptr, "q", "/nonexistent/img.feat", &a) != PHANTOM_OK);
  CHECK(a == nullptr);
}

TEST_CASE("run commands") {
  Config c;
  c.set("preset", "phantom-0.5b");
  char* out = nullptr;
  REQUIRE(phantom_run("params", c.ptr, &out) == PHANTOM_OK);
  CHECK(take(out).find("1,179,648") != std::string::npos);
  CHECK(phantom_run("fly", c.ptr, &out) != PHANTOM_OK);
  CHECK(out == nullptr);
}
