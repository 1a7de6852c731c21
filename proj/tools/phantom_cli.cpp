// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C API.

#include <cstdio>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "phantom/phantom.h"

namespace {

constexpr int kUsageExit = 2;

int report_error(const std::string& status, const std::string& message, int exit_code) {
  nlohmann::ordered_json j;
  j["error"] = {{"status", status}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

int report_status(phantom_status status) {
  const int code = status == PHANTOM_ERR_CONFIG ? kUsageExit : 1;
  return report_error(phantom_status_name(status), phantom_last_error(), code);
}

struct ConfigHandle {
  phantom_config* ptr = nullptr;
  ~ConfigHandle() { phantom_config_destroy(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phantom: train, decode, benchmark and verify Phantom Dimension models"};
  app.set_version_flag("--version", phantom_version());

  const std::vector<std::string> commands = {"train", "generate", "bench", "gradcheck", "params", "ablate", "synth-data"};
  std::string command;
  app.add_option("command", command, "train | generate | bench | gradcheck | params | ablate | synth-data")
      ->required()
      ->check(CLI::IsMember(commands));

  std::string config_path;
  app.add_option("--config", config_path, "key = value config file; flags override its keys");

  // Flag name -> config key.
  const std::vector<std::pair<std::string, std::string>> mapped = {
      {"--preset", "preset"},
      {"--seed", "seed"},
      {"--pd", "pd"},
      {"--wa", "wa"},
      {"--po-step1", "po_step1"},
      {"--po-step2", "po_step2"},
      {"--mhca-residual", "mhca_residual"},
      {"--normalized-wa", "normalized_wa"},
      {"--beams", "beams"},
      {"--out", "out"},
  };
  std::vector<std::string> mapped_values(mapped.size());
  for (std::size_t i = 0; i < mapped.size(); ++i) app.add_option(mapped[i].first, mapped_values[i]);
  app.get_option("--preset")->description("phantom-0.5b | phantom-1.8b | phantom-3.8b | phantom-7b | tiny");
  app.get_option("--pd")->description("on | off");
  app.get_option("--wa")->description("wa | sum | mean");
  app.get_option("--out")->description("output directory");

  std::vector<std::string> sets;
  app.add_option("--set", sets, "KEY=VALUE for any other config key (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsageExit);
  }

  ConfigHandle config;
  if (phantom_config_create(&config.ptr) != PHANTOM_OK) return report_status(PHANTOM_ERR_INTERNAL);
  if (!config_path.empty()) {
    if (auto s = phantom_config_load_file(config.ptr, config_path.c_str()); s != PHANTOM_OK) return report_status(s);
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) return report_error("usage", "--set expects KEY=VALUE, got '" + kv + "'", kUsageExit);
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (auto s = phantom_config_set(config.ptr, key.c_str(), value.c_str()); s != PHANTOM_OK) return report_status(s);
  }
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    if (app.count(mapped[i].first) == 0) continue;
    if (auto s = phantom_config_set(config.ptr, mapped[i].second.c_str(), mapped_values[i].c_str()); s != PHANTOM_OK) {
      return report_status(s);
    }
  }

  char* output = nullptr;
  const phantom_status status = phantom_run(command.c_str(), config.ptr, &output);
  if (output != nullptr) {
    std::fputs(output, stdout);
    std::fflush(stdout);
    phantom_string_free(output);
  }
  if (status != PHANTOM_OK) return report_status(status);
  return 0;
}
