// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "phantom/inference.hpp"
#include "phantom/model.hpp"
#include "phantom/trainer.hpp"

namespace phantom {

/// Flat key = value settings for every subcommand. Keys use underscores;
/// dashes are accepted and normalised. Unknown keys and malformed values are
/// rejected with ErrorCode::kConfig.
class RunConfig {
 public:
  RunConfig();

  void set(std::string_view key, std::string_view value);
  const std::string& get(std::string_view key) const;
  /// Reads `key = value` lines; blank lines and `#` comments are skipped.
  void load_file(const std::filesystem::path& path);
  /// Every key in sorted order, one `key = value` per line.
  std::string dump() const;

  static std::vector<std::string> keys();

  bool flag(std::string_view key) const;
  std::uint64_t integer(std::string_view key) const;
  double real(std::string_view key) const;

  /// Preset plus overrides. With `byte_vocab` the vocabulary is widened to
  /// the byte tokenizer's size when the preset is smaller.
  ModelConfig model_config(bool byte_vocab = true) const;
  TrainConfig train_config() const;
  DecodeConfig decode_config() const;
  BenchWorkload bench_workload() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

struct CommandResult {
  int exit_code = 0;    // 0 on success, 1 when a check fails
  std::string output;   // printed on stdout by the CLI
};

/// Subcommands: train, generate, bench, gradcheck, params, ablate, synth-data.
/// Runs that write artifacts also write `resolved_config.cfg` to the `out` directory.
CommandResult run_command(std::string_view command, const RunConfig& config);

std::vector<std::string> command_names();

/// Digits grouped by commas: 1179648 -> "1,179,648".
std::string group_thousands(std::uint64_t value);

}  // namespace phantom
