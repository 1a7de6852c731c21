// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phantom/losses.hpp"
#include "phantom/model.hpp"

namespace phantom {

struct Triple {
  std::string id;
  std::optional<std::string> image;  // feature file path, relative to the triple file
  std::string question;
  std::string chosen;
  std::string rejected;

  bool operator==(const Triple&) const = default;
};

/// Parses one JSON object line; `line_number` is used in error messages.
Triple parse_triple(std::string_view line, std::size_t line_number);
std::string format_triple(const Triple& triple);
std::vector<Triple> load_triples(const std::filesystem::path& path);
void save_triples(const std::filesystem::path& path, std::span<const Triple> triples);

// ---------------------------------------------------------------------------
// Synthetic data

struct QaPair {
  std::string id;
  std::string question;
  std::string answer;
  std::optional<std::string> image;
  std::size_t image_dots = 0;  // for synthetic image questions
};

enum class CorruptionRule { kNumeric, kEntitySwap, kHedge };

/// Applies one rule; returns nullopt when the rule does not apply to `answer`.
/// `siblings` supplies replacement entities for kEntitySwap.
std::optional<std::string> corrupt_answer(std::string_view answer, CorruptionRule rule, std::span<const std::string> siblings,
                                          std::uint64_t seed);

/// Rule-based stand-in for model-generated wrong answers. Deterministic in
/// `seed`; every rejected answer differs from its chosen answer.
std::vector<Triple> synth_corrupt(std::span<const QaPair> pairs, std::uint64_t seed);

/// Templated question/answer pairs over a small fact pool. A fraction of the
/// pairs ask about a synthetic dot image (image field set to "images/<id>.pckpt").
std::vector<QaPair> synth_qa_pairs(std::size_t count, std::uint64_t seed, double image_fraction = 0.25);

/// Deterministic vision stub: renders `dots` on a faint 8x8 canvas and projects
/// its four 4x4 patches to `feature_dim` with a fixed seeded matrix. [4, feature_dim].
Tensor synth_image_features(std::size_t dots, std::size_t feature_dim);
inline constexpr std::size_t kSynthImageTokens = 4;

/// Writes triples.jsonl plus feature files for image pairs under `dir`.
std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                                         std::size_t feature_dim, double image_fraction = 0.25);

// ---------------------------------------------------------------------------
// Tokenization and batching

class ByteTokenizer {
 public:
  static std::vector<std::int32_t> encode(std::string_view text);
  /// Special tokens are dropped.
  static std::string decode(std::span<const std::int32_t> ids);
};

struct TokenizedExample {
  std::vector<std::int32_t> ids;          // [sos][image x P][question][answer][eos]
  std::vector<std::uint8_t> answer_mask;  // 1 on answer and eos tokens
  std::vector<std::size_t> positions;
  std::size_t prompt_length = 0;
};

/// Returns the (chosen, rejected) encodings; their prompt prefixes are identical.
std::pair<TokenizedExample, TokenizedExample> tokenize(const Triple& triple, std::size_t image_tokens = 0);
/// Prompt-only encoding for generation: [sos][image x P][question].
std::vector<std::int32_t> encode_prompt(std::string_view question, std::size_t image_tokens = 0);

/// Right-pads to the longest example. targets/loss_mask are shifted so that
/// position t predicts token t+1.
LabeledBatch collate(std::span<const TokenizedExample> examples, std::int32_t pad_id = vocab::kPad);

struct TripleDataset {
  std::vector<Triple> triples;
  std::vector<TokenizedExample> chosen;
  std::vector<TokenizedExample> rejected;
  std::vector<Tensor> images;  // undefined for text-only triples

  std::size_t size() const { return triples.size(); }
};

/// Tokenizes triples and loads their feature files relative to `base_dir`.
TripleDataset build_dataset(std::vector<Triple> triples, const std::filesystem::path& base_dir);
POBatch make_po_batch(const TripleDataset& dataset, std::span<const std::size_t> indices);

}  // namespace phantom
