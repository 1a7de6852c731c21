// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "phantom/checkpoint.hpp"

namespace phantom {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

bool within_length_budget(std::size_t original, std::size_t candidate) {
  const double diff = std::abs(static_cast<double>(candidate) - static_cast<double>(original));
  return diff <= 0.2 * static_cast<double>(original);
}

// Last purely alphabetic word (ignoring trailing punctuation): (index, core).
std::optional<std::pair<std::size_t, std::string>> last_entity(const std::vector<std::string>& words) {
  for (std::size_t i = words.size(); i-- > 0;) {
    std::string core = words[i];
    while (!core.empty() && std::ispunct(static_cast<unsigned char>(core.back()))) core.pop_back();
    if (core.empty()) continue;
    if (std::all_of(core.begin(), core.end(), [](unsigned char c) { return std::isalpha(c); })) return std::make_pair(i, core);
    if (std::any_of(core.begin(), core.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
  }
  return std::nullopt;
}

std::optional<std::string> numeric_rule(std::string_view answer, std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < answer.size();) {
    if (std::isdigit(static_cast<unsigned char>(answer[i]))) {
      std::size_t j = i;
      while (j < answer.size() && std::isdigit(static_cast<unsigned char>(answer[j]))) ++j;
      runs.emplace_back(i, j - i);
      i = j;
    } else {
      ++i;
    }
  }
  if (runs.empty()) return std::nullopt;
  const auto [start, len] = runs[rng() % runs.size()];
  const long value = std::stol(std::string(answer.substr(start, std::min<std::size_t>(len, 15))));
  static constexpr std::array<long, 4> kDeltas{-2, -1, 1, 2};
  std::vector<long> options;
  for (long d : kDeltas)
    if (value + d >= 0) options.push_back(value + d);
  const long replacement = options[rng() % options.size()];
  std::string out(answer.substr(0, start));
  out += std::to_string(replacement);
  out += answer.substr(start + len);
  return out;
}

std::optional<std::string> entity_rule(std::string_view answer, std::span<const std::string> siblings, std::mt19937_64& rng) {
  auto words = split_words(answer);
  const auto entity = last_entity(words);
  if (!entity) return std::nullopt;
  std::vector<std::string> candidates;
  for (const auto& s : siblings) {
    const auto other = last_entity(split_words(s));
    if (!other || other->second == entity->second) continue;
    const std::size_t new_len = answer.size() - entity->second.size() + other->second.size();
    if (!within_length_budget(answer.size(), new_len)) continue;
    if (std::find(candidates.begin(), candidates.end(), other->second) == candidates.end()) candidates.push_back(other->second);
  }
  if (candidates.empty()) return std::nullopt;
  std::sort(candidates.begin(), candidates.end());
  const std::string& pick = candidates[rng() % candidates.size()];
  std::string& word = words[entity->first];
  word.replace(word.find(entity->second), entity->second.size(), pick);
  return join_words(words);
}

std::optional<std::string> hedge_rule(std::string_view answer, std::mt19937_64& rng) {
  static constexpr std::array<std::string_view, 5> kHedges{"maybe", "likely", "perhaps", "possibly", "probably"};
  const auto words = split_words(answer);
  if (words.empty()) return std::nullopt;
  const std::size_t first = rng() % kHedges.size();
  for (std::size_t attempt = 0; attempt < kHedges.size(); ++attempt) {
    const std::string hedge(kHedges[(first + attempt) % kHedges.size()]);
    std::vector<std::string> out = words;
    const std::size_t at = out.size() > 1 ? 1 : 0;
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), hedge);
    // Drop short filler words after the hedge until the length fits.
    while (join_words(out).size() > answer.size() + answer.size() / 5) {
      std::size_t victim = 0;
      for (std::size_t i = at + 1; i + 1 < out.size(); ++i) {
        if (victim == 0 || out[i].size() < out[victim].size()) victim = i;
      }
      if (victim == 0) break;
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    std::string result = join_words(out);
    if (within_length_budget(answer.size(), result.size())) return result;
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Triple files

Triple parse_triple(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kFormat, where + "malformed record (" + e.what() + ")");
  }
  if (!obj.is_object()) throw Error(ErrorCode::kFormat, where + "record is not an object");
  auto text_field = [&](const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) throw Error(ErrorCode::kFormat, where + "missing required field '" + key + "'");
    if (!it->is_string()) throw Error(ErrorCode::kFormat, where + "field '" + key + "' must be a string");
    return it->get<std::string>();
  };
  Triple t;
  t.id = text_field("id");
  t.question = text_field("question");
  t.chosen = text_field("chosen");
  t.rejected = text_field("rejected");
  if (auto it = obj.find("image"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorCode::kFormat, where + "field 'image' must be a string or null");
    t.image = it->get<std::string>();
  }
  if (t.chosen.empty() || t.rejected.empty()) throw Error(ErrorCode::kFormat, where + "answers must be non-empty");
  if (t.chosen == t.rejected) throw Error(ErrorCode::kFormat, where + "chosen and rejected answers are identical");
  return t;
}

std::string format_triple(const Triple& t) {
  nlohmann::ordered_json obj;
  obj["id"] = t.id;
  obj["image"] = t.image ? nlohmann::ordered_json(*t.image) : nlohmann::ordered_json(nullptr);
  obj["question"] = t.question;
  obj["chosen"] = t.chosen;
  obj["rejected"] = t.rejected;
  return obj.dump();
}

std::vector<Triple> load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open triple file '" + path.string() + "'");
  std::vector<Triple> triples;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    triples.push_back(parse_triple(line, number));
  }
  return triples;
}

void save_triples(const std::filesystem::path& path, std::span<const Triple> triples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write triple file '" + path.string() + "'");
  for (const auto& t : triples) out << format_triple(t) << '\n';
}

// ---------------------------------------------------------------------------
// Corruption

std::optional<std::string> corrupt_answer(std::string_view answer, CorruptionRule rule, std::span<const std::string> siblings,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::optional<std::string> out;
  switch (rule) {
    case CorruptionRule::kNumeric: out = numeric_rule(answer, rng); break;
    case CorruptionRule::kEntitySwap: out = entity_rule(answer, siblings, rng); break;
    case CorruptionRule::kHedge: out = hedge_rule(answer, rng); break;
  }
  if (out && *out == answer) return std::nullopt;
  return out;
}

std::vector<Triple> synth_corrupt(std::span<const QaPair> pairs, std::uint64_t seed) {
  std::vector<std::string> answers;
  answers.reserve(pairs.size());
  for (const auto& p : pairs) answers.push_back(p.answer);

  std::vector<Triple> triples;
  triples.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const QaPair& p = pairs[i];
    const std::uint64_t local = splitmix64(seed ^ splitmix64(i + 1));
    // Siblings share the answer's two leading words and word count when possible.
    const auto words = split_words(p.answer);
    std::vector<std::string> siblings;
    for (std::size_t j = 0; j < answers.size(); ++j) {
      if (j == i) continue;
      const auto other = split_words(answers[j]);
      const bool same_template = words.size() >= 2 && other.size() == words.size() && other[0] == words[0] && other[1] == words[1];
      if (same_template) siblings.push_back(answers[j]);
    }
    if (siblings.empty()) {
      for (std::size_t j = 0; j < answers.size(); ++j)
        if (j != i) siblings.push_back(answers[j]);
    }

    std::array<CorruptionRule, 3> rules{CorruptionRule::kNumeric, CorruptionRule::kEntitySwap, CorruptionRule::kHedge};
    std::mt19937_64 order_rng(local);
    std::shuffle(rules.begin(), rules.end(), order_rng);
    std::optional<std::string> rejected;
    for (std::size_t r = 0; r < rules.size() && !rejected; ++r) {
      rejected = corrupt_answer(p.answer, rules[r], siblings, local + r + 1);
    }
    if (!rejected) {
      // Last resort: swap the first pair of differing adjacent characters.
      std::string s = p.answer;
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        if (s[k] != s[k + 1]) {
          std::swap(s[k], s[k + 1]);
          break;
        }
      }
      if (s == p.answer) s += "?";
      rejected = s;
    }
    Triple t;
    t.id = p.id.empty() ? "t" + std::to_string(i) : p.id;
    t.image = p.image;
    t.question = p.question;
    t.chosen = p.answer;
    t.rejected = std::move(*rejected);
    triples.push_back(std::move(t));
  }
  return triples;
}

// ---------------------------------------------------------------------------
// Synthetic QA

namespace {

struct Fact {
  std::string question;
  std::string answer;
};

std::vector<Fact> fact_pool() {
  std::vector<Fact> facts;
  const std::vector<std::pair<std::string, std::string>> colors{
      {"sky", "blue"}, {"grass", "green"}, {"lemon", "yellow"}};
  for (const auto& [s, c] : colors) facts.push_back({"What color is the " + s + "?", "The color of the " + s + " is " + c + "."});
  const std::vector<std::pair<std::string, int>> legs{{"spider", 8}, {"dog", 4}, {"bird", 2}};
  for (const auto& [a, n] : legs)
    facts.push_back({"How many legs does a " + a + " have?", "A " + a + " has " + std::to_string(n) + " legs in total."});
  const std::vector<std::pair<std::string, std::string>> capitals{
      {"France", "Paris"}, {"Japan", "Tokyo"}, {"Egypt", "Cairo"}};
  for (const auto& [c, x] : capitals)
    facts.push_back({"What is the capital of " + c + "?", "The capital city of " + c + " is " + x + "."});
  const std::vector<std::pair<int, int>> sums{{2, 3}, {4, 4}, {3, 6}};
  for (const auto& [a, b] : sums) {
    facts.push_back({"What is " + std::to_string(a) + " plus " + std::to_string(b) + "?",
                     "The sum of " + std::to_string(a) + " and " + std::to_string(b) + " is " + std::to_string(a + b) + "."});
  }
  return facts;
}

}  // namespace

std::vector<QaPair> synth_qa_pairs(std::size_t count, std::uint64_t seed, double image_fraction) {
  const auto facts = fact_pool();
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<QaPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    QaPair p;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i);
    p.id = id;
    if (unit(rng) < image_fraction) {
      p.image_dots = 1 + rng() % 3;
      p.question = "How many dots are in the image?";
      p.answer = "The image shows " + std::to_string(p.image_dots) + " dots in total.";
      p.image = "images/" + p.id + ".pckpt";
    } else {
      const Fact& f = facts[rng() % facts.size()];
      p.question = f.question;
      p.answer = f.answer;
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Tensor synth_image_features(std::size_t dots, std::size_t feature_dim) {
  constexpr std::size_t kSide = 8;
  constexpr std::size_t kPatch = 4;
  constexpr double kBackground = 0.1;  // keeps empty patches away from all-zero features
  std::array<double, kSide * kSide> canvas;
  canvas.fill(kBackground);
  std::array<std::size_t, kSide * kSide> cells{};
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  std::mt19937_64 place(0xd075ull);
  std::shuffle(cells.begin(), cells.end(), place);
  for (std::size_t i = 0; i < std::min(dots, cells.size()); ++i) canvas[cells[i]] = 1.0;

  // Fixed projection shared by every image.
  std::mt19937_64 proj_rng(0x5eedull);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kPatch * kPatch)));
  std::vector<double> proj(kPatch * kPatch * feature_dim);
  for (double& v : proj) v = normal(proj_rng);

  std::vector<double> out(kSynthImageTokens * feature_dim, 0.0);
  for (std::size_t p = 0; p < kSynthImageTokens; ++p) {
    const std::size_t r0 = (p / 2) * kPatch;
    const std::size_t c0 = (p % 2) * kPatch;
    for (std::size_t r = 0; r < kPatch; ++r) {
      for (std::size_t c = 0; c < kPatch; ++c) {
        const double px = canvas[(r0 + r) * kSide + (c0 + c)];
        const double* row = proj.data() + (r * kPatch + c) * feature_dim;
        for (std::size_t d = 0; d < feature_dim; ++d) out[p * feature_dim + d] += px * row[d];
      }
    }
  }
  return Tensor::from_data({kSynthImageTokens, feature_dim}, std::move(out));
}

std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                                         std::size_t feature_dim, double image_fraction) {
  const auto pairs = synth_qa_pairs(count, seed, image_fraction);
  for (const auto& p : pairs) {
    if (p.image) save_features(dir / *p.image, synth_image_features(p.image_dots, feature_dim));
  }
  const auto triples = synth_corrupt(pairs, seed);
  const auto path = dir / "triples.jsonl";
  save_triples(path, triples);
  return path;
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::int32_t> ByteTokenizer::encode(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const std::int32_t> ids) {
  std::string out;
  for (std::int32_t id : ids)
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  return out;
}

std::vector<std::int32_t> encode_prompt(std::string_view question, std::size_t image_tokens) {
  std::vector<std::int32_t> ids{vocab::kSos};
  ids.insert(ids.end(), image_tokens, vocab::kImage);
  const auto q = ByteTokenizer::encode(question);
  ids.insert(ids.end(), q.begin(), q.end());
  return ids;
}

std::pair<TokenizedExample, TokenizedExample> tokenize(const Triple& triple, std::size_t image_tokens) {
  const auto prompt = encode_prompt(triple.question, triple.image ? image_tokens : 0);
  auto build = [&](std::string_view answer) {
    TokenizedExample ex;
    ex.ids = prompt;
    ex.prompt_length = prompt.size();
    const auto a = ByteTokenizer::encode(answer);
    ex.ids.insert(ex.ids.end(), a.begin(), a.end());
    ex.ids.push_back(vocab::kEos);
    ex.answer_mask.assign(ex.ids.size(), 0);
    std::fill(ex.answer_mask.begin() + static_cast<std::ptrdiff_t>(prompt.size()), ex.answer_mask.end(), 1);
    ex.positions.resize(ex.ids.size());
    std::iota(ex.positions.begin(), ex.positions.end(), std::size_t{0});
    return ex;
  };
  return {build(triple.chosen), build(triple.rejected)};
}

LabeledBatch collate(std::span<const TokenizedExample> examples, std::int32_t pad_id) {
  if (examples.empty()) throw Error(ErrorCode::kInvalidArgument, "collate: empty example list");
  std::size_t seq = 0;
  for (const auto& e : examples) seq = std::max(seq, e.ids.size());
  LabeledBatch out;
  out.tokens.batch = examples.size();
  out.tokens.seq = seq;
  out.tokens.ids.assign(examples.size() * seq, pad_id);
  out.targets.assign(examples.size() * seq, pad_id);
  std::vector<double> mask(examples.size() * seq, 0.0);
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& e = examples[b];
    out.tokens.lengths.push_back(e.ids.size());
    for (std::size_t t = 0; t < e.ids.size(); ++t) {
      out.tokens.ids[b * seq + t] = e.ids[t];
      if (t + 1 < e.ids.size()) {
        out.targets[b * seq + t] = e.ids[t + 1];
        mask[b * seq + t] = e.answer_mask[t + 1];
      }
    }
  }
  out.loss_mask = Tensor::from_data({examples.size(), seq}, std::move(mask));
  return out;
}

TripleDataset build_dataset(std::vector<Triple> triples, const std::filesystem::path& base_dir) {
  TripleDataset ds;
  for (auto& t : triples) {
    Tensor features;
    if (t.image) features = load_features(base_dir / *t.image);
    auto [chosen, rejected] = tokenize(t, features.defined() ? features.size(0) : 0);
    ds.chosen.push_back(std::move(chosen));
    ds.rejected.push_back(std::move(rejected));
    ds.images.push_back(std::move(features));
    ds.triples.push_back(std::move(t));
  }
  return ds;
}

POBatch make_po_batch(const TripleDataset& dataset, std::span<const std::size_t> indices) {
  std::vector<TokenizedExample> chosen;
  std::vector<TokenizedExample> rejected;
  POBatch batch;
  bool any_image = false;
  for (std::size_t i : indices) {
    chosen.push_back(dataset.chosen.at(i));
    rejected.push_back(dataset.rejected.at(i));
    batch.images.push_back(dataset.images.at(i));
    any_image = any_image || dataset.images[i].defined();
  }
  if (!any_image) batch.images.clear();
  batch.chosen = collate(chosen);
  batch.rejected = collate(rejected);
  return batch;
}

}  // namespace phantom
