// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "phantom/checkpoint.hpp"
#include "phantom/data.hpp"

namespace phantom {

namespace {

enum class Kind { kText, kSwitch, kCount, kReal, kChoice };

struct KeySpec {
  std::string default_value;
  Kind kind;
  std::vector<std::string> choices;
};

const std::map<std::string, KeySpec, std::less<>>& registry() {
  static const std::map<std::string, KeySpec, std::less<>> keys = {
      // model
      {"preset", {"tiny", Kind::kChoice, preset_names()}},
      {"seed", {"0", Kind::kCount, {}}},
      {"pd", {"on", Kind::kSwitch, {}}},
      {"wa", {"wa", Kind::kChoice, {"wa", "sum", "mean"}}},
      {"normalized_wa", {"on", Kind::kSwitch, {}}},
      {"mhca_residual", {"off", Kind::kSwitch, {}}},
      {"lambda", {"1.4142135623730951", Kind::kReal, {}}},
      {"vocab_size", {"0", Kind::kCount, {}}},
      {"vision_feature_dim", {"0", Kind::kCount, {}}},
      // training
      {"po_step1", {"on", Kind::kSwitch, {}}},
      {"po_step2", {"off", Kind::kSwitch, {}}},
      {"lr_start", {"1e-5", Kind::kReal, {}}},
      {"lr_end", {"1e-6", Kind::kReal, {}}},
      {"grad_accum", {"4", Kind::kCount, {}}},
      {"batch_size", {"8", Kind::kCount, {}}},
      {"epochs", {"1", Kind::kCount, {}}},
      {"clip_norm", {"1.0", Kind::kReal, {}}},
      {"beta", {"2.0", Kind::kReal, {}}},
      {"gamma", {"0.5", Kind::kReal, {}}},
      {"weight_decay", {"0.01", Kind::kReal, {}}},
      // decoding
      {"beams", {"3", Kind::kCount, {}}},
      {"decode_mode", {"beam", Kind::kChoice, {"beam", "greedy"}}},
      {"max_new_tokens", {"32", Kind::kCount, {}}},
      {"length_alpha", {"1.0", Kind::kReal, {}}},
      // paths
      {"triples", {"", Kind::kText, {}}},
      {"held_out", {"", Kind::kText, {}}},
      {"checkpoint", {"", Kind::kText, {}}},
      {"prompts", {"", Kind::kText, {}}},
      {"out", {"runs/latest", Kind::kText, {}}},
      // synthetic data and ablation
      {"synth_count", {"64", Kind::kCount, {}}},
      {"synth_held_out", {"64", Kind::kCount, {}}},
      {"image_fraction", {"0.25", Kind::kReal, {}}},
      {"include_po_step2", {"off", Kind::kSwitch, {}}},
      // bench
      {"bench_prompt_tokens", {"16", Kind::kCount, {}}},
      {"bench_decode_tokens", {"16", Kind::kCount, {}}},
      {"bench_warmup", {"1", Kind::kCount, {}}},
      {"bench_repeats", {"3", Kind::kCount, {}}},
      {"bench_self_compare", {"off", Kind::kSwitch, {}}},
      // gradcheck
      {"gradcheck_coords", {"3", Kind::kCount, {}}},
      {"gradcheck_step", {"1e-4", Kind::kReal, {}}},
  };
  return keys;
}

std::string normalise_key(std::string_view key) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_count(std::string_view v, std::uint64_t& out) {
  if (v.empty()) return false;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  return r.ec == std::errc{} && r.ptr == v.data() + v.size();
}

bool parse_real(std::string_view v, double& out) {
  if (v.empty()) return false;
  try {
    std::size_t used = 0;
    out = std::stod(std::string(v), &used);
    return used == v.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

void write_resolved(const RunConfig& config, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  std::ofstream f(out / "resolved_config.cfg", std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write resolved config under '" + out.string() + "'");
  f << config.dump();
}

std::filesystem::path existing_path(const RunConfig& config, std::string_view key) {
  const std::string& value = config.get(key);
  if (value.empty()) throw Error(ErrorCode::kConfig, "'" + std::string(key) + "' must be set for this command");
  if (!std::filesystem::exists(value)) {
    throw Error(ErrorCode::kConfig, "'" + std::string(key) + "' refers to missing path '" + value + "'");
  }
  return value;
}

nlohmann::ordered_json eval_json(const EvalMetrics& e) {
  return {{"l_sft", e.l_sft}, {"po_term", e.po_term}, {"margin", e.margin}, {"pref_acc", e.pref_acc}, {"count", e.count}};
}

TripleDataset load_dataset(const std::filesystem::path& triples) {
  return build_dataset(load_triples(triples), triples.parent_path());
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig::RunConfig() {
  for (const auto& [key, spec] : registry()) values_[key] = spec.default_value;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k = normalise_key(key);
  const auto it = registry().find(k);
  if (it == registry().end()) throw Error(ErrorCode::kConfig, "unknown config key '" + std::string(key) + "'");
  const std::string v = trim(value);
  const KeySpec& spec = it->second;
  bool ok = true;
  std::uint64_t n = 0;
  double x = 0.0;
  switch (spec.kind) {
    case Kind::kText: break;
    case Kind::kSwitch: ok = v == "on" || v == "off"; break;
    case Kind::kCount: ok = parse_count(v, n); break;
    case Kind::kReal: ok = parse_real(v, x); break;
    case Kind::kChoice: ok = std::find(spec.choices.begin(), spec.choices.end(), v) != spec.choices.end(); break;
  }
  if (!ok) {
    std::string expected;
    switch (spec.kind) {
      case Kind::kSwitch: expected = "on|off"; break;
      case Kind::kCount: expected = "a non-negative integer"; break;
      case Kind::kReal: expected = "a finite number"; break;
      case Kind::kChoice:
        for (const auto& c : spec.choices) expected += (expected.empty() ? "" : "|") + c;
        break;
      case Kind::kText: break;
    }
    throw Error(ErrorCode::kConfig, "invalid value '" + v + "' for '" + k + "' (expected " + expected + ")");
  }
  values_[k] = v;
}

const std::string& RunConfig::get(std::string_view key) const {
  const auto it = values_.find(normalise_key(key));
  if (it == values_.end()) throw Error(ErrorCode::kConfig, "unknown config key '" + std::string(key) + "'");
  return it->second;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config file '" + path.string() + "'");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    try {
      set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, spec] : registry()) out.push_back(k);
  return out;
}

bool RunConfig::flag(std::string_view key) const { return get(key) == "on"; }

std::uint64_t RunConfig::integer(std::string_view key) const {
  std::uint64_t n = 0;
  if (!parse_count(get(key), n)) throw Error(ErrorCode::kConfig, "'" + std::string(key) + "' is not an integer");
  return n;
}

double RunConfig::real(std::string_view key) const {
  double x = 0.0;
  if (!parse_real(get(key), x)) throw Error(ErrorCode::kConfig, "'" + std::string(key) + "' is not a number");
  return x;
}

ModelConfig RunConfig::model_config(bool byte_vocab) const {
  ModelConfig c = preset(get("preset"));
  c.pd_enabled = flag("pd");
  const std::string& wa = get("wa");
  c.compression = wa == "wa" ? CompressionMode::kWeightedAverage : wa == "sum" ? CompressionMode::kSum : CompressionMode::kMean;
  c.normalized_mode = flag("normalized_wa");
  c.mhca_residual = flag("mhca_residual");
  c.lambda = real("lambda");
  if (integer("vocab_size") > 0) c.vocab_size = integer("vocab_size");
  if (byte_vocab && c.vocab_size < vocab::kSize) c.vocab_size = vocab::kSize;
  if (integer("vision_feature_dim") > 0) c.vision_feature_dim = integer("vision_feature_dim");
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.po_in_step1 = flag("po_step1");
  t.po_in_step2 = flag("po_step2");
  t.lr_start = real("lr_start");
  t.lr_end = real("lr_end");
  t.grad_accum = integer("grad_accum");
  t.batch_size = integer("batch_size");
  t.epochs = integer("epochs");
  t.seed = integer("seed");
  t.beta = real("beta");
  t.gamma = real("gamma");
  t.clip_norm = real("clip_norm");
  t.adamw.weight_decay = real("weight_decay");
  t.validate();
  return t;
}

DecodeConfig RunConfig::decode_config() const {
  DecodeConfig d;
  d.mode = get("decode_mode") == "greedy" ? DecodeMode::kGreedy : DecodeMode::kBeam;
  d.n = integer("beams");
  d.max_new_tokens = integer("max_new_tokens");
  d.length_alpha = real("length_alpha");
  d.validate();
  return d;
}

BenchWorkload RunConfig::bench_workload() const {
  BenchWorkload w;
  w.prompt_tokens = integer("bench_prompt_tokens");
  w.decode_tokens = integer("bench_decode_tokens");
  w.warmup = integer("bench_warmup");
  w.repeats = integer("bench_repeats");
  return w;
}

std::string group_thousands(std::uint64_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

std::vector<std::string> command_names() { return {"train", "generate", "bench", "gradcheck", "params", "ablate", "synth-data"}; }

// ---------------------------------------------------------------------------
// Commands

namespace {

CommandResult cmd_params(const RunConfig& config) {
  const ModelConfig c = config.model_config(false);
  const auto counts = parameter_counts(c);
  std::ostringstream out;
  out << "preset " << c.preset_name << "  (d_q " << c.attention.d_q << ", h_q " << c.attention.h_q << ", h_kv "
      << c.attention.h_kv << ", head_dim " << c.head_dim() << ", layers " << c.layers << ", vocab " << c.vocab_size << ")\n";
  std::uint64_t total = 0;
  for (const auto& [group, n] : counts) {
    out << "  " << group_name(group);
    for (std::size_t pad = group_name(group).size(); pad < 12; ++pad) out << ' ';
    out << group_thousands(n) << '\n';
    total += n;
  }
  out << "  total       " << group_thousands(total) << '\n';
  out << "MHCA params " << group_thousands(count_mhca_params(c)) << '\n';
  return {0, out.str()};
}

CommandResult cmd_synth(const RunConfig& config) {
  const std::filesystem::path out = config.get("out");
  write_resolved(config, out);
  const ModelConfig c = config.model_config();
  const auto path = write_synth_corpus(out, config.integer("synth_count"), config.integer("seed"), c.vision_feature_dim,
                                       config.real("image_fraction"));
  nlohmann::ordered_json j;
  j["triples"] = path.string();
  j["count"] = config.integer("synth_count");
  return {0, j.dump(2) + "\n"};
}

CommandResult cmd_train(const RunConfig& config) {
  const auto triples = existing_path(config, "triples");
  const std::filesystem::path out = config.get("out");
  const ModelConfig mc = config.model_config();
  const TrainConfig tc = config.train_config();
  const TripleDataset ds = load_dataset(triples);
  if (ds.size() == 0) throw Error(ErrorCode::kInvalidArgument, "triple file '" + triples.string() + "' is empty");
  write_resolved(config, out);
  PhantomModel model(mc, config.integer("seed"));
  if (!config.get("checkpoint").empty()) load_checkpoint(model, existing_path(config, "checkpoint"));
  const TwoStepReport r = run_two_step(model, ds, tc, out);
  nlohmann::ordered_json j;
  j["triples"] = ds.size();
  j["steps"] = r.steps.size();
  j["initial"] = eval_json(r.initial);
  j["after_step1"] = eval_json(r.after_step1);
  j["final"] = eval_json(r.final);
  j["step1_checkpoint"] = r.step1_checkpoint.string();
  j["step2_checkpoint"] = r.step2_checkpoint.string();
  j["metrics_log"] = r.metrics_log.string();
  std::ofstream(out / "summary.json", std::ios::trunc) << j.dump(2) << '\n';
  return {0, j.dump(2) + "\n"};
}

CommandResult cmd_generate(const RunConfig& config) {
  const auto prompts_path = existing_path(config, "prompts");
  const std::filesystem::path out = config.get("out");
  const ModelConfig mc = config.model_config();
  const DecodeConfig dc = config.decode_config();
  PhantomModel model(mc, config.integer("seed"));
  if (!config.get("checkpoint").empty()) load_checkpoint(model, existing_path(config, "checkpoint"));
  write_resolved(config, out);

  std::ifstream in(prompts_path);
  std::string line;
  std::string text;
  std::ofstream log(out / "generations.jsonl", std::ios::trunc);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    // question, optionally followed by a tab and a feature file path.
    std::string question = line;
    Tensor image;
    if (const auto tab = line.find('\t'); tab != std::string::npos) {
      question = line.substr(0, tab);
      image = load_features(prompts_path.parent_path() / trim(line.substr(tab + 1)));
    }
    const auto prompt = encode_prompt(question, image.defined() ? image.size(0) : 0);
    const Hypothesis h = generate(model, prompt, image, dc);
    nlohmann::ordered_json j;
    j["question"] = question;
    j["answer"] = ByteTokenizer::decode(h.tokens);
    j["tokens"] = h.tokens;
    j["logprob"] = h.logprob;
    j["score"] = h.score(dc.length_alpha);
    j["finished"] = h.finished;
    log << j.dump() << '\n';
    text += j.dump() + "\n";
  }
  return {0, text};
}

CommandResult cmd_bench(const RunConfig& config) {
  const std::filesystem::path out = config.get("out");
  write_resolved(config, out);
  const BenchReport r = bench(config.model_config(false), config.integer("seed"), config.bench_workload(),
                              config.flag("bench_self_compare"));
  const std::string json = bench_json(r);
  std::ofstream(out / "bench.json", std::ios::trunc) << json << '\n';
  return {0, json + "\n"};
}

CommandResult cmd_gradcheck(const RunConfig& config) {
  const ModelConfig mc = config.model_config();
  const std::uint64_t seed = config.integer("seed");
  PhantomModel model(mc, seed);
  model.params().set_trainable(freeze_mask(TrainPhase::kStep2));

  // Two short triples, one with a synthetic image, so every group is reached.
  TripleDataset ds;
  const std::vector<std::pair<std::string, std::string>> qa = {{"2+3?", "It is 5."}, {"Dots?", "3 dots."}};
  const std::vector<std::string> rejected = {"It is 6.", "4 dots."};
  for (std::size_t i = 0; i < qa.size(); ++i) {
    Triple t{"g" + std::to_string(i), std::nullopt, qa[i].first, qa[i].second, rejected[i]};
    Tensor image;
    if (i == 1) {
      t.image = "synthetic";
      image = synth_image_features(3, mc.vision_feature_dim);
    }
    auto [c, r] = tokenize(t, image.defined() ? image.size(0) : 0);
    ds.triples.push_back(t);
    ds.chosen.push_back(std::move(c));
    ds.rejected.push_back(std::move(r));
    ds.images.push_back(image);
  }
  const std::vector<std::size_t> idx = {0, 1};
  const POBatch batch = make_po_batch(ds, idx);
  LossToggles toggles;
  toggles.beta = config.real("beta");
  toggles.gamma = config.real("gamma");

  std::vector<Tensor> inputs;
  for (const auto& e : model.params().entries()) inputs.push_back(e.tensor);
  GradcheckOptions opts;
  opts.step = config.real("gradcheck_step");
  opts.max_coords_per_input = config.integer("gradcheck_coords");
  opts.seed = seed;
  const GradcheckReport rep = gradcheck([&] { return phantom_loss(model, batch, toggles).l_po; }, inputs, opts);

  const bool pass = rep.max_rel_error < 1e-4;
  nlohmann::ordered_json j;
  j["objective"] = "l_po";
  j["preset"] = mc.preset_name;
  j["seed"] = seed;
  j["step"] = opts.step;
  j["coords_checked"] = rep.coords_checked;
  j["max_rel_error"] = rep.max_rel_error;
  j["worst_input"] = rep.worst_input < model.params().entries().size() ? model.params().entries()[rep.worst_input].name : "";
  j["threshold"] = 1e-4;
  j["pass"] = pass;
  return {pass ? 0 : 1, j.dump(2) + "\n"};
}

CommandResult cmd_ablate(const RunConfig& config) {
  const std::filesystem::path out = config.get("out");
  const ModelConfig mc = config.model_config();
  const TrainConfig tc = config.train_config();
  const std::uint64_t seed = config.integer("seed");
  write_resolved(config, out);
  auto triples = config.get("triples").empty()
                     ? write_synth_corpus(out / "data" / "train", config.integer("synth_count"), seed, mc.vision_feature_dim,
                                          config.real("image_fraction"))
                     : existing_path(config, "triples");
  auto held = config.get("held_out").empty()
                  ? write_synth_corpus(out / "data" / "held_out", config.integer("synth_held_out"), seed + 1000,
                                       mc.vision_feature_dim, config.real("image_fraction"))
                  : existing_path(config, "held_out");
  const TripleDataset train = load_dataset(triples);
  const TripleDataset held_out = load_dataset(held);
  const auto combos = ablation_matrix(config.flag("include_po_step2"));
  const auto results = run_ablation(mc, seed, tc, train, held_out, combos, out);
  std::ostringstream text;
  text << "combination                   compression  held-out pref_acc  held-out margin\n";
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-30s %-12s %17.4f %16.4f\n", r.combo.name().c_str(),
                  r.compression == CompressionMode::kWeightedAverage ? "wa"
                  : r.compression == CompressionMode::kSum           ? "sum"
                                                                     : "mean",
                  r.held_out.pref_acc, r.held_out.margin);
    text << line;
  }
  return {0, text.str()};
}

}  // namespace

CommandResult run_command(std::string_view command, const RunConfig& config) {
  if (command == "params") return cmd_params(config);
  if (command == "synth-data") return cmd_synth(config);
  if (command == "train") return cmd_train(config);
  if (command == "generate") return cmd_generate(config);
  if (command == "bench") return cmd_bench(config);
  if (command == "gradcheck") return cmd_gradcheck(config);
  if (command == "ablate") return cmd_ablate(config);
  throw Error(ErrorCode::kConfig, "unknown subcommand '" + std::string(command) + "'");
}

}  // namespace phantom
