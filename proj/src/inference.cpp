// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"

namespace phantom {

namespace {

Tensor last_row(const Tensor& logits) {
  const std::size_t t = logits.size(1);
  const std::size_t v = logits.size(2);
  auto data = logits.data().subspan((t - 1) * v, v);
  return Tensor::from_data({v}, std::vector<double>(data.begin(), data.end()));
}

std::vector<double> log_softmax(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  const double lse = m + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

std::size_t argmax_lowest(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

}  // namespace

PrefillResult prefill(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image) {
  if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "prefill: empty prompt");
  NoGradGuard no_grad;
  PrefillResult out;
  out.caches.layers.resize(model.config().layers);
  ForwardOptions options;
  options.caches = &out.caches.layers;
  ImageFeatures images;
  if (image.defined()) images.push_back(image);
  out.last_logits = last_row(forward(model, TokenBatch::single(prompt), images, options));
  return out;
}

Tensor decode_step(const PhantomModel& model, DecodeCaches& caches, std::int32_t token) {
  if (caches.layers.size() != model.config().layers) {
    throw Error(ErrorCode::kState, "decode_step: caches hold " + std::to_string(caches.layers.size()) + " layers, model has " +
                                       std::to_string(model.config().layers));
  }
  if (caches.length() == 0) throw Error(ErrorCode::kState, "decode_step: caches are empty; run prefill first");
  NoGradGuard no_grad;
  ForwardOptions options;
  options.caches = &caches.layers;
  options.position_offset = caches.length();
  const std::int32_t ids[1] = {token};
  return last_row(forward(model, TokenBatch::single(ids), {}, options));
}

void DecodeConfig::validate() const {
  if (n < 1) throw Error(ErrorCode::kConfig, "DecodeConfig: beam width n must be >= 1");
}

// ---------------------------------------------------------------------------
// Sessions

ModelSession::ModelSession(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image)
    : model_(&model) {
  PrefillResult r = prefill(model, prompt, image);
  caches_ = std::move(r.caches);
  logits_ = std::move(r.last_logits);
}

ModelSession::ModelSession(const PhantomModel& model, DecodeCaches caches, Tensor logits)
    : model_(&model), caches_(std::move(caches)), logits_(std::move(logits)) {}

std::unique_ptr<DecodeSession> ModelSession::clone() const {
  // Cache appends allocate fresh tensors, so sharing the handles is a snapshot.
  return std::unique_ptr<DecodeSession>(new ModelSession(*model_, caches_, logits_));
}

std::vector<double> ModelSession::next_logprobs() const { return log_softmax(logits_.data()); }

void ModelSession::advance(std::int32_t token) { logits_ = decode_step(*model_, caches_, token); }

// ---------------------------------------------------------------------------
// Search

double Hypothesis::score(double alpha) const {
  if (tokens.empty()) return 0.0;
  return logprob / std::pow(static_cast<double>(tokens.size()), alpha);
}

Hypothesis greedy_decode(const DecodeSession& start, const DecodeConfig& config) {
  auto session = start.clone();
  Hypothesis h;
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    const auto lp = session->next_logprobs();
    const auto tok = static_cast<std::int32_t>(argmax_lowest(lp));
    h.tokens.push_back(tok);
    h.logprob += lp[static_cast<std::size_t>(tok)];
    if (tok == config.eos) {
      h.finished = true;
      break;
    }
    if (step + 1 < config.max_new_tokens) session->advance(tok);
  }
  return h;
}

Hypothesis beam_search(const DecodeSession& start, const DecodeConfig& config) {
  config.validate();
  struct Beam {
    std::unique_ptr<DecodeSession> session;
    Hypothesis hyp;
  };
  struct Candidate {
    double score;
    std::int32_t token;
    std::size_t beam;
    double logprob;
  };

  std::vector<Beam> alive;
  alive.push_back({start.clone(), {}});
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < config.max_new_tokens && !alive.empty() && finished.size() < config.n; ++step) {
    std::vector<Candidate> candidates;
    const double len = static_cast<double>(step + 1);
    const double norm = std::pow(len, config.length_alpha);
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const auto lp = alive[b].session->next_logprobs();
      for (std::size_t v = 0; v < lp.size(); ++v) {
        const double total = alive[b].hyp.logprob + lp[v];
        candidates.push_back({total / norm, static_cast<std::int32_t>(v), b, total});
      }
    }
    const std::size_t keep = std::min(config.n, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.beam < b.beam;
                      });

    std::vector<Beam> next;
    const bool last_step = step + 1 == config.max_new_tokens;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h = alive[c.beam].hyp;
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      if (c.token == config.eos) {
        h.finished = true;
        finished.push_back(std::move(h));
        continue;
      }
      auto session = alive[c.beam].session->clone();
      if (!last_step) session->advance(c.token);
      next.push_back({std::move(session), std::move(h)});
    }
    alive = std::move(next);
  }

  // Finished hypotheses first, then survivors, each in rank order; the first
  // best score wins.
  std::vector<Hypothesis> pool = std::move(finished);
  for (auto& b : alive) pool.push_back(std::move(b.hyp));
  if (pool.empty()) return {};
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (pool[i].score(config.length_alpha) > pool[best].score(config.length_alpha)) best = i;
  return pool[best];
}

Hypothesis generate(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image,
                    const DecodeConfig& config) {
  config.validate();
  const ModelSession session(model, prompt, image);
  return config.mode == DecodeMode::kGreedy ? greedy_decode(session, config) : beam_search(session, config);
}

// ---------------------------------------------------------------------------
// Throughput

std::string config_hash(const ModelConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << c.preset_name << '|' << c.attention.d_q << '|' << c.attention.d_kv << '|' << c.attention.h_q << '|' << c.attention.h_kv
    << '|' << c.attention.rotary_base << '|' << static_cast<int>(c.attention.positional_mode) << '|' << c.layers << '|'
    << c.vocab_size << '|' << c.ffn_hidden << '|' << c.vision_feature_dim << '|' << c.lambda << '|' << c.pd_enabled << '|'
    << static_cast<int>(c.compression) << '|' << c.normalized_mode << '|' << c.mhca_residual << '|' << c.phantom_index
    << '|' << c.rms_eps << '|' << c.init_std;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s.str()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

BenchReport bench(const ModelConfig& config, std::uint64_t seed, const BenchWorkload& workload, bool self_compare) {
  if (workload.prompt_tokens < 1 || workload.decode_tokens < 1 || workload.repeats < 1) {
    throw Error(ErrorCode::kConfig, "bench: prompt_tokens, decode_tokens and repeats must be >= 1");
  }
  PhantomModel model(config, seed);
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> prompt{vocab::kSos};
  while (prompt.size() < workload.prompt_tokens) prompt.push_back(static_cast<std::int32_t>(32 + rng() % 95));
  std::vector<std::int32_t> forced(workload.decode_tokens);
  for (auto& t : forced) t = static_cast<std::int32_t>(32 + rng() % 95);

  ModelConfig on = config;
  on.pd_enabled = !self_compare;
  ModelConfig off = config;
  off.pd_enabled = false;

  auto timed_run = [&](const ModelConfig& flags) {
    model.set_flags(flags);
    const auto t0 = std::chrono::steady_clock::now();
    PrefillResult r = prefill(model, prompt);
    for (std::size_t i = 0; i + 1 < forced.size(); ++i) decode_step(model, r.caches, forced[i]);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return static_cast<double>(workload.decode_tokens) / secs;
  };

  BenchReport report;
  report.preset = config.preset_name;
  report.seed = seed;
  report.config_hash = config_hash(config);
  report.workload = workload;
  for (std::size_t i = 0; i < workload.warmup + workload.repeats; ++i) {
    // Alternate the order so drift does not favour one side.
    const bool off_first = i % 2 == 0;
    const double a = timed_run(off_first ? off : on);
    const double b = timed_run(off_first ? on : off);
    if (i < workload.warmup) continue;
    report.samples_off.push_back(off_first ? a : b);
    report.samples_on.push_back(off_first ? b : a);
  }
  model.set_flags(config);
  report.tps_pd_on = median(report.samples_on);
  report.tps_pd_off = median(report.samples_off);
  report.overhead_ratio = report.tps_pd_off / report.tps_pd_on - 1.0;
  report.timestamp = utc_timestamp();
  return report;
}

std::string bench_json(const BenchReport& r) {
  nlohmann::ordered_json j;
  j["preset"] = r.preset;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["timestamp"] = r.timestamp;
  j["workload"] = {{"prompt_tokens", r.workload.prompt_tokens},
                   {"decode_tokens", r.workload.decode_tokens},
                   {"warmup", r.workload.warmup},
                   {"repeats", r.workload.repeats}};
  j["runs"] = nlohmann::ordered_json::array(
      {nlohmann::ordered_json{{"pd_on", true}, {"tokens_per_second", r.tps_pd_on}, {"samples", r.samples_on}},
       nlohmann::ordered_json{{"pd_on", false}, {"tokens_per_second", r.tps_pd_off}, {"samples", r.samples_off}}});
  j["overhead_ratio"] = r.overhead_ratio;
  j["reference_overhead_ratio"] = 0.10;
  return j.dump(2);
}

}  // namespace phantom
