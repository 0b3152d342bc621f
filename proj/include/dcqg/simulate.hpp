#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcqg/common.hpp"
#include "dcqg/dataset.hpp"
#include "dcqg/eval.hpp"
#include "dcqg/generated.hpp"
#include "dcqg/policy.hpp"
#include "dcqg/rasch.hpp"

namespace dcqg::simulate {

/// Standard normal draw by Box-Muller from two uniform01 draws, so streams
/// do not depend on the standard library's distribution implementations.
inline double normal01(std::mt19937_64& rng) {
  const double u1 = 1.0 - rasch::uniform01(rng);  // (0, 1]
  const double u2 = rasch::uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::string numbered_id(const std::string& prefix, std::size_t k, std::size_t total) {
  int width = 3;
  for (std::size_t t = 1000; t <= total; t *= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, k);
  return prefix + buf;
}

/// `n` responders with theta ~ N(mean, sd^2), ids prefix001...
inline rasch::AbilityParams simulate_abilities(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0,
                                               const std::string& prefix = "qa") {
  std::mt19937_64 rng(seed);
  rasch::AbilityParams out;
  for (std::size_t k = 1; k <= n; ++k) out.responders[numbered_id(prefix, k, n)].theta = mean + sd * normal01(rng);
  return out;
}

/// Difficulties b ~ U(lo, hi) for the given ids.
inline std::map<std::string, double> simulate_difficulties(std::span<const std::string> ids, double lo, double hi,
                                                           std::uint64_t seed) {
  if (!(lo <= hi)) throw std::invalid_argument("difficulty range must have lo <= hi");
  std::mt19937_64 rng(seed);
  std::map<std::string, double> out;
  for (const auto& id : ids) out[id] = lo + (hi - lo) * rasch::uniform01(rng);
  return out;
}

inline std::map<std::string, double> simulate_difficulties(std::size_t n, double lo, double hi, std::uint64_t seed,
                                                           const std::string& prefix = "item") {
  std::vector<std::string> ids;
  for (std::size_t k = 1; k <= n; ++k) ids.push_back(numbered_id(prefix, k, n));
  return simulate_difficulties(ids, lo, hi, seed);
}

namespace detail {

inline constexpr std::array<const char*, 24> kWords = {
    "river",  "garden", "teacher", "market", "letter", "winter", "island", "doctor",
    "bridge", "forest", "village", "camera", "window", "music",  "planet", "journey",
    "library", "harbor", "festival", "science", "mountain", "kitchen", "station", "painting"};

inline std::string word(std::mt19937_64& rng) { return kWords[rng() % kWords.size()]; }

}  // namespace detail

/// Synthetic reading-comprehension corpus: `n_passages` passages with
/// `per_passage` questions each. Every record passes validate_record and the
/// whole corpus passes validate_corpus.
inline std::vector<dataset::QuestionRecord> simulate_corpus(std::size_t n_passages, std::size_t per_passage,
                                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<dataset::QuestionRecord> out;
  for (std::size_t p = 1; p <= n_passages; ++p) {
    const std::string pid = numbered_id("p", p, n_passages);
    std::string passage;
    const int sentences = 3 + static_cast<int>(rng() % 4);
    for (int s = 0; s < sentences; ++s) {
      if (s > 0) passage += ' ';
      passage += "The " + detail::word(rng) + " near the " + detail::word(rng) + " was visited in " + pid + ".";
    }
    for (std::size_t q = 1; q <= per_passage; ++q) {
      dataset::QuestionRecord r;
      r.record_id = pid + "-q" + std::to_string(q);
      r.passage_id = pid;
      r.passage = passage;
      r.question = "Question " + std::to_string(q) + ": what was near the " + detail::word(rng) + "?";
      r.answer = "The " + detail::word(rng) + " (" + r.record_id + ")";
      for (std::size_t d = 0; d < 3; ++d) {
        r.distractors[d] = "A " + detail::word(rng) + " option " + std::to_string(d + 1) + " (" + r.record_id + ")";
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Generation id for a request: `{passage_id}@{difficulty}`.
inline std::string generation_id(const dataset::GenerationRequest& r) {
  return r.passage_id + "@" + format_difficulty(r.specified_difficulty);
}

/// Simulated generator: one parseable question per request whose latent
/// difficulty is the specified one plus N(0, sigma^2) noise, clamped to the
/// logit bounds. Noise for each request is drawn from its own stream.
inline std::vector<GeneratedQuestion> simulate_generations(std::span<const dataset::GenerationRequest> requests,
                                                           double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("noise sigma must be finite and >= 0");
  std::vector<GeneratedQuestion> out;
  out.reserve(requests.size());
  for (const auto& req : requests) {
    const std::string qid = generation_id(req);
    std::mt19937_64 rng(derive_seed(seed, qid));
    const double latent = clamp_logit(req.specified_difficulty + sigma * normal01(rng));
    dataset::ParsedOutput o;
    o.question = "Which " + detail::word(rng) + " is described at level " + format_difficulty(req.specified_difficulty) + "?";
    o.answer = "The " + detail::word(rng) + " (" + qid + ")";
    for (std::size_t d = 0; d < 3; ++d) {
      o.distractors[d] = "A " + detail::word(rng) + " choice " + std::to_string(d + 1) + " (" + qid + ")";
    }
    out.push_back(GeneratedQuestion::make(qid, req.passage_id, dataset::prompt_context(req.prompt),
                                          req.specified_difficulty, dataset::render_output(o), latent));
  }
  return out;
}

/// Difficulty of a toy output: the sum of per-token values, with the non-eos
/// tokens spread evenly over [-1, 1].
inline std::map<policy::Sequence, double> toy_output_difficulty(const policy::TokenVocabulary& vocab,
                                                                std::span<const policy::Sequence> outputs) {
  std::vector<double> value(vocab.size(), 0.0);
  const double n = static_cast<double>(vocab.size() - 1);
  int k = 0;
  for (std::size_t v = 0; v < vocab.size(); ++v) {
    if (static_cast<int>(v) == vocab.eos()) continue;
    value[v] = n > 1.0 ? -1.0 + 2.0 * static_cast<double>(k) / (n - 1.0) : 0.0;
    ++k;
  }
  std::map<policy::Sequence, double> out;
  for (const auto& y : outputs) {
    double d = 0.0;
    for (int t : y) d += value[static_cast<std::size_t>(t)];
    out[y] = d;
  }
  return out;
}

/// Bradley-Terry pairs: two distinct outputs drawn uniformly; the first is
/// preferred with probability sigma(r_a - r_b).
inline std::vector<policy::TokenPreferencePair> sample_bt_pairs(std::span<const policy::Sequence> outputs,
                                                                std::span<const double> rewards, std::size_t n,
                                                                std::uint64_t seed, int context = 0) {
  if (outputs.size() != rewards.size()) throw std::invalid_argument("outputs and rewards differ in length");
  if (outputs.size() < 2) throw std::invalid_argument("need at least two outputs");
  std::mt19937_64 rng(seed);
  std::vector<policy::TokenPreferencePair> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t a = rng() % outputs.size();
    const std::size_t b = rng() % outputs.size();
    if (a == b) continue;
    const bool a_wins = rasch::uniform01(rng) < rasch::prob_correct(rewards[a], rewards[b]);
    out.push_back(a_wins ? policy::TokenPreferencePair{context, outputs[a], outputs[b]}
                         : policy::TokenPreferencePair{context, outputs[b], outputs[a]});
  }
  return out;
}

struct PipelineSettings {
  std::size_t passages = 50;
  double grid_min = -3.0;
  double grid_max = 3.0;
  double grid_step = 0.1;
  double control_noise = 0.5;
  std::size_t responders = 77;
};

struct PipelineRun {
  std::vector<double> grid;
  std::vector<GeneratedQuestion> questions;
  rasch::AbilityParams responders;
  rasch::ResponseMatrix matrix;
};

/// Simulation mode end to end: corpus, generation requests over the grid,
/// noisy generator, N(0, 1) responders and their answers. Stage seeds are
/// derived from `seed` with the stage names corpus, generate, abilities and
/// administer.
inline PipelineRun simulate_pipeline(const PipelineSettings& s, std::uint64_t seed) {
  PipelineRun run;
  run.grid = dataset::difficulty_grid(s.grid_min, s.grid_max, s.grid_step);
  const auto corpus = simulate_corpus(s.passages, 1, derive_seed(seed, "corpus"));
  const auto passages = dataset::unique_passages(corpus);
  const auto requests = dataset::make_generation_requests(passages, run.grid);
  run.questions = simulate_generations(requests, s.control_noise, derive_seed(seed, "generate"));
  run.responders = simulate_abilities(s.responders, derive_seed(seed, "abilities"));
  run.matrix = eval::administer(run.questions, run.responders, derive_seed(seed, "administer"));
  return run;
}

}  // namespace dcqg::simulate
