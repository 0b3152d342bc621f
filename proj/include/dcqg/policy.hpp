#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcqg/common.hpp"

namespace dcqg::policy {

using Sequence = std::vector<int>;

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training stopped because the loss became non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

inline constexpr std::size_t kEnumerationCap = 1'000'000;

// ---------------------------------------------------------------------------
// Vocabulary and policy
// ---------------------------------------------------------------------------

class TokenVocabulary {
 public:
  TokenVocabulary() = default;

  TokenVocabulary(std::vector<std::string> tokens, std::string_view eos) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2) throw std::invalid_argument("vocabulary needs at least 2 tokens");
    int eos_count = 0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i] == eos) {
        eos_ = static_cast<int>(i);
        ++eos_count;
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (tokens_[i] == tokens_[j]) throw std::invalid_argument("duplicate token " + tokens_[i]);
      }
    }
    if (eos_count != 1) throw std::invalid_argument("end-of-sequence token must appear exactly once");
  }

  /// `t0 .. t{n-2}` followed by `<eos>`.
  static TokenVocabulary make_default(std::size_t n = 6) {
    std::vector<std::string> toks;
    for (std::size_t i = 0; i + 1 < n; ++i) toks.push_back("t" + std::to_string(i));
    toks.emplace_back("<eos>");
    return TokenVocabulary(std::move(toks), "<eos>");
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  int eos() const noexcept { return eos_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::optional<int> index_of(std::string_view tok) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i] == tok) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  Sequence encode(const std::vector<std::string>& toks) const {
    Sequence out;
    for (const auto& t : toks) {
      auto id = index_of(t);
      if (!id) throw std::invalid_argument("unknown token '" + t + "'");
      out.push_back(*id);
    }
    return out;
  }

  std::vector<std::string> decode(const Sequence& seq) const {
    std::vector<std::string> out;
    for (int id : seq) out.push_back(token(id));
    return out;
  }

  bool operator==(const TokenVocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
  int eos_ = -1;
};

/// Tabular autoregressive policy. The next-token distribution depends on the
/// conditioning id and on the last `context_order` tokens (left-padded with a
/// begin marker). Generation stops at end-of-sequence or after `max_length`
/// tokens.
class ToyPolicy {
 public:
  ToyPolicy() = default;

  ToyPolicy(TokenVocabulary vocab, int max_length, int context_order = 1, int num_contexts = 1)
      : vocab_(std::move(vocab)), max_length_(max_length), order_(context_order), num_contexts_(num_contexts) {
    if (max_length_ < 1) throw std::invalid_argument("max_length must be positive");
    if (order_ < 0) throw std::invalid_argument("context order must be non-negative");
    if (num_contexts_ < 1) throw std::invalid_argument("need at least one conditioning id");
    num_states_ = 1;
    for (int k = 0; k < order_; ++k) num_states_ *= vocab_.size();
    logits_.assign(static_cast<std::size_t>(num_contexts_) * num_states_ * vocab_.size(), 0.0);
  }

  const TokenVocabulary& vocabulary() const noexcept { return vocab_; }
  int max_length() const noexcept { return max_length_; }
  int context_order() const noexcept { return order_; }
  int num_contexts() const noexcept { return num_contexts_; }
  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }

  std::span<double> parameters() noexcept { return logits_; }
  std::span<const double> parameters() const noexcept { return logits_; }

  std::size_t index(int context, std::size_t state, int token) const {
    return (static_cast<std::size_t>(context) * num_states_ + state) * vocab_.size() + static_cast<std::size_t>(token);
  }

  double& logit(int context, std::size_t state, int token) { return logits_.at(index(context, state, token)); }
  double logit(int context, std::size_t state, int token) const { return logits_.at(index(context, state, token)); }

  std::size_t initial_state() const noexcept { return 0; }

  /// State after emitting `token` (never end-of-sequence) from `state`.
  /// Context symbols: 0 is the begin marker, 1.. are the non-eos tokens.
  std::size_t next_state(std::size_t state, int token) const {
    if (order_ == 0) return 0;
    const std::size_t symbol = static_cast<std::size_t>(token < vocab_.eos() ? token + 1 : token);
    return (state * vocab_.size() + symbol) % num_states_;
  }

  /// log-softmax of one logit row.
  void log_softmax_row(int context, std::size_t state, std::span<double> out) const {
    const std::size_t base = index(context, state, 0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab_.size(); ++v) mx = std::max(mx, logits_[base + v]);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab_.size(); ++v) total += std::exp(logits_[base + v] - mx);
    const double log_total = std::log(total);
    for (std::size_t v = 0; v < vocab_.size(); ++v) out[v] = (logits_[base + v] - mx) - log_total;
  }

  void check_compatible(const ToyPolicy& other) const {
    if (!(vocab_ == other.vocab_) || max_length_ != other.max_length_ || order_ != other.order_ ||
        num_contexts_ != other.num_contexts_) {
      throw std::invalid_argument("policies have different shapes");
    }
  }

  void validate_sequence(int context, const Sequence& y) const {
    if (context < 0 || context >= num_contexts_) throw std::invalid_argument("conditioning id out of range");
    if (y.empty()) throw std::invalid_argument("empty sequence");
    if (y.size() > static_cast<std::size_t>(max_length_)) throw std::invalid_argument("sequence longer than max_length");
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] < 0 || static_cast<std::size_t>(y[t]) >= vocab_.size()) throw std::invalid_argument("unknown token id");
      if (y[t] == vocab_.eos() && t + 1 != y.size()) throw std::invalid_argument("end-of-sequence before the last position");
    }
    if (y.back() != vocab_.eos() && y.size() != static_cast<std::size_t>(max_length_)) {
      throw std::invalid_argument("sequence must end with end-of-sequence or have length max_length");
    }
  }

 private:
  TokenVocabulary vocab_;
  int max_length_ = 1;
  int order_ = 1;
  int num_contexts_ = 1;
  std::size_t num_states_ = 1;
  std::vector<double> logits_;
};

// ---------------------------------------------------------------------------
// Sequence probabilities
// ---------------------------------------------------------------------------

/// Sum of per-step log-softmax values of `y` under conditioning id `context`.
inline double sequence_log_prob(const ToyPolicy& policy, int context, const Sequence& y) {
  policy.validate_sequence(context, y);
  std::vector<double> row(policy.vocab_size());
  std::size_t state = policy.initial_state();
  double lp = 0.0;
  for (int tok : y) {
    policy.log_softmax_row(context, state, row);
    lp += row[static_cast<std::size_t>(tok)];
    if (tok != policy.vocabulary().eos()) state = policy.next_state(state, tok);
  }
  return lp;
}

/// Adds `weight * d log pi(y|context) / d logits` into `grad`.
inline void accumulate_log_prob_gradient(const ToyPolicy& policy, int context, const Sequence& y, double weight,
                                         std::span<double> grad) {
  std::vector<double> row(policy.vocab_size());
  std::size_t state = policy.initial_state();
  for (int tok : y) {
    policy.log_softmax_row(context, state, row);
    const std::size_t base = policy.index(context, state, 0);
    for (std::size_t v = 0; v < row.size(); ++v) {
      grad[base + v] += weight * ((static_cast<int>(v) == tok ? 1.0 : 0.0) - std::exp(row[v]));
    }
    if (tok != policy.vocabulary().eos()) state = policy.next_state(state, tok);
  }
}

inline std::size_t count_outputs(std::size_t vocab_size, int max_length) {
  const double non_eos = static_cast<double>(vocab_size - 1);
  double total = std::pow(non_eos, max_length);
  for (int j = 0; j < max_length; ++j) total += std::pow(non_eos, j);
  return total > static_cast<double>(std::numeric_limits<std::size_t>::max() / 2)
             ? std::numeric_limits<std::size_t>::max() / 2
             : static_cast<std::size_t>(total);
}

/// Every sequence the policy can emit, shortest first then lexicographic.
inline std::vector<Sequence> enumerate_outputs(const TokenVocabulary& vocab, int max_length,
                                               std::size_t cap = kEnumerationCap) {
  const std::size_t n = count_outputs(vocab.size(), max_length);
  if (n > cap) throw CapacityError("output space of " + std::to_string(n) + " sequences exceeds cap " + std::to_string(cap));
  std::vector<int> non_eos;
  for (std::size_t v = 0; v < vocab.size(); ++v) {
    if (static_cast<int>(v) != vocab.eos()) non_eos.push_back(static_cast<int>(v));
  }
  std::vector<Sequence> out;
  out.reserve(n);
  std::vector<Sequence> prefixes{{}};
  for (int len = 0; len <= max_length; ++len) {
    for (const auto& p : prefixes) {
      if (len < max_length) {
        Sequence s = p;
        s.push_back(vocab.eos());
        out.push_back(std::move(s));
      } else {
        out.push_back(p);
      }
    }
    if (len == max_length) break;
    std::vector<Sequence> next;
    next.reserve(prefixes.size() * non_eos.size());
    for (const auto& p : prefixes) {
      for (int t : non_eos) {
        Sequence s = p;
        s.push_back(t);
        next.push_back(std::move(s));
      }
    }
    prefixes = std::move(next);
  }
  return out;
}

/// Explicit distribution over an enumerated output space.
struct OutputDistribution {
  std::vector<Sequence> outputs;
  std::vector<double> log_probs;

  double prob(std::size_t k) const { return std::exp(log_probs[k]); }
};

inline OutputDistribution enumerate_distribution(const ToyPolicy& policy, int context,
                                                 std::size_t cap = kEnumerationCap) {
  OutputDistribution d;
  d.outputs = enumerate_outputs(policy.vocabulary(), policy.max_length(), cap);
  d.log_probs.reserve(d.outputs.size());
  for (const auto& y : d.outputs) d.log_probs.push_back(sequence_log_prob(policy, context, y));
  return d;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning
// ---------------------------------------------------------------------------

struct Example {
  int context = 0;
  Sequence tokens;
};

/// Mean negative log-likelihood over the batch.
inline double sft_loss(const ToyPolicy& policy, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (const auto& ex : batch) total -= sequence_log_prob(policy, ex.context, ex.tokens);
  return total / static_cast<double>(batch.size());
}

inline std::vector<double> sft_gradient(const ToyPolicy& policy, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> grad(policy.parameters().size(), 0.0);
  const double w = -1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    policy.validate_sequence(ex.context, ex.tokens);
    accumulate_log_prob_gradient(policy, ex.context, ex.tokens, w, grad);
  }
  return grad;
}

struct TrainConfig {
  double learning_rate = 0.05;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 = full batch
};

struct LogRow {
  int step = 0;
  double loss = 0.0;
  std::optional<double> mean_margin;
};

struct TrainResult {
  ToyPolicy policy;
  std::vector<LogRow> log;
};

namespace detail {

// Minibatch index sets for one epoch-free step sequence: reshuffled whenever
// the current permutation is exhausted.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size == 0 || batch_size >= n ? n : batch_size), rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n_;
  }

  bool full_batch() const noexcept { return batch_ == n_; }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ == n_) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
};

template <class T>
std::vector<T> gather(std::span<const T> data, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

inline void check_finite_params(const ToyPolicy& p, int step) {
  for (double v : p.parameters()) {
    if (!std::isfinite(v)) throw TrainingError("non-finite parameter", step);
  }
}

}  // namespace detail

/// Plain gradient descent on the SFT loss. The log holds the full-dataset
/// loss before each update and after the last one.
inline TrainResult train_sft(const ToyPolicy& init, std::span<const Example> dataset, const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  if (!(config.learning_rate > 0.0) || config.max_steps < 0) throw std::invalid_argument("invalid training config");
  TrainResult res{init, {}};
  detail::BatchSampler sampler(dataset.size(), config.batch_size, config.seed);
  for (int step = 0; step <= config.max_steps; ++step) {
    const double loss = sft_loss(res.policy, dataset);
    if (!std::isfinite(loss)) throw TrainingError("SFT loss became non-finite", step);
    res.log.push_back({step, loss, std::nullopt});
    if (step == config.max_steps) break;
    std::vector<double> grad;
    if (sampler.full_batch()) {
      grad = sft_gradient(res.policy, dataset);
    } else {
      const auto batch = detail::gather(dataset, sampler.next());
      grad = sft_gradient(res.policy, batch);
    }
    auto params = res.policy.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= config.learning_rate * grad[k];
    detail::check_finite_params(res.policy, step + 1);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reward and the KL-regularised objective
// ---------------------------------------------------------------------------

struct RewardSpec {
  double specified_difficulty = 0.0;
  std::map<Sequence, double> output_difficulty;
};

/// -(b_specified - difficulty(y))^2
inline double squared_error_reward(const RewardSpec& spec, const Sequence& y) {
  auto it = spec.output_difficulty.find(y);
  if (it == spec.output_difficulty.end()) throw std::invalid_argument("no difficulty for output");
  const double d = spec.specified_difficulty - it->second;
  return -(d * d);
}

/// E_pi[r] - beta * KL(pi || ref), by exact enumeration. Both distributions
/// must list the same outputs in the same order.
inline double rlhf_objective(const OutputDistribution& pi, const OutputDistribution& ref, const RewardSpec& spec,
                             double beta) {
  if (pi.outputs.size() != ref.outputs.size()) throw std::invalid_argument("distributions over different spaces");
  double expected_reward = 0.0, kl = 0.0;
  for (std::size_t k = 0; k < pi.outputs.size(); ++k) {
    const double p = pi.prob(k);
    if (p == 0.0) continue;
    expected_reward += p * squared_error_reward(spec, pi.outputs[k]);
    kl += p * (pi.log_probs[k] - ref.log_probs[k]);
  }
  return expected_reward - beta * kl;
}

inline double rlhf_objective(const ToyPolicy& policy, const ToyPolicy& ref, int context, const RewardSpec& spec,
                             double beta, std::size_t cap = kEnumerationCap) {
  policy.check_compatible(ref);
  return rlhf_objective(enumerate_distribution(policy, context, cap), enumerate_distribution(ref, context, cap), spec,
                        beta);
}

/// pi*(y) proportional to ref(y) * exp(r(y) / beta), normalised in log space.
inline OutputDistribution kl_regularized_optimum(const OutputDistribution& ref, const RewardSpec& spec, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  OutputDistribution out{ref.outputs, std::vector<double>(ref.outputs.size())};
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < ref.outputs.size(); ++k) {
    out.log_probs[k] = ref.log_probs[k] + squared_error_reward(spec, ref.outputs[k]) / beta;
    mx = std::max(mx, out.log_probs[k]);
  }
  double total = 0.0;
  for (double lp : out.log_probs) total += std::exp(lp - mx);
  const double log_total = std::log(total);
  for (double& lp : out.log_probs) lp = (lp - mx) - log_total;
  return out;
}

inline OutputDistribution kl_regularized_optimum(const ToyPolicy& ref, int context, const RewardSpec& spec, double beta,
                                                 std::size_t cap = kEnumerationCap) {
  return kl_regularized_optimum(enumerate_distribution(ref, context, cap), spec, beta);
}

// ---------------------------------------------------------------------------
// Direct preference optimisation
// ---------------------------------------------------------------------------

struct TokenPreferencePair {
  int context = 0;
  Sequence preferred;
  Sequence dispreferred;
};

struct DpoConfig {
  double beta = 0.1;
  double learning_rate = 0.05;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 = full batch
};

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// sigma(-z) without overflow.
inline double sigmoid_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace detail

/// beta * [(log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l))] per pair.
inline std::vector<double> dpo_margins(const ToyPolicy& policy, const ToyPolicy& ref,
                                       std::span<const TokenPreferencePair> pairs, double beta) {
  policy.check_compatible(ref);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double dw = sequence_log_prob(policy, p.context, p.preferred) - sequence_log_prob(ref, p.context, p.preferred);
    const double dl =
        sequence_log_prob(policy, p.context, p.dispreferred) - sequence_log_prob(ref, p.context, p.dispreferred);
    out.push_back(beta * (dw - dl));
  }
  return out;
}

/// Mean over pairs of -log sigma(margin), evaluated as softplus(-margin).
inline double dpo_loss(const ToyPolicy& policy, const ToyPolicy& ref, std::span<const TokenPreferencePair> pairs,
                       double beta) {
  if (pairs.empty()) throw std::invalid_argument("empty batch");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  const auto margins = dpo_margins(policy, ref, pairs, beta);
  double total = 0.0;
  for (double z : margins) total += detail::softplus(-z);
  return total / static_cast<double>(pairs.size());
}

/// Exact gradient of dpo_loss with respect to every logit of `policy`.
inline std::vector<double> dpo_gradient(const ToyPolicy& policy, const ToyPolicy& ref,
                                        std::span<const TokenPreferencePair> pairs, double beta) {
  if (pairs.empty()) throw std::invalid_argument("empty batch");
  const auto margins = dpo_margins(policy, ref, pairs, beta);
  std::vector<double> grad(policy.parameters().size(), 0.0);
  const double n = static_cast<double>(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    // d/dz softplus(-z) = -sigma(-z)
    const double coef = -detail::sigmoid_neg(margins[k]) * beta / n;
    accumulate_log_prob_gradient(policy, pairs[k].context, pairs[k].preferred, coef, grad);
    accumulate_log_prob_gradient(policy, pairs[k].context, pairs[k].dispreferred, -coef, grad);
  }
  return grad;
}

/// beta * log(pi(y) / ref(y)).
inline double implicit_reward(const ToyPolicy& policy, const ToyPolicy& ref, int context, const Sequence& y,
                              double beta) {
  return beta * (sequence_log_prob(policy, context, y) - sequence_log_prob(ref, context, y));
}

/// Gradient descent on the DPO loss starting from `init` (normally a copy of
/// `ref`). Logged loss and mean margin are over the full pair set.
inline TrainResult train_dpo(const ToyPolicy& init, const ToyPolicy& ref, std::span<const TokenPreferencePair> pairs,
                             const DpoConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("empty pair set");
  if (!(config.beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(config.learning_rate > 0.0) || config.max_steps < 0) throw std::invalid_argument("invalid training config");
  init.check_compatible(ref);
  TrainResult res{init, {}};
  detail::BatchSampler sampler(pairs.size(), config.batch_size, config.seed);
  for (int step = 0; step <= config.max_steps; ++step) {
    const auto margins = dpo_margins(res.policy, ref, pairs, config.beta);
    double loss = 0.0, mean_margin = 0.0;
    for (double z : margins) {
      loss += detail::softplus(-z);
      mean_margin += z;
    }
    loss /= static_cast<double>(pairs.size());
    mean_margin /= static_cast<double>(pairs.size());
    if (!std::isfinite(loss)) throw TrainingError("DPO loss became non-finite", step);
    res.log.push_back({step, loss, mean_margin});
    if (step == config.max_steps) break;
    std::vector<double> grad;
    if (sampler.full_batch()) {
      grad = dpo_gradient(res.policy, ref, pairs, config.beta);
    } else {
      const auto batch = detail::gather(pairs, sampler.next());
      grad = dpo_gradient(res.policy, ref, batch, config.beta);
    }
    auto params = res.policy.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= config.learning_rate * grad[k];
    detail::check_finite_params(res.policy, step + 1);
  }
  return res;
}

}  // namespace dcqg::policy
