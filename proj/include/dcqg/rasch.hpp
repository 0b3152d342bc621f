#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcqg/common.hpp"

namespace dcqg::rasch {

// ---------------------------------------------------------------------------
// Response model
// ---------------------------------------------------------------------------

/// Logistic Rasch response probability P(correct | theta, b).
///
/// Negative logits are evaluated as the complement of the positive branch,
/// so prob_correct(t, b) + prob_correct(b, t) == 1 holds exactly.
inline double prob_correct(double theta, double b) {
  require_finite(theta, "theta");
  require_finite(b, "b");
  const double x = theta - b;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  return 1.0 - 1.0 / (1.0 + std::exp(x));
}

/// Item information P(1 - P); peaks at 0.25 when theta == b.
inline double fisher_information(double theta, double b) {
  const double p = prob_correct(theta, b);
  const double q = prob_correct(b, theta);
  return p * q;
}

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// log P and log(1 - P) for logit x = theta - b.
inline double log_p(double x) { return -softplus(-x); }
inline double log_q(double x) { return -softplus(x); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  return 1.0 - 1.0 / (1.0 + std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

enum class Outcome : std::int8_t { missing = -1, incorrect = 0, correct = 1 };

/// Dense responders x items table of binary outcomes. Unset cells are missing.
class ResponseMatrix {
 public:
  ResponseMatrix() = default;

  ResponseMatrix(std::vector<std::string> responder_ids, std::vector<std::string> item_ids)
      : responder_ids_(std::move(responder_ids)), item_ids_(std::move(item_ids)) {
    index_ids(responder_ids_, responder_index_, "responder");
    index_ids(item_ids_, item_index_, "item");
    cells_.assign(responder_ids_.size() * item_ids_.size(), Outcome::missing);
  }

  std::size_t num_responders() const noexcept { return responder_ids_.size(); }
  std::size_t num_items() const noexcept { return item_ids_.size(); }
  bool empty() const noexcept { return cells_.empty(); }

  const std::vector<std::string>& responder_ids() const noexcept { return responder_ids_; }
  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }

  Outcome at(std::size_t responder, std::size_t item) const { return cells_.at(responder * item_ids_.size() + item); }

  void set(std::size_t responder, std::size_t item, Outcome outcome) {
    cells_.at(responder * item_ids_.size() + item) = outcome;
  }

  void set(std::string_view responder, std::string_view item, Outcome outcome) {
    const auto r = responder_index(responder);
    const auto i = item_index(item);
    if (!r || !i) throw std::invalid_argument("unknown responder or item id");
    set(*r, *i, outcome);
  }

  std::optional<std::size_t> responder_index(std::string_view id) const {
    auto it = responder_index_.find(std::string(id));
    if (it == responder_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> item_index(std::string_view id) const {
    auto it = item_index_.find(std::string(id));
    if (it == item_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Outcomes of one item, in responder order.
  std::vector<Outcome> item_column(std::size_t item) const {
    std::vector<Outcome> col(num_responders());
    for (std::size_t r = 0; r < col.size(); ++r) col[r] = at(r, item);
    return col;
  }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](Outcome o) { return o != Outcome::missing; }));
  }

 private:
  static void index_ids(const std::vector<std::string>& ids, std::unordered_map<std::string, std::size_t>& index,
                        const char* what) {
    index.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!index.emplace(ids[k], k).second) {
        throw std::invalid_argument(std::string("duplicate ") + what + " id: " + ids[k]);
      }
    }
  }

  std::vector<std::string> responder_ids_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, std::size_t> responder_index_;
  std::unordered_map<std::string, std::size_t> item_index_;
  std::vector<Outcome> cells_;
};

struct ItemEstimate {
  double b = 0.0;
  std::optional<double> standard_error;
  bool converged = true;
  bool clamped = false;
};

struct ItemParams {
  std::map<std::string, ItemEstimate> items;
  bool converged = true;
  int iterations = 0;

  static ItemParams from_difficulties(const std::map<std::string, double>& bs) {
    ItemParams p;
    for (const auto& [id, b] : bs) p.items[id].b = b;
    return p;
  }

  std::optional<double> difficulty(const std::string& id) const {
    auto it = items.find(id);
    if (it == items.end()) return std::nullopt;
    return it->second.b;
  }
};

struct AbilityEstimate {
  double theta = 0.0;
  bool clamped = false;
};

struct AbilityParams {
  std::map<std::string, AbilityEstimate> responders;

  static AbilityParams from_thetas(const std::map<std::string, double>& ts) {
    AbilityParams p;
    for (const auto& [id, t] : ts) p.responders[id].theta = t;
    return p;
  }

  std::optional<double> ability(const std::string& id) const {
    auto it = responders.find(id);
    if (it == responders.end()) return std::nullopt;
    return it->second.theta;
  }
};

/// Discrete approximation of the ability population used by MML.
struct QuadratureGrid {
  std::vector<double> nodes;
  std::vector<double> weights;

  /// `n` equally spaced nodes on [lo, hi] weighted by the N(0, 1) density,
  /// renormalised to sum to one.
  static QuadratureGrid standard_normal(std::size_t n = 41, double lo = kLogitMin, double hi = kLogitMax) {
    if (n < 2 || !(lo < hi)) throw std::invalid_argument("quadrature grid needs n >= 2 and lo < hi");
    QuadratureGrid g;
    g.nodes.resize(n);
    g.weights.resize(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
      g.nodes[k] = x;
      g.weights[k] = std::exp(-0.5 * x * x);
      total += g.weights[k];
    }
    for (double& w : g.weights) w /= total;
    return g;
  }

  void validate() const {
    if (nodes.empty() || nodes.size() != weights.size()) {
      throw std::invalid_argument("quadrature grid: nodes and weights must be non-empty and of equal length");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!std::isfinite(nodes[k]) || !(weights[k] >= 0.0)) {
        throw std::invalid_argument("quadrature grid: non-finite node or negative weight");
      }
      if (k > 0 && !(nodes[k] > nodes[k - 1])) {
        throw std::invalid_argument("quadrature grid: nodes must be strictly increasing");
      }
      total += weights[k];
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("quadrature grid: weights must sum to 1");
  }
};

struct EmConfig {
  double tolerance = 1e-4;
  int max_iterations = 500;
};

struct BoundedEstimate {
  double value = 0.0;
  bool clamped = false;
};

// ---------------------------------------------------------------------------
// Likelihood
// ---------------------------------------------------------------------------

/// Sum of log P / log(1 - P) over observed cells; missing cells contribute 0.
inline double joint_log_likelihood(const ResponseMatrix& matrix, const AbilityParams& abilities,
                                   const ItemParams& items) {
  std::vector<std::optional<double>> thetas(matrix.num_responders());
  std::vector<std::optional<double>> bs(matrix.num_items());
  for (std::size_t r = 0; r < thetas.size(); ++r) thetas[r] = abilities.ability(matrix.responder_ids()[r]);
  for (std::size_t i = 0; i < bs.size(); ++i) bs[i] = items.difficulty(matrix.item_ids()[i]);

  double ll = 0.0;
  for (std::size_t r = 0; r < thetas.size(); ++r) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const Outcome o = matrix.at(r, i);
      if (o == Outcome::missing) continue;
      if (!thetas[r] || !bs[i]) {
        throw std::invalid_argument("missing parameter for observed cell (" + matrix.responder_ids()[r] + ", " +
                                    matrix.item_ids()[i] + ")");
      }
      const double x = *thetas[r] - *bs[i];
      ll += (o == Outcome::correct) ? detail::log_p(x) : detail::log_q(x);
    }
  }
  return ll;
}

namespace detail {

/// Root of a decreasing function on [lo, hi] by safeguarded Newton.
/// `f(x)` returns {value, derivative}. If the function never changes sign
/// inside the interval, the relevant endpoint is returned flagged as clamped.
template <class F>
BoundedEstimate solve_decreasing(F&& f, double lo, double hi, double start = 0.0) {
  const auto [f_lo, d_lo] = f(lo);
  (void)d_lo;
  if (f_lo <= 0.0) return {lo, true};
  const auto [f_hi, d_hi] = f(hi);
  (void)d_hi;
  if (f_hi >= 0.0) return {hi, true};

  double a = lo, b = hi;
  double x = std::clamp(start, lo, hi);
  if (x <= a || x >= b) x = 0.5 * (a + b);
  for (int iter = 0; iter < 200; ++iter) {
    const auto [v, d] = f(x);
    if (v == 0.0) return {x, false};
    if (v > 0.0) a = x;
    else b = x;
    double next = (d < 0.0) ? x - v / d : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) <= 1e-13 * (1.0 + std::abs(x)) || (b - a) <= 1e-13 * (1.0 + std::abs(x))) {
      return {next, false};
    }
    x = next;
  }
  return {x, false};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

/// Difficulty MLE for one item with responder abilities held fixed.
inline BoundedEstimate estimate_single_item_difficulty(std::span<const Outcome> responses,
                                                       std::span<const double> abilities) {
  if (responses.size() != abilities.size()) {
    throw std::invalid_argument("responses and abilities must have the same length");
  }
  std::vector<double> thetas;
  std::vector<double> us;
  for (std::size_t m = 0; m < responses.size(); ++m) {
    if (responses[m] == Outcome::missing) continue;
    require_finite(abilities[m], "ability");
    thetas.push_back(abilities[m]);
    us.push_back(responses[m] == Outcome::correct ? 1.0 : 0.0);
  }
  if (thetas.empty()) throw std::invalid_argument("item has no observed responses");

  // d/db log L = sum (P - u), decreasing in b.
  auto score = [&](double b) {
    double g = 0.0, h = 0.0;
    for (std::size_t m = 0; m < thetas.size(); ++m) {
      const double p = detail::sigmoid(thetas[m] - b);
      g += p - us[m];
      h -= p * (1.0 - p);
    }
    return std::pair{g, h};
  };
  return detail::solve_decreasing(score, kLogitMin, kLogitMax);
}

/// Per-responder ability MLE conditioned on item difficulties. Perfect and
/// zero scores clamp to the bounds and are flagged.
inline AbilityParams estimate_abilities_mle(const ResponseMatrix& matrix, const ItemParams& items) {
  std::vector<std::optional<double>> bs(matrix.num_items());
  for (std::size_t i = 0; i < bs.size(); ++i) bs[i] = items.difficulty(matrix.item_ids()[i]);

  AbilityParams out;
  std::vector<std::string> empty_responders;
  std::vector<double> obs_b;
  std::vector<double> obs_u;
  for (std::size_t r = 0; r < matrix.num_responders(); ++r) {
    obs_b.clear();
    obs_u.clear();
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const Outcome o = matrix.at(r, i);
      if (o == Outcome::missing) continue;
      if (!bs[i]) throw std::invalid_argument("no difficulty for answered item " + matrix.item_ids()[i]);
      obs_b.push_back(*bs[i]);
      obs_u.push_back(o == Outcome::correct ? 1.0 : 0.0);
    }
    if (obs_b.empty()) {
      empty_responders.push_back(matrix.responder_ids()[r]);
      continue;
    }
    // d/dtheta log L = sum (u - P), decreasing in theta.
    auto score = [&](double theta) {
      double g = 0.0, h = 0.0;
      for (std::size_t k = 0; k < obs_b.size(); ++k) {
        const double p = detail::sigmoid(theta - obs_b[k]);
        g += obs_u[k] - p;
        h -= p * (1.0 - p);
      }
      return std::pair{g, h};
    };
    const auto est = detail::solve_decreasing(score, kLogitMin, kLogitMax);
    out.responders[matrix.responder_ids()[r]] = {est.value, est.clamped};
  }
  if (!empty_responders.empty()) throw IdListError("responders without observed responses", empty_responders);
  return out;
}

/// Bock-Aitkin EM for Rasch difficulties with abilities integrated over the
/// quadrature population. Each M-step solves the per-item expected
/// complete-data score equation exactly by bounded Newton.
inline ItemParams estimate_difficulties_mml(const ResponseMatrix& matrix, const QuadratureGrid& grid,
                                            const EmConfig& config = {}) {
  grid.validate();
  const std::size_t n_resp = matrix.num_responders();
  const std::size_t n_items = matrix.num_items();
  const std::size_t n_nodes = grid.nodes.size();

  // Starting values from smoothed proportions correct.
  std::vector<double> b(n_items);
  std::vector<std::string> empty_items;
  for (std::size_t i = 0; i < n_items; ++i) {
    double n = 0.0, s = 0.0;
    for (std::size_t r = 0; r < n_resp; ++r) {
      const Outcome o = matrix.at(r, i);
      if (o == Outcome::missing) continue;
      n += 1.0;
      if (o == Outcome::correct) s += 1.0;
    }
    if (n == 0.0) {
      empty_items.push_back(matrix.item_ids()[i]);
      continue;
    }
    const double p = (s + 0.5) / (n + 1.0);
    b[i] = clamp_logit(-std::log(p / (1.0 - p)));
  }
  if (!empty_items.empty()) throw IdListError("items without observed responses", empty_items);

  std::vector<double> log_weights(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) {
    log_weights[k] = grid.weights[k] > 0.0 ? std::log(grid.weights[k]) : -std::numeric_limits<double>::infinity();
  }

  // Layout [item][node].
  std::vector<double> lp(n_items * n_nodes), lq(n_items * n_nodes);
  std::vector<double> expected_n(n_items * n_nodes), expected_r(n_items * n_nodes);
  std::vector<double> post(n_nodes);

  auto refresh_logs = [&] {
    for (std::size_t i = 0; i < n_items; ++i) {
      for (std::size_t k = 0; k < n_nodes; ++k) {
        const double x = grid.nodes[k] - b[i];
        lp[i * n_nodes + k] = detail::log_p(x);
        lq[i * n_nodes + k] = detail::log_q(x);
      }
    }
  };

  // Posterior over nodes for responder r, written into `post`.
  auto posterior = [&](std::size_t r) {
    for (std::size_t k = 0; k < n_nodes; ++k) post[k] = log_weights[k];
    for (std::size_t i = 0; i < n_items; ++i) {
      const Outcome o = matrix.at(r, i);
      if (o == Outcome::missing) continue;
      const double* row = (o == Outcome::correct ? lp.data() : lq.data()) + i * n_nodes;
      for (std::size_t k = 0; k < n_nodes; ++k) post[k] += row[k];
    }
    const double mx = *std::max_element(post.begin(), post.end());
    double total = 0.0;
    for (double& v : post) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : post) v /= total;
  };

  ItemParams result;
  std::vector<double> last_delta(n_items, std::numeric_limits<double>::infinity());
  bool converged = false;
  int iter = 0;
  while (iter < config.max_iterations) {
    ++iter;
    refresh_logs();
    std::fill(expected_n.begin(), expected_n.end(), 0.0);
    std::fill(expected_r.begin(), expected_r.end(), 0.0);
    for (std::size_t r = 0; r < n_resp; ++r) {
      posterior(r);
      for (std::size_t i = 0; i < n_items; ++i) {
        const Outcome o = matrix.at(r, i);
        if (o == Outcome::missing) continue;
        double* en = expected_n.data() + i * n_nodes;
        for (std::size_t k = 0; k < n_nodes; ++k) en[k] += post[k];
        if (o == Outcome::correct) {
          double* er = expected_r.data() + i * n_nodes;
          for (std::size_t k = 0; k < n_nodes; ++k) er[k] += post[k];
        }
      }
    }

    double max_delta = 0.0;
    for (std::size_t i = 0; i < n_items; ++i) {
      const double* en = expected_n.data() + i * n_nodes;
      const double* er = expected_r.data() + i * n_nodes;
      // dQ/db = sum_k (n_k P_k - r_k), decreasing in b.
      auto score = [&](double bi) {
        double g = 0.0, h = 0.0;
        for (std::size_t k = 0; k < n_nodes; ++k) {
          const double p = detail::sigmoid(grid.nodes[k] - bi);
          g += en[k] * p - er[k];
          h -= en[k] * p * (1.0 - p);
        }
        return std::pair{g, h};
      };
      const auto est = detail::solve_decreasing(score, kLogitMin, kLogitMax, b[i]);
      last_delta[i] = std::abs(est.value - b[i]);
      max_delta = std::max(max_delta, last_delta[i]);
      b[i] = est.value;
      result.items[matrix.item_ids()[i]].clamped = est.clamped;
    }
    if (max_delta < config.tolerance) {
      converged = true;
      break;
    }
  }

  // Diagonal observed information of the marginal likelihood at the estimate:
  // sum over responders of E[PQ] - Var(P) under each responder's posterior.
  refresh_logs();
  std::vector<double> info(n_items, 0.0);
  for (std::size_t r = 0; r < n_resp; ++r) {
    posterior(r);
    for (std::size_t i = 0; i < n_items; ++i) {
      if (matrix.at(r, i) == Outcome::missing) continue;
      double e_p = 0.0, e_p2 = 0.0, e_pq = 0.0;
      for (std::size_t k = 0; k < n_nodes; ++k) {
        const double p = std::exp(lp[i * n_nodes + k]);
        e_p += post[k] * p;
        e_p2 += post[k] * p * p;
        e_pq += post[k] * p * (1.0 - p);
      }
      info[i] += e_pq - (e_p2 - e_p * e_p);
    }
  }

  for (std::size_t i = 0; i < n_items; ++i) {
    auto& est = result.items[matrix.item_ids()[i]];
    est.b = b[i];
    est.converged = last_delta[i] < config.tolerance;
    if (!est.clamped && info[i] > 0.0) est.standard_error = 1.0 / std::sqrt(info[i]);
  }
  result.converged = converged;
  result.iterations = iter;
  return result;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Bernoulli(prob_correct) outcome for every responder x item cell, in the
/// id order of the parameter maps.
inline ResponseMatrix simulate_responses(const AbilityParams& abilities, const ItemParams& items, std::uint64_t seed) {
  std::vector<std::string> rids, iids;
  std::vector<double> thetas, bs;
  for (const auto& [id, a] : abilities.responders) {
    require_finite(a.theta, "theta");
    rids.push_back(id);
    thetas.push_back(a.theta);
  }
  for (const auto& [id, it] : items.items) {
    require_finite(it.b, "b");
    iids.push_back(id);
    bs.push_back(it.b);
  }
  ResponseMatrix m(std::move(rids), std::move(iids));
  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < thetas.size(); ++r) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const double p = prob_correct(thetas[r], bs[i]);
      m.set(r, i, uniform01(rng) < p ? Outcome::correct : Outcome::incorrect);
    }
  }
  return m;
}

/// Fraction of observed responses that are correct, per responder.
inline std::vector<double> responder_accuracies(const ResponseMatrix& matrix) {
  std::vector<double> acc(matrix.num_responders(), 0.0);
  for (std::size_t r = 0; r < matrix.num_responders(); ++r) {
    double n = 0.0, s = 0.0;
    for (std::size_t i = 0; i < matrix.num_items(); ++i) {
      const Outcome o = matrix.at(r, i);
      if (o == Outcome::missing) continue;
      n += 1.0;
      s += (o == Outcome::correct);
    }
    acc[r] = n > 0.0 ? s / n : 0.0;
  }
  return acc;
}

}  // namespace dcqg::rasch
