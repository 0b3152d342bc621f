#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcqg/common.hpp"
#include "dcqg/generated.hpp"
#include "dcqg/judge.hpp"
#include "dcqg/rasch.hpp"
#include "dcqg/stats.hpp"
#include "dcqg/text.hpp"

namespace dcqg::eval {

using rasch::AbilityParams;
using rasch::Outcome;
using rasch::ResponseMatrix;

inline constexpr double kMedianAbility = -0.08;

/// Simulated administration: every responder answers every question with
/// probability prob_correct(theta, latent difficulty).
inline ResponseMatrix administer(std::span<const GeneratedQuestion> questions, const AbilityParams& responders,
                                 std::uint64_t seed) {
  std::map<std::string, double> latent;
  for (const auto& q : questions) {
    if (!q.latent_difficulty) throw std::invalid_argument("question " + q.question_id + " has no latent difficulty");
    if (!latent.emplace(q.question_id, *q.latent_difficulty).second) {
      throw std::invalid_argument("duplicate question id " + q.question_id);
    }
  }
  return rasch::simulate_responses(responders, rasch::ItemParams::from_difficulties(latent), seed);
}

struct BinRate {
  double specified_difficulty = 0.0;
  double rate = 0.0;
  std::size_t observations = 0;
  std::size_t questions = 0;
};

struct CorrectRateCurve {
  std::map<long, BinRate> bins;  // keyed by difficulty_bin_key
  std::vector<double> omitted;   // requested bins without observations
};

/// Pooled fraction correct per 0.1 specified-difficulty bin. Questions absent
/// from the matrix or without observations contribute nothing; bins of
/// `grid` left empty are listed in `omitted`.
inline CorrectRateCurve correct_rate_curve(const ResponseMatrix& matrix, std::span<const GeneratedQuestion> questions,
                                           std::span<const double> grid = {}) {
  if (questions.empty()) throw std::invalid_argument("no questions");
  CorrectRateCurve curve;
  std::map<long, std::pair<std::size_t, std::size_t>> counts;  // observed, correct
  std::map<long, std::size_t> n_questions;
  for (const auto& q : questions) {
    const auto idx = matrix.item_index(q.question_id);
    if (!idx) continue;
    std::size_t obs = 0, correct = 0;
    for (std::size_t r = 0; r < matrix.num_responders(); ++r) {
      const Outcome o = matrix.at(r, *idx);
      if (o == Outcome::missing) continue;
      ++obs;
      correct += (o == Outcome::correct);
    }
    if (obs == 0) continue;
    const long key = difficulty_bin_key(q.specified_difficulty);
    counts[key].first += obs;
    counts[key].second += correct;
    ++n_questions[key];
  }
  for (const auto& [key, c] : counts) {
    curve.bins[key] = {bin_key_value(key), static_cast<double>(c.second) / static_cast<double>(c.first), c.first,
                       n_questions[key]};
  }
  for (double b : grid) {
    if (!curve.bins.count(difficulty_bin_key(b))) curve.omitted.push_back(b);
  }
  return curve;
}

inline std::map<double, double> theoretical_curve(double theta_ref, std::span<const double> grid) {
  require_finite(theta_ref, "theta_ref");
  std::map<double, double> out;
  for (double b : grid) out[b] = rasch::prob_correct(theta_ref, b);
  return out;
}

struct GeneratedEstimates {
  std::map<std::string, rasch::BoundedEstimate> estimates;
  std::map<std::string, std::string> failures;  // question id -> reason
};

/// Difficulty of each question in the matrix with responder abilities fixed.
inline GeneratedEstimates estimate_generated_difficulties(const ResponseMatrix& matrix,
                                                          const AbilityParams& responders) {
  std::vector<double> thetas(matrix.num_responders());
  std::vector<std::string> unknown;
  for (std::size_t r = 0; r < thetas.size(); ++r) {
    const auto t = responders.ability(matrix.responder_ids()[r]);
    if (!t) unknown.push_back(matrix.responder_ids()[r]);
    else thetas[r] = *t;
  }
  if (!unknown.empty()) throw IdListError("responders without ability estimates", unknown);
  GeneratedEstimates out;
  for (std::size_t i = 0; i < matrix.num_items(); ++i) {
    const auto col = matrix.item_column(i);
    try {
      out.estimates[matrix.item_ids()[i]] = rasch::estimate_single_item_difficulty(col, thetas);
    } catch (const std::invalid_argument& e) {
      out.failures[matrix.item_ids()[i]] = e.what();
    }
  }
  return out;
}

/// Mean |specified - estimated| over (specified, estimated) pairs.
inline double mae_difficulty(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("mae of an empty list");
  double s = 0.0;
  for (const auto& [spec, est] : pairs) s += std::abs(spec - est);
  return s / static_cast<double>(pairs.size());
}

/// Mean item information over a group of estimated difficulties, per theta.
inline std::map<double, double> fisher_curve_group(std::span<const double> estimated,
                                                   std::span<const double> theta_grid) {
  if (estimated.empty()) throw std::invalid_argument("empty difficulty group");
  std::map<double, double> out;
  for (double theta : theta_grid) {
    double s = 0.0;
    for (double b : estimated) s += rasch::fisher_information(theta, b);
    out[theta] = s / static_cast<double>(estimated.size());
  }
  return out;
}

/// Mean of F(theta = specified, estimated) over every question of every group.
inline double mean_fisher_at_matched_ability(const std::map<double, std::vector<double>>& groups) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& [spec, bs] : groups) {
    for (double b : bs) {
      s += rasch::fisher_information(spec, b);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("no estimated difficulties");
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalConfig {
  double theta_ref = kMedianAbility;
  std::vector<double> grid;           // requested specified-difficulty bins
  std::vector<double> fisher_thetas;  // defaults to -6..6 in 0.1 steps
};

struct BinSummary {
  double specified_difficulty = 0.0;
  std::optional<double> correct_rate;
  double theoretical = 0.0;
  std::size_t observations = 0;
  std::size_t questions = 0;
  std::optional<double> mean_estimated;
  std::optional<double> sd_estimated;
  std::size_t estimated = 0;
};

struct JudgeSection {
  std::string status = "not_requested";  // not_requested | ok | skipped
  std::string reason;
  std::vector<judge::QualitySummary> quality;
  std::map<std::string, double> reasoning;
  std::size_t reasoning_parsed = 0;
  std::size_t reasoning_unparseable = 0;
  // question id -> option order shown as A..D (0 = correct option)
  std::map<std::string, std::array<int, 4>> option_orders;
};

struct EvaluationReport {
  std::size_t questions_total = 0;
  std::size_t questions_unparsed = 0;
  std::size_t questions_unanswered = 0;
  std::size_t estimates_clamped = 0;
  std::vector<BinSummary> bins;
  std::vector<double> omitted_bins;
  std::optional<double> mae;
  std::optional<double> slope;
  std::optional<double> rate_spearman;
  std::optional<double> mean_fisher_matched;
  std::map<double, std::map<double, double>> fisher_curves;  // specified -> theta -> F
  JudgeSection judge;
};

/// Computes every response-based metric. Unparsed questions and questions
/// without observed responses are dropped and counted.
inline EvaluationReport evaluate(std::span<const GeneratedQuestion> questions, const ResponseMatrix& matrix,
                                 const AbilityParams& responders, const EvalConfig& config = {}) {
  EvaluationReport rep;
  rep.questions_total = questions.size();
  std::vector<GeneratedQuestion> kept;
  for (const auto& q : questions) {
    if (!q.parsed) ++rep.questions_unparsed;
    else kept.push_back(q);
  }
  if (kept.empty()) throw std::invalid_argument("no parseable questions to evaluate");

  const auto curve = correct_rate_curve(matrix, kept, config.grid);
  rep.omitted_bins = curve.omitted;
  const auto est = estimate_generated_difficulties(matrix, responders);

  std::map<long, std::vector<double>> by_bin;
  std::vector<std::pair<double, double>> pairs;
  std::map<double, std::vector<double>> groups;
  for (const auto& q : kept) {
    auto it = est.estimates.find(q.question_id);
    if (it == est.estimates.end()) {
      ++rep.questions_unanswered;
      continue;
    }
    if (it->second.clamped) ++rep.estimates_clamped;
    const long key = difficulty_bin_key(q.specified_difficulty);
    by_bin[key].push_back(it->second.value);
    pairs.emplace_back(q.specified_difficulty, it->second.value);
    groups[bin_key_value(key)].push_back(it->second.value);
  }

  std::set<long> keys;
  for (const auto& [k, _] : curve.bins) keys.insert(k);
  for (const auto& [k, _] : by_bin) keys.insert(k);
  for (double b : config.grid) keys.insert(difficulty_bin_key(b));
  std::vector<double> xs_rate, ys_rate, xs_est, ys_est;
  for (long k : keys) {
    BinSummary s;
    s.specified_difficulty = bin_key_value(k);
    s.theoretical = rasch::prob_correct(config.theta_ref, s.specified_difficulty);
    if (auto it = curve.bins.find(k); it != curve.bins.end()) {
      s.correct_rate = it->second.rate;
      s.observations = it->second.observations;
      s.questions = it->second.questions;
      xs_rate.push_back(s.specified_difficulty);
      ys_rate.push_back(it->second.rate);
    }
    if (auto it = by_bin.find(k); it != by_bin.end()) {
      s.mean_estimated = stats::mean(it->second);
      s.sd_estimated = stats::population_sd(it->second);
      s.estimated = it->second.size();
      xs_est.push_back(s.specified_difficulty);
      ys_est.push_back(*s.mean_estimated);
    }
    rep.bins.push_back(s);
  }

  if (!pairs.empty()) {
    rep.mae = mae_difficulty(pairs);
    rep.mean_fisher_matched = mean_fisher_at_matched_ability(groups);
    std::vector<double> thetas = config.fisher_thetas;
    if (thetas.empty()) {
      for (int k = -60; k <= 60; ++k) thetas.push_back(static_cast<double>(k) / 10.0);
    }
    for (const auto& [spec, bs] : groups) rep.fisher_curves[spec] = fisher_curve_group(bs, thetas);
  }
  if (xs_est.size() >= 2) rep.slope = stats::ols_slope(xs_est, ys_est);
  if (xs_rate.size() >= 2) rep.rate_spearman = stats::spearman(xs_rate, ys_rate);
  return rep;
}

/// Fills the judge section from parsed verdicts.
inline void attach_judge_results(EvaluationReport& rep, std::span<const judge::JudgeVerdict> verdicts) {
  rep.judge.status = "ok";
  rep.judge.quality = judge::aggregate_quality(verdicts);
  rep.judge.reasoning = judge::reasoning_type_distribution(verdicts);
  for (const auto& v : verdicts) {
    if (v.criterion != judge::Criterion::reasoning_type) continue;
    if (v.category) ++rep.judge.reasoning_parsed;
    else ++rep.judge.reasoning_unparseable;
  }
}

namespace detail {

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline std::string fig3_csv(const EvaluationReport& rep) {
  std::string out = "specified_difficulty,correct_rate,theoretical,observations,questions\n";
  for (const auto& b : rep.bins) {
    out += format_difficulty(b.specified_difficulty) + "," + detail::opt_num(b.correct_rate) + "," +
           detail::num(b.theoretical) + "," + std::to_string(b.observations) + "," + std::to_string(b.questions) + "\n";
  }
  return out;
}

inline std::string fig4_csv(const EvaluationReport& rep) {
  std::string out = "specified_difficulty,mean_estimated_difficulty,sd_estimated_difficulty,questions\n";
  for (const auto& b : rep.bins) {
    out += format_difficulty(b.specified_difficulty) + "," + detail::opt_num(b.mean_estimated) + "," +
           detail::opt_num(b.sd_estimated) + "," + std::to_string(b.estimated) + "\n";
  }
  return out;
}

inline std::string fig5_csv(const EvaluationReport& rep) {
  std::string out = "specified_difficulty,theta,mean_fisher_information\n";
  for (const auto& [spec, curve] : rep.fisher_curves) {
    for (const auto& [theta, f] : curve) {
      out += format_difficulty(spec) + "," + detail::num(theta) + "," + detail::num(f) + "\n";
    }
  }
  return out;
}

inline std::string fig6_csv(const EvaluationReport& rep) {
  std::string out = "reasoning_type,proportion\n";
  for (auto cat : judge::kReasoningTypes) {
    auto it = rep.judge.reasoning.find(std::string(cat));
    out += std::string(cat) + "," + (it == rep.judge.reasoning.end() ? std::string() : detail::num(it->second)) + "\n";
  }
  return out;
}

inline std::string table2_csv(const EvaluationReport& rep) {
  std::string out = "criterion,mean,sd,parsed,unparseable\n";
  for (const auto& q : rep.judge.quality) {
    out += std::string(judge::criterion_name(q.criterion)) + "," + detail::opt_num(q.mean) + "," +
           detail::opt_num(q.sd) + "," + std::to_string(q.parsed) + "," + std::to_string(q.unparseable) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json report_to_json(const EvaluationReport& rep) {
  using detail::opt_json;
  nlohmann::ordered_json j;
  j["questions"] = {{"total", rep.questions_total},
                    {"unparsed", rep.questions_unparsed},
                    {"unanswered", rep.questions_unanswered},
                    {"clamped_estimates", rep.estimates_clamped}};
  j["mae"] = opt_json(rep.mae);
  j["slope"] = opt_json(rep.slope);
  j["correct_rate_spearman"] = opt_json(rep.rate_spearman);
  j["mean_fisher_at_matched_ability"] = opt_json(rep.mean_fisher_matched);
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : rep.bins) {
    bins.push_back({{"specified_difficulty", b.specified_difficulty},
                    {"correct_rate", opt_json(b.correct_rate)},
                    {"theoretical", b.theoretical},
                    {"observations", b.observations},
                    {"questions", b.questions},
                    {"mean_estimated_difficulty", opt_json(b.mean_estimated)},
                    {"sd_estimated_difficulty", opt_json(b.sd_estimated)},
                    {"estimated", b.estimated}});
  }
  j["bins"] = std::move(bins);
  j["omitted_bins"] = rep.omitted_bins;
  nlohmann::ordered_json jj;
  jj["status"] = rep.judge.status;
  if (!rep.judge.reason.empty()) jj["reason"] = rep.judge.reason;
  if (rep.judge.status == "ok") {
    auto quality = nlohmann::ordered_json::object();
    for (const auto& q : rep.judge.quality) {
      quality[std::string(judge::criterion_name(q.criterion))] = {
          {"mean", opt_json(q.mean)}, {"sd", opt_json(q.sd)}, {"parsed", q.parsed}, {"unparseable", q.unparseable}};
    }
    jj["quality"] = std::move(quality);
    jj["reasoning_types"] = rep.judge.reasoning;
    jj["reasoning_parsed"] = rep.judge.reasoning_parsed;
    jj["reasoning_unparseable"] = rep.judge.reasoning_unparseable;
  }
  if (!rep.judge.option_orders.empty()) {
    auto orders = nlohmann::ordered_json::object();
    for (const auto& [id, order] : rep.judge.option_orders) {
      std::string labels;
      for (int k : order) labels += k == 0 ? 'c' : static_cast<char>('0' + k);
      orders[id] = labels;
    }
    jj["option_orders"] = std::move(orders);
  }
  j["judge"] = std::move(jj);
  return j;
}

/// Writes report.json and the figure/table CSVs into `dir`; returns the
/// paths written.
inline std::vector<std::string> write_report(const std::string& dir, const EvaluationReport& rep) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"report.json", report_to_json(rep).dump(2) + "\n"},
      {"fig3_correct_rates.csv", fig3_csv(rep)},
      {"fig4_estimated_difficulty.csv", fig4_csv(rep)},
      {"fig5_fisher.csv", fig5_csv(rep)},
      {"fig6_reasoning.csv", fig6_csv(rep)},
      {"table2_quality.csv", table2_csv(rep)},
  };
  std::vector<std::string> written;
  for (const auto& [name, content] : files) {
    const std::string path = (base / name).string();
    text::write_file_checked(path, content);
    written.push_back(path);
  }
  return written;
}

}  // namespace dcqg::eval
