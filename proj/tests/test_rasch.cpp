#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dcqg/rasch.hpp"
#include "dcqg/rasch_io.hpp"
#include "dcqg/simulate.hpp"
#include "dcqg/stats.hpp"

using namespace dcqg;
using namespace dcqg::rasch;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Argmax of f over [lo, hi] on a uniform grid.
template <class F>
double grid_argmax(F f, double lo, double hi, double step) {
  double best_x = lo, best = -1e300;
  const long n = std::lround((hi - lo) / step);
  for (long k = 0; k <= n; ++k) {
    const double x = lo + step * static_cast<double>(k);
    const double v = f(x);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  return best_x;
}

ResponseMatrix matrix_from(const std::vector<std::vector<int>>& rows) {
  std::vector<std::string> rids, iids;
  for (std::size_t r = 0; r < rows.size(); ++r) rids.push_back("r" + std::to_string(r));
  for (std::size_t i = 0; i < rows.at(0).size(); ++i) iids.push_back("i" + std::to_string(i));
  ResponseMatrix m(rids, iids);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) m.set(r, i, static_cast<Outcome>(rows[r][i]));
  }
  return m;
}

}  // namespace

TEST(ProbCorrect, Examples) {
  EXPECT_DOUBLE_EQ(prob_correct(0.0, 0.0), 0.5);
  EXPECT_NEAR(prob_correct(1.0, 0.0), 0.731059, 1e-6);
  EXPECT_NEAR(prob_correct(-2.0, 2.0), 0.017986, 1e-6);
}

TEST(ProbCorrect, RejectsNonFinite) {
  EXPECT_THROW(prob_correct(std::nan(""), 0.0), std::invalid_argument);
  EXPECT_THROW(prob_correct(0.0, INFINITY), std::invalid_argument);
  EXPECT_THROW(fisher_information(0.0, -INFINITY), std::invalid_argument);
}

TEST(ProbCorrect, MonotoneAndAntisymmetric) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int k = 0; k < 2000; ++k) {
    const double t = u(rng), b = u(rng);
    EXPECT_EQ(prob_correct(t, b) + prob_correct(b, t), 1.0);
    EXPECT_NEAR(prob_correct(t, b), logistic(t - b), 1e-15);
    EXPECT_LT(prob_correct(t, b), prob_correct(t + 0.01, b));
    EXPECT_GT(prob_correct(t, b), prob_correct(t, b + 0.01));
    EXPECT_GT(prob_correct(t, b), 0.0);
    EXPECT_LT(prob_correct(t, b), 1.0);
  }
}

TEST(Fisher, Examples) {
  EXPECT_DOUBLE_EQ(fisher_information(1.3, 1.3), 0.25);
  EXPECT_NEAR(fisher_information(1.0, 0.0), 0.196612, 1e-6);
  EXPECT_DOUBLE_EQ(fisher_information(0.0, 2.0), fisher_information(4.0, 2.0));
}

TEST(Fisher, MatchesDerivativeOfProbability) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int k = 0; k < 200; ++k) {
    const double t = u(rng), b = u(rng), h = 1e-5;
    const double fd = (prob_correct(t + h, b) - prob_correct(t - h, b)) / (2 * h);
    EXPECT_NEAR(fisher_information(t, b), fd, 1e-9);
    EXPECT_NEAR(fisher_information(t, b), fisher_information(2 * b - t, b), 1e-15);
    EXPECT_LE(fisher_information(t, b), 0.25);
  }
}

TEST(JointLogLikelihood, Examples) {
  ResponseMatrix one({"r"}, {"i"});
  one.set(0, 0, Outcome::correct);
  const auto ab = AbilityParams::from_thetas({{"r", 0.4}});
  const auto it = ItemParams::from_difficulties({{"i", 0.4}});
  EXPECT_NEAR(joint_log_likelihood(one, ab, it), -0.693147, 1e-6);
  EXPECT_EQ(joint_log_likelihood(ResponseMatrix{}, {}, {}), 0.0);
}

TEST(JointLogLikelihood, MatchesPerCellOracleAndShiftInvariance) {
  const auto m = matrix_from({{1, 0, -1}, {0, 1, 1}, {1, 1, 0}});
  std::map<std::string, double> th{{"r0", -0.5}, {"r1", 0.3}, {"r2", 1.7}};
  std::map<std::string, double> bs{{"i0", -1.0}, {"i1", 0.2}, {"i2", 2.5}};
  double oracle = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < 3; ++i) {
      const Outcome o = m.at(r, i);
      if (o == Outcome::missing) continue;
      const double p = logistic(th["r" + std::to_string(r)] - bs["i" + std::to_string(i)]);
      oracle += std::log(o == Outcome::correct ? p : 1.0 - p);
    }
  }
  const double ll = joint_log_likelihood(m, AbilityParams::from_thetas(th), ItemParams::from_difficulties(bs));
  EXPECT_NEAR(ll, oracle, 1e-12);
  for (auto& [k, v] : th) v += 0.77;
  for (auto& [k, v] : bs) v += 0.77;
  EXPECT_NEAR(joint_log_likelihood(m, AbilityParams::from_thetas(th), ItemParams::from_difficulties(bs)), ll, 1e-10);
}

TEST(JointLogLikelihood, MissingParameterThrows) {
  const auto m = matrix_from({{1}});
  EXPECT_THROW(joint_log_likelihood(m, {}, ItemParams::from_difficulties({{"i0", 0.0}})), std::invalid_argument);
}

TEST(SingleItem, Examples) {
  const std::vector<Outcome> resp{Outcome::correct, Outcome::incorrect};
  const std::vector<double> th{1.0, -1.0};
  EXPECT_NEAR(estimate_single_item_difficulty(resp, th).value, 0.0, 1e-6);

  const std::vector<Outcome> all{Outcome::correct, Outcome::correct, Outcome::correct};
  const std::vector<double> th3{0.0, 1.0, -1.0};
  const auto e = estimate_single_item_difficulty(all, th3);
  EXPECT_EQ(e.value, -6.0);
  EXPECT_TRUE(e.clamped);

  const std::vector<Outcome> none{Outcome::missing};
  const std::vector<double> th1{0.0};
  EXPECT_THROW(estimate_single_item_difficulty(none, th1), std::invalid_argument);
}

TEST(SingleItem, MatchesGridSearch) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> th;
    std::vector<Outcome> resp;
    for (int m = 0; m < 30; ++m) {
      th.push_back(simulate::normal01(rng));
      resp.push_back(uniform01(rng) < prob_correct(th.back(), 0.5) ? Outcome::correct : Outcome::incorrect);
    }
    resp[0] = Outcome::correct;
    resp[1] = Outcome::incorrect;
    auto ll = [&](double b) {
      double s = 0.0;
      for (std::size_t m = 0; m < th.size(); ++m) {
        const double p = logistic(th[m] - b);
        s += std::log(resp[m] == Outcome::correct ? p : 1.0 - p);
      }
      return s;
    };
    const double oracle = grid_argmax(ll, -6.0, 6.0, 1e-4);
    EXPECT_NEAR(estimate_single_item_difficulty(resp, th).value, oracle, 1e-4);
  }
}

TEST(Abilities, Examples) {
  const auto m = matrix_from({{1, 0}, {1, 1}});
  const auto items = ItemParams::from_difficulties({{"i0", 0.0}, {"i1", 0.0}});
  const auto ab = estimate_abilities_mle(m, items);
  EXPECT_NEAR(ab.responders.at("r0").theta, 0.0, 1e-6);
  EXPECT_FALSE(ab.responders.at("r0").clamped);
  EXPECT_EQ(ab.responders.at("r1").theta, 6.0);
  EXPECT_TRUE(ab.responders.at("r1").clamped);

  const auto zero = estimate_abilities_mle(matrix_from({{0, 0}}), items);
  EXPECT_EQ(zero.responders.at("r0").theta, -6.0);
}

TEST(Abilities, ResponderWithoutResponsesListed) {
  const auto m = matrix_from({{1, 0}, {-1, -1}});
  const auto items = ItemParams::from_difficulties({{"i0", 0.0}, {"i1", 0.0}});
  try {
    estimate_abilities_mle(m, items);
    FAIL() << "expected IdListError";
  } catch (const IdListError& e) {
    ASSERT_EQ(e.ids().size(), 1u);
    EXPECT_EQ(e.ids()[0], "r1");
  }
}

TEST(Abilities, MatchesGridSearch) {
  const auto m = matrix_from({{1, 0, 1, 1, 0}});
  const std::map<std::string, double> bs{{"i0", -1.0}, {"i1", 0.5}, {"i2", 0.0}, {"i3", 1.2}, {"i4", 2.0}};
  const auto ab = estimate_abilities_mle(m, ItemParams::from_difficulties(bs));
  auto ll = [&](double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const double p = logistic(t - bs.at("i" + std::to_string(i)));
      s += std::log(m.at(0, i) == Outcome::correct ? p : 1.0 - p);
    }
    return s;
  };
  EXPECT_NEAR(ab.responders.at("r0").theta, grid_argmax(ll, -6.0, 6.0, 1e-4), 1e-4);
}

TEST(Quadrature, DefaultGridIsValid) {
  const auto g = QuadratureGrid::standard_normal();
  ASSERT_EQ(g.nodes.size(), 41u);
  EXPECT_DOUBLE_EQ(g.nodes.front(), -6.0);
  EXPECT_DOUBLE_EQ(g.nodes.back(), 6.0);
  double s = 0.0;
  for (double w : g.weights) s += w;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_NO_THROW(g.validate());
  QuadratureGrid bad = g;
  bad.weights[0] += 0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Mml, AllCorrectItemIsEasy) {
  const auto m = matrix_from({{1, 1, 0}, {1, 0, 1}, {1, 0, 0}, {1, 1, 1}, {1, 0, 0}});
  const auto p = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  EXPECT_LE(p.items.at("i0").b, -3.0);
  EXPECT_GE(p.items.at("i0").b, -6.0);
}

TEST(Mml, SymmetricItemsGetEqualDifficulty) {
  const auto m = matrix_from({{1, 0}, {0, 1}, {1, 1}, {0, 0}});
  const auto p = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  EXPECT_NEAR(p.items.at("i0").b, p.items.at("i1").b, 1e-8);
  EXPECT_TRUE(p.converged);
}

TEST(Mml, EmptyItemListed) {
  const auto m = matrix_from({{1, -1}, {0, -1}});
  try {
    estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
    FAIL() << "expected IdListError";
  } catch (const IdListError& e) {
    ASSERT_EQ(e.ids().size(), 1u);
    EXPECT_EQ(e.ids()[0], "i1");
  }
}

TEST(Mml, NonConvergenceIsFlagged) {
  const auto abilities = simulate::simulate_abilities(30, 1);
  const auto items = ItemParams::from_difficulties(simulate::simulate_difficulties(10, -2, 2, 2));
  const auto m = simulate_responses(abilities, items, 3);
  const auto p = estimate_difficulties_mml(m, QuadratureGrid::standard_normal(), {1e-12, 2});
  EXPECT_FALSE(p.converged);
  EXPECT_EQ(p.iterations, 2);
}

TEST(Mml, Recovery) {
  const auto abilities = simulate::simulate_abilities(77, 101);
  const auto truth = simulate::simulate_difficulties(100, -3.0, 3.0, 202);
  const auto m = simulate_responses(abilities, ItemParams::from_difficulties(truth), 303);
  const auto est = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  std::vector<double> t, e;
  for (const auto& [id, b] : truth) {
    t.push_back(b);
    e.push_back(est.items.at(id).b);
    EXPECT_GE(est.items.at(id).b, -6.0);
    EXPECT_LE(est.items.at(id).b, 6.0);
  }
  EXPECT_GE(stats::pearson(t, e), 0.9);
  EXPECT_LE(stats::rmse(t, e), 0.45);

  const auto ab = estimate_abilities_mle(m, est);
  std::vector<double> tt, te;
  for (const auto& [id, a] : abilities.responders) {
    tt.push_back(a.theta);
    te.push_back(ab.responders.at(id).theta);
  }
  EXPECT_GE(stats::pearson(tt, te), 0.85);
}

TEST(Mml, PermutationInvariant) {
  const auto abilities = simulate::simulate_abilities(40, 5);
  const auto items = ItemParams::from_difficulties(simulate::simulate_difficulties(12, -2, 2, 6));
  const auto m = simulate_responses(abilities, items, 7);
  std::vector<std::string> rids(m.responder_ids().rbegin(), m.responder_ids().rend());
  std::vector<std::string> iids = m.item_ids();
  std::rotate(iids.begin(), iids.begin() + 5, iids.end());
  ResponseMatrix p(rids, iids);
  for (std::size_t r = 0; r < m.num_responders(); ++r) {
    for (std::size_t i = 0; i < m.num_items(); ++i) p.set(m.responder_ids()[r], m.item_ids()[i], m.at(r, i));
  }
  const auto a = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  const auto b = estimate_difficulties_mml(p, QuadratureGrid::standard_normal());
  for (const auto& [id, e] : a.items) EXPECT_NEAR(e.b, b.items.at(id).b, 1e-10);
}

TEST(Mml, DominatedColumnIsHarder) {
  // i0 correct wherever i1 is, plus one extra.
  const auto m = matrix_from({{1, 1, 0}, {1, 0, 1}, {0, 0, 1}, {1, 1, 0}, {0, 0, 0}, {1, 0, 1}});
  const auto p = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  EXPECT_LE(p.items.at("i0").b, p.items.at("i1").b);
}

TEST(Mml, StandardErrorsPresentForInteriorItems) {
  const auto abilities = simulate::simulate_abilities(200, 8);
  const auto m = simulate_responses(abilities, ItemParams::from_difficulties({{"a", 0.0}, {"b", 1.0}}), 9);
  const auto p = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  for (const auto& [id, e] : p.items) {
    ASSERT_TRUE(e.standard_error.has_value());
    EXPECT_GT(*e.standard_error, 0.05);
    EXPECT_LT(*e.standard_error, 0.5);
  }
}

TEST(Simulate, Examples) {
  const auto ab = AbilityParams::from_thetas({{"r", 6.0}});
  std::map<std::string, double> bs;
  for (int k = 0; k < 1000; ++k) bs["i" + std::to_string(k)] = -6.0;
  const auto m = simulate_responses(ab, ItemParams::from_difficulties(bs), 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < m.num_items(); ++i) correct += m.at(0, i) == Outcome::correct;
  EXPECT_GE(correct, 995u);

  for (auto& [k, v] : bs) v = 0.0;
  std::map<std::string, double> ts;
  for (int k = 0; k < 10; ++k) ts["r" + std::to_string(k)] = 0.0;
  const auto m2 = simulate_responses(AbilityParams::from_thetas(ts), ItemParams::from_difficulties(bs), 2);
  double frac = 0.0;
  for (std::size_t r = 0; r < m2.num_responders(); ++r) {
    for (std::size_t i = 0; i < m2.num_items(); ++i) frac += m2.at(r, i) == Outcome::correct;
  }
  frac /= 10000.0;
  EXPECT_NEAR(frac, 0.5, 0.02);

  const auto again = simulate_responses(AbilityParams::from_thetas(ts), ItemParams::from_difficulties(bs), 2);
  EXPECT_EQ(write_response_csv(m2), write_response_csv(again));
}

TEST(ResponseMatrix, DuplicateIdsRejected) {
  EXPECT_THROW(ResponseMatrix({"a", "a"}, {"i"}), std::invalid_argument);
  EXPECT_THROW(ResponseMatrix({"a"}, {"i", "i"}), std::invalid_argument);
}

TEST(ResponseCsv, RoundTrip) {
  std::istringstream in("responder_id,item_id,outcome\nqa1,q1,1\nqa1,q2,0\r\nqa2,q2,1\n");
  const auto m = read_response_csv(in);
  EXPECT_EQ(m.num_responders(), 2u);
  EXPECT_EQ(m.num_items(), 2u);
  EXPECT_EQ(m.at(1, 0), Outcome::missing);
  std::istringstream again(write_response_csv(m));
  EXPECT_EQ(write_response_csv(read_response_csv(again)), write_response_csv(m));
}

TEST(ResponseCsv, Errors) {
  std::istringstream empty("");
  try {
    read_response_csv(empty, "m.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("no responses"), std::string::npos);
  }
  std::istringstream bad("responder_id,item_id,outcome\nqa1,q1,1\nqa1,q2,maybe\n");
  try {
    read_response_csv(bad, "m.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream dup("responder_id,item_id,outcome\nqa1,q1,1\nqa1,q1,0\n");
  EXPECT_THROW(read_response_csv(dup), FormatError);
  std::istringstream header("a,b,c\n");
  EXPECT_THROW(read_response_csv(header), FormatError);
}

TEST(ParamsJson, RoundTrip) {
  const auto abilities = simulate::simulate_abilities(20, 5);
  const auto m = simulate_responses(abilities, ItemParams::from_difficulties({{"a", 0.0}, {"b", 1.0}}), 1);
  const auto items = estimate_difficulties_mml(m, QuadratureGrid::standard_normal());
  const auto ab = estimate_abilities_mle(m, items);
  const auto j = params_to_json(items, ab);
  const auto items2 = items_from_json(j);
  const auto ab2 = abilities_from_json(j);
  EXPECT_EQ(items2.items.at("a").b, items.items.at("a").b);
  EXPECT_EQ(ab2.responders.size(), ab.responders.size());
  EXPECT_EQ(params_to_json(items2, ab2).dump(), j.dump());
}
