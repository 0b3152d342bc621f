#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dcqg/judge.hpp"
#include "test_util.hpp"

using namespace dcqg;
using namespace dcqg::judge;

namespace {

dataset::ParsedOutput golden_parsed() {
  const auto r = test_util::golden_record();
  return {r.answer, r.question, r.distractors};
}

GeneratedQuestion golden_question(const std::string& id = "pg@-2.0") {
  const auto r = test_util::golden_record();
  return GeneratedQuestion::make(id, r.passage_id, r.passage, -2.0, dataset::render_target_output(r));
}

std::vector<JudgeVerdict> verdicts(Criterion c, const std::vector<std::string>& raws) {
  std::vector<JudgeVerdict> out;
  for (const auto& r : raws) out.push_back(parse_judge_verdict(c, r));
  return out;
}

}  // namespace

TEST(JudgePrompt, MatchesGoldenFiles) {
  const std::array<int, 4> identity{0, 1, 2, 3};
  for (auto c : kAllCriteria) {
    EXPECT_EQ(render_judge_text(c, test_util::golden_record().passage, golden_parsed(), identity),
              test_util::golden("judge_" + std::string(criterion_name(c)) + ".txt"))
        << criterion_name(c);
  }
}

TEST(JudgePrompt, Examples) {
  const auto q = golden_question();
  EXPECT_NE(render_judge_prompt(Criterion::fluency, q, 1).text.find("on a scale of three"), std::string::npos);
  EXPECT_NE(render_judge_prompt(Criterion::answerability, q, 1).text.find("Additionally, provide the reason."),
            std::string::npos);
  const auto rt = render_judge_prompt(Criterion::reasoning_type, q, 1).text;
  for (auto cat : kReasoningTypes) EXPECT_NE(rt.find(cat), std::string::npos);

  auto bad = q;
  bad.parsed.reset();
  EXPECT_THROW(render_judge_prompt(Criterion::fluency, bad, 1), std::invalid_argument);
}

TEST(JudgePrompt, ShuffledOptionsFollowLoggedOrder) {
  const auto parsed = golden_parsed();
  const std::array<std::string, 4> source{parsed.answer, parsed.distractors[0], parsed.distractors[1],
                                          parsed.distractors[2]};
  std::set<std::array<int, 4>> seen;
  for (int k = 0; k < 200; ++k) {
    const auto q = golden_question("q" + std::to_string(k));
    const auto p = render_judge_prompt(Criterion::relevance, q, 7);
    auto sorted = p.option_order;
    std::sort(sorted.begin(), sorted.end());
    ASSERT_EQ(sorted, (std::array<int, 4>{0, 1, 2, 3}));
    for (int l = 0; l < 4; ++l) {
      const std::string line = std::string(1, static_cast<char>('A' + l)) + ". " + source[static_cast<std::size_t>(p.option_order[static_cast<std::size_t>(l)])];
      EXPECT_NE(p.text.find("\n" + line), std::string::npos);
    }
    EXPECT_NE(p.text.find(std::string("\n") + p.correct_label() + ". " + parsed.answer), std::string::npos);
    EXPECT_EQ(p.option_order, option_permutation(7, q.question_id));
    seen.insert(p.option_order);
  }
  // Fisher-Yates over 200 ids should reach most of the 24 orders.
  EXPECT_GE(seen.size(), 20u);
  EXPECT_EQ(render_judge_prompt(Criterion::fluency, golden_question(), 3).text,
            render_judge_prompt(Criterion::fluency, golden_question(), 3).text);
}

TEST(Verdict, Examples) {
  EXPECT_EQ(parse_judge_verdict(Criterion::fluency, "The question is clear. 2").score, 2);
  EXPECT_FALSE(parse_judge_verdict(Criterion::relevance, "3").parsed());
  EXPECT_EQ(parse_judge_verdict(Criterion::reasoning_type, "Multi-sentence reasoning").category,
            "Multi-sentence reasoning");
}

TEST(Verdict, NumericEdgeCases) {
  EXPECT_EQ(parse_judge_verdict(Criterion::answerability, "Score: 1\nReason: only option A is supported.").score, 1);
  EXPECT_EQ(parse_judge_verdict(Criterion::answerability, "Only one answer fits. Score: 0").score, 0);
  EXPECT_EQ(parse_judge_verdict(Criterion::fluency, "1 at first, but on reflection 2.").score, 2);
  EXPECT_FALSE(parse_judge_verdict(Criterion::fluency, "no score given").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::fluency, "").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::fluency, "1.5").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::fluency, "-1").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::fluency, "12").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::relevance, "level2").parsed());
  EXPECT_EQ(parse_judge_verdict(Criterion::relevance, "(1)").score, 1);
  const auto v = parse_judge_verdict(Criterion::fluency, "2");
  EXPECT_EQ(v.raw, "2");
  EXPECT_FALSE(v.category.has_value());
}

TEST(Verdict, ReasoningTypeExactMatch) {
  EXPECT_EQ(parse_judge_verdict(Criterion::reasoning_type, "  word matching.\n").category, "Word matching");
  EXPECT_EQ(parse_judge_verdict(Criterion::reasoning_type, "\"Paraphrasing\"").category, "Paraphrasing");
  EXPECT_EQ(parse_judge_verdict(Criterion::reasoning_type, "**Single-sentence reasoning**").category,
            "Single-sentence reasoning");
  EXPECT_FALSE(parse_judge_verdict(Criterion::reasoning_type, "The answer is Paraphrasing").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::reasoning_type, "Multi-sentence").parsed());
  EXPECT_FALSE(parse_judge_verdict(Criterion::reasoning_type, "2").parsed());
}

TEST(Aggregate, Examples) {
  auto s = aggregate_quality(verdicts(Criterion::fluency, {"2", "2", "2"}));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(*s[0].mean, 2.0);
  EXPECT_DOUBLE_EQ(*s[0].sd, 0.0);

  s = aggregate_quality(verdicts(Criterion::relevance, {"1", "0"}));
  EXPECT_DOUBLE_EQ(*s[0].mean, 0.5);
  EXPECT_DOUBLE_EQ(*s[0].sd, 0.5);

  std::vector<std::string> raws(100, "0");
  std::fill_n(raws.begin(), 91, "1");
  s = aggregate_quality(verdicts(Criterion::answerability, raws));
  EXPECT_NEAR(*s[0].mean, 0.91, 1e-12);
  EXPECT_NEAR(*s[0].sd, std::sqrt(0.91 * 0.09), 1e-12);
  EXPECT_NEAR(*s[0].sd, 0.286, 5e-4);
}

TEST(Aggregate, UnparseableCountedNotAveraged) {
  std::mt19937_64 rng(3);
  std::vector<JudgeVerdict> vs;
  const std::vector<std::string> pool{"0", "1", "2", "7", "none", "score 1"};
  for (int k = 0; k < 500; ++k) {
    const auto c = kAllCriteria[rng() % 3];
    vs.push_back(parse_judge_verdict(c, pool[rng() % pool.size()]));
  }
  std::size_t total = 0;
  for (const auto& s : aggregate_quality(vs)) {
    total += s.parsed + s.unparseable;
    std::vector<double> scores;
    for (const auto& v : vs) {
      if (v.criterion == s.criterion && v.score) scores.push_back(*v.score);
    }
    ASSERT_EQ(scores.size(), s.parsed);
    double m = 0.0;
    for (double x : scores) m += x;
    m /= static_cast<double>(scores.size());
    EXPECT_NEAR(*s.mean, m, 1e-12);
    EXPECT_LE(*s.mean, max_score(s.criterion));
  }
  EXPECT_EQ(total, vs.size());

  const auto all_bad = aggregate_quality(verdicts(Criterion::fluency, {"x", "y"}));
  EXPECT_FALSE(all_bad[0].mean.has_value());
  EXPECT_EQ(all_bad[0].unparseable, 2u);
}

TEST(ReasoningDistribution, Examples) {
  auto d = reasoning_type_distribution(verdicts(Criterion::reasoning_type, {"Word matching", "Word matching"}));
  EXPECT_EQ(d.size(), 4u);
  EXPECT_DOUBLE_EQ(d["Word matching"], 1.0);
  EXPECT_DOUBLE_EQ(d["Paraphrasing"], 0.0);

  auto vs = verdicts(Criterion::reasoning_type,
                     {"Paraphrasing", "Multi-sentence reasoning", "Paraphrasing", "Multi-sentence reasoning", "??"});
  d = reasoning_type_distribution(vs);
  EXPECT_DOUBLE_EQ(d["Paraphrasing"], 0.5);
  EXPECT_DOUBLE_EQ(d["Multi-sentence reasoning"], 0.5);

  std::mt19937_64 rng(5);
  std::vector<JudgeVerdict> many;
  for (int k = 0; k < 300; ++k) many.push_back(parse_judge_verdict(Criterion::reasoning_type, std::string(kReasoningTypes[rng() % 4])));
  const auto base = reasoning_type_distribution(many);
  double sum = 0.0;
  for (const auto& [k, v] : base) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  std::shuffle(many.begin(), many.end(), rng);
  const auto shuffled = reasoning_type_distribution(many);
  for (const auto& [k, v] : base) EXPECT_NEAR(shuffled.at(k), v, 1e-15);
}

TEST(Criterion, NamesRoundTrip) {
  for (auto c : kAllCriteria) EXPECT_EQ(parse_criterion(criterion_name(c)), c);
  EXPECT_THROW(parse_criterion("clarity"), std::invalid_argument);
  EXPECT_EQ(max_score(Criterion::fluency), 2);
  EXPECT_EQ(max_score(Criterion::relevance), 1);
}
