#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "dcqg/dataset.hpp"
#include "dcqg/dataset_io.hpp"
#include "test_util.hpp"

using namespace dcqg;
using namespace dcqg::dataset;

namespace {

std::vector<AnnotatedRecord> annotate_all(const std::vector<QuestionRecord>& rs, double b = 0.5) {
  std::vector<AnnotatedRecord> out;
  for (const auto& r : rs) out.push_back({r, b, true});
  return out;
}

// Random printable text without tag substrings or surrounding whitespace.
std::string fuzz_field(std::mt19937_64& rng) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,;:!?'\"()-<>/cqd";
  std::string s;
  while (true) {
    s.clear();
    const std::size_t n = 1 + rng() % 40;
    for (std::size_t k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    if (!text::trim(s).empty() && text::trim(s).size() == s.size() && !contains_reserved_tag(s)) return s;
  }
}

}  // namespace

TEST(GenerationPrompt, MatchesGolden) {
  const auto r = test_util::golden_record();
  EXPECT_EQ(render_generation_prompt(r.passage, -2.0), test_util::golden("generation_prompt.txt"));
}

TEST(GenerationPrompt, Examples) {
  const auto p = render_generation_prompt("P", 0.0);
  EXPECT_NE(p.find("difficulty level of 0.0"), std::string::npos);
  EXPECT_TRUE(p.ends_with("### Response:"));
  EXPECT_NE(p.find("The difficulty level -3.0 is the easiest"), std::string::npos);
  EXPECT_EQ(render_generation_prompt("P", -0.04), p);

  const auto lo = render_generation_prompt("P", -2.0);
  const auto hi = render_generation_prompt("P", 2.0);
  ASSERT_EQ(lo.size(), hi.size() + 1);
  const auto at = lo.find("-2.0");
  EXPECT_EQ(lo.substr(0, at) + "2.0" + lo.substr(at + 4), hi);
  EXPECT_EQ(render_generation_prompt("P", 1.0), render_generation_prompt("P", 1.0));
  EXPECT_EQ(prompt_context(render_generation_prompt("two\n\nlines", 1.0)), "two\n\nlines");
}

TEST(TargetOutput, MatchesGoldenAndExample) {
  EXPECT_EQ(render_target_output(test_util::golden_record()), test_util::golden("target_output.txt"));
  QuestionRecord r;
  r.answer = "A";
  r.question = "Q?";
  r.distractors = {"B", "C", "D"};
  EXPECT_EQ(render_target_output(r), "<c> A <q> Q? <d1> B <d2> C <d3> D");
}

TEST(ParseOutput, WellFormedAndMissing) {
  const auto ok = parse_model_output("<c> A b <q> Q? <d1> B <d2> C <d3> D\n");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok.value->answer, "A b");
  EXPECT_EQ(ok.value->distractors[2], "D");

  const auto missing = parse_model_output("<c> A <q> Q? <d1> B <d2> C D");
  EXPECT_FALSE(missing);
  EXPECT_EQ(missing.failed_tag, "<d3>");

  const auto empty = parse_model_output("<c> A <q>  <d1> B <d2> C <d3> D");
  EXPECT_EQ(empty.failed_tag, "<q>");

  const auto repeated = parse_model_output("<c> A <q> Q <d1> B <d1> B <d2> C <d3> D");
  EXPECT_EQ(repeated.failed_tag, "<d1>");

  const auto prefix = parse_model_output("Sure! <c> A <q> Q <d1> B <d2> C <d3> D");
  EXPECT_EQ(prefix.failed_tag, "<c>");
}

TEST(ParseOutput, ExactlyOnePermutationParses) {
  std::array<int, 5> perm{0, 1, 2, 3, 4};
  const std::array<std::string, 5> fields{"a", "q", "x", "y", "z"};
  int parsed = 0;
  do {
    std::string s;
    for (int t : perm) s += std::string(kOutputTags[static_cast<std::size_t>(t)]) + " " + fields[static_cast<std::size_t>(t)] + " ";
    const auto res = parse_model_output(s);
    if (res) {
      ++parsed;
      continue;
    }
    // First position whose tag differs from the canonical order.
    std::size_t k = 0;
    while (perm[k] == static_cast<int>(k)) ++k;
    EXPECT_EQ(res.failed_tag, kOutputTags[static_cast<std::size_t>(perm[k])]) << s;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(parsed, 1);
}

TEST(ParseOutput, FuzzedRoundTrip) {
  std::mt19937_64 rng(42);
  for (int k = 0; k < 10000; ++k) {
    QuestionRecord r;
    r.answer = fuzz_field(rng);
    r.question = fuzz_field(rng);
    for (auto& d : r.distractors) d = fuzz_field(rng);
    const auto res = parse_model_output(render_target_output(r));
    ASSERT_TRUE(res) << render_target_output(r);
    EXPECT_EQ(*res.value, (ParsedOutput{r.answer, r.question, r.distractors}));
  }
}

TEST(Validation, RejectsBadRecords) {
  auto r = test_util::record("r1", "p1");
  EXPECT_NO_THROW(validate_record(r));
  auto tag = r;
  tag.question = "what is <q> here";
  EXPECT_THROW(validate_record(tag), ValidationError);
  auto dup = r;
  dup.distractors[1] = dup.distractors[0];
  EXPECT_THROW(validate_record(dup), ValidationError);
  auto same = r;
  same.distractors[2] = same.answer;
  EXPECT_THROW(validate_record(same), ValidationError);
  auto blank = r;
  blank.passage = "  ";
  EXPECT_THROW(validate_record(blank), ValidationError);

  std::vector<QuestionRecord> twice{r, r};
  EXPECT_THROW(validate_corpus(twice), ValidationError);
  auto other = test_util::record("r2", "p1");
  other.passage = "different";
  std::vector<QuestionRecord> mismatch{r, other};
  EXPECT_THROW(validate_corpus(mismatch), ValidationError);
  auto clone = r;
  clone.record_id = "r3";
  std::vector<QuestionRecord> dup_question{r, clone};
  EXPECT_THROW(validate_corpus(dup_question), ValidationError);
}

TEST(FilterQa, Examples) {
  const std::vector<std::pair<std::string, double>> acc{{"a", 0.29}, {"b", 0.30}, {"c", 0.9}, {"d", 0.1}};
  EXPECT_EQ(filter_qa_systems(acc, 0.30), (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(filter_qa_systems(acc, 0.0), (std::vector<std::string>{"a", "b", "c", "d"}));
  EXPECT_TRUE(filter_qa_systems(acc, 0.95).empty());
  const std::vector<std::pair<std::string, double>> bad{{"x", 1.5}};
  EXPECT_THROW(filter_qa_systems(bad, 0.3), std::invalid_argument);
}

TEST(Annotate, Examples) {
  const std::vector<QuestionRecord> rs{test_util::record("r1", "p"), test_util::record("r2", "p"),
                                       test_util::record("r3", "p")};
  const auto items = rasch::ItemParams::from_difficulties({{"r1", -1.0}, {"r2", 0.5}, {"r3", 2.0}});
  const auto ann = annotate_difficulties(rs, items);
  ASSERT_EQ(ann.size(), 3u);
  EXPECT_EQ(ann[1].difficulty, 0.5);

  std::istringstream in(write_jsonl(ann));
  EXPECT_EQ(read_annotated_records(in), ann);

  const auto partial = rasch::ItemParams::from_difficulties({{"r1", -1.0}, {"r3", 2.0}});
  try {
    annotate_difficulties(rs, partial);
    FAIL();
  } catch (const IdListError& e) {
    EXPECT_EQ(e.ids(), std::vector<std::string>{"r2"});
  }
}

TEST(DpoPairs, TwoQuestionPassageAndSingleton) {
  const std::vector<QuestionRecord> rs{test_util::record("a1", "pa"), test_util::record("a2", "pa"),
                                       test_util::record("b1", "pb")};
  const auto set = build_dpo_pairs(annotate_all(rs), 1);
  ASSERT_EQ(set.pairs.size(), 2u);
  EXPECT_EQ(set.pairs[0].dispreferred_record_id, "a2");
  EXPECT_EQ(set.pairs[1].dispreferred_record_id, "a1");
  EXPECT_EQ(set.skipped_record_ids, std::vector<std::string>{"b1"});
  EXPECT_EQ(set.pairs[0].input, render_generation_prompt(rs[0].passage, 0.5));
  EXPECT_TRUE(verify_pairs(set.pairs, rs).empty());
}

TEST(DpoPairs, LargeFixtureInvariants) {
  std::vector<QuestionRecord> rs;
  std::mt19937_64 rng(5);
  std::size_t multi = 0;
  int p = 0;
  while (rs.size() < 1000) {
    const std::size_t k = std::min<std::size_t>(1 + rng() % 5, 1000 - rs.size());
    if (k >= 2) multi += k;
    for (std::size_t q = 0; q < k; ++q) rs.push_back(test_util::record("p" + std::to_string(p) + "q" + std::to_string(q), "p" + std::to_string(p)));
    ++p;
  }
  const auto ann = annotate_all(rs);
  const auto set = build_dpo_pairs(ann, 9);
  EXPECT_EQ(set.pairs.size(), multi);
  EXPECT_EQ(set.pairs.size() + set.skipped_record_ids.size(), rs.size());
  EXPECT_TRUE(verify_pairs(set.pairs, rs).empty());
  for (const auto& pair : set.pairs) EXPECT_NE(pair.preferred, pair.dispreferred);
  EXPECT_EQ(write_jsonl(build_dpo_pairs(ann, 9).pairs), write_jsonl(set.pairs));

  auto shuffled = ann;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::map<std::string, std::string> a, b;
  for (const auto& x : set.pairs) a[x.source_record_id] = x.dispreferred_record_id;
  for (const auto& x : build_dpo_pairs(shuffled, 9).pairs) b[x.source_record_id] = x.dispreferred_record_id;
  EXPECT_EQ(a, b);
}

TEST(VerifyPairs, DetectsViolations) {
  const std::vector<QuestionRecord> rs{test_util::record("a1", "pa"), test_util::record("a2", "pa"),
                                       test_util::record("b1", "pb")};
  auto set = build_dpo_pairs(annotate_all(rs), 1);
  auto bad = set.pairs;
  bad[0].dispreferred_record_id = "b1";
  bad[0].dispreferred = render_target_output(rs[2]);
  bad[1].dispreferred = bad[1].preferred;
  const auto problems = verify_pairs(bad, rs);
  EXPECT_GE(problems.size(), 2u);
}

TEST(Grid, Examples) {
  const auto g = difficulty_grid(-3.0, 3.0, 0.1);
  ASSERT_EQ(g.size(), 61u);
  EXPECT_EQ(g.front(), -3.0);
  EXPECT_EQ(g.back(), 3.0);
  EXPECT_EQ(g[30], 0.0);
  EXPECT_FALSE(std::signbit(g[30]));
  EXPECT_EQ(g[31], 0.1);
  EXPECT_EQ(difficulty_grid(0.0, 0.0, 0.1), std::vector<double>{0.0});
  EXPECT_EQ(difficulty_grid(-1.0, 1.0, 0.5), (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  EXPECT_THROW(difficulty_grid(1.0, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(difficulty_grid(0.0, 1.0, 0.0), std::invalid_argument);
  std::set<std::string> labels;
  for (double b : g) labels.insert(format_difficulty(b));
  EXPECT_EQ(labels.size(), 61u);
}

TEST(Requests, PassageMajor) {
  const std::vector<QuestionRecord> rs{test_util::record("a1", "pa"), test_util::record("a2", "pa"),
                                       test_util::record("b1", "pb")};
  const auto ps = unique_passages(rs);
  ASSERT_EQ(ps.size(), 2u);
  const auto grid = difficulty_grid(-3.0, 3.0, 0.1);
  const auto reqs = make_generation_requests(ps, grid);
  ASSERT_EQ(reqs.size(), 122u);
  EXPECT_EQ(reqs[0].passage_id, "pa");
  EXPECT_EQ(reqs[61].passage_id, "pb");
  EXPECT_EQ(reqs[61].prompt, render_generation_prompt(ps[1].text, -3.0));
  std::istringstream in(write_jsonl(reqs));
  const auto back = read_requests(in);
  ASSERT_EQ(back.size(), reqs.size());
  EXPECT_EQ(back[5].prompt, reqs[5].prompt);
  EXPECT_EQ(back[5].specified_difficulty, reqs[5].specified_difficulty);
}

TEST(FewShot, Examples) {
  std::vector<AnnotatedRecord> rs;
  for (int k = 0; k < 9; ++k) {
    rs.push_back({test_util::record("r" + std::to_string(k), "p" + std::to_string(k)), -2.0 + 2.0 * (k % 3), true});
  }
  const std::vector<double> levels{-2.0, 0.0, 2.0};
  const auto one = select_few_shot_examples(rs, levels, 1, 3);
  ASSERT_EQ(one.size(), 3u);
  const GenerationRequest target{"t", 1.0, render_generation_prompt("target passage", 1.0)};
  const auto prompt = build_few_shot_prompt(one, target);
  EXPECT_TRUE(prompt.ends_with(target.prompt));
  EXPECT_NE(prompt.find("difficulty level of -2.0"), std::string::npos);
  EXPECT_NE(prompt.find("difficulty level of 2.0"), std::string::npos);
  std::size_t blocks = 0;
  for (std::size_t at = prompt.find("### Response:\n"); at != std::string::npos; at = prompt.find("### Response:\n", at + 1)) ++blocks;
  EXPECT_EQ(blocks, 3u);
  EXPECT_THROW(build_few_shot_prompt({}, target), std::invalid_argument);

  std::size_t last = 0;
  for (std::size_t k = 1; k <= 3; ++k) {
    const auto ex = select_few_shot_examples(rs, levels, k, 3);
    const auto len = build_few_shot_prompt(ex, target).size();
    EXPECT_GT(len, last);
    last = len;
  }
}

TEST(Jsonl, RecordsRoundTripAndErrors) {
  const std::vector<QuestionRecord> rs{test_util::golden_record(), test_util::record("r2", "p2")};
  std::istringstream in(write_jsonl(rs));
  EXPECT_EQ(read_records(in), rs);

  std::istringstream bad(write_jsonl(rs) + "{\"record_id\": \"x\"}\n");
  try {
    read_records(bad, "corpus.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream syntax("{not json\n");
  EXPECT_THROW(read_records(syntax), FormatError);
}
