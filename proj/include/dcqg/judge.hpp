#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcqg/common.hpp"
#include "dcqg/generated.hpp"
#include "dcqg/stats.hpp"
#include "dcqg/text.hpp"

namespace dcqg::judge {

enum class Criterion { fluency, relevance, answerability, reasoning_type };

inline constexpr std::array<Criterion, 4> kAllCriteria = {Criterion::fluency, Criterion::relevance,
                                                           Criterion::answerability, Criterion::reasoning_type};

inline std::string_view criterion_name(Criterion c) {
  switch (c) {
    case Criterion::fluency: return "fluency";
    case Criterion::relevance: return "relevance";
    case Criterion::answerability: return "answerability";
    case Criterion::reasoning_type: return "reasoning_type";
  }
  return "unknown";
}

inline Criterion parse_criterion(std::string_view s) {
  for (auto c : kAllCriteria) {
    if (criterion_name(c) == s) return c;
  }
  throw std::invalid_argument("unknown criterion '" + std::string(s) + "'");
}

/// Highest valid score per numeric criterion (scores run 0..max).
inline int max_score(Criterion c) {
  switch (c) {
    case Criterion::fluency: return 2;
    case Criterion::relevance:
    case Criterion::answerability: return 1;
    case Criterion::reasoning_type: return -1;
  }
  return -1;
}

/// Reasoning categories, simplest first.
inline constexpr std::array<std::string_view, 4> kReasoningTypes = {
    "Word matching", "Paraphrasing", "Single-sentence reasoning", "Multi-sentence reasoning"};

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

inline constexpr std::string_view kFluencyHead =
    "The following are the text to be comprehended, the corresponding question, and the options. Please evaluate "
    "whether the question is fluent to the reading passage on a scale of three: appropriate, acceptable or "
    "inappropriate. If appropriate, output \"2\"; acceptable, output \"1\"; if inappropriate, output \"0\".";

inline constexpr std::string_view kRelevanceHead =
    "The following are the text to be comprehended, the corresponding question, and the options. Please evaluate "
    "whether the question is relevant to the reading passage on a scale of two: appropriate or inappropriate. If "
    "appropriate, output  \"1\", and if inappropriate, output \"0\".";

inline constexpr std::string_view kAnswerabilityHead =
    "The following are the text to be comprehended, the corresponding question, and the options. If there is only "
    "one correct answer among the options, output \"1\". If there are two or more correct answers or no correct "
    "answer at all, output \"0\". Additionally, provide the reason.";

inline constexpr std::string_view kReasoningHead =
    "Read the provided definitions carefully and determine how the following question relates to the given "
    "context. Classify the relationship by selecting exactly one category from among the provided options. Your "
    "response should contain only the exact category name, without any additional explanation.\n"
    "\n"
    "### Definitions:\n"
    "Word matching: The question exactly matches a span in the article. The answer is self-evident.\n"
    "Paraphrasing: The question is entailed or paraphrased by exactly one sentence in the passage. The answer can "
    "be extracted within the sentence.\n"
    "Single-sentence reasoning: The answer can be inferred from a single sentence of the article by recognizing "
    "incomplete information or conceptual overlap.\n"
    "Multi-sentence reasoning: The answer must be inferred by synthesizing information distributed across "
    "multiple sentences.";

inline std::string_view prompt_head(Criterion c) {
  switch (c) {
    case Criterion::fluency: return kFluencyHead;
    case Criterion::relevance: return kRelevanceHead;
    case Criterion::answerability: return kAnswerabilityHead;
    case Criterion::reasoning_type: return kReasoningHead;
  }
  return {};
}

struct JudgePrompt {
  std::string text;
  // option_order[label] is the source option shown under label A..D:
  // 0 = correct option, 1..3 = distractors d1..d3.
  std::array<int, 4> option_order{0, 1, 2, 3};

  char correct_label() const {
    for (int k = 0; k < 4; ++k) {
      if (option_order[static_cast<std::size_t>(k)] == 0) return static_cast<char>('A' + k);
    }
    return '?';
  }
};

/// Option permutation for one question: Fisher-Yates driven by a generator
/// seeded from (seed, question_id).
inline std::array<int, 4> option_permutation(std::uint64_t seed, std::string_view question_id) {
  std::array<int, 4> order{0, 1, 2, 3};
  std::mt19937_64 rng(derive_seed(seed, question_id));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

inline std::string render_judge_text(Criterion criterion, std::string_view passage, const dataset::ParsedOutput& q,
                                     const std::array<int, 4>& order) {
  const std::array<const std::string*, 4> options = {&q.answer, &q.distractors[0], &q.distractors[1],
                                                     &q.distractors[2]};
  std::string out(prompt_head(criterion));
  out += "\n### Context: ";
  out += passage;
  out += "\n### Question: ";
  out += q.question;
  out += "\n### Options:";
  for (std::size_t k = 0; k < 4; ++k) {
    out += '\n';
    out += static_cast<char>('A' + k);
    out += ". ";
    out += *options[static_cast<std::size_t>(order[k])];
  }
  return out;
}

/// Judge prompt for a parsed question with options shuffled per question.
inline JudgePrompt render_judge_prompt(Criterion criterion, const GeneratedQuestion& question, std::uint64_t seed) {
  if (!question.parsed) throw std::invalid_argument("question " + question.question_id + " did not parse");
  JudgePrompt p;
  p.option_order = option_permutation(seed, question.question_id);
  p.text = render_judge_text(criterion, question.passage, *question.parsed, p.option_order);
  return p;
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

struct JudgeVerdict {
  Criterion criterion = Criterion::fluency;
  std::string raw;
  std::optional<int> score;          // numeric criteria
  std::optional<std::string> category;  // reasoning_type

  bool parsed() const noexcept { return score.has_value() || category.has_value(); }
};

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Last run of digits that is not glued to letters, digits or a decimal point.
// A minus sign directly in front (and not after an alphanumeric) negates it.
inline std::optional<long> last_standalone_integer(std::string_view s) {
  std::optional<long> found;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_digit(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_digit(s[j])) ++j;
    const bool left_ok = i == 0 || (!is_alnum(s[i - 1]) && !(s[i - 1] == '.' && i >= 2 && is_digit(s[i - 2])));
    const bool right_ok = j == s.size() || (!is_alnum(s[j]) && !(s[j] == '.' && j + 1 < s.size() && is_digit(s[j + 1])));
    if (left_ok && right_ok && j - i <= 9) {
      const bool negative = i >= 1 && s[i - 1] == '-' && (i == 1 || !is_alnum(s[i - 2]));
      found = (negative ? -1 : 1) * std::stol(std::string(s.substr(i, j - i)));
    }
    i = j;
  }
  return found;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// Numeric criteria take the last standalone integer and require it to be in
/// range. Reasoning type accepts a response that is exactly one category name
/// (case-insensitive; surrounding whitespace, quotes and a final period are
/// ignored).
inline JudgeVerdict parse_judge_verdict(Criterion criterion, std::string_view raw) {
  JudgeVerdict v{criterion, std::string(raw), std::nullopt, std::nullopt};
  if (criterion != Criterion::reasoning_type) {
    const auto n = detail::last_standalone_integer(raw);
    if (n && *n >= 0 && *n <= max_score(criterion)) v.score = static_cast<int>(*n);
    return v;
  }
  std::string_view t = text::trim(raw);
  while (!t.empty() && (t.front() == '"' || t.front() == '\'' || t.front() == '*')) t.remove_prefix(1);
  while (!t.empty() && (t.back() == '"' || t.back() == '\'' || t.back() == '*' || t.back() == '.')) t.remove_suffix(1);
  const std::string norm = detail::lower(text::trim(t));
  for (auto cat : kReasoningTypes) {
    if (norm == detail::lower(cat)) {
      v.category = std::string(cat);
      return v;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct QualitySummary {
  Criterion criterion = Criterion::fluency;
  std::optional<double> mean;
  std::optional<double> sd;  // population
  std::size_t parsed = 0;
  std::size_t unparseable = 0;
};

/// Mean and population standard deviation of parsed scores for each numeric
/// criterion that occurs in `verdicts`; unparseable verdicts are counted, not
/// averaged.
inline std::vector<QualitySummary> aggregate_quality(std::span<const JudgeVerdict> verdicts) {
  std::vector<QualitySummary> out;
  for (auto c : {Criterion::fluency, Criterion::relevance, Criterion::answerability}) {
    std::vector<double> scores;
    std::size_t bad = 0, seen = 0;
    for (const auto& v : verdicts) {
      if (v.criterion != c) continue;
      ++seen;
      if (v.score) scores.push_back(static_cast<double>(*v.score));
      else ++bad;
    }
    if (seen == 0) continue;
    QualitySummary s{c, std::nullopt, std::nullopt, scores.size(), bad};
    if (!scores.empty()) {
      s.mean = stats::mean(scores);
      s.sd = stats::population_sd(scores);
    }
    out.push_back(s);
  }
  return out;
}

/// Share of each category among parsed reasoning-type verdicts. Every
/// category is present in the result; all zero when nothing parsed.
inline std::map<std::string, double> reasoning_type_distribution(std::span<const JudgeVerdict> verdicts) {
  std::map<std::string, double> out;
  for (auto cat : kReasoningTypes) out[std::string(cat)] = 0.0;
  std::size_t n = 0;
  for (const auto& v : verdicts) {
    if (v.criterion != Criterion::reasoning_type || !v.category) continue;
    out[*v.category] += 1.0;
    ++n;
  }
  if (n > 0) {
    for (auto& [k, val] : out) val /= static_cast<double>(n);
  }
  return out;
}

}  // namespace dcqg::judge
