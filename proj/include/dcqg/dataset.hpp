#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcqg/common.hpp"
#include "dcqg/rasch.hpp"
#include "dcqg/text.hpp"

namespace dcqg::dataset {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct QuestionRecord {
  std::string record_id;
  std::string passage_id;
  std::string passage;
  std::string question;
  std::string answer;
  std::array<std::string, 3> distractors;

  bool operator==(const QuestionRecord&) const = default;
};

struct AnnotatedRecord {
  QuestionRecord record;
  double difficulty = 0.0;
  bool converged = true;

  bool operator==(const AnnotatedRecord&) const = default;
};

struct PreferencePair {
  std::string input;
  std::string preferred;
  std::string dispreferred;
  std::string source_record_id;
  std::string dispreferred_record_id;

  bool operator==(const PreferencePair&) const = default;
};

struct GenerationRequest {
  std::string passage_id;
  double specified_difficulty = 0.0;
  std::string prompt;
};

/// Answer, question and three distractors as they appear in a model output.
struct ParsedOutput {
  std::string answer;
  std::string question;
  std::array<std::string, 3> distractors;

  bool operator==(const ParsedOutput&) const = default;
};

struct ParseOutcome {
  std::optional<ParsedOutput> value;
  std::string failed_tag;  // first tag that could not be matched, empty on success
  std::string message;

  explicit operator bool() const noexcept { return value.has_value(); }
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<std::string_view, 5> kOutputTags = {"<c>", "<q>", "<d1>", "<d2>", "<d3>"};

// ---------------------------------------------------------------------------
// Prompt and output formats
// ---------------------------------------------------------------------------

inline constexpr std::string_view kGenerationInstructionHead =
    "### Instruction: Create a question and four options with a difficulty level of ";
inline constexpr std::string_view kGenerationInstructionTail =
    " based on the Context. Option 1 is the correct answer and Options 2, 3, and 4 are distractor options. "
    "The difficulty level -3.0 is the easiest and 3.0 is the most difficult. The output format is "
    "\"<c> Option 1 (Correct Option) <q> Question <d1> Option 2 (Distractor Option) "
    "<d2> Option 3 (Distractor Option) <d3> Option 4 (Distractor Option)\"";

/// Input prompt x for a passage and a target difficulty.
inline std::string render_generation_prompt(std::string_view passage, double b) {
  std::string out;
  out.reserve(passage.size() + 512);
  out += kGenerationInstructionHead;
  out += format_difficulty(b);
  out += kGenerationInstructionTail;
  out += "\n\n### Context: ";
  out += passage;
  out += "\n\n### Response:";
  return out;
}

/// Passage text carried by a generation prompt.
inline std::string prompt_context(std::string_view prompt) {
  constexpr std::string_view open = "\n\n### Context: ";
  constexpr std::string_view close = "\n\n### Response:";
  const auto a = prompt.find(open);
  if (a == std::string_view::npos || !prompt.ends_with(close) || a + open.size() > prompt.size() - close.size()) {
    throw std::invalid_argument("prompt has no context section");
  }
  return std::string(prompt.substr(a + open.size(), prompt.size() - close.size() - a - open.size()));
}

inline std::string render_output(const ParsedOutput& o) {
  std::string out;
  out += "<c> " + o.answer;
  out += " <q> " + o.question;
  out += " <d1> " + o.distractors[0];
  out += " <d2> " + o.distractors[1];
  out += " <d3> " + o.distractors[2];
  return out;
}

/// Target output y: `<c> {a} <q> {q} <d1> {d1} <d2> {d2} <d3> {d3}`.
inline std::string render_target_output(const QuestionRecord& r) {
  return render_output({r.answer, r.question, r.distractors});
}

/// Splits a model output on the five tags, which must each appear exactly
/// once and in order. Only whitespace may precede the first tag. On failure
/// `failed_tag` names the first missing tag, else the first repeated one,
/// else the first tag found out of sequence, else the first empty field.
inline ParseOutcome parse_model_output(std::string_view text) {
  ParseOutcome result;
  auto fail = [&](std::string_view tag, std::string msg) {
    result.failed_tag = std::string(tag);
    result.message = std::move(msg);
    return result;
  };

  std::array<std::size_t, 5> pos{};
  for (std::size_t t = 0; t < kOutputTags.size(); ++t) {
    pos[t] = text.find(kOutputTags[t]);
    if (pos[t] == std::string_view::npos) return fail(kOutputTags[t], "missing tag " + std::string(kOutputTags[t]));
  }
  for (std::size_t t = 0; t < kOutputTags.size(); ++t) {
    if (text.find(kOutputTags[t], pos[t] + 1) != std::string_view::npos) {
      return fail(kOutputTags[t], "tag " + std::string(kOutputTags[t]) + " repeated");
    }
  }
  std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pos[a] < pos[b]; });
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (order[k] != k) {
      const auto tag = kOutputTags[order[k]];
      return fail(tag, "tag " + std::string(tag) + " out of order");
    }
  }
  if (!text::trim(text.substr(0, pos[0])).empty()) return fail(kOutputTags[0], "unexpected text before <c>");

  std::array<std::string, 5> fields;
  for (std::size_t t = 0; t < 5; ++t) {
    const std::size_t start = pos[t] + kOutputTags[t].size();
    const std::size_t end = (t + 1 < 5) ? pos[t + 1] : text.size();
    fields[t] = std::string(text::trim(text.substr(start, end - start)));
    if (fields[t].empty()) return fail(kOutputTags[t], "empty field after " + std::string(kOutputTags[t]));
  }
  result.value = ParsedOutput{fields[0], fields[1], {fields[2], fields[3], fields[4]}};
  return result;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline bool contains_reserved_tag(std::string_view s) {
  return std::any_of(kOutputTags.begin(), kOutputTags.end(),
                     [&](std::string_view tag) { return s.find(tag) != std::string_view::npos; });
}

inline void validate_record(const QuestionRecord& r) {
  const std::string where = "record " + (r.record_id.empty() ? std::string("<no id>") : r.record_id) + ": ";
  if (r.record_id.empty()) throw ValidationError(where + "empty record_id");
  if (r.passage_id.empty()) throw ValidationError(where + "empty passage_id");
  const std::array<std::pair<const char*, const std::string*>, 6> fields = {{{"passage", &r.passage},
                                                                            {"question", &r.question},
                                                                            {"answer", &r.answer},
                                                                            {"distractors[0]", &r.distractors[0]},
                                                                            {"distractors[1]", &r.distractors[1]},
                                                                            {"distractors[2]", &r.distractors[2]}}};
  for (const auto& [name, value] : fields) {
    if (text::trim(*value).empty()) throw ValidationError(where + "empty " + name);
    if (contains_reserved_tag(*value)) throw ValidationError(where + name + " contains a reserved tag");
  }
  const auto& d = r.distractors;
  if (d[0] == d[1] || d[0] == d[2] || d[1] == d[2]) throw ValidationError(where + "distractors are not distinct");
  if (d[0] == r.answer || d[1] == r.answer || d[2] == r.answer) {
    throw ValidationError(where + "a distractor equals the correct option");
  }
}

/// Record-level checks plus corpus-level ones: unique record ids, one
/// passage text per passage_id, no exact duplicate questions per passage.
inline void validate_corpus(std::span<const QuestionRecord> records) {
  std::set<std::string> ids;
  std::map<std::string, const std::string*> passages;
  std::set<std::pair<std::string, std::string>> outputs;
  for (const auto& r : records) {
    validate_record(r);
    if (!ids.insert(r.record_id).second) throw ValidationError("duplicate record_id " + r.record_id);
    auto [it, fresh] = passages.emplace(r.passage_id, &r.passage);
    if (!fresh && *it->second != r.passage) {
      throw ValidationError("record " + r.record_id + ": passage text differs from earlier records of passage " +
                            r.passage_id);
    }
    if (!outputs.emplace(r.passage_id, render_target_output(r)).second) {
      throw ValidationError("record " + r.record_id + ": duplicate question within passage " + r.passage_id);
    }
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Keeps ids whose accuracy is at least `threshold`, in input order.
inline std::vector<std::string> filter_qa_systems(std::span<const std::pair<std::string, double>> accuracies,
                                                  double threshold) {
  std::vector<std::string> kept;
  for (const auto& [id, acc] : accuracies) {
    if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("accuracy of " + id + " is outside [0, 1]");
    if (acc >= threshold) kept.push_back(id);
  }
  return kept;
}

inline std::vector<AnnotatedRecord> annotate_difficulties(std::span<const QuestionRecord> records,
                                                          const rasch::ItemParams& items) {
  std::vector<AnnotatedRecord> out;
  std::vector<std::string> missing;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = items.items.find(r.record_id);
    if (it == items.items.end()) {
      missing.push_back(r.record_id);
      continue;
    }
    out.push_back({r, it->second.b, it->second.converged});
  }
  if (!missing.empty()) throw IdListError("records without a difficulty estimate", missing);
  return out;
}

struct DpoPairSet {
  std::vector<PreferencePair> pairs;
  std::vector<std::string> skipped_record_ids;  // passages with a single question
};

/// For each record, y_w is its own rendered output and y_l the output of a
/// uniformly drawn other question on the same passage. The draw for a record
/// depends only on (seed, record_id), so input order does not affect it.
inline DpoPairSet build_dpo_pairs(std::span<const AnnotatedRecord> records, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_passage;
  for (std::size_t i = 0; i < records.size(); ++i) by_passage[records[i].record.passage_id].push_back(i);

  DpoPairSet out;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::string preferred = render_target_output(rec.record);
    candidates.clear();
    for (std::size_t j : by_passage[rec.record.passage_id]) {
      if (j != i && render_target_output(records[j].record) != preferred) candidates.push_back(j);
    }
    if (candidates.empty()) {
      out.skipped_record_ids.push_back(rec.record.record_id);
      continue;
    }
    // Draw over candidates sorted by record_id.
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
      return records[a].record.record_id < records[b].record.record_id;
    });
    std::mt19937_64 rng(derive_seed(seed, rec.record.record_id));
    const auto& other = records[candidates[rng() % candidates.size()]];
    out.pairs.push_back({render_generation_prompt(rec.record.passage, rec.difficulty), preferred,
                         render_target_output(other.record), rec.record.record_id, other.record.record_id});
  }
  return out;
}

/// Inclusive arithmetic sequence min, min + step, ..., max. Values are
/// rounded to 1e-9 so decimal grids come out exact (e.g. 0.1 steps).
inline std::vector<double> difficulty_grid(double min, double max, double step) {
  require_finite(min, "min");
  require_finite(max, "max");
  require_finite(step, "step");
  if (!(step > 0.0)) throw std::invalid_argument("grid step must be positive");
  if (min > max) throw std::invalid_argument("grid min must not exceed max");
  const auto count = static_cast<std::size_t>(std::floor((max - min) / step + 1e-9)) + 1;
  std::vector<double> grid(count);
  for (std::size_t k = 0; k < count; ++k) {
    double v = std::round((min + static_cast<double>(k) * step) * 1e9) / 1e9;
    if (v == 0.0) v = 0.0;  // drop negative zero
    grid[k] = v;
  }
  return grid;
}

struct Passage {
  std::string passage_id;
  std::string text;
};

/// Distinct passages in first-appearance order.
inline std::vector<Passage> unique_passages(std::span<const QuestionRecord> records) {
  std::vector<Passage> out;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.passage_id).second) out.push_back({r.passage_id, r.passage});
  }
  return out;
}

/// One request per (passage, grid value), passage-major.
inline std::vector<GenerationRequest> make_generation_requests(std::span<const Passage> passages,
                                                               std::span<const double> grid) {
  std::vector<GenerationRequest> out;
  out.reserve(passages.size() * grid.size());
  for (const auto& p : passages) {
    for (double b : grid) out.push_back({p.passage_id, b, render_generation_prompt(p.text, b)});
  }
  return out;
}

struct FewShotExample {
  std::string input;
  std::string output;
};

/// Example blocks (prompt, newline, output) followed by the target prompt,
/// separated by blank lines.
inline std::string build_few_shot_prompt(std::span<const FewShotExample> examples, const GenerationRequest& target) {
  if (examples.empty()) throw std::invalid_argument("few-shot prompt needs at least one example");
  std::string out;
  for (const auto& ex : examples) {
    out += ex.input;
    out += '\n';
    out += ex.output;
    out += "\n\n";
  }
  out += target.prompt;
  return out;
}

/// `shots` groups of examples, one per level in each group, drawn without
/// replacement from the records nearest each level.
inline std::vector<FewShotExample> select_few_shot_examples(std::span<const AnnotatedRecord> records,
                                                            std::span<const double> levels, std::size_t shots,
                                                            std::uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("no records to draw few-shot examples from");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> pools;
  for (double level : levels) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (std::abs(records[i].difficulty - level) <= 0.05 + 1e-12) pool.push_back(i);
    }
    if (pool.size() < shots) {
      std::vector<std::size_t> order(records.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(records[a].difficulty - level) < std::abs(records[b].difficulty - level);
      });
      order.resize(std::min(order.size(), shots));
      pool = order;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pools.push_back(std::move(pool));
  }
  std::vector<FewShotExample> out;
  for (std::size_t s = 0; s < shots; ++s) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto& rec = records[pools[l][s % pools[l].size()]];
      out.push_back({render_generation_prompt(rec.record.passage, levels[l]), render_target_output(rec.record)});
    }
  }
  return out;
}

/// Post-hoc check of a pair file against its corpus. Returns one message per
/// violated invariant; empty means every pair is valid.
inline std::vector<std::string> verify_pairs(std::span<const PreferencePair> pairs,
                                             std::span<const QuestionRecord> records) {
  std::map<std::string, const QuestionRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;
  std::vector<std::string> problems;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    const std::string where = "pair " + std::to_string(k + 1) + ": ";
    auto src = by_id.find(p.source_record_id);
    auto dis = by_id.find(p.dispreferred_record_id);
    if (src == by_id.end() || dis == by_id.end()) {
      problems.push_back(where + "unknown record id");
      continue;
    }
    if (p.source_record_id == p.dispreferred_record_id) problems.push_back(where + "source and dispreferred records are the same");
    if (src->second->passage_id != dis->second->passage_id) problems.push_back(where + "records come from different passages");
    if (p.preferred == p.dispreferred) problems.push_back(where + "preferred equals dispreferred");
    if (p.preferred != render_target_output(*src->second)) problems.push_back(where + "preferred output does not match source record");
    if (p.dispreferred != render_target_output(*dis->second)) problems.push_back(where + "dispreferred output does not match its record");
    if (p.input.find("\n\n### Context: " + src->second->passage + "\n\n### Response:") == std::string::npos) {
      problems.push_back(where + "input prompt does not carry the source passage");
    }
  }
  return problems;
}

}  // namespace dcqg::dataset
