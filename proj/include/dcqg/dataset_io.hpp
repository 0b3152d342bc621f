#pragma once

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcqg/common.hpp"
#include "dcqg/dataset.hpp"
#include "dcqg/text.hpp"

namespace dcqg::dataset {

using ordered_json = nlohmann::ordered_json;

/// Calls `fn(json, line_no)` for every non-blank line; JSON syntax errors
/// and exceptions thrown by `fn` are reported with the line number.
template <class Fn>
void for_each_jsonl(std::istream& in, const std::string& source, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    text::strip_cr(line);
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(source, line_no, e.what());
    }
  }
}

inline ordered_json to_json(const QuestionRecord& r) {
  ordered_json j;
  j["record_id"] = r.record_id;
  j["passage_id"] = r.passage_id;
  j["passage"] = r.passage;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["distractors"] = {r.distractors[0], r.distractors[1], r.distractors[2]};
  return j;
}

inline ordered_json to_json(const AnnotatedRecord& r) {
  ordered_json j = to_json(r.record);
  j["difficulty"] = r.difficulty;
  j["converged"] = r.converged;
  return j;
}

inline QuestionRecord record_from_json(const nlohmann::json& j) {
  QuestionRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.passage_id = j.at("passage_id").get<std::string>();
  r.passage = j.at("passage").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  const auto& d = j.at("distractors");
  if (!d.is_array() || d.size() != 3) throw ValidationError("distractors must be an array of exactly 3 strings");
  for (std::size_t k = 0; k < 3; ++k) r.distractors[k] = d[k].get<std::string>();
  return r;
}

/// Reads question records; `difficulty`, when present, is ignored here.
inline std::vector<QuestionRecord> read_records(std::istream& in, const std::string& source = "<input>") {
  std::vector<QuestionRecord> out;
  for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    out.push_back(record_from_json(j));
    validate_record(out.back());
  });
  try {
    validate_corpus(out);
  } catch (const ValidationError& e) {
    throw FormatError(source, 0, e.what());
  }
  return out;
}

inline std::vector<AnnotatedRecord> read_annotated_records(std::istream& in, const std::string& source = "<input>") {
  std::vector<AnnotatedRecord> out;
  for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    AnnotatedRecord a;
    a.record = record_from_json(j);
    validate_record(a.record);
    a.difficulty = j.at("difficulty").get<double>();
    if (!std::isfinite(a.difficulty) || a.difficulty < kLogitMin || a.difficulty > kLogitMax) {
      throw ValidationError("difficulty outside [-6, 6]");
    }
    a.converged = j.value("converged", true);
    out.push_back(std::move(a));
  });
  return out;
}

template <class T>
std::string write_jsonl(const std::vector<T>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline ordered_json to_json(const PreferencePair& p) {
  ordered_json j;
  j["input"] = p.input;
  j["preferred"] = p.preferred;
  j["dispreferred"] = p.dispreferred;
  j["source_record_id"] = p.source_record_id;
  j["dispreferred_record_id"] = p.dispreferred_record_id;
  return j;
}

inline std::vector<PreferencePair> read_pairs(std::istream& in, const std::string& source = "<input>") {
  std::vector<PreferencePair> out;
  for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.at("input").get<std::string>(), j.at("preferred").get<std::string>(),
                   j.at("dispreferred").get<std::string>(), j.at("source_record_id").get<std::string>(),
                   j.at("dispreferred_record_id").get<std::string>()});
  });
  return out;
}

inline ordered_json to_json(const GenerationRequest& r) {
  ordered_json j;
  j["passage_id"] = r.passage_id;
  j["specified_difficulty"] = r.specified_difficulty;
  j["prompt"] = r.prompt;
  return j;
}

inline std::vector<GenerationRequest> read_requests(std::istream& in, const std::string& source = "<input>") {
  std::vector<GenerationRequest> out;
  for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.at("passage_id").get<std::string>(), j.at("specified_difficulty").get<double>(),
                   j.at("prompt").get<std::string>()});
  });
  return out;
}

}  // namespace dcqg::dataset
