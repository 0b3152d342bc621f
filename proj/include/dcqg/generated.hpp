#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcqg/dataset.hpp"
#include "dcqg/dataset_io.hpp"

namespace dcqg {

/// One generation for a (passage, specified difficulty) request. `parsed` is
/// set iff `output` parses; `latent_difficulty` is known only for simulated
/// generators.
struct GeneratedQuestion {
  std::string question_id;
  std::string passage_id;
  std::string passage;
  double specified_difficulty = 0.0;
  std::string output;
  std::optional<dataset::ParsedOutput> parsed;
  std::optional<double> latent_difficulty;

  static GeneratedQuestion make(std::string question_id, std::string passage_id, std::string passage,
                                double specified_difficulty, std::string output,
                                std::optional<double> latent = std::nullopt) {
    GeneratedQuestion q{std::move(question_id), std::move(passage_id), std::move(passage), specified_difficulty,
                        std::move(output), std::nullopt, latent};
    q.parsed = dataset::parse_model_output(q.output).value;
    return q;
  }
};

inline nlohmann::ordered_json to_json(const GeneratedQuestion& q) {
  nlohmann::ordered_json j;
  j["question_id"] = q.question_id;
  j["passage_id"] = q.passage_id;
  j["passage"] = q.passage;
  j["specified_difficulty"] = q.specified_difficulty;
  j["output"] = q.output;
  if (q.latent_difficulty) j["latent_difficulty"] = *q.latent_difficulty;
  return j;
}

inline std::string write_questions_jsonl(const std::vector<GeneratedQuestion>& qs) {
  std::string out;
  for (const auto& q : qs) out += to_json(q).dump() + "\n";
  return out;
}

inline std::vector<GeneratedQuestion> read_questions(std::istream& in, const std::string& source = "<input>") {
  std::vector<GeneratedQuestion> out;
  dataset::for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    std::optional<double> latent;
    if (j.contains("latent_difficulty") && !j.at("latent_difficulty").is_null()) {
      latent = j.at("latent_difficulty").get<double>();
    }
    out.push_back(GeneratedQuestion::make(j.at("question_id").get<std::string>(), j.at("passage_id").get<std::string>(),
                                          j.value("passage", std::string{}), j.at("specified_difficulty").get<double>(),
                                          j.at("output").get<std::string>(), latent));
  });
  return out;
}

}  // namespace dcqg
