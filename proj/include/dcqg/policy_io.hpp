#pragma once

#include <cstdio>
#include <istream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcqg/dataset_io.hpp"
#include "dcqg/policy.hpp"

namespace dcqg::policy {

/// Checkpoint: vocabulary, eos, context order, max length and the logit
/// table nested as [context][state][token].
inline nlohmann::ordered_json checkpoint_to_json(const ToyPolicy& p) {
  nlohmann::ordered_json j;
  j["vocabulary"] = p.vocabulary().tokens();
  j["eos"] = p.vocabulary().token(p.vocabulary().eos());
  j["context_order"] = p.context_order();
  j["max_length"] = p.max_length();
  j["num_contexts"] = p.num_contexts();
  auto table = nlohmann::ordered_json::array();
  for (int x = 0; x < p.num_contexts(); ++x) {
    auto states = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < p.num_states(); ++s) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t v = 0; v < p.vocab_size(); ++v) row.push_back(p.logit(x, s, static_cast<int>(v)));
      states.push_back(std::move(row));
    }
    table.push_back(std::move(states));
  }
  j["logits"] = std::move(table);
  return j;
}

inline ToyPolicy checkpoint_from_json(const nlohmann::json& j) {
  TokenVocabulary vocab(j.at("vocabulary").get<std::vector<std::string>>(), j.at("eos").get<std::string>());
  ToyPolicy p(std::move(vocab), j.at("max_length").get<int>(), j.at("context_order").get<int>(),
              j.value("num_contexts", 1));
  const auto& table = j.at("logits");
  if (table.size() != static_cast<std::size_t>(p.num_contexts())) throw std::invalid_argument("logit table: wrong context count");
  for (int x = 0; x < p.num_contexts(); ++x) {
    const auto& states = table.at(static_cast<std::size_t>(x));
    if (states.size() != p.num_states()) throw std::invalid_argument("logit table: wrong state count");
    for (std::size_t s = 0; s < p.num_states(); ++s) {
      const auto& row = states.at(s);
      if (row.size() != p.vocab_size()) throw std::invalid_argument("logit table: wrong row width");
      for (std::size_t v = 0; v < p.vocab_size(); ++v) {
        const double val = row.at(v).get<double>();
        if (!std::isfinite(val)) throw std::invalid_argument("logit table: non-finite logit");
        p.logit(x, s, static_cast<int>(v)) = val;
      }
    }
  }
  return p;
}

/// `step,loss,mean_margin`; the margin column is empty for SFT runs.
inline std::string training_log_csv(const std::vector<LogRow>& log) {
  std::string out = "step,loss,mean_margin\n";
  char buf[128];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,", row.step, row.loss);
    out += buf;
    if (row.mean_margin) {
      std::snprintf(buf, sizeof buf, "%.17g", *row.mean_margin);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// SFT lines: `{"context": 0, "tokens": ["t0", "<eos>"]}`.
inline std::vector<Example> read_sft_examples(std::istream& in, const TokenVocabulary& vocab,
                                              const std::string& source = "<input>") {
  std::vector<Example> out;
  dataset::for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.value("context", 0), vocab.encode(j.at("tokens").get<std::vector<std::string>>())});
  });
  return out;
}

/// DPO lines: `{"context": 0, "preferred": [...], "dispreferred": [...]}`.
inline std::vector<TokenPreferencePair> read_token_pairs(std::istream& in, const TokenVocabulary& vocab,
                                                         const std::string& source = "<input>") {
  std::vector<TokenPreferencePair> out;
  dataset::for_each_jsonl(in, source, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.value("context", 0), vocab.encode(j.at("preferred").get<std::vector<std::string>>()),
                   vocab.encode(j.at("dispreferred").get<std::vector<std::string>>())});
  });
  return out;
}

inline std::string write_token_pairs(const std::vector<TokenPreferencePair>& pairs, const TokenVocabulary& vocab) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["context"] = p.context;
    j["preferred"] = vocab.decode(p.preferred);
    j["dispreferred"] = vocab.decode(p.dispreferred);
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace dcqg::policy
