#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dcqg/common.hpp"
#include "dcqg/rasch.hpp"
#include "dcqg/text.hpp"

namespace dcqg::rasch {

/// Reads `responder_id,item_id,outcome` rows (outcome 1 or 0). Ids keep
/// first-appearance order; absent pairs stay missing.
inline ResponseMatrix read_response_csv(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  struct Row {
    std::size_t r, i;
    Outcome o;
    std::size_t line;
  };
  std::vector<std::string> rids, iids;
  std::unordered_map<std::string, std::size_t> rindex, iindex;
  std::vector<Row> rows;

  while (std::getline(in, line)) {
    ++line_no;
    text::strip_cr(line);
    if (text::trim(line).empty()) continue;
    const auto fields = text::split(line, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || text::trim(fields[0]) != "responder_id" || text::trim(fields[1]) != "item_id" ||
          text::trim(fields[2]) != "outcome") {
        throw FormatError(source, line_no, "expected header 'responder_id,item_id,outcome'");
      }
      continue;
    }
    if (fields.size() != 3) throw FormatError(source, line_no, "expected 3 comma-separated fields");
    const std::string rid(text::trim(fields[0]));
    const std::string iid(text::trim(fields[1]));
    const std::string_view val = text::trim(fields[2]);
    if (rid.empty() || iid.empty()) throw FormatError(source, line_no, "empty id");
    Outcome o;
    if (val == "1") o = Outcome::correct;
    else if (val == "0") o = Outcome::incorrect;
    else throw FormatError(source, line_no, "outcome must be 1 or 0, got '" + std::string(val) + "'");

    auto [rit, rnew] = rindex.emplace(rid, rids.size());
    if (rnew) rids.push_back(rid);
    auto [iit, inew] = iindex.emplace(iid, iids.size());
    if (inew) iids.push_back(iid);
    rows.push_back({rit->second, iit->second, o, line_no});
  }
  if (rows.empty()) throw FormatError(source, line_no, "no responses");

  ResponseMatrix m(std::move(rids), std::move(iids));
  for (const auto& row : rows) {
    if (m.at(row.r, row.i) != Outcome::missing) {
      throw FormatError(source, row.line, "duplicate response for (" + m.responder_ids()[row.r] + ", " +
                                              m.item_ids()[row.i] + ")");
    }
    m.set(row.r, row.i, row.o);
  }
  return m;
}

inline ResponseMatrix read_response_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_response_csv(in, path);
}

inline std::string write_response_csv(const ResponseMatrix& m) {
  std::ostringstream out;
  out << "responder_id,item_id,outcome\n";
  for (std::size_t r = 0; r < m.num_responders(); ++r) {
    for (std::size_t i = 0; i < m.num_items(); ++i) {
      const Outcome o = m.at(r, i);
      if (o == Outcome::missing) continue;
      out << m.responder_ids()[r] << ',' << m.item_ids()[i] << ',' << (o == Outcome::correct ? '1' : '0') << '\n';
    }
  }
  return out.str();
}

/// `{"items": {id: {b, se, converged, clamped}}, "responders": {id: {theta, clamped}}}`
inline nlohmann::json params_to_json(const ItemParams& items, const AbilityParams& abilities) {
  nlohmann::json j;
  j["items"] = nlohmann::json::object();
  j["responders"] = nlohmann::json::object();
  for (const auto& [id, e] : items.items) {
    nlohmann::json it{{"b", e.b}, {"converged", e.converged}, {"clamped", e.clamped}};
    it["se"] = e.standard_error ? nlohmann::json(*e.standard_error) : nlohmann::json(nullptr);
    j["items"][id] = std::move(it);
  }
  for (const auto& [id, a] : abilities.responders) {
    j["responders"][id] = {{"theta", a.theta}, {"clamped", a.clamped}};
  }
  return j;
}

inline ItemParams items_from_json(const nlohmann::json& j) {
  ItemParams p;
  if (!j.contains("items")) return p;
  for (const auto& [id, v] : j.at("items").items()) {
    ItemEstimate e;
    e.b = v.at("b").get<double>();
    if (v.contains("se") && !v.at("se").is_null()) e.standard_error = v.at("se").get<double>();
    e.converged = v.value("converged", true);
    e.clamped = v.value("clamped", false);
    p.converged = p.converged && e.converged;
    p.items[id] = e;
  }
  return p;
}

inline AbilityParams abilities_from_json(const nlohmann::json& j) {
  AbilityParams p;
  if (!j.contains("responders")) return p;
  for (const auto& [id, v] : j.at("responders").items()) {
    p.responders[id] = {v.at("theta").get<double>(), v.value("clamped", false)};
  }
  return p;
}

}  // namespace dcqg::rasch
