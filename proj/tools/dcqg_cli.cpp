#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcqg/dcqg.hpp"
#include "dcqg/judge_client.hpp"

namespace fs = std::filesystem;
using namespace dcqg;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ifstream open_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what + " path");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + what + " file '" + path + "'");
  return in;
}

nlohmann::json read_json_file(const std::string& path, const std::string& what) {
  auto in = open_input(path, what);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty()) throw UsageError("missing output path");
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  text::write_file_checked(path, content);
  std::cerr << "wrote " << path << "\n";
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  auto in = open_input(path, "config");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    text::strip_cr(line);
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError(path, line_no, "expected key = value");
    const std::string key(text::trim(t.substr(0, eq)));
    std::string value(text::trim(t.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw FormatError(path, line_no, "empty key");
    out.emplace_back(key, value);
  }
  return out;
}

bool any_app_has_option(CLI::App* app, const std::string& name) {
  if (app->get_option_no_throw(name) != nullptr) return true;
  for (auto* sub : app->get_subcommands([](CLI::App*) { return true; })) {
    if (any_app_has_option(sub, name)) return true;
  }
  return false;
}

// Fills options not given on the command line from the config file. Keys
// belonging to other subcommands are ignored; keys unknown everywhere fail.
void apply_config(CLI::App& app, const std::string& path) {
  std::vector<CLI::App*> chain{&app};
  while (true) {
    auto subs = chain.back()->get_subcommands();
    if (subs.empty()) break;
    chain.push_back(subs.front());
  }
  for (const auto& [key, value] : read_config(path)) {
    const std::string name = "--" + key;
    if (key == "config") throw UsageError(path + ": config files cannot include other config files");
    CLI::Option* opt = nullptr;
    for (auto it = chain.rbegin(); it != chain.rend() && opt == nullptr; ++it) opt = (*it)->get_option_no_throw(name);
    if (opt == nullptr) {
      if (!any_app_has_option(&app, name)) throw UsageError(path + ": unknown config key '" + key + "'");
      continue;
    }
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string matrix, out, truth;
  std::size_t nodes = 41;
  double tolerance = 1e-4;
  int max_iterations = 500;
};

int cmd_calibrate(const CalibrateArgs& a) {
  require(a.matrix, "--matrix");
  require(a.out, "--out");
  open_input(a.matrix, "response matrix");
  const auto matrix = rasch::read_response_csv_file(a.matrix);
  const auto grid = rasch::QuadratureGrid::standard_normal(a.nodes);
  const auto items = rasch::estimate_difficulties_mml(matrix, grid, {a.tolerance, a.max_iterations});
  const auto abilities = rasch::estimate_abilities_mle(matrix, items);
  write_output(a.out, rasch::params_to_json(items, abilities).dump(2) + "\n");

  std::size_t clamped = 0;
  for (const auto& [id, e] : items.items) clamped += e.clamped;
  std::cout << "items=" << matrix.num_items() << " responders=" << matrix.num_responders()
            << " iterations=" << items.iterations << " converged=" << (items.converged ? "yes" : "no")
            << " clamped_items=" << clamped << "\n";
  if (!items.converged) std::cerr << "warning: EM did not converge within " << a.max_iterations << " iterations\n";

  if (!a.truth.empty()) {
    const auto truth = read_json_file(a.truth, "truth");
    const auto true_items = rasch::items_from_json(truth);
    const auto true_abilities = rasch::abilities_from_json(truth);
    std::vector<double> tb, eb, tt, et;
    for (const auto& [id, e] : items.items) {
      if (auto t = true_items.difficulty(id)) {
        tb.push_back(*t);
        eb.push_back(e.b);
      }
    }
    for (const auto& [id, e] : abilities.responders) {
      if (auto t = true_abilities.ability(id)) {
        tt.push_back(*t);
        et.push_back(e.theta);
      }
    }
    if (tb.size() >= 2) {
      std::cout << "difficulty_pearson=" << fmt(stats::pearson(tb, eb)) << " difficulty_rmse=" << fmt(stats::rmse(tb, eb))
                << " items_compared=" << tb.size() << "\n";
    }
    if (tt.size() >= 2) std::cout << "ability_pearson=" << fmt(stats::pearson(tt, et)) << " responders_compared=" << tt.size() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// filter-qa
// ---------------------------------------------------------------------------

struct FilterArgs {
  std::string matrix, out, kept;
  double threshold = 0.30;
};

int cmd_filter_qa(const FilterArgs& a) {
  require(a.matrix, "--matrix");
  require(a.out, "--out");
  open_input(a.matrix, "response matrix");
  const auto matrix = rasch::read_response_csv_file(a.matrix);
  const auto acc = rasch::responder_accuracies(matrix);
  std::vector<std::pair<std::string, double>> pairs;
  for (std::size_t r = 0; r < acc.size(); ++r) pairs.emplace_back(matrix.responder_ids()[r], acc[r]);
  const auto kept = dataset::filter_qa_systems(pairs, a.threshold);

  rasch::ResponseMatrix filtered(kept, matrix.item_ids());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t r = *matrix.responder_index(kept[k]);
    for (std::size_t i = 0; i < matrix.num_items(); ++i) filtered.set(k, i, matrix.at(r, i));
  }
  write_output(a.out, rasch::write_response_csv(filtered));
  if (!a.kept.empty()) {
    std::string ids;
    for (const auto& id : kept) ids += id + "\n";
    write_output(a.kept, ids);
  }
  std::cout << "kept " << kept.size() << " of " << matrix.num_responders() << " responders (threshold "
            << fmt(a.threshold) << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// annotate / build-pairs / verify-pairs / requests
// ---------------------------------------------------------------------------

std::vector<dataset::QuestionRecord> load_corpus(const std::string& path) {
  auto in = open_input(path, "corpus");
  auto records = dataset::read_records(in, path);
  dataset::validate_corpus(records);
  return records;
}

struct AnnotateArgs {
  std::string corpus, params, out;
};

int cmd_annotate(const AnnotateArgs& a) {
  require(a.corpus, "--corpus");
  require(a.params, "--params");
  require(a.out, "--out");
  const auto records = load_corpus(a.corpus);
  const auto items = rasch::items_from_json(read_json_file(a.params, "parameter"));
  const auto annotated = dataset::annotate_difficulties(records, items);
  write_output(a.out, dataset::write_jsonl(annotated));
  std::cout << "annotated " << annotated.size() << " records\n";
  return 0;
}

struct PairsArgs {
  std::string annotated, out;
};

int cmd_build_pairs(const PairsArgs& a, std::uint64_t seed) {
  require(a.annotated, "--annotated");
  require(a.out, "--out");
  auto in = open_input(a.annotated, "annotated corpus");
  const auto records = dataset::read_annotated_records(in, a.annotated);
  const auto set = dataset::build_dpo_pairs(records, derive_seed(seed, "build-pairs"));
  write_output(a.out, dataset::write_jsonl(set.pairs));
  std::cout << "pairs=" << set.pairs.size() << " skipped_records=" << set.skipped_record_ids.size() << "\n";
  return 0;
}

struct VerifyArgs {
  std::string pairs, corpus;
};

int cmd_verify_pairs(const VerifyArgs& a) {
  require(a.pairs, "--pairs");
  require(a.corpus, "--corpus");
  const auto records = load_corpus(a.corpus);
  auto in = open_input(a.pairs, "pair");
  const auto pairs = dataset::read_pairs(in, a.pairs);
  const auto problems = dataset::verify_pairs(pairs, records);
  for (const auto& p : problems) std::cerr << a.pairs << ": " << p << "\n";
  if (!problems.empty()) {
    std::cerr << "error: " << problems.size() << " violation(s) in " << pairs.size() << " pairs\n";
    return 1;
  }
  std::cout << "ok: " << pairs.size() << " pairs verified\n";
  return 0;
}

struct RequestsArgs {
  std::string corpus, out, few_shot_from;
  std::size_t passages = 0;
  double min = -3.0, max = 3.0, step = 0.1;
  std::size_t shots = 0;
  std::vector<double> levels{-2.0, 0.0, 2.0};
};

int cmd_requests(const RequestsArgs& a, std::uint64_t seed) {
  require(a.corpus, "--corpus");
  require(a.out, "--out");
  const auto records = load_corpus(a.corpus);
  auto passages = dataset::unique_passages(records);
  if (a.passages > 0) {
    if (passages.size() < a.passages) {
      throw std::runtime_error(a.corpus + " has " + std::to_string(passages.size()) + " passages, fewer than --passages " +
                               std::to_string(a.passages));
    }
    passages.resize(a.passages);
  }
  const auto grid = dataset::difficulty_grid(a.min, a.max, a.step);
  auto requests = dataset::make_generation_requests(passages, grid);
  if (!a.few_shot_from.empty()) {
    if (a.shots == 0) throw UsageError("--few-shot-from needs --shots >= 1");
    auto in = open_input(a.few_shot_from, "few-shot source");
    const auto pool = dataset::read_annotated_records(in, a.few_shot_from);
    const auto examples = dataset::select_few_shot_examples(pool, a.levels, a.shots, derive_seed(seed, "few-shot"));
    for (auto& r : requests) r.prompt = dataset::build_few_shot_prompt(examples, r);
  }
  write_output(a.out, dataset::write_jsonl(requests));
  std::cout << "requests=" << requests.size() << " passages=" << passages.size() << " grid_points=" << grid.size()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string mode, data, out, log, init, ref;
  std::size_t vocab_size = 6;
  int max_length = 4, order = 1, contexts = 1;
  double lr = 0.05, beta = 0.1;
  int steps = 1000;
  std::size_t batch_size = 0;
};

policy::ToyPolicy load_checkpoint(const std::string& path, const std::string& what) {
  return policy::checkpoint_from_json(read_json_file(path, what));
}

int cmd_train(const TrainArgs& a, std::uint64_t seed) {
  require(a.mode, "--mode");
  require(a.data, "--data");
  require(a.out, "--out");
  const std::uint64_t train_seed = derive_seed(seed, "train");
  policy::TrainResult res;
  if (a.mode == "sft") {
    const auto init = a.init.empty()
                          ? policy::ToyPolicy(policy::TokenVocabulary::make_default(a.vocab_size), a.max_length,
                                              a.order, a.contexts)
                          : load_checkpoint(a.init, "initial checkpoint");
    auto in = open_input(a.data, "SFT data");
    const auto data = policy::read_sft_examples(in, init.vocabulary(), a.data);
    res = policy::train_sft(init, data, {a.lr, a.steps, train_seed, a.batch_size});
  } else if (a.mode == "dpo") {
    if (a.ref.empty()) throw UsageError("dpo mode requires --ref (reference checkpoint)");
    const auto ref = load_checkpoint(a.ref, "reference checkpoint");
    const auto init = a.init.empty() ? ref : load_checkpoint(a.init, "initial checkpoint");
    auto in = open_input(a.data, "preference pair");
    const auto pairs = policy::read_token_pairs(in, ref.vocabulary(), a.data);
    res = policy::train_dpo(init, ref, pairs, {a.beta, a.lr, a.steps, train_seed, a.batch_size});
    const auto margins = policy::dpo_margins(res.policy, ref, pairs, a.beta);
    std::size_t positive = 0;
    for (double z : margins) positive += z > 0.0;
    std::cout << "positive_margins=" << positive << "/" << margins.size() << "\n";
  } else {
    throw UsageError("--mode must be sft or dpo, got '" + a.mode + "'");
  }
  write_output(a.out, policy::checkpoint_to_json(res.policy).dump(2) + "\n");
  if (!a.log.empty()) write_output(a.log, policy::training_log_csv(res.log));
  const auto& last = res.log.back();
  std::cout << "steps=" << last.step << " final_loss=" << fmt(last.loss);
  if (last.mean_margin) std::cout << " mean_margin=" << fmt(*last.mean_margin);
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct JudgeArgs {
  bool enabled = false;
  bool required = false;
  std::string url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4.1-mini";
  double temperature = 0.0;
  int retries = 4;
  std::size_t max_in_flight = 4;
  int timeout = 60;
  std::vector<std::string> criteria{"fluency", "relevance", "answerability", "reasoning_type"};
};

struct EvaluateArgs {
  std::string questions, matrix, abilities, out_dir;
  std::size_t responders = 77;
  double min = -3.0, max = 3.0, step = 0.1;
  double theta_ref = eval::kMedianAbility;
  JudgeArgs judge;
};

judge::EndpointConfig endpoint_from(const JudgeArgs& j) {
  judge::EndpointConfig cfg;
  cfg.base_url = j.url;
  cfg.path = j.path;
  cfg.model = j.model;
  cfg.temperature = j.temperature;
  cfg.max_retries = j.retries;
  cfg.max_in_flight = j.max_in_flight;
  cfg.timeout = std::chrono::seconds(j.timeout);
  return cfg;
}

// Returns false when the judge could not be run to completion.
bool run_judge(const JudgeArgs& j, std::span<const GeneratedQuestion> questions, std::uint64_t seed,
               eval::EvaluationReport& rep, const std::string& out_dir) {
  std::vector<judge::Criterion> criteria;
  for (const auto& c : j.criteria) criteria.push_back(judge::parse_criterion(c));
  struct Job {
    std::string question_id;
    judge::Criterion criterion;
    std::array<int, 4> order;
  };
  std::vector<Job> jobs;
  std::vector<std::string> prompts;
  const std::uint64_t option_seed = derive_seed(seed, "judge-options");
  for (const auto& q : questions) {
    if (!q.parsed) continue;
    for (auto c : criteria) {
      const auto p = judge::render_judge_prompt(c, q, option_seed);
      jobs.push_back({q.question_id, c, p.option_order});
      prompts.push_back(p.text);
    }
    rep.judge.option_orders[q.question_id] = judge::option_permutation(option_seed, q.question_id);
  }
  std::vector<judge::JudgeOutcome> outcomes;
  try {
    outcomes = judge::judge_all(endpoint_from(j), prompts);
  } catch (const std::exception& e) {
    rep.judge.status = "skipped";
    rep.judge.reason = e.what();
    return false;
  }
  std::size_t failed = 0;
  std::string first_error;
  std::vector<judge::JudgeVerdict> verdicts;
  std::string log;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    nlohmann::ordered_json row;
    row["question_id"] = jobs[k].question_id;
    row["criterion"] = judge::criterion_name(jobs[k].criterion);
    if (!outcomes[k].content) {
      if (failed++ == 0) first_error = outcomes[k].error;
      row["error"] = outcomes[k].error;
    } else {
      const auto v = judge::parse_judge_verdict(jobs[k].criterion, *outcomes[k].content);
      verdicts.push_back(v);
      row["raw"] = v.raw;
      if (v.score) row["score"] = *v.score;
      if (v.category) row["category"] = *v.category;
      row["parsed"] = v.parsed();
    }
    log += row.dump() + "\n";
  }
  write_output((fs::path(out_dir) / "judge_verdicts.jsonl").string(), log);
  if (failed > 0) {
    rep.judge.status = "skipped";
    rep.judge.reason = std::to_string(failed) + " of " + std::to_string(outcomes.size()) +
                       " judge calls failed; first error: " + first_error;
    return false;
  }
  const auto orders = rep.judge.option_orders;
  eval::attach_judge_results(rep, verdicts);
  rep.judge.option_orders = orders;
  return true;
}

int cmd_evaluate(const EvaluateArgs& a, std::uint64_t seed) {
  require(a.questions, "--questions");
  require(a.out_dir, "--out-dir");
  auto in = open_input(a.questions, "questions");
  const auto questions = read_questions(in, a.questions);
  if (questions.empty()) throw std::runtime_error(a.questions + ": no questions");

  rasch::ResponseMatrix matrix;
  rasch::AbilityParams responders;
  if (!a.matrix.empty()) {
    if (a.abilities.empty()) throw UsageError("--matrix needs --abilities (calibrated responder parameters)");
    open_input(a.matrix, "response matrix");
    matrix = rasch::read_response_csv_file(a.matrix);
    responders = rasch::abilities_from_json(read_json_file(a.abilities, "ability"));
  } else {
    if (!a.abilities.empty()) {
      responders = rasch::abilities_from_json(read_json_file(a.abilities, "ability"));
    } else {
      responders = simulate::simulate_abilities(a.responders, derive_seed(seed, "abilities"));
    }
    std::vector<GeneratedQuestion> answerable;
    for (const auto& q : questions) {
      if (q.parsed) answerable.push_back(q);
    }
    matrix = eval::administer(answerable, responders, derive_seed(seed, "administer"));
  }

  eval::EvalConfig cfg;
  cfg.theta_ref = a.theta_ref;
  cfg.grid = dataset::difficulty_grid(a.min, a.max, a.step);
  auto rep = eval::evaluate(questions, matrix, responders, cfg);
  for (double b : rep.omitted_bins) std::cerr << "warning: no observations for difficulty bin " << format_difficulty(b) << "\n";

  bool judge_ok = true;
  if (a.judge.enabled) {
    judge_ok = run_judge(a.judge, questions, seed, rep, a.out_dir);
    if (!judge_ok) std::cerr << "warning: judge section skipped: " << rep.judge.reason << "\n";
  }
  eval::write_report(a.out_dir, rep);

  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); };
  std::cout << "questions=" << rep.questions_total << " unparsed=" << rep.questions_unparsed
            << " unanswered=" << rep.questions_unanswered << " mae=" << opt(rep.mae) << " slope=" << opt(rep.slope)
            << " rate_spearman=" << opt(rep.rate_spearman) << " mean_fisher_matched=" << opt(rep.mean_fisher_matched)
            << " judge=" << rep.judge.status << "\n";
  if (!judge_ok && a.judge.required) {
    std::cerr << "error: judge required but unavailable\n";
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimCorpusArgs {
  std::string out;
  std::size_t passages = 300, per_passage = 4;
};

struct SimResponsesArgs {
  std::string out, truth, corpus;
  std::size_t responders = 77, items = 100;
  double min = -3.0, max = 3.0, ability_mean = 0.0, ability_sd = 1.0;
};

struct SimGenerationsArgs {
  std::string requests, out;
  double noise = 0.5;
};

struct SimToyPolicyArgs {
  std::string out;
  std::size_t vocab_size = 6;
  int max_length = 4, order = 1, contexts = 1;
};

struct SimToyPairsArgs {
  std::string out, sft_out;
  std::size_t pairs = 200, vocab_size = 6;
  int max_length = 4;
  double target = 3.0;
};

int cmd_sim_corpus(const SimCorpusArgs& a, std::uint64_t seed) {
  require(a.out, "--out");
  const auto c = simulate::simulate_corpus(a.passages, a.per_passage, derive_seed(seed, "simulate-corpus"));
  write_output(a.out, dataset::write_jsonl(c));
  std::cout << "records=" << c.size() << " passages=" << a.passages << "\n";
  return 0;
}

int cmd_sim_responses(const SimResponsesArgs& a, std::uint64_t seed) {
  require(a.out, "--out");
  const auto abilities = simulate::simulate_abilities(a.responders, derive_seed(seed, "simulate-abilities"),
                                                      a.ability_mean, a.ability_sd);
  std::map<std::string, double> bs;
  if (!a.corpus.empty()) {
    std::vector<std::string> ids;
    for (const auto& r : load_corpus(a.corpus)) ids.push_back(r.record_id);
    bs = simulate::simulate_difficulties(ids, a.min, a.max, derive_seed(seed, "simulate-difficulties"));
  } else {
    bs = simulate::simulate_difficulties(a.items, a.min, a.max, derive_seed(seed, "simulate-difficulties"));
  }
  const auto items = rasch::ItemParams::from_difficulties(bs);
  const auto m = rasch::simulate_responses(abilities, items, derive_seed(seed, "simulate-responses"));
  write_output(a.out, rasch::write_response_csv(m));
  if (!a.truth.empty()) write_output(a.truth, rasch::params_to_json(items, abilities).dump(2) + "\n");
  std::cout << "responders=" << m.num_responders() << " items=" << m.num_items() << "\n";
  return 0;
}

int cmd_sim_generations(const SimGenerationsArgs& a, std::uint64_t seed) {
  require(a.requests, "--requests");
  require(a.out, "--out");
  auto in = open_input(a.requests, "requests");
  const auto req = dataset::read_requests(in, a.requests);
  const auto qs = simulate::simulate_generations(req, a.noise, derive_seed(seed, "simulate-generations"));
  write_output(a.out, write_questions_jsonl(qs));
  std::cout << "questions=" << qs.size() << " noise=" << fmt(a.noise) << "\n";
  return 0;
}

int cmd_sim_toy_policy(const SimToyPolicyArgs& a) {
  require(a.out, "--out");
  const policy::ToyPolicy p(policy::TokenVocabulary::make_default(a.vocab_size), a.max_length, a.order, a.contexts);
  write_output(a.out, policy::checkpoint_to_json(p).dump(2) + "\n");
  return 0;
}

int cmd_sim_toy_pairs(const SimToyPairsArgs& a, std::uint64_t seed) {
  require(a.out, "--out");
  const auto vocab = policy::TokenVocabulary::make_default(a.vocab_size);
  const auto outs = policy::enumerate_outputs(vocab, a.max_length, 4096);
  const policy::RewardSpec spec{a.target, simulate::toy_output_difficulty(vocab, outs)};
  std::vector<double> rewards;
  for (const auto& y : outs) rewards.push_back(policy::squared_error_reward(spec, y));
  const auto pairs = simulate::sample_bt_pairs(outs, rewards, a.pairs, derive_seed(seed, "simulate-toy-pairs"));
  write_output(a.out, policy::write_token_pairs(pairs, vocab));
  if (!a.sft_out.empty()) {
    std::string sft;
    for (const auto& p : pairs) {
      nlohmann::ordered_json j;
      j["context"] = p.context;
      j["tokens"] = vocab.decode(p.preferred);
      sft += j.dump() + "\n";
    }
    write_output(a.sft_out, sft);
  }
  std::cout << "pairs=" << pairs.size() << " outputs=" << outs.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// emit-prompts
// ---------------------------------------------------------------------------

struct EmitArgs {
  std::string questions, out;
  std::vector<std::string> criteria{"fluency", "relevance", "answerability", "reasoning_type"};
};

int cmd_emit_prompts(const EmitArgs& a, std::uint64_t seed) {
  require(a.questions, "--questions");
  require(a.out, "--out");
  auto in = open_input(a.questions, "questions");
  const auto questions = read_questions(in, a.questions);
  std::vector<judge::Criterion> criteria;
  for (const auto& c : a.criteria) criteria.push_back(judge::parse_criterion(c));
  const std::uint64_t option_seed = derive_seed(seed, "judge-options");
  std::string out;
  std::size_t n = 0, skipped = 0;
  for (const auto& q : questions) {
    if (!q.parsed) {
      ++skipped;
      continue;
    }
    for (auto c : criteria) {
      const auto p = judge::render_judge_prompt(c, q, option_seed);
      nlohmann::ordered_json j;
      j["question_id"] = q.question_id;
      j["criterion"] = judge::criterion_name(c);
      j["option_order"] = p.option_order;
      j["correct_label"] = std::string(1, p.correct_label());
      j["prompt"] = p.text;
      out += j.dump() + "\n";
      ++n;
    }
  }
  write_output(a.out, out);
  std::cout << "prompts=" << n << " unparsed_questions_skipped=" << skipped << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Difficulty-controllable question generation toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string config;
  app.add_option("--seed", seed, "Master seed; each stage derives its own stream")->capture_default_str();
  app.add_option("--config", config, "Flat key = value file; flags override it")->configurable(false);

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Estimate Rasch difficulties (MML/EM) and abilities (MLE)");
  c_cal->add_option("--matrix", cal.matrix, "Response CSV: responder_id,item_id,outcome");
  c_cal->add_option("--out", cal.out, "Output parameter JSON");
  c_cal->add_option("--truth", cal.truth, "Optional true parameter JSON for a recovery report");
  c_cal->add_option("--quadrature-nodes", cal.nodes, "Quadrature nodes on [-6, 6]")->check(CLI::Range(2, 1001))->capture_default_str();
  c_cal->add_option("--em-tolerance", cal.tolerance, "EM convergence tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  c_cal->add_option("--em-max-iterations", cal.max_iterations, "EM iteration cap")->check(CLI::Range(1, 1000000))->capture_default_str();

  FilterArgs fil;
  auto* c_fil = app.add_subcommand("filter-qa", "Drop responders below an accuracy threshold");
  c_fil->add_option("--matrix", fil.matrix, "Response CSV");
  c_fil->add_option("--out", fil.out, "Filtered response CSV");
  c_fil->add_option("--kept", fil.kept, "Optional file listing kept responder ids");
  c_fil->add_option("--threshold", fil.threshold, "Minimum accuracy kept")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  AnnotateArgs ann;
  auto* c_ann = app.add_subcommand("annotate", "Attach estimated difficulties to corpus records");
  c_ann->add_option("--corpus", ann.corpus, "Question records JSONL");
  c_ann->add_option("--params", ann.params, "Parameter JSON from calibrate");
  c_ann->add_option("--out", ann.out, "Annotated records JSONL");

  PairsArgs prs;
  auto* c_prs = app.add_subcommand("build-pairs", "Build DPO preference pairs from annotated records");
  c_prs->add_option("--annotated", prs.annotated, "Annotated records JSONL");
  c_prs->add_option("--out", prs.out, "Preference pairs JSONL");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify-pairs", "Check pair invariants against the corpus");
  c_ver->add_option("--pairs", ver.pairs, "Preference pairs JSONL");
  c_ver->add_option("--corpus", ver.corpus, "Question records JSONL");

  RequestsArgs req;
  auto* c_req = app.add_subcommand("requests", "Emit generation requests over a difficulty grid");
  c_req->add_option("--corpus", req.corpus, "Question records JSONL (passages are taken from it)");
  c_req->add_option("--out", req.out, "Requests JSONL");
  c_req->add_option("--passages", req.passages, "Use the first N passages (0 = all)")->capture_default_str();
  c_req->add_option("--min", req.min, "Grid minimum")->capture_default_str();
  c_req->add_option("--max", req.max, "Grid maximum")->capture_default_str();
  c_req->add_option("--step", req.step, "Grid step")->check(CLI::PositiveNumber)->capture_default_str();
  c_req->add_option("--few-shot-from", req.few_shot_from, "Annotated records to draw few-shot examples from");
  c_req->add_option("--shots", req.shots, "Few-shot example groups")->capture_default_str();
  c_req->add_option("--few-shot-levels", req.levels, "Difficulty levels per example group")->delimiter(',')->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the toy policy with SFT or DPO");
  c_tr->add_option("--mode", tr.mode, "sft or dpo")->check(CLI::IsMember({"sft", "dpo"}));
  c_tr->add_option("--data", tr.data, "SFT examples or token preference pairs JSONL");
  c_tr->add_option("--out", tr.out, "Output checkpoint JSON");
  c_tr->add_option("--log", tr.log, "Training log CSV");
  c_tr->add_option("--init", tr.init, "Initial checkpoint (dpo default: the reference)");
  c_tr->add_option("--ref", tr.ref, "Reference checkpoint (dpo)");
  c_tr->add_option("--vocab-size", tr.vocab_size, "Fresh policy vocabulary size incl. end token")->check(CLI::Range(2, 64))->capture_default_str();
  c_tr->add_option("--max-length", tr.max_length, "Fresh policy maximum length")->check(CLI::Range(1, 64))->capture_default_str();
  c_tr->add_option("--order", tr.order, "Fresh policy context order")->check(CLI::Range(0, 8))->capture_default_str();
  c_tr->add_option("--contexts", tr.contexts, "Fresh policy conditioning ids")->check(CLI::Range(1, 1000000))->capture_default_str();
  c_tr->add_option("--learning-rate", tr.lr, "Gradient step size")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--beta", tr.beta, "DPO beta")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--steps", tr.steps, "Gradient steps")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_tr->add_option("--batch-size", tr.batch_size, "Minibatch size (0 = full batch)")->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Compute the evaluation report and figure CSVs");
  c_ev->add_option("--questions", ev.questions, "Generated questions JSONL");
  c_ev->add_option("--matrix", ev.matrix, "Observed response CSV (omit to simulate responses)");
  c_ev->add_option("--abilities", ev.abilities, "Parameter JSON with responder abilities");
  c_ev->add_option("--out-dir", ev.out_dir, "Report directory");
  c_ev->add_option("--responders", ev.responders, "Simulated responders when no matrix is given")->check(CLI::Range(1, 1000000))->capture_default_str();
  c_ev->add_option("--min", ev.min, "Grid minimum")->capture_default_str();
  c_ev->add_option("--max", ev.max, "Grid maximum")->capture_default_str();
  c_ev->add_option("--step", ev.step, "Grid step")->check(CLI::PositiveNumber)->capture_default_str();
  c_ev->add_option("--theta-ref", ev.theta_ref, "Ability for the theoretical curve")->capture_default_str();
  c_ev->add_flag("--judge", ev.judge.enabled, "Score questions with the judge endpoint");
  c_ev->add_flag("--judge-required", ev.judge.required, "Fail when the judge cannot be run");
  c_ev->add_option("--judge-url", ev.judge.url, "Judge base URL")->capture_default_str();
  c_ev->add_option("--judge-path", ev.judge.path, "Chat-completions path")->capture_default_str();
  c_ev->add_option("--judge-model", ev.judge.model, "Judge model name")->capture_default_str();
  c_ev->add_option("--judge-temperature", ev.judge.temperature, "Judge temperature")->check(CLI::Range(0.0, 2.0))->capture_default_str();
  c_ev->add_option("--judge-retries", ev.judge.retries, "Retries for transient failures")->check(CLI::Range(0, 20))->capture_default_str();
  c_ev->add_option("--judge-max-in-flight", ev.judge.max_in_flight, "Concurrent judge requests")->check(CLI::Range(1, 256))->capture_default_str();
  c_ev->add_option("--judge-timeout", ev.judge.timeout, "Per-request timeout in seconds")->check(CLI::Range(1, 3600))->capture_default_str();
  c_ev->add_option("--judge-criteria", ev.judge.criteria, "Criteria to judge")->delimiter(',')->capture_default_str();

  auto* c_sim = app.add_subcommand("simulate", "Synthetic inputs for desk-scale runs");
  c_sim->require_subcommand(1);
  SimCorpusArgs sc;
  auto* c_sc = c_sim->add_subcommand("corpus", "Synthetic question corpus");
  c_sc->add_option("--out", sc.out, "Question records JSONL");
  c_sc->add_option("--passages", sc.passages, "Passages")->check(CLI::Range(1, 10000000))->capture_default_str();
  c_sc->add_option("--per-passage", sc.per_passage, "Questions per passage")->check(CLI::Range(1, 1000))->capture_default_str();
  SimResponsesArgs sr;
  auto* c_sr = c_sim->add_subcommand("responses", "Rasch responses of simulated responders");
  c_sr->add_option("--out", sr.out, "Response CSV");
  c_sr->add_option("--truth", sr.truth, "True parameter JSON");
  c_sr->add_option("--corpus", sr.corpus, "Use the corpus record ids as items");
  c_sr->add_option("--responders", sr.responders, "Responders")->check(CLI::Range(1, 10000000))->capture_default_str();
  c_sr->add_option("--items", sr.items, "Items when no corpus is given")->check(CLI::Range(1, 10000000))->capture_default_str();
  c_sr->add_option("--min", sr.min, "Minimum item difficulty")->capture_default_str();
  c_sr->add_option("--max", sr.max, "Maximum item difficulty")->capture_default_str();
  c_sr->add_option("--ability-mean", sr.ability_mean, "Ability mean")->capture_default_str();
  c_sr->add_option("--ability-sd", sr.ability_sd, "Ability standard deviation")->check(CLI::NonNegativeNumber)->capture_default_str();
  SimGenerationsArgs sg;
  auto* c_sg = c_sim->add_subcommand("generations", "Noisy generator answering generation requests");
  c_sg->add_option("--requests", sg.requests, "Requests JSONL");
  c_sg->add_option("--out", sg.out, "Generated questions JSONL");
  c_sg->add_option("--noise", sg.noise, "Control noise sigma")->check(CLI::NonNegativeNumber)->capture_default_str();
  SimToyPolicyArgs sp;
  auto* c_sp = c_sim->add_subcommand("toy-policy", "Uniform toy policy checkpoint");
  c_sp->add_option("--out", sp.out, "Checkpoint JSON");
  c_sp->add_option("--vocab-size", sp.vocab_size, "Vocabulary size incl. end token")->check(CLI::Range(2, 64))->capture_default_str();
  c_sp->add_option("--max-length", sp.max_length, "Maximum length")->check(CLI::Range(1, 64))->capture_default_str();
  c_sp->add_option("--order", sp.order, "Context order")->check(CLI::Range(0, 8))->capture_default_str();
  c_sp->add_option("--contexts", sp.contexts, "Conditioning ids")->check(CLI::Range(1, 1000000))->capture_default_str();
  SimToyPairsArgs st;
  auto* c_st = c_sim->add_subcommand("toy-pairs", "Bradley-Terry pairs from the toy difficulty reward");
  c_st->add_option("--out", st.out, "Token preference pairs JSONL");
  c_st->add_option("--sft-out", st.sft_out, "Also write the preferred outputs as SFT examples");
  c_st->add_option("--pairs", st.pairs, "Pairs")->check(CLI::Range(1, 10000000))->capture_default_str();
  c_st->add_option("--vocab-size", st.vocab_size, "Vocabulary size incl. end token")->check(CLI::Range(2, 64))->capture_default_str();
  c_st->add_option("--max-length", st.max_length, "Maximum length")->check(CLI::Range(1, 64))->capture_default_str();
  c_st->add_option("--target", st.target, "Specified difficulty of the reward")->capture_default_str();

  EmitArgs em;
  auto* c_em = app.add_subcommand("emit-prompts", "Write judge prompts for offline scoring");
  c_em->add_option("--questions", em.questions, "Generated questions JSONL");
  c_em->add_option("--out", em.out, "Prompts JSONL");
  c_em->add_option("--criteria", em.criteria, "Criteria")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!config.empty()) apply_config(app, config);
    if (c_cal->parsed()) return cmd_calibrate(cal);
    if (c_fil->parsed()) return cmd_filter_qa(fil);
    if (c_ann->parsed()) return cmd_annotate(ann);
    if (c_prs->parsed()) return cmd_build_pairs(prs, seed);
    if (c_ver->parsed()) return cmd_verify_pairs(ver);
    if (c_req->parsed()) return cmd_requests(req, seed);
    if (c_tr->parsed()) return cmd_train(tr, seed);
    if (c_ev->parsed()) return cmd_evaluate(ev, seed);
    if (c_sc->parsed()) return cmd_sim_corpus(sc, seed);
    if (c_sr->parsed()) return cmd_sim_responses(sr, seed);
    if (c_sg->parsed()) return cmd_sim_generations(sg, seed);
    if (c_sp->parsed()) return cmd_sim_toy_policy(sp);
    if (c_st->parsed()) return cmd_sim_toy_pairs(st, seed);
    if (c_em->parsed()) return cmd_emit_prompts(em, seed);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const policy::TrainingError& e) {
    std::cerr << "error: " << e.what();
    if (e.step() > 0) {
      std::cerr << "; last finite step " << e.step() - 1;
    } else {
      std::cerr << "; no finite step";
    }
    std::cerr << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
