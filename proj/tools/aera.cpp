// aera: command-line entry points for the assessment backend.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "aera/api_service.hpp"
#include "aera/bulk_run.hpp"
#include "aera/errors.hpp"
#include "aera/human_eval.hpp"
#include "aera/metrics.hpp"
#include "aera/store.hpp"
#include "aera/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aera;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw UsageError(path + " is not valid JSON");
  return j;
}

// Writes next to the target and renames, so a failed run leaves no file.
void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

void emit(const std::string& content, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") std::cout << content;
  else write_atomic(out_path, content);
}

std::vector<ProviderConfig> providers_for(const std::string& config_path) {
  std::string path = config_path;
  if (path.empty())
    if (const char* env = std::getenv("AERA_PROVIDERS"); env && *env) path = env;
  if (path.empty()) return default_mock_registry();
  try {
    return load_provider_registry(path);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("provider registry: ") + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& part : split(s, ',')) {
    const auto t = std::string(trim(part));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------- assess

struct AssessOptions {
  std::string question, answers, format, models, out, config;
  std::uint64_t seed = 0;
  double temperature = 0.7;
  int max_tokens = 512;
  bool json_out = false;
};

int run_assess(const AssessOptions& o) {
  Gateway gateway;
  for (const auto& p : providers_for(o.config)) gateway.register_provider(p);
  const auto models = split_list(o.models);
  if (models.empty()) throw UsageError("--models must name at least one model");
  for (const auto& m : models)
    if (!gateway.has_model(m)) throw UsageError("unknown model: " + m + " (registered: " + join(gateway.model_ids(), ", ") + ")");

  QuestionSpec question;
  try {
    question = read_json(o.question).get<QuestionSpec>();
  } catch (const json::exception& e) {
    throw UsageError("question file: " + std::string(e.what()));
  }
  if (auto v = validate_question(question); !v.empty()) throw ValidationError(v);

  std::string fmt = o.format;
  if (fmt.empty()) fmt = o.answers.ends_with(".json") ? "json" : "csv";
  const auto format = batch_format_from_string(fmt);
  if (!format) throw UsageError("--format must be csv or json");
  auto batch = parse_answer_batch(read_file(o.answers), *format, question);

  GenerationParams params;
  params.seed = o.seed;
  params.temperature = o.temperature;
  params.max_output_tokens = o.max_tokens;
  if (auto v = validate_params(params); !v.empty()) throw ValidationError(v);

  const auto run = run_bulk(gateway, batch, models, params);
  write_atomic(o.out, dump_json(results_to_json(run.document), 2) + "\n");

  const auto& doc = run.document;
  if (o.json_out) {
    json summary = {{"out", o.out},
                    {"answers", doc.answers.size()},
                    {"assessments", doc.assessments().size()},
                    {"progress_events", run.progress.size()}};
    if (doc.metrics) summary["metrics"] = *doc.metrics;
    else summary["metrics_notice"] = "no gold scores in the batch; metrics omitted";
    std::cout << dump_json(summary, 2) << "\n";
  } else {
    std::cout << "wrote " << doc.assessments().size() << " assessments for " << doc.answers.size() << " answers to "
              << o.out << "\n";
    if (doc.metrics) std::cout << "\n" << reports_to_markdown(*doc.metrics);
    else std::cout << "no gold scores in the batch; metric summary omitted\n";
  }
  return 0;
}

// ---------------------------------------------------------------- report

int run_report(const std::string& results, const std::string& format, bool json_out) {
  ResultsDocument doc;
  try {
    doc = results_from_json(read_json(results));
  } catch (const json::exception& e) {
    throw UsageError("results file: " + std::string(e.what()));
  }
  if (!doc.metrics) throw NoGroundTruthError("no gold scores in " + results + "; nothing to report");
  if (json_out || format == "json") std::cout << dump_json(json(*doc.metrics), 2) << "\n";
  else if (format == "csv") std::cout << reports_to_csv(*doc.metrics);
  else if (format == "md") std::cout << reports_to_markdown(*doc.metrics);
  else throw UsageError("--format must be csv, md or json");
  return 0;
}

// ------------------------------------------------------------- eval-session

std::vector<EvalDataset> datasets_from(const json& j) {
  std::vector<EvalDataset> out;
  for (const auto& d : j.at("datasets"))
    out.push_back({d.at("dataset_id").get<std::string>(), d.at("answer_ids").get<std::vector<std::string>>()});
  return out;
}

int run_eval_create(const std::string& datasets_path, std::size_t n, const std::string& models,
                    const std::string& graders, std::uint64_t seed, const std::string& out) {
  EvalSession s;
  s.session_id = "session";
  s.n_per_dataset = n;
  s.model_ids = split_list(models);
  s.graders = split_list(graders);
  s.model_order_seed = seed;
  if (s.model_ids.size() < 2) throw UsageError("--models needs at least two models");
  if (s.graders.empty()) throw UsageError("--graders must name at least one grader");
  try {
    s.items = sample_items(datasets_from(read_json(datasets_path)), n, seed);
  } catch (const json::exception& e) {
    throw UsageError("datasets file: " + std::string(e.what()));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  emit(dump_json(json(s), 2) + "\n", out);
  return 0;
}

// Blind sheet: items with slot numbers only. Rationales are filled from
// results files given as dataset_id=path.
int run_eval_sheet(const std::string& session_path, const std::vector<std::string>& results, const std::string& out) {
  const auto s = read_json(session_path).get<EvalSession>();
  std::map<std::string, ResultsDocument> docs;
  for (const auto& r : results) {
    const auto eq = r.find('=');
    if (eq == std::string::npos) throw UsageError("--results expects dataset_id=path");
    docs[r.substr(0, eq)] = results_from_json(read_json(r.substr(eq + 1)));
  }
  json items = json::array();
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    const auto& item = s.items[i];
    json slots = json::array();
    const auto it = docs.find(item.dataset_id);
    for (std::size_t slot = 0; slot < s.model_ids.size(); ++slot) {
      json entry = {{"slot", slot}, {"predicted_score", nullptr}, {"rationale", nullptr}};
      if (it != docs.end())
        for (const auto& a : it->second.assessments())
          if (a.answer_id == item.answer_id && a.model_id == s.model_for_slot(i, slot) && a.usable()) {
            entry["predicted_score"] = a.predicted_score;
            entry["rationale"] = a.rationale;
          }
      slots.push_back(std::move(entry));
    }
    json row = {{"item_index", i}, {"dataset_id", item.dataset_id}, {"answer_id", item.answer_id}, {"slots", slots}};
    if (it != docs.end())
      for (const auto& a : it->second.answers)
        if (a.answer_id == item.answer_id) row["answer_text"] = a.answer_text;
    items.push_back(std::move(row));
  }
  emit(dump_json(json{{"graders", s.graders}, {"items", items}}, 2) + "\n", out);
  return 0;
}

// Judgment records, one JSON object per line:
//   {"type":"correctness","grader":"g1","item_index":0,"slot":1,"correct":true}
//   {"type":"preference","grader":"g1","item_index":0,"winning_slot":2}
int run_eval_aggregate(const std::string& session_path, const std::string& judgments_path, const std::string& format) {
  const auto s = read_json(session_path).get<EvalSession>();
  std::vector<CorrectnessJudgment> judgments;
  std::vector<PairPreference> prefs;
  std::istringstream lines(read_file(judgments_path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw UsageError("judgments line " + std::to_string(n) + " is not JSON");
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "correctness") {
        CorrectnessJudgment c{j.at("grader").get<std::string>(), j.at("item_index").get<std::size_t>(),
                              j.at("slot").get<std::size_t>(), j.at("correct").get<bool>()};
        check_judgment(s, c);
        judgments.push_back(std::move(c));
      } else if (type == "preference") {
        PairPreference p{j.at("grader").get<std::string>(), j.at("item_index").get<std::size_t>(),
                         j.at("winning_slot").get<std::size_t>()};
        check_preference(s, p);
        prefs.push_back(std::move(p));
      } else {
        throw UsageError("unknown record type " + type);
      }
    } catch (const std::invalid_argument& e) {
      throw UsageError("judgments line " + std::to_string(n) + ": " + e.what());
    } catch (const json::exception& e) {
      throw UsageError("judgments line " + std::to_string(n) + ": " + e.what());
    }
  }
  const auto report = aggregate_session(s, judgments, prefs);
  if (format == "md") std::cout << report_to_markdown(report);
  else if (format == "csv") std::cout << report_to_csv(report);
  else if (format == "json") std::cout << dump_json(json(report), 2) << "\n";
  else throw UsageError("--format must be md, csv or json");
  return 0;
}

// --------------------------------------------------------------- selftest

int run_selftest() {
  int failures = 0;
  auto check = [&](const std::string& name, double got, double want) {
    const bool ok = std::fabs(got - want) <= 1e-9;
    std::cout << (ok ? "PASS " : "FAIL ") << name << " = " << got << " (expected " << want << ")\n";
    if (!ok) ++failures;
  };
  auto lv = [](std::vector<int> v, int k) { return LabelVector(std::move(v), k); };
  check("accuracy [0,0,1,1] vs [0,1,1,1]", accuracy(lv({0, 0, 1, 1}, 2), lv({0, 1, 1, 1}, 2)), 0.75);
  check("macro_f1 [0,0,1] vs [0,1,1]", macro_f1(lv({0, 0, 1}, 2), lv({0, 1, 1}, 2)), 2.0 / 3.0);
  check("macro_f1 [0,0] vs [1,1]", macro_f1(lv({0, 0}, 2), lv({1, 1}, 2)), 0.0);
  check("qwk [0,0,1,1] vs [0,1,0,1]", qwk(lv({0, 0, 1, 1}, 2), lv({0, 1, 0, 1}, 2)).value, 0.0);
  check("qwk [0,2] vs [2,0]", qwk(lv({0, 2}, 3), lv({2, 0}, 3)).value, -1.0);
  check("cohen [1,1,0,0] vs [1,0,1,0]", cohen_kappa(lv({1, 1, 0, 0}, 2), lv({1, 0, 1, 0}, 2)).value, 0.0);
  check("cohen [0,1] vs [1,0]", cohen_kappa(lv({0, 1}, 2), lv({1, 0}, 2)).value, -1.0);
  std::vector<bool> j(25, false);
  for (int i = 0; i < 19; ++i) j[i] = true;
  check("correctness 19/25", correctness_rate(j), 76.0);

  // offline mock round trip
  QuestionSpec q{"selftest", "Name the part of the plant that holds the flower up.", {"stem"}, {{1, "mentions the stem"}},
                 0, 1};
  AnswerBatch b;
  b.question = q;
  b.answers = {{"1", "The stem holds it up.", 1}, {"2", "The roots.", 0}};
  Gateway g;
  for (const auto& p : default_mock_registry()) g.register_provider(p);
  const auto a = run_bulk(g, b, {"mock-a", "mock-b"}, {});
  const auto c = run_bulk(g, b, {"mock-a", "mock-b"}, {});
  const bool same = dump_json(results_to_json(a.document)) == dump_json(results_to_json(c.document));
  std::cout << (same ? "PASS" : "FAIL") << " mock bulk run is deterministic\n";
  if (!same) ++failures;
  const bool counted = a.progress.size() == 4 && a.document.assessments().size() == 4;
  std::cout << (counted ? "PASS" : "FAIL") << " mock bulk run yields 4 assessments and 4 progress events\n";
  if (!counted) ++failures;
  return failures == 0 ? 0 : 1;
}

// ----------------------------------------------------------------- export

int run_export(const std::string& db, const std::string& kind, const std::string& batch, const std::string& out) {
  if (kind != "preferences" && kind != "sft") throw UsageError("--kind must be preferences or sft");
  if (!fs::exists(db)) throw UsageError("database " + db + " does not exist");
  Store store(db);
  ExportFilter f;
  if (!batch.empty()) f.batch_id = batch;
  emit(kind == "preferences" ? to_jsonl(store.export_preference_pairs(f)) : to_jsonl(store.export_sft(f)), out);
  return 0;
}

// ------------------------------------------------------------------ serve

ApiService* g_service = nullptr;

int run_serve(const std::string& config, const std::string& bind, const std::string& db) {
  ServiceConfig c = service_config_from_env();
  if (!config.empty()) c.providers_path = config;
  if (!db.empty()) c.database_url = db;
  if (!bind.empty()) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw UsageError("--bind expects host:port");
    c.host = bind.substr(0, colon);
    c.port = std::stoi(bind.substr(colon + 1));
  }
  ApiService service(c, make_gateway(c));
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aera: multi-model short answer assessment backend"};
  app.require_subcommand(1);
  spdlog::set_level(spdlog::level::warn);

  std::string serve_config, serve_bind, serve_db;
  auto* serve = app.add_subcommand("serve", "run the REST API and realtime channel");
  serve->add_option("--config", serve_config, "provider registry JSON (default: $AERA_PROVIDERS or built-in mocks)");
  serve->add_option("--bind", serve_bind, "host:port (default: $AERA_BIND or 127.0.0.1:8080)");
  serve->add_option("--db", serve_db, "SQLite path (default: $AERA_DATABASE_URL or aera.db)");

  AssessOptions ao;
  auto* assess = app.add_subcommand("assess", "bulk-assess a batch offline and write results.json");
  assess->add_option("--question", ao.question, "question JSON")->required();
  assess->add_option("--answers", ao.answers, "answer batch (CSV or JSON)")->required();
  assess->add_option("--format", ao.format, "csv or json (default: from the file extension)");
  assess->add_option("--models", ao.models, "comma-separated model ids")->required();
  assess->add_option("--out", ao.out, "results file to write")->required();
  assess->add_option("--seed", ao.seed, "generation seed (mock providers)");
  assess->add_option("--temperature", ao.temperature, "sampling temperature");
  assess->add_option("--max-tokens", ao.max_tokens, "max output tokens");
  assess->add_option("--config", ao.config, "provider registry JSON");
  assess->add_flag("--json", ao.json_out, "machine-readable summary on stdout");

  std::string report_results, report_format = "md";
  bool report_json = false;
  auto* report = app.add_subcommand("report", "recompute metrics from a results file");
  report->add_option("--results", report_results, "results.json from assess")->required();
  report->add_option("--format", report_format, "md, csv or json");
  report->add_flag("--json", report_json, "same as --format json");

  auto* eval = app.add_subcommand("eval-session", "blind human evaluation sessions");
  eval->require_subcommand(1);
  std::string ec_datasets, ec_models, ec_graders, ec_out;
  std::size_t ec_n = 25;
  std::uint64_t ec_seed = 0;
  auto* ec = eval->add_subcommand("create", "sample items and fix the blind slot order");
  ec->add_option("--datasets", ec_datasets, "JSON {\"datasets\":[{\"dataset_id\",\"answer_ids\"}]}")->required();
  ec->add_option("--n", ec_n, "items per dataset");
  ec->add_option("--models", ec_models, "comma-separated model ids")->required();
  ec->add_option("--graders", ec_graders, "comma-separated grader ids")->required();
  ec->add_option("--seed", ec_seed, "sampling and slot-order seed");
  ec->add_option("--out", ec_out, "session file (default: stdout)");

  std::string es_session, es_out;
  std::vector<std::string> es_results;
  auto* es = eval->add_subcommand("sheet", "print the blind grading sheet");
  es->add_option("--session", es_session, "session file")->required();
  es->add_option("--results", es_results, "dataset_id=results.json (repeatable)");
  es->add_option("--out", es_out, "sheet file (default: stdout)");

  std::string ea_session, ea_judgments, ea_format = "md";
  auto* ea = eval->add_subcommand("aggregate", "de-blind and aggregate judgments");
  ea->add_option("--session", ea_session, "session file")->required();
  ea->add_option("--judgments", ea_judgments, "JSONL judgment records")->required();
  ea->add_option("--format", ea_format, "md, csv or json");

  auto* selftest = app.add_subcommand("selftest", "check metric hand cases and a mock bulk run");

  std::string ex_db, ex_kind, ex_batch, ex_out;
  auto* exp = app.add_subcommand("export", "write preference or SFT JSONL from a database");
  exp->add_option("--db", ex_db, "SQLite path")->required();
  exp->add_option("--kind", ex_kind, "preferences or sft")->required();
  exp->add_option("--batch", ex_batch, "restrict to one batch");
  exp->add_option("--out", ex_out, "output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*serve) return run_serve(serve_config, serve_bind, serve_db);
    if (*assess) return run_assess(ao);
    if (*report) return run_report(report_results, report_json ? "json" : report_format, report_json);
    if (*ec) return run_eval_create(ec_datasets, ec_n, ec_models, ec_graders, ec_seed, ec_out);
    if (*es) return run_eval_sheet(es_session, es_results, es_out);
    if (*ea) return run_eval_aggregate(ea_session, ea_judgments, ea_format);
    if (*selftest) return run_selftest();
    if (*exp) return run_export(ex_db, ex_kind, ex_batch, ex_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
