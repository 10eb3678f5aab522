// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "aera/api_service.hpp"
#include "aera/bulk_run.hpp"
#include "aera/highlighter.hpp"
#include "aera/human_eval.hpp"
#include "aera/metrics.hpp"
#include "aera/structured_output.hpp"
#include "aera/util.hpp"
#include "support/eval_fixture.hpp"
#include "support/metric_oracle.hpp"
#include "support/span_oracle.hpp"
#include "support/store_scenario.hpp"
#include "test_support.hpp"

using namespace aera;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kMetricTol = 1e-9;
constexpr double kMetricBudgetS = 10.0;
constexpr double kE2eBudgetS = 30.0;
constexpr std::size_t kCorpusMinParsed = 36;
constexpr int kFuzzIterations = 10000;

struct Verdict {
  bool pass = true;
  std::string detail;
  bool skipped = false;
};

// Collects the first failure message; later checks still run.
struct Checker {
  Verdict out;
  void expect(bool ok, const std::string& what) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

bool near(double a, double b) { return std::abs(a - b) <= kMetricTol; }

Verdict metric_oracle() {
  Checker c;
  const auto t0 = Clock::now();
  const auto lv = [](std::vector<int> v, int k) { return LabelVector(std::move(v), k); };
  c.expect(near(qwk(lv({0, 2}, 3), lv({2, 0}, 3)).value, -1.0), "qwk hand case -1.0");
  c.expect(near(qwk(lv({0, 0, 1, 1}, 2), lv({0, 1, 0, 1}, 2)).value, 0.0), "qwk hand case 0.0");
  c.expect(near(macro_f1(lv({0, 0, 1}, 2), lv({0, 1, 1}, 2)), 2.0 / 3.0), "macro_f1 hand case 2/3");
  c.expect(near(cohen_kappa(lv({1, 1, 0, 0}, 2), lv({1, 0, 1, 0}, 2)).value, 0.0), "kappa hand case 0.0");

  std::mt19937 rng(20240611);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 5)(rng);
    const int n = std::uniform_int_distribution<int>(1, 200)(rng);
    const int agree_pct = std::uniform_int_distribution<int>(0, 100)(rng);
    std::vector<int> g(n), p(n);
    for (int i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng() % k);
      p[i] = static_cast<int>(rng() % 100) < agree_pct ? g[i] : static_cast<int>(rng() % k);
    }
    const auto G = lv(g, k), P = lv(p, k);
    const auto tag = " (trial " + std::to_string(trial) + ")";
    c.expect(near(accuracy(G, P), oracle::accuracy(g, p, k)), "accuracy" + tag);
    c.expect(near(macro_f1(G, P), oracle::macro_f1(g, p, k)), "macro_f1" + tag);
    const auto q = qwk(G, P);
    const auto qo = oracle::qwk(g, p, k);
    c.expect(q.degenerate == qo.degenerate && near(q.value, qo.value), "qwk" + tag);
    const auto ck = cohen_kappa(G, P);
    const auto co = oracle::cohen_kappa(g, p, k);
    c.expect(ck.degenerate == co.degenerate && near(ck.value, co.value), "cohen_kappa" + tag);
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  c.expect(s < kMetricBudgetS, "took " + std::to_string(s) + " s");
  if (c.out.pass) c.out.detail = "1000 vectors + 4 hand cases within 1e-9";
  return c.out;
}

Verdict human_eval_tallies() {
  Checker c;
  const auto f = evalfixture::known_tallies();
  const auto r = aggregate_session(f.session, f.judgments, f.preferences);
  const double correct[] = {76.0, 68.0, 44.0};
  const double wins[] = {50.0, 28.0, 22.0};
  c.expect(r.rows.size() == 3, "expected three model rows");
  for (std::size_t m = 0; m < r.rows.size() && m < 3; ++m) {
    c.expect(r.rows[m].correctness_pct && *r.rows[m].correctness_pct == correct[m],
             r.rows[m].model_id + " correctness");
    c.expect(r.rows[m].win_rate_pct == wins[m], r.rows[m].model_id + " win rate");
  }

  EvalSession s;
  s.items.resize(4);
  s.model_ids = {"a", "b"};
  s.graders = {"g1", "g2"};
  const bool v[] = {true, false, true, false}, a[] = {true, true, false, false}, b[] = {true, false, true, false};
  std::vector<CorrectnessJudgment> perfect, indep;
  for (std::size_t i = 0; i < 4; ++i) {
    perfect.push_back({"g1", i, 0, v[i]});
    perfect.push_back({"g2", i, 0, v[i]});
    indep.push_back({"g1", i, 0, a[i]});
    indep.push_back({"g2", i, 0, b[i]});
  }
  const auto kp = aggregate_session(s, perfect, {}).correctness_kappa;
  const auto ki = aggregate_session(s, indep, {}).correctness_kappa;
  c.expect(kp && kp->value == 1.0, "perfect graders kappa");
  c.expect(ki && std::abs(ki->value) < 1e-12, "independent graders kappa");
  if (c.out.pass) c.out.detail = "76/68/44 % correct, 50/28/22 % wins, kappa 1.0/0.0";
  return c.out;
}

Verdict mock_end_to_end() {
  Checker c;
  const auto t0 = Clock::now();
  Gateway g;
  for (const auto& p : default_mock_registry()) g.register_provider(p);
  const auto question = json::parse(testsupport::read_file(testsupport::fixture_path("question.json"))).get<QuestionSpec>();
  const auto batch =
      parse_answer_batch(testsupport::read_file(testsupport::data_path("answers_20.csv")), BatchFormat::csv, question);
  const std::vector<std::string> models = {"mock-a", "mock-b", "mock-c"};
  GenerationParams params;
  params.seed = 7;

  const auto first = run_bulk(g, batch, models, params);
  const auto second = run_bulk(g, batch, models, params);
  c.expect(first.document.assessments().size() == 60, "assessments: " + std::to_string(first.document.assessments().size()));
  c.expect(first.progress.size() == 60, "progress events: " + std::to_string(first.progress.size()));
  for (std::size_t i = 1; i < first.progress.size(); ++i)
    c.expect(first.progress[i].completed_so_far > first.progress[i - 1].completed_so_far, "progress not increasing");
  const auto doc = dump_json(results_to_json(first.document), 2);
  c.expect(doc == dump_json(results_to_json(second.document), 2), "two runs differ");

  // the offline `report` path: reload results.json and recompute
  const auto reloaded = results_from_json(json::parse(doc));
  const auto recomputed = recompute_metrics(reloaded);
  c.expect(first.document.metrics.has_value() && recomputed.has_value(), "metrics missing");
  if (first.document.metrics && recomputed)
    c.expect(reports_to_csv(*recomputed) == reports_to_csv(*first.document.metrics), "recomputed report differs");

  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  c.expect(s < kE2eBudgetS, "took " + std::to_string(s) + " s");
  if (c.out.pass) {
    std::ostringstream d;
    d << "60 assessments, 60 events, deterministic, report consistent, " << static_cast<int>(s * 1000) << " ms";
    c.out.detail = d.str();
  }
  return c.out;
}

Verdict parse_robustness() {
  Checker c;
  std::istringstream corpus(testsupport::read_file(testsupport::data_path("parse_corpus.jsonl")));
  std::string line;
  std::size_t total = 0, parsed = 0, typed_failures = 0;
  while (std::getline(corpus, line)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line);
    ++total;
    const auto r = parse_structured_output(j.at("raw").get<std::string>(), {j.at("score_min").get<int>(), j.at("score_max").get<int>()});
    if (r.status != ParseStatus::failed) ++parsed;
    else if (r.failure != ParseFailure::none) ++typed_failures;
  }
  c.expect(total == 40, "corpus has " + std::to_string(total) + " entries");
  c.expect(parsed >= kCorpusMinParsed, "parsed " + std::to_string(parsed));
  c.expect(parsed + typed_failures == total, "untyped failure present");

  std::mt19937 rng(99);
  const std::string seeds[] = {"{\"score\": 2, \"rationale\": \"ok\"}", "```json\n{", "[{\"score\":", "{{}}"};
  for (int i = 0; i < kFuzzIterations; ++i) {
    std::string raw = seeds[rng() % 4];
    const int extra = static_cast<int>(rng() % 64);
    for (int b = 0; b < extra; ++b) {
      const auto pos = raw.empty() ? 0 : rng() % (raw.size() + 1);
      raw.insert(raw.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<char>(rng() % 256));
    }
    const auto r = parse_structured_output(raw, {0, 3});
    if (r.status != ParseStatus::failed) c.expect(r.score >= 0 && r.score <= 3, "fuzz accepted out-of-range score");
  }
  if (c.out.pass)
    c.out.detail = std::to_string(parsed) + "/40 parsed, " + std::to_string(typed_failures) + " typed failures, " +
                   std::to_string(kFuzzIterations) + " fuzz inputs without crash";
  return c.out;
}

Verdict highlight_properties() {
  Checker c;
  std::mt19937 rng(8675309);
  const std::vector<std::string> vocab = {"stem", "Stem", "STEM", "the", "theory", "xylem", "Xylem", "\xC3\xA9",
                                          "water", "transport", " ", " ", ",", ".", "-", "\xF0\x9F\x8C\xB9", "\n"};
  const std::vector<std::string> phrases = {"stem", "the", "transport water", "water", "xylem", "stem, the",
                                            "\xC3\xA9", "theory", "the stem", "-", "ste", "Water Transport"};
  std::size_t spans_checked = 0;
  const int trials = 5000;
  for (int trial = 0; trial < trials && c.out.pass; ++trial) {
    std::string text;
    const int words = std::uniform_int_distribution<int>(0, 30)(rng);
    for (int i = 0; i < words; ++i) text += vocab[rng() % vocab.size()];
    TagSet tags{SpanTarget::answer, {}};
    const int n = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int i = 0; i < n; ++i) tags.tags.push_back({phrases[rng() % phrases.size()], Polarity::key_element});

    const auto r = align_spans(text, tags);
    const auto again = align_spans(text, tags);
    c.expect(r.spans == again.spans && r.unmatched == again.unmatched, "align_spans is not pure");
    // drop one copy per unmatched entry; duplicate tags may leave one copy matched
    TagSet matched = tags;
    for (const auto& u : r.unmatched) {
      const auto it = std::find(matched.tags.rbegin(), matched.tags.rend(), u);
      if (it != matched.tags.rend()) matched.tags.erase(std::next(it).base());
    }
    c.expect(align_spans(text, matched).spans == r.spans, "re-aligning the matched tags changed the spans");

    const auto cps = oracle::decode(text);
    for (std::size_t i = 0; i < r.spans.size(); ++i) {
      const auto& s = r.spans[i];
      ++spans_checked;
      c.expect(s.start < s.end && s.end <= cps.size(), "span out of bounds in: " + text);
      if (i > 0) c.expect(r.spans[i - 1].end <= s.start, "overlapping spans in: " + text);
      bool ok = false;
      for (const auto& t : tags.tags) {
        const auto p = oracle::decode(t.phrase);
        ok |= p.size() == s.end - s.start && oracle::equal_at(cps, s.start, p) && oracle::bounded(cps, s.start, s.end, p);
      }
      c.expect(ok, "span is not a bounded case-insensitive tag occurrence in: " + text);
    }
  }
  if (c.out.pass)
    c.out.detail = std::to_string(trials) + " random cases, " + std::to_string(spans_checked) + " spans checked";
  return c.out;
}

Verdict persistence_and_export() {
  Checker c;
  const auto db = std::filesystem::temp_directory_path() / ("aera_accept_" + random_id("p") + ".db");
  std::string before_pairs, before_sft, token, user_id;
  scenario::Ids ids;
  {
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.database_url = db.string();
    ApiService service(cfg, make_gateway(cfg));
    httplib::Client cli("127.0.0.1", service.start());
    auto reg = cli.Post("/auth/register", json{{"email", "a@example.org"}, {"password", "long enough"}}.dump(),
                        "application/json");
    c.expect(reg && reg->status == 201, "register failed");
    if (!c.out.pass) return c.out;
    const auto body = json::parse(reg->body);
    token = body.at("token");
    user_id = body.at("user_id");
    ids = scenario::populate(service.store(), user_id);
    const httplib::Headers h = {{"Authorization", "Bearer " + token}};
    before_pairs = cli.Get("/exports/preferences.jsonl", h)->body;
    before_sft = cli.Get("/exports/sft.jsonl", h)->body;
  }
  {
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.database_url = db.string();
    ApiService service(cfg, make_gateway(cfg));
    httplib::Client cli("127.0.0.1", service.start());
    const httplib::Headers h = {{"Authorization", "Bearer " + token}};
    c.expect(cli.Get("/exports/preferences.jsonl", h)->body == before_pairs, "preference export changed after restart");
    c.expect(cli.Get("/exports/sft.jsonl", h)->body == before_sft, "sft export changed after restart");
    const auto pairs = service.store().export_preference_pairs({});
    std::size_t a1 = 0, a2 = 0;
    for (const auto& p : pairs) {
      a1 += p.answer_id == "a1";
      a2 += p.answer_id == "a2";
    }
    c.expect(a1 == 2, "a1 (1 chosen x 2 rejected) gave " + std::to_string(a1) + " pairs");
    c.expect(a2 == 4, "a2 (2 chosen x 2 rejected) gave " + std::to_string(a2) + " pairs");
  }
  for (const char* suffix : {"", "-wal", "-shm"}) std::filesystem::remove(db.string() + suffix);
  c.expect(!before_pairs.empty() && !before_sft.empty(), "exports are empty");
  if (c.out.pass) c.out.detail = "exports byte-identical across restart, pairs 1x2->2 and 2x2->4";
  return c.out;
}

// Single answer against a real OpenAI-compatible provider.
Verdict live_smoke() {
  const char* key = std::getenv("OPENAI_API_KEY");
  if (!key || !*key) return {true, "OPENAI_API_KEY not set", true};
  Checker c;
  ProviderConfig p;
  p.model_id = "live";
  const char* base = std::getenv("AERA_LIVE_ENDPOINT");
  p.endpoint = base && *base ? base : "https://api.openai.com/v1";
  const char* model = std::getenv("AERA_LIVE_MODEL");
  p.api_model = model && *model ? model : "gpt-4o-mini";
  p.credentials_ref = "OPENAI_API_KEY";
  p.max_concurrency = 1;
  p.timeout_ms = 60000;
  Gateway g;
  g.register_provider(p);
  const auto q = testsupport::stem_question();
  const auto a = g.assess("live", {}, q, {"live1", "The stem holds the flower up and its xylem carries water.", 2});
  c.expect(a.outcome == aera::Outcome::ok && a.usable(), "live assessment failed: " + a.error);
  if (c.out.pass) c.out.detail = "score " + std::to_string(a.predicted_score) + " from " + p.api_model;
  return c.out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"metric_oracle_equivalence", metric_oracle},
      {"human_eval_aggregation", human_eval_tallies},
      {"mock_end_to_end", mock_end_to_end},
      {"parse_robustness", parse_robustness},
      {"highlight_alignment_properties", highlight_properties},
      {"persistence_and_export", persistence_and_export},
      {"live_smoke", live_smoke},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const char* verdict = o.skipped ? "SKIP" : o.pass ? "PASS" : "FAIL";
    std::cout << verdict << " " << name << ": " << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed;
}
