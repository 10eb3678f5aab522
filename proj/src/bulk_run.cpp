#include "aera/bulk_run.hpp"

#include "aera/errors.hpp"
#include "aera/store.hpp"

namespace aera {

using nlohmann::json;

AnswerBatch ResultsDocument::batch() const {
  AnswerBatch b;
  b.batch_id = "results";
  b.question = question;
  b.answers = answers;
  return b;
}

std::vector<Assessment> ResultsDocument::assessments() const {
  std::vector<Assessment> out;
  for (const auto& r : results) out.insert(out.end(), r.assessments.begin(), r.assessments.end());
  return out;
}

std::optional<std::vector<MetricsReport>> recompute_metrics(const ResultsDocument& doc) {
  const auto b = doc.batch();
  if (!b.has_gold()) return std::nullopt;
  return build_reports(b, doc.assessments(), doc.models);
}

ResultsDocument make_results_document(const AnswerBatch& batch, const std::vector<std::string>& models,
                                      const GenerationParams& params, std::vector<AnswerResults> results) {
  ResultsDocument doc;
  doc.question = batch.question;
  doc.models = models;
  doc.params = params;
  doc.answers = batch.answers;
  doc.results = std::move(results);
  for (auto& r : doc.results)
    for (auto& a : r.assessments) a.assessment_id.clear();
  doc.metrics = recompute_metrics(doc);
  return doc;
}

json results_to_json(const ResultsDocument& doc) {
  json answers = json::array();
  for (std::size_t i = 0; i < doc.answers.size(); ++i) {
    json a = doc.answers[i];
    json list = json::array();
    if (i < doc.results.size())
      for (const auto& as : doc.results[i].assessments) {
        json item = as;
        item.erase("answer_id");
        item.erase("assessment_id");
        list.push_back(std::move(item));
      }
    a["assessments"] = std::move(list);
    answers.push_back(std::move(a));
  }
  json j = {{"question", doc.question}, {"models", doc.models}, {"params", doc.params}, {"answers", answers}};
  if (doc.metrics) j["metrics"] = *doc.metrics;
  else j["metrics_notice"] = "no gold scores in the batch; metrics omitted";
  return j;
}

ResultsDocument results_from_json(const json& j) {
  ResultsDocument doc;
  doc.question = j.at("question").get<QuestionSpec>();
  doc.models = j.at("models").get<std::vector<std::string>>();
  doc.params = j.value("params", GenerationParams{});
  for (const auto& a : j.at("answers")) {
    StudentAnswer answer = a.get<StudentAnswer>();
    AnswerResults r{answer.answer_id, {}};
    for (auto item : a.value("assessments", json::array())) {
      item["answer_id"] = answer.answer_id;
      r.assessments.push_back(item.get<Assessment>());
    }
    doc.answers.push_back(std::move(answer));
    doc.results.push_back(std::move(r));
  }
  doc.metrics = recompute_metrics(doc);
  return doc;
}

BulkRunOutput run_bulk(Gateway& gateway, const AnswerBatch& batch, const std::vector<std::string>& models,
                       const GenerationParams& params, OrchestratorOptions options,
                       std::chrono::milliseconds timeout) {
  Store store(":memory:");
  AnswerBatch copy = batch;
  copy.batch_id.clear();
  store.save_batch(copy, "cli");
  Orchestrator orch(gateway, store, options);
  const auto job_id = orch.start_bulk_job(copy.batch_id, models, params, "cli");

  BulkRunOutput out;
  auto sub = orch.subscribe_progress(job_id);
  const auto until = std::chrono::steady_clock::now() + timeout;
  while (!sub.ended()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw std::runtime_error("bulk job did not finish in time");
    if (auto e = sub.next(left)) out.progress.push_back(std::move(*e));
  }
  out.job = orch.job(job_id);
  if (out.job.state != JobState::done) throw std::runtime_error("bulk job failed: " + out.job.error);
  out.document = make_results_document(copy, models, params, orch.collect_results(job_id));
  return out;
}

}  // namespace aera
