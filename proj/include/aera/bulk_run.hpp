#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"
#include "aera/gateway.hpp"
#include "aera/job.hpp"
#include "aera/metrics.hpp"
#include "aera/orchestrator.hpp"

namespace aera {

/// The results.json document written by `aera assess` and read by
/// `aera report`. Holds no ids or timestamps, so identical inputs give
/// byte-identical files.
struct ResultsDocument {
  QuestionSpec question;
  std::vector<std::string> models;
  GenerationParams params;
  std::vector<StudentAnswer> answers;
  std::vector<AnswerResults> results;
  std::optional<std::vector<MetricsReport>> metrics;  // absent without gold scores

  AnswerBatch batch() const;
  std::vector<Assessment> assessments() const;
};

ResultsDocument make_results_document(const AnswerBatch& batch, const std::vector<std::string>& models,
                                      const GenerationParams& params, std::vector<AnswerResults> results);

/// Recomputes metrics from the stored assessments; nullopt without gold.
std::optional<std::vector<MetricsReport>> recompute_metrics(const ResultsDocument& doc);

nlohmann::json results_to_json(const ResultsDocument& doc);
ResultsDocument results_from_json(const nlohmann::json& j);

struct BulkRunOutput {
  BulkJob job;
  ResultsDocument document;
  std::vector<ProgressEvent> progress;
};

/// Runs a whole bulk job through the orchestrator against a private
/// in-memory store. Throws on rejected input or when the job fails.
BulkRunOutput run_bulk(Gateway& gateway, const AnswerBatch& batch, const std::vector<std::string>& models,
                       const GenerationParams& params, OrchestratorOptions options = {},
                       std::chrono::milliseconds timeout = std::chrono::minutes(30));

}  // namespace aera
