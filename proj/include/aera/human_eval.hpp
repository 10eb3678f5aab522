#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/metrics.hpp"

namespace aera {

struct EvalDataset {
  std::string dataset_id;
  std::vector<std::string> answer_ids;
};

struct SampledItem {
  std::string dataset_id;
  std::string answer_id;
  bool operator==(const SampledItem&) const = default;
};

/// n items per dataset, uniformly without replacement, deterministic in seed.
/// Throws std::invalid_argument if a dataset has fewer than n items.
std::vector<SampledItem> sample_items(const std::vector<EvalDataset>& datasets, std::size_t n_per_dataset,
                                      std::uint64_t seed);

/// A blind grading session. Graders only ever see slot numbers; the slot to
/// model mapping is a seeded permutation per item, resolved at aggregation.
struct EvalSession {
  std::string session_id;
  std::vector<SampledItem> items;
  std::size_t n_per_dataset = 0;
  std::vector<std::string> model_ids;
  std::uint64_t model_order_seed = 0;
  std::vector<std::string> graders;

  /// model index shown in each slot of the item
  std::vector<std::size_t> slot_order(std::size_t item_index) const;
  const std::string& model_for_slot(std::size_t item_index, std::size_t slot) const;
  std::size_t slot_for_model(std::size_t item_index, const std::string& model_id) const;
};

struct CorrectnessJudgment {
  std::string grader;
  std::size_t item_index = 0;
  std::size_t slot = 0;
  bool correct = false;
};

struct PairPreference {
  std::string grader;
  std::size_t item_index = 0;
  std::size_t winning_slot = 0;
};

/// Throws std::invalid_argument on an unknown grader, item, or slot.
void check_judgment(const EvalSession& s, const CorrectnessJudgment& j);
void check_preference(const EvalSession& s, const PairPreference& p);

struct ModelEvalRow {
  std::string model_id;
  std::size_t judged = 0;
  std::size_t correct = 0;
  std::optional<double> correctness_pct;
  std::size_t wins = 0;
  double win_rate_pct = 0.0;
};

struct SessionReport {
  std::vector<ModelEvalRow> rows;
  std::size_t preference_records = 0;
  std::optional<Kappa> correctness_kappa;  // first two graders, items both judged
  std::size_t correctness_overlap = 0;
  std::optional<Kappa> preference_kappa;  // de-blinded winner as a nominal label
  std::size_t preference_overlap = 0;
};

/// Pure function of the stored records. For each (grader, item, slot) and
/// (grader, item) only the latest record counts.
SessionReport aggregate_session(const EvalSession& session, const std::vector<CorrectnessJudgment>& judgments,
                                const std::vector<PairPreference>& preferences);

std::string report_to_markdown(const SessionReport& r);
std::string report_to_csv(const SessionReport& r);

void to_json(nlohmann::json& j, const SessionReport& r);
// Full session including seed; persisted form only, never sent to graders.
void to_json(nlohmann::json& j, const EvalSession& s);
void from_json(const nlohmann::json& j, EvalSession& s);

}  // namespace aera
