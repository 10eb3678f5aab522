#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"

namespace aera {

/// Labels shifted to [0, k-1]. Construction validates the range.
class LabelVector {
 public:
  LabelVector(std::vector<int> labels, int k);
  static LabelVector from_scores(const std::vector<int>& scores, ScoreRange range);

  const std::vector<int>& labels() const { return labels_; }
  int k() const { return k_; }
  std::size_t size() const { return labels_.size(); }
  int operator[](std::size_t i) const { return labels_[i]; }

 private:
  std::vector<int> labels_;
  int k_;
};

struct Kappa {
  double value = 0.0;
  bool degenerate = false;  // chance-agreement denominator was zero
};

double accuracy(const LabelVector& gold, const LabelVector& pred);

/// Unweighted mean of per-class F1 over the classes present in gold or pred.
double macro_f1(const LabelVector& gold, const LabelVector& pred);

/// Quadratic weighted kappa over k classes. Evaluated exactly in integers via
/// first and second moments: sum_ij (i-j)^2 O_ij against the same sum under
/// independent marginals.
Kappa qwk(const LabelVector& gold, const LabelVector& pred);

Kappa cohen_kappa(const LabelVector& rater_a, const LabelVector& rater_b);

/// 100 x share of true judgments. Throws std::invalid_argument when empty.
double correctness_rate(const std::vector<bool>& judgments);

struct PairwiseChoice {
  std::string item_id;
  std::string winner_model;
};

/// Share of wins per model in percent; every model in `models` appears.
std::map<std::string, double> preference_win_rate(const std::vector<PairwiseChoice>& records,
                                                  const std::vector<std::string>& models);

struct ClassCount {
  int score = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
};

struct MetricsReport {
  std::string model_id;
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double qwk = 0.0;
  bool qwk_degenerate = false;
  std::size_t excluded_failed = 0;   // gold present but assessment failed
  std::size_t excluded_no_gold = 0;  // assessment present but no gold score
  std::vector<ClassCount> classes;
};

/// Report over answers that have a gold score and a non-failed assessment from
/// `model_id`. Throws NoGroundTruthError when the batch has no gold scores.
MetricsReport build_report(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                           const std::string& model_id);

std::vector<MetricsReport> build_reports(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                                         const std::vector<std::string>& model_ids);

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Table-style rows: model, n, Acc, F1, QWK.
std::string reports_to_csv(const std::vector<MetricsReport>& reports);
std::string reports_to_markdown(const std::vector<MetricsReport>& reports);

}  // namespace aera
