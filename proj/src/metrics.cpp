#include "aera/metrics.hpp"

#include <cstdint>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "aera/errors.hpp"

namespace aera {

using nlohmann::json;

LabelVector::LabelVector(std::vector<int> labels, int k) : labels_(std::move(labels)), k_(k) {
  if (k_ < 1) throw std::invalid_argument("LabelVector needs k >= 1");
  if (labels_.empty()) throw std::invalid_argument("LabelVector must not be empty");
  for (int l : labels_)
    if (l < 0 || l >= k_) throw std::invalid_argument("label " + std::to_string(l) + " outside [0, k-1]");
}

LabelVector LabelVector::from_scores(const std::vector<int>& scores, ScoreRange range) {
  std::vector<int> shifted;
  shifted.reserve(scores.size());
  for (int s : scores) shifted.push_back(s - range.min);
  return LabelVector(std::move(shifted), range.num_classes());
}

namespace {

void require_same_length(const LabelVector& a, const LabelVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
}

}  // namespace

double accuracy(const LabelVector& gold, const LabelVector& pred) {
  require_same_length(gold, pred);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double macro_f1(const LabelVector& gold, const LabelVector& pred) {
  require_same_length(gold, pred);
  const int k = std::max(gold.k(), pred.k());
  std::vector<std::size_t> tp(k), gold_count(k), pred_count(k);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++gold_count[gold[i]];
    ++pred_count[pred[i]];
    if (gold[i] == pred[i]) ++tp[gold[i]];
  }
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < k; ++c) {
    const auto denom = gold_count[c] + pred_count[c];
    if (denom == 0) continue;
    ++classes;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / classes;
}

Kappa qwk(const LabelVector& gold, const LabelVector& pred) {
  require_same_length(gold, pred);
  if (std::max(gold.k(), pred.k()) < 2) throw std::invalid_argument("qwk needs k >= 2");
  const auto n = static_cast<std::int64_t>(gold.size());
  std::int64_t sq_diff = 0, sum_g = 0, sum_p = 0, sum_g2 = 0, sum_p2 = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::int64_t g = gold[i], p = pred[i];
    sq_diff += (g - p) * (g - p);
    sum_g += g;
    sum_p += p;
    sum_g2 += g * g;
    sum_p2 += p * p;
  }
  const std::int64_t observed = n * sq_diff;
  const std::int64_t expected = n * sum_g2 - 2 * sum_g * sum_p + n * sum_p2;
  if (expected == 0) return {0.0, true};
  return {1.0 - static_cast<double>(observed) / static_cast<double>(expected), false};
}

Kappa cohen_kappa(const LabelVector& a, const LabelVector& b) {
  require_same_length(a, b);
  const int k = std::max(a.k(), b.k());
  std::vector<std::int64_t> ca(k), cb(k);
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    agree += a[i] == b[i];
  }
  const auto n = static_cast<std::int64_t>(a.size());
  std::int64_t chance = 0;
  for (int c = 0; c < k; ++c) chance += ca[c] * cb[c];
  // kappa = (p_o - p_e) / (1 - p_e) with p_o = agree/n, p_e = chance/n^2
  const std::int64_t denom = n * n - chance;
  if (denom == 0) return {a.labels() == b.labels() ? 1.0 : 0.0, true};
  return {static_cast<double>(n * agree - chance) / static_cast<double>(denom), false};
}

double correctness_rate(const std::vector<bool>& judgments) {
  if (judgments.empty()) throw std::invalid_argument("correctness_rate needs at least one judgment");
  std::size_t yes = 0;
  for (bool j : judgments) yes += j;
  return 100.0 * static_cast<double>(yes) / static_cast<double>(judgments.size());
}

std::map<std::string, double> preference_win_rate(const std::vector<PairwiseChoice>& records,
                                                  const std::vector<std::string>& models) {
  if (records.empty()) throw std::invalid_argument("preference_win_rate needs at least one record");
  std::map<std::string, std::size_t> wins;
  for (const auto& m : models) wins[m] = 0;
  for (const auto& r : records) {
    const auto it = wins.find(r.winner_model);
    if (it == wins.end()) throw std::invalid_argument("record names unregistered model " + r.winner_model);
    ++it->second;
  }
  std::map<std::string, double> out;
  for (const auto& [m, w] : wins)
    out[m] = 100.0 * static_cast<double>(w) / static_cast<double>(records.size());
  return out;
}

MetricsReport build_report(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                           const std::string& model_id) {
  if (!batch.has_gold()) throw NoGroundTruthError("batch " + batch.batch_id + " has no gold scores");
  const auto range = batch.question.range();

  std::map<std::string, const Assessment*> by_answer;
  for (const auto& a : assessments)
    if (a.model_id == model_id) by_answer[a.answer_id] = &a;

  MetricsReport r;
  r.model_id = model_id;
  std::vector<int> gold, pred;
  for (const auto& answer : batch.answers) {
    const auto it = by_answer.find(answer.answer_id);
    if (it == by_answer.end()) continue;
    if (!answer.gold_score) {
      ++r.excluded_no_gold;
      continue;
    }
    if (!it->second->usable()) {
      ++r.excluded_failed;
      continue;
    }
    gold.push_back(*answer.gold_score);
    pred.push_back(it->second->predicted_score);
  }
  r.n = gold.size();
  for (int s = range.min; s <= range.max; ++s) {
    ClassCount c{s, 0, 0};
    for (std::size_t i = 0; i < gold.size(); ++i) {
      c.gold += gold[i] == s;
      c.predicted += pred[i] == s;
    }
    r.classes.push_back(c);
  }
  if (r.n == 0) {
    r.qwk_degenerate = true;
    return r;
  }
  const auto g = LabelVector::from_scores(gold, range);
  const auto p = LabelVector::from_scores(pred, range);
  r.accuracy = accuracy(g, p);
  r.macro_f1 = macro_f1(g, p);
  if (range.num_classes() >= 2) {
    const auto k = qwk(g, p);
    r.qwk = k.value;
    r.qwk_degenerate = k.degenerate;
  } else {
    r.qwk_degenerate = true;
  }
  return r;
}

std::vector<MetricsReport> build_reports(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                                         const std::vector<std::string>& model_ids) {
  std::vector<MetricsReport> out;
  for (const auto& m : model_ids) out.push_back(build_report(batch, assessments, m));
  return out;
}

void to_json(json& j, const MetricsReport& r) {
  j = {{"model_id", r.model_id},
       {"n", r.n},
       {"qwk_degenerate", r.qwk_degenerate},
       {"excluded_failed", r.excluded_failed},
       {"excluded_no_gold", r.excluded_no_gold},
       {"classes", json::array()}};
  if (r.n > 0) {
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["qwk"] = r.qwk;
  } else {
    j["accuracy"] = j["macro_f1"] = j["qwk"] = nullptr;
  }
  for (const auto& c : r.classes) j["classes"].push_back({{"score", c.score}, {"gold", c.gold}, {"predicted", c.predicted}});
}

namespace {

std::string fixed4(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

std::string metric_cell(const MetricsReport& r, double v) { return r.n == 0 ? "n/a" : fixed4(v); }

}  // namespace

std::string reports_to_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "model_id,n,accuracy,macro_f1,qwk,excluded_failed,excluded_no_gold\n";
  for (const auto& r : reports)
    out << r.model_id << ',' << r.n << ',' << metric_cell(r, r.accuracy) << ',' << metric_cell(r, r.macro_f1) << ','
        << metric_cell(r, r.qwk) << ',' << r.excluded_failed << ',' << r.excluded_no_gold << '\n';
  return out.str();
}

std::string reports_to_markdown(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "| Model | N | Acc | F1 | QWK |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : reports)
    out << "| " << r.model_id << " | " << r.n << " | " << metric_cell(r, r.accuracy) << " | "
        << metric_cell(r, r.macro_f1) << " | " << metric_cell(r, r.qwk) << (r.qwk_degenerate && r.n ? "*" : "")
        << " |\n";
  bool any_degenerate = false;
  for (const auto& r : reports) any_degenerate |= r.qwk_degenerate && r.n;
  if (any_degenerate) out << "\n\\* QWK undefined (no expected disagreement); reported as 0.\n";
  return out.str();
}

}  // namespace aera
