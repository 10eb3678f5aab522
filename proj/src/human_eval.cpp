#include "aera/human_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace aera {

using nlohmann::json;

std::vector<SampledItem> sample_items(const std::vector<EvalDataset>& datasets, std::size_t n_per_dataset,
                                      std::uint64_t seed) {
  std::vector<SampledItem> out;
  for (const auto& d : datasets) {
    if (d.answer_ids.size() < n_per_dataset)
      throw std::invalid_argument("dataset " + d.dataset_id + " has " + std::to_string(d.answer_ids.size()) +
                                  " items, fewer than " + std::to_string(n_per_dataset));
    std::vector<std::size_t> idx(d.answer_ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    seeded_shuffle(idx, mix64(seed ^ fnv1a64(d.dataset_id)));
    for (std::size_t i = 0; i < n_per_dataset; ++i) out.push_back({d.dataset_id, d.answer_ids[idx[i]]});
  }
  return out;
}

std::vector<std::size_t> EvalSession::slot_order(std::size_t item_index) const {
  std::vector<std::size_t> order(model_ids.size());
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, mix64(model_order_seed ^ mix64(item_index + 1)));
  return order;
}

const std::string& EvalSession::model_for_slot(std::size_t item_index, std::size_t slot) const {
  return model_ids.at(slot_order(item_index).at(slot));
}

std::size_t EvalSession::slot_for_model(std::size_t item_index, const std::string& model_id) const {
  const auto order = slot_order(item_index);
  for (std::size_t s = 0; s < order.size(); ++s)
    if (model_ids[order[s]] == model_id) return s;
  throw std::invalid_argument("model " + model_id + " not in session");
}

namespace {

void check_common(const EvalSession& s, const std::string& grader, std::size_t item, std::size_t slot) {
  if (std::find(s.graders.begin(), s.graders.end(), grader) == s.graders.end())
    throw std::invalid_argument("grader " + grader + " is not part of the session");
  if (item >= s.items.size()) throw std::invalid_argument("item index out of range");
  if (slot >= s.model_ids.size()) throw std::invalid_argument("slot out of range");
}

std::string pct(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << v;
  std::string out = s.str();
  while (out.back() == '0') out.pop_back();
  if (out.back() == '.') out.pop_back();
  return out;
}

std::string kappa_text(const std::optional<Kappa>& k, std::size_t n) {
  if (!k) return "n/a";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(3);
  s << k->value << " (n=" << n << (k->degenerate ? ", degenerate" : "") << ")";
  return s.str();
}

}  // namespace

void check_judgment(const EvalSession& s, const CorrectnessJudgment& j) {
  check_common(s, j.grader, j.item_index, j.slot);
}

void check_preference(const EvalSession& s, const PairPreference& p) {
  check_common(s, p.grader, p.item_index, p.winning_slot);
}

SessionReport aggregate_session(const EvalSession& session, const std::vector<CorrectnessJudgment>& judgments,
                                const std::vector<PairPreference>& preferences) {
  // latest record per key
  std::map<std::tuple<std::string, std::size_t, std::size_t>, bool> verdicts;
  for (const auto& j : judgments) {
    check_judgment(session, j);
    verdicts[{j.grader, j.item_index, j.slot}] = j.correct;
  }
  std::map<std::pair<std::string, std::size_t>, std::size_t> picks;
  for (const auto& p : preferences) {
    check_preference(session, p);
    picks[{p.grader, p.item_index}] = p.winning_slot;
  }

  SessionReport r;
  std::map<std::string, std::vector<bool>> per_model;
  for (const auto& [key, correct] : verdicts) {
    const auto& [grader, item, slot] = key;
    per_model[session.model_for_slot(item, slot)].push_back(correct);
  }

  std::vector<PairwiseChoice> choices;
  for (const auto& [key, slot] : picks) {
    const auto& [grader, item] = key;
    choices.push_back({std::to_string(item), session.model_for_slot(item, slot)});
  }
  r.preference_records = choices.size();
  std::map<std::string, double> win_rates;
  if (!choices.empty()) win_rates = preference_win_rate(choices, session.model_ids);

  for (const auto& m : session.model_ids) {
    ModelEvalRow row;
    row.model_id = m;
    const auto& v = per_model[m];
    row.judged = v.size();
    row.correct = static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
    if (!v.empty()) row.correctness_pct = correctness_rate(v);
    for (const auto& c : choices) row.wins += c.winner_model == m;
    row.win_rate_pct = win_rates.empty() ? 0.0 : win_rates[m];
    r.rows.push_back(std::move(row));
  }

  if (session.graders.size() >= 2) {
    const auto& ga = session.graders[0];
    const auto& gb = session.graders[1];
    std::vector<int> a, b;
    for (const auto& [key, correct] : verdicts) {
      const auto& [grader, item, slot] = key;
      if (grader != ga) continue;
      const auto other = verdicts.find({gb, item, slot});
      if (other == verdicts.end()) continue;
      a.push_back(correct ? 1 : 0);
      b.push_back(other->second ? 1 : 0);
    }
    r.correctness_overlap = a.size();
    if (!a.empty()) r.correctness_kappa = cohen_kappa(LabelVector(a, 2), LabelVector(b, 2));

    std::vector<int> pa, pb;
    for (const auto& [key, slot] : picks) {
      const auto& [grader, item] = key;
      if (grader != ga) continue;
      const auto other = picks.find({gb, item});
      if (other == picks.end()) continue;
      pa.push_back(static_cast<int>(session.slot_order(item)[slot]));
      pb.push_back(static_cast<int>(session.slot_order(item)[other->second]));
    }
    r.preference_overlap = pa.size();
    const int k = static_cast<int>(session.model_ids.size());
    if (!pa.empty()) r.preference_kappa = cohen_kappa(LabelVector(pa, k), LabelVector(pb, k));
  }
  return r;
}

std::string report_to_markdown(const SessionReport& r) {
  std::ostringstream out;
  out << "| Metric |";
  for (const auto& row : r.rows) out << ' ' << row.model_id << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < r.rows.size(); ++i) out << "---:|";
  out << "\n| Correctness (%) |";
  for (const auto& row : r.rows) out << ' ' << (row.correctness_pct ? pct(*row.correctness_pct) : "n/a") << " |";
  out << "\n| Preference Win Rate (%) |";
  for (const auto& row : r.rows) out << ' ' << (r.preference_records ? pct(row.win_rate_pct) : "n/a") << " |";
  out << "\n\nInter-rater agreement (Cohen's kappa): correctness " << kappa_text(r.correctness_kappa, r.correctness_overlap)
      << ", preference " << kappa_text(r.preference_kappa, r.preference_overlap) << "\n";
  return out.str();
}

std::string report_to_csv(const SessionReport& r) {
  std::ostringstream out;
  out << "model_id,judged,correct,correctness_pct,wins,win_rate_pct\n";
  for (const auto& row : r.rows)
    out << row.model_id << ',' << row.judged << ',' << row.correct << ','
        << (row.correctness_pct ? pct(*row.correctness_pct) : "") << ',' << row.wins << ','
        << (r.preference_records ? pct(row.win_rate_pct) : "") << '\n';
  return out.str();
}

void to_json(json& j, const SessionReport& r) {
  j = {{"models", json::array()}, {"preference_records", r.preference_records}};
  for (const auto& row : r.rows) {
    json m = {{"model_id", row.model_id}, {"judged", row.judged}, {"correct", row.correct}, {"wins", row.wins}};
    m["correctness_pct"] = row.correctness_pct ? json(*row.correctness_pct) : json(nullptr);
    m["win_rate_pct"] = r.preference_records ? json(row.win_rate_pct) : json(nullptr);
    j["models"].push_back(std::move(m));
  }
  const auto kappa = [](const std::optional<Kappa>& k, std::size_t n) {
    if (!k) return json(nullptr);
    return json{{"value", k->value}, {"degenerate", k->degenerate}, {"n", n}};
  };
  j["correctness_kappa"] = kappa(r.correctness_kappa, r.correctness_overlap);
  j["preference_kappa"] = kappa(r.preference_kappa, r.preference_overlap);
}

void to_json(json& j, const EvalSession& s) {
  j = {{"session_id", s.session_id},
       {"n_per_dataset", s.n_per_dataset},
       {"model_ids", s.model_ids},
       {"model_order_seed", s.model_order_seed},
       {"graders", s.graders},
       {"items", json::array()}};
  for (const auto& it : s.items) j["items"].push_back({{"dataset_id", it.dataset_id}, {"answer_id", it.answer_id}});
}

void from_json(const json& j, EvalSession& s) {
  s.session_id = j.value("session_id", std::string{});
  s.n_per_dataset = j.value("n_per_dataset", std::size_t{0});
  s.model_ids = j.at("model_ids").get<std::vector<std::string>>();
  s.model_order_seed = j.value("model_order_seed", std::uint64_t{0});
  s.graders = j.at("graders").get<std::vector<std::string>>();
  s.items.clear();
  for (const auto& it : j.at("items"))
    s.items.push_back({it.at("dataset_id").get<std::string>(), it.at("answer_id").get<std::string>()});
}

}  // namespace aera
