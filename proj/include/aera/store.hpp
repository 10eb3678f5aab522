#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"
#include "aera/human_eval.hpp"
#include "aera/job.hpp"

struct sqlite3;

namespace aera {

struct UserRecord {
  std::string user_id;
  std::string email;
  std::string password_hash;
  Timestamp created_at = 0;
};

struct StoredAssessment {
  Assessment assessment;
  std::string job_id;
  std::string batch_id;
};

enum class ChatRole { user, assistant, system };
std::string_view to_string(ChatRole r);
std::optional<ChatRole> chat_role_from_string(std::string_view s);

struct ChatTurn {
  std::string session_id;
  std::size_t turn_index = 0;
  ChatRole role = ChatRole::user;
  std::string content;
  std::string model_id;
  Timestamp created_at = 0;
};

struct ChatSession {
  std::string session_id;
  std::string owner;
  std::string batch_id;
  std::string answer_id;
  std::vector<std::string> assessment_ids;
  std::string model_id;
  Timestamp created_at = 0;
};

void to_json(nlohmann::json& j, const ChatTurn& t);
void to_json(nlohmann::json& j, const ChatSession& s);

struct ScoredRationale {
  int score = 0;
  std::string rationale;
  bool operator==(const ScoredRationale&) const = default;
};

struct PreferencePair {
  std::string prompt;
  ScoredRationale chosen;
  ScoredRationale rejected;
  std::string batch_id;
  std::string answer_id;
  std::string chosen_model;
  std::string rejected_model;
  std::string chosen_assessment_id;
  std::string rejected_assessment_id;
  std::vector<std::string> source_event_ids;
};

struct SftExample {
  std::string prompt;
  ScoredRationale target;
  std::string batch_id;
  std::string answer_id;
  std::string source;  // "direct_annotation" or "preferred_assessment"
  std::vector<std::string> source_event_ids;
};

struct ExportFilter {
  std::optional<std::string> batch_id;
  std::optional<std::string> owner;
};

/// JSONL with fixed keys {prompt, chosen, rejected} (+ "meta"), one pair per line.
std::string to_jsonl(const std::vector<PreferencePair>& pairs);
/// JSONL with fixed keys {prompt, completion} (+ "meta").
std::string to_jsonl(const std::vector<SftExample>& examples);

struct LabelReviewFlag {
  std::string answer_id;
  int agreed_score = 0;
  int gold_score = 0;
  std::vector<std::string> models;
};

/// Answers where at least `threshold` models gave the same score and that
/// score differs from the (effective) gold score.
std::vector<LabelReviewFlag> flag_label_reviews(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                                                std::size_t threshold);

/// Majority of the selected models, never fewer than two.
std::size_t default_review_threshold(std::size_t model_count);

/// Durable relational persistence on SQLite. One connection, serialized
/// behind a mutex; multi-statement operations run in a transaction.
class Store {
 public:
  /// `url` is a file path, "sqlite://<path>", or ":memory:".
  explicit Store(const std::string& url);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // users and auth
  std::string create_user(const std::string& email, const std::string& password_hash);
  std::optional<UserRecord> find_user_by_email(const std::string& email) const;
  void save_token(const std::string& token_hash, const std::string& user_id, Timestamp expires_at);
  std::optional<std::string> user_for_token(const std::string& token_hash, Timestamp now) const;

  // questions and batches; ids are assigned when empty
  std::string save_question(QuestionSpec& question, const std::string& owner);
  std::optional<QuestionSpec> load_question(const std::string& question_id) const;
  std::optional<std::string> question_owner(const std::string& question_id) const;

  std::string save_batch(AnswerBatch& batch, const std::string& owner);
  /// With `effective_gold`, each gold score is replaced by the latest label
  /// correction for that answer, if any. The uploaded value stays stored.
  std::optional<AnswerBatch> load_batch(const std::string& batch_id, bool effective_gold = true) const;
  std::optional<std::string> batch_owner(const std::string& batch_id) const;

  // jobs and assessments
  void save_job(const BulkJob& job, const std::string& owner = {});
  std::optional<BulkJob> load_job(const std::string& job_id) const;
  std::optional<std::string> job_owner(const std::string& job_id) const;
  std::vector<std::string> unfinished_jobs() const;

  std::string save_assessment(const std::string& job_id, const std::string& batch_id, Assessment& assessment);
  std::optional<StoredAssessment> load_assessment(const std::string& assessment_id) const;
  std::vector<Assessment> assessments_for_job(const std::string& job_id) const;
  /// Latest assessment per (answer, model) across all jobs of a batch.
  std::vector<Assessment> latest_assessments(const std::string& batch_id) const;

  // annotation events (append-only)
  std::string record_event(AnnotationEvent event);
  std::vector<AnnotationEvent> events(const std::optional<std::string>& batch_id) const;

  std::vector<PreferencePair> export_preference_pairs(const ExportFilter& filter) const;
  std::vector<SftExample> export_sft(const ExportFilter& filter) const;

  // chat
  std::string create_chat_session(ChatSession& session);
  std::optional<ChatSession> load_chat_session(const std::string& session_id) const;
  void set_chat_model(const std::string& session_id, const std::string& model_id);
  std::size_t record_chat(ChatTurn& turn);
  std::vector<ChatTurn> load_chat_history(const std::string& session_id) const;

  // human evaluation
  std::string save_eval_session(EvalSession& session, const std::string& owner);
  std::optional<EvalSession> load_eval_session(const std::string& session_id) const;
  std::optional<std::string> eval_session_owner(const std::string& session_id) const;
  void record_judgment(const std::string& session_id, const CorrectnessJudgment& j);
  void record_pair_preference(const std::string& session_id, const PairPreference& p);
  std::vector<CorrectnessJudgment> judgments(const std::string& session_id) const;
  std::vector<PairPreference> pair_preferences(const std::string& session_id) const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aera
