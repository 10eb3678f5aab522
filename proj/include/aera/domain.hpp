#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/util.hpp"

namespace aera {

struct RubricCriterion {
  int points = 0;
  std::string description;

  bool operator==(const RubricCriterion&) const = default;
};

struct ScoreRange {
  int min = 0;
  int max = 0;

  bool contains(long long s) const { return s >= min && s <= max; }
  int num_classes() const { return max - min + 1; }
  bool operator==(const ScoreRange&) const = default;
};

// Everything that goes into the assembled grading prompt for one question.
struct QuestionSpec {
  std::string question_id;
  std::string question_text;
  std::vector<std::string> key_elements;
  std::vector<RubricCriterion> rubric;
  int score_min = 0;
  int score_max = 0;

  ScoreRange range() const { return {score_min, score_max}; }
  bool operator==(const QuestionSpec&) const = default;
};

struct StudentAnswer {
  std::string answer_id;
  std::string answer_text;
  std::optional<int> gold_score;

  bool operator==(const StudentAnswer&) const = default;
};

struct AnswerBatch {
  std::string batch_id;
  QuestionSpec question;
  std::vector<StudentAnswer> answers;
  Timestamp created_at = 0;

  const StudentAnswer* find(std::string_view answer_id) const;
  bool has_gold() const;
};

enum class ParseStatus { clean, repaired, failed };

// Why a single (answer, model) call did not yield a usable score.
enum class Outcome { ok, parse_failed, provider_error };

struct Assessment {
  std::string assessment_id;
  std::string answer_id;
  std::string model_id;
  int predicted_score = 0;
  std::string rationale;
  ParseStatus parse_status = ParseStatus::failed;
  Outcome outcome = Outcome::provider_error;
  std::string raw_output;
  std::int64_t latency_ms = 0;
  std::string error;  // empty unless outcome != ok

  bool usable() const { return parse_status != ParseStatus::failed; }
  bool operator==(const Assessment&) const = default;
};

enum class SpanTarget { answer, rationale };
enum class Polarity { key_element, positive, negative };

// [start, end) in Unicode code points of the target text.
struct HighlightSpan {
  SpanTarget target = SpanTarget::answer;
  std::size_t start = 0;
  std::size_t end = 0;
  Polarity polarity = Polarity::key_element;

  bool operator==(const HighlightSpan&) const = default;
};

enum class EventKind { label_correction, preference, direct_annotation, chat_turn };

struct EventSubject {
  std::string batch_id;
  std::string answer_id;
  std::optional<std::string> model_id;

  bool operator==(const EventSubject&) const = default;
};

struct LabelCorrection {
  int score = 0;
  bool operator==(const LabelCorrection&) const = default;
};

struct RationalePreference {
  bool preferred = false;
  std::optional<std::string> assessment_id;
  bool operator==(const RationalePreference&) const = default;
};

struct DirectAnnotation {
  int score = 0;
  std::string rationale;
  bool operator==(const DirectAnnotation&) const = default;
};

struct ChatTurnRecord {
  std::string session_id;
  std::string role;
  std::string content;
  bool operator==(const ChatTurnRecord&) const = default;
};

using EventPayload = std::variant<LabelCorrection, RationalePreference, DirectAnnotation, ChatTurnRecord>;

struct AnnotationEvent {
  std::string event_id;
  EventSubject subject;
  EventPayload payload;
  std::string author;
  Timestamp created_at = 0;

  EventKind kind() const { return static_cast<EventKind>(payload.index()); }
  bool operator==(const AnnotationEvent&) const = default;
};

/// Returns one human-readable entry per violated QuestionSpec invariant.
std::vector<std::string> validate_question(const QuestionSpec& spec);

/// Payload checks against the owning question (score ranges, non-empty text).
std::vector<std::string> validate_event_payload(const AnnotationEvent& event, const QuestionSpec& spec);

enum class BatchFormat { csv, json };

std::optional<BatchFormat> batch_format_from_string(std::string_view s);

/// Decodes an uploaded batch. Rows keep file order; missing answer ids get the
/// 1-based row number. Throws MalformedRowError for undecodable rows and
/// ValidationError (listing answer ids) for out-of-range gold scores.
AnswerBatch parse_answer_batch(std::string_view file_bytes, BatchFormat format, const QuestionSpec& question);

std::string serialize_answer_batch(const AnswerBatch& batch, BatchFormat format);

std::string_view to_string(ParseStatus s);
std::string_view to_string(Outcome o);
std::string_view to_string(SpanTarget t);
std::string_view to_string(Polarity p);
std::string_view to_string(EventKind k);
std::optional<ParseStatus> parse_status_from_string(std::string_view s);
std::optional<Outcome> outcome_from_string(std::string_view s);
std::optional<Polarity> polarity_from_string(std::string_view s);
std::optional<SpanTarget> span_target_from_string(std::string_view s);
std::optional<EventKind> event_kind_from_string(std::string_view s);

// JSON mapping (ADL hooks for nlohmann::json).
void to_json(nlohmann::json& j, const RubricCriterion& r);
void from_json(const nlohmann::json& j, RubricCriterion& r);
void to_json(nlohmann::json& j, const QuestionSpec& q);
void from_json(const nlohmann::json& j, QuestionSpec& q);
void to_json(nlohmann::json& j, const StudentAnswer& a);
void from_json(const nlohmann::json& j, StudentAnswer& a);
void to_json(nlohmann::json& j, const Assessment& a);
void from_json(const nlohmann::json& j, Assessment& a);
void to_json(nlohmann::json& j, const HighlightSpan& s);
void to_json(nlohmann::json& j, const AnnotationEvent& e);
void from_json(const nlohmann::json& j, AnnotationEvent& e);

nlohmann::json payload_to_json(const EventPayload& p);
EventPayload payload_from_json(EventKind kind, const nlohmann::json& j);

// Serializes without throwing on invalid UTF-8 (bad bytes become U+FFFD).
std::string dump_json(const nlohmann::json& j, int indent = -1);

}  // namespace aera
