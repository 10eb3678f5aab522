#include "aera/domain.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "aera/errors.hpp"

namespace aera {

using nlohmann::json;

const StudentAnswer* AnswerBatch::find(std::string_view answer_id) const {
  for (const auto& a : answers)
    if (a.answer_id == answer_id) return &a;
  return nullptr;
}

bool AnswerBatch::has_gold() const {
  for (const auto& a : answers)
    if (a.gold_score) return true;
  return false;
}

std::vector<std::string> validate_question(const QuestionSpec& spec) {
  std::vector<std::string> v;
  if (spec.score_min < 0 || spec.score_max < 0) v.emplace_back("score_min and score_max must be non-negative");
  if (spec.score_min > spec.score_max) v.emplace_back("score_min must not exceed score_max");
  if (trim(spec.question_text).empty()) v.emplace_back("question_text must not be empty");
  if (spec.key_elements.empty() && spec.rubric.empty())
    v.emplace_back("key_elements may be empty only when a rubric is given");
  for (std::size_t i = 0; i < spec.key_elements.size(); ++i)
    if (trim(spec.key_elements[i]).empty()) v.push_back("key_elements[" + std::to_string(i) + "] is empty");
  for (std::size_t i = 0; i < spec.rubric.size(); ++i) {
    if (spec.rubric[i].points < 0) v.push_back("rubric[" + std::to_string(i) + "].points must be >= 0");
    if (trim(spec.rubric[i].description).empty())
      v.push_back("rubric[" + std::to_string(i) + "].description is empty");
  }
  return v;
}

std::vector<std::string> validate_event_payload(const AnnotationEvent& event, const QuestionSpec& spec) {
  std::vector<std::string> v;
  const auto range = spec.range();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LabelCorrection>) {
          if (!range.contains(p.score))
            v.push_back("corrected score " + std::to_string(p.score) + " outside range " +
                        std::to_string(range.min) + "-" + std::to_string(range.max));
        } else if constexpr (std::is_same_v<T, RationalePreference>) {
          if (!event.subject.model_id) v.emplace_back("preference events must name a model_id");
        } else if constexpr (std::is_same_v<T, DirectAnnotation>) {
          if (!range.contains(p.score))
            v.push_back("annotated score " + std::to_string(p.score) + " outside range " +
                        std::to_string(range.min) + "-" + std::to_string(range.max));
          if (trim(p.rationale).empty()) v.emplace_back("annotated rationale must not be empty");
        } else {
          if (p.session_id.empty()) v.emplace_back("chat_turn events need a session_id");
          if (p.role != "user" && p.role != "assistant" && p.role != "system")
            v.emplace_back("chat_turn role must be user, assistant or system");
          if (p.content.empty()) v.emplace_back("chat_turn content must not be empty");
        }
      },
      event.payload);
  if (event.subject.batch_id.empty()) v.emplace_back("subject.batch_id is required");
  if (event.subject.answer_id.empty()) v.emplace_back("subject.answer_id is required");
  return v;
}

std::optional<BatchFormat> batch_format_from_string(std::string_view s) {
  if (s == "csv") return BatchFormat::csv;
  if (s == "json") return BatchFormat::json;
  return std::nullopt;
}

namespace {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines, LF or CRLF.
std::vector<CsvRecord> read_csv(std::string_view text) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  current.line = line;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty();
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
    current.line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      // CRLF: handled on the '\n'
    } else if (c == '\n') {
      ++line;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) throw MalformedRowError(records.empty() ? 1 : records.size(), "unterminated quoted field");
  if (field_started || !current.fields.empty() || !field.empty()) end_record();
  return records;
}

std::optional<int> parse_int_strict(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  int v = 0;
  const auto* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("not an integer");
  return v;
}

void finish_batch(AnswerBatch& batch) {
  if (batch.answers.empty()) throw ValidationError("batch must contain at least one answer");
  std::set<std::string> seen;
  std::vector<std::string> dupes;
  for (const auto& a : batch.answers)
    if (!seen.insert(a.answer_id).second) dupes.push_back(a.answer_id);
  if (!dupes.empty()) throw ValidationError("duplicate answer_id: " + join(dupes, ", "));

  const auto range = batch.question.range();
  std::vector<std::string> bad;
  for (const auto& a : batch.answers)
    if (a.gold_score && !range.contains(*a.gold_score)) bad.push_back(a.answer_id);
  if (!bad.empty())
    throw ValidationError("gold_score outside range " + std::to_string(range.min) + "-" +
                          std::to_string(range.max) + " for answer_id: " + join(bad, ", "));
}

AnswerBatch parse_csv_batch(std::string_view text, const QuestionSpec& question) {
  const auto records = read_csv(text);
  if (records.empty()) throw ValidationError("file has no header row");
  const auto& header = records.front().fields;
  int id_col = -1, text_col = -1, gold_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name{trim(header[i])};
    if (name == "answer_id") id_col = static_cast<int>(i);
    else if (name == "answer_text") text_col = static_cast<int>(i);
    else if (name == "gold_score") gold_col = static_cast<int>(i);
  }
  if (text_col < 0) throw ValidationError("header must contain an answer_text column");

  AnswerBatch batch;
  batch.question = question;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    if (f.size() != header.size())
      throw MalformedRowError(r, "expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(f.size()));
    StudentAnswer a;
    a.answer_text = f[static_cast<std::size_t>(text_col)];
    a.answer_id = id_col >= 0 ? std::string(trim(f[static_cast<std::size_t>(id_col)])) : std::string{};
    if (a.answer_id.empty()) a.answer_id = std::to_string(r);
    if (gold_col >= 0) {
      try {
        a.gold_score = parse_int_strict(f[static_cast<std::size_t>(gold_col)]);
      } catch (const std::exception&) {
        throw MalformedRowError(r, "gold_score is not an integer");
      }
    }
    batch.answers.push_back(std::move(a));
  }
  finish_batch(batch);
  return batch;
}

AnswerBatch parse_json_batch(std::string_view text, const QuestionSpec& question) {
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ValidationError("file is not valid JSON");
  if (!doc.is_array()) throw ValidationError("JSON batch must be an array of objects");
  AnswerBatch batch;
  batch.question = question;
  std::size_t row = 0;
  for (const auto& item : doc) {
    ++row;
    if (!item.is_object()) throw MalformedRowError(row, "not an object");
    StudentAnswer a;
    const auto text_it = item.find("answer_text");
    if (text_it == item.end() || !text_it->is_string()) throw MalformedRowError(row, "answer_text must be a string");
    a.answer_text = text_it->get<std::string>();
    if (const auto it = item.find("answer_id"); it != item.end() && !it->is_null()) {
      if (it->is_string()) a.answer_id = it->get<std::string>();
      else if (it->is_number_integer()) a.answer_id = std::to_string(it->get<long long>());
      else throw MalformedRowError(row, "answer_id must be a string or integer");
    }
    if (a.answer_id.empty()) a.answer_id = std::to_string(row);
    if (const auto it = item.find("gold_score"); it != item.end() && !it->is_null()) {
      if (!it->is_number_integer()) throw MalformedRowError(row, "gold_score must be an integer");
      a.gold_score = it->get<int>();
    }
    batch.answers.push_back(std::move(a));
  }
  finish_batch(batch);
  return batch;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

AnswerBatch parse_answer_batch(std::string_view file_bytes, BatchFormat format, const QuestionSpec& question) {
  if (file_bytes.size() >= 3 && static_cast<unsigned char>(file_bytes[0]) == 0xEF &&
      static_cast<unsigned char>(file_bytes[1]) == 0xBB && static_cast<unsigned char>(file_bytes[2]) == 0xBF)
    file_bytes.remove_prefix(3);
  if (!is_valid_utf8(file_bytes)) throw ValidationError("file is not valid UTF-8");
  return format == BatchFormat::csv ? parse_csv_batch(file_bytes, question) : parse_json_batch(file_bytes, question);
}

std::string serialize_answer_batch(const AnswerBatch& batch, BatchFormat format) {
  if (format == BatchFormat::json) {
    json arr = json::array();
    for (const auto& a : batch.answers) {
      json row = {{"answer_id", a.answer_id}, {"answer_text", a.answer_text}};
      row["gold_score"] = a.gold_score ? json(*a.gold_score) : json(nullptr);
      arr.push_back(std::move(row));
    }
    return dump_json(arr, 2) + "\n";
  }
  std::ostringstream out;
  out << "answer_id,answer_text,gold_score\n";
  for (const auto& a : batch.answers) {
    out << csv_escape(a.answer_id) << ',' << csv_escape(a.answer_text) << ',';
    if (a.gold_score) out << *a.gold_score;
    out << '\n';
  }
  return out.str();
}

// ---- enum names ----

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::clean: return "clean";
    case ParseStatus::repaired: return "repaired";
    case ParseStatus::failed: return "failed";
  }
  return "failed";
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::parse_failed: return "parse_failed";
    case Outcome::provider_error: return "provider_error";
  }
  return "provider_error";
}

std::string_view to_string(SpanTarget t) { return t == SpanTarget::answer ? "answer" : "rationale"; }

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::key_element: return "key_element";
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
  }
  return "key_element";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::label_correction: return "label_correction";
    case EventKind::preference: return "preference";
    case EventKind::direct_annotation: return "direct_annotation";
    case EventKind::chat_turn: return "chat_turn";
  }
  return "preference";
}

std::optional<ParseStatus> parse_status_from_string(std::string_view s) {
  if (s == "clean") return ParseStatus::clean;
  if (s == "repaired") return ParseStatus::repaired;
  if (s == "failed") return ParseStatus::failed;
  return std::nullopt;
}

std::optional<Outcome> outcome_from_string(std::string_view s) {
  if (s == "ok") return Outcome::ok;
  if (s == "parse_failed") return Outcome::parse_failed;
  if (s == "provider_error") return Outcome::provider_error;
  return std::nullopt;
}

std::optional<Polarity> polarity_from_string(std::string_view s) {
  if (s == "key_element") return Polarity::key_element;
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  return std::nullopt;
}

std::optional<SpanTarget> span_target_from_string(std::string_view s) {
  if (s == "answer") return SpanTarget::answer;
  if (s == "rationale") return SpanTarget::rationale;
  return std::nullopt;
}

std::optional<EventKind> event_kind_from_string(std::string_view s) {
  if (s == "label_correction") return EventKind::label_correction;
  if (s == "preference") return EventKind::preference;
  if (s == "direct_annotation") return EventKind::direct_annotation;
  if (s == "chat_turn") return EventKind::chat_turn;
  return std::nullopt;
}

// ---- JSON ----

void to_json(json& j, const RubricCriterion& r) { j = {{"points", r.points}, {"description", r.description}}; }

void from_json(const json& j, RubricCriterion& r) {
  r.points = j.at("points").get<int>();
  r.description = j.at("description").get<std::string>();
}

void to_json(json& j, const QuestionSpec& q) {
  j = {{"question_id", q.question_id}, {"question_text", q.question_text}, {"key_elements", q.key_elements},
       {"rubric", q.rubric},           {"score_min", q.score_min},         {"score_max", q.score_max}};
}

void from_json(const json& j, QuestionSpec& q) {
  q.question_id = j.value("question_id", std::string{});
  q.question_text = j.at("question_text").get<std::string>();
  q.key_elements = j.value("key_elements", std::vector<std::string>{});
  q.rubric = j.value("rubric", std::vector<RubricCriterion>{});
  q.score_min = j.at("score_min").get<int>();
  q.score_max = j.at("score_max").get<int>();
}

void to_json(json& j, const StudentAnswer& a) {
  j = {{"answer_id", a.answer_id}, {"answer_text", a.answer_text}};
  j["gold_score"] = a.gold_score ? json(*a.gold_score) : json(nullptr);
}

void from_json(const json& j, StudentAnswer& a) {
  a.answer_id = j.at("answer_id").get<std::string>();
  a.answer_text = j.at("answer_text").get<std::string>();
  if (const auto it = j.find("gold_score"); it != j.end() && !it->is_null()) a.gold_score = it->get<int>();
  else a.gold_score.reset();
}

void to_json(json& j, const Assessment& a) {
  j = {{"answer_id", a.answer_id},
       {"model_id", a.model_id},
       {"predicted_score", a.predicted_score},
       {"rationale", a.rationale},
       {"parse_status", to_string(a.parse_status)},
       {"outcome", to_string(a.outcome)},
       {"raw_output", a.raw_output},
       {"latency_ms", a.latency_ms}};
  if (!a.assessment_id.empty()) j["assessment_id"] = a.assessment_id;
  if (!a.error.empty()) j["error"] = a.error;
}

void from_json(const json& j, Assessment& a) {
  a.assessment_id = j.value("assessment_id", std::string{});
  a.answer_id = j.at("answer_id").get<std::string>();
  a.model_id = j.at("model_id").get<std::string>();
  a.predicted_score = j.at("predicted_score").get<int>();
  a.rationale = j.at("rationale").get<std::string>();
  const auto status = parse_status_from_string(j.at("parse_status").get<std::string>());
  if (!status) throw std::invalid_argument("unknown parse_status");
  a.parse_status = *status;
  const auto outcome = outcome_from_string(j.value("outcome", std::string{"ok"}));
  if (!outcome) throw std::invalid_argument("unknown outcome");
  a.outcome = *outcome;
  a.raw_output = j.value("raw_output", std::string{});
  a.latency_ms = j.value("latency_ms", std::int64_t{0});
  a.error = j.value("error", std::string{});
}

void to_json(json& j, const HighlightSpan& s) {
  j = {{"target", to_string(s.target)}, {"start", s.start}, {"end", s.end}, {"polarity", to_string(s.polarity)}};
}

json payload_to_json(const EventPayload& p) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LabelCorrection>) {
          return {{"score", v.score}};
        } else if constexpr (std::is_same_v<T, RationalePreference>) {
          json out = {{"preferred", v.preferred}};
          if (v.assessment_id) out["assessment_id"] = *v.assessment_id;
          return out;
        } else if constexpr (std::is_same_v<T, DirectAnnotation>) {
          return {{"score", v.score}, {"rationale", v.rationale}};
        } else {
          return {{"session_id", v.session_id}, {"role", v.role}, {"content", v.content}};
        }
      },
      p);
}

EventPayload payload_from_json(EventKind kind, const json& j) {
  if (!j.is_object()) throw ValidationError("payload must be an object");
  try {
    switch (kind) {
      case EventKind::label_correction:
        if (!j.contains("score") || !j["score"].is_number_integer())
          throw ValidationError("label_correction payload needs an integer score");
        return LabelCorrection{j["score"].get<int>()};
      case EventKind::preference: {
        if (!j.contains("preferred") || !j["preferred"].is_boolean())
          throw ValidationError("preference payload needs a boolean preferred");
        RationalePreference p{j["preferred"].get<bool>(), std::nullopt};
        if (const auto it = j.find("assessment_id"); it != j.end() && !it->is_null())
          p.assessment_id = it->get<std::string>();
        return p;
      }
      case EventKind::direct_annotation:
        if (!j.contains("score") || !j["score"].is_number_integer())
          throw ValidationError("direct_annotation payload needs an integer score");
        if (!j.contains("rationale") || !j["rationale"].is_string())
          throw ValidationError("direct_annotation payload needs a rationale string");
        return DirectAnnotation{j["score"].get<int>(), j["rationale"].get<std::string>()};
      case EventKind::chat_turn:
        return ChatTurnRecord{j.value("session_id", std::string{}), j.value("role", std::string{}),
                              j.value("content", std::string{})};
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("payload: ") + e.what());
  }
  throw ValidationError("unknown event kind");
}

void to_json(json& j, const AnnotationEvent& e) {
  j = {{"event_id", e.event_id},
       {"kind", to_string(e.kind())},
       {"subject", {{"batch_id", e.subject.batch_id}, {"answer_id", e.subject.answer_id}}},
       {"payload", payload_to_json(e.payload)},
       {"author", e.author},
       {"created_at", e.created_at}};
  j["subject"]["model_id"] = e.subject.model_id ? json(*e.subject.model_id) : json(nullptr);
}

void from_json(const json& j, AnnotationEvent& e) {
  const auto kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw ValidationError("unknown event kind");
  e.event_id = j.value("event_id", std::string{});
  const auto& subject = j.at("subject");
  e.subject.batch_id = subject.at("batch_id").get<std::string>();
  e.subject.answer_id = subject.at("answer_id").get<std::string>();
  if (const auto it = subject.find("model_id"); it != subject.end() && !it->is_null())
    e.subject.model_id = it->get<std::string>();
  e.payload = payload_from_json(*kind, j.at("payload"));
  e.author = j.value("author", std::string{});
  e.created_at = j.value("created_at", Timestamp{0});
}

std::string dump_json(const json& j, int indent) {
  return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

}  // namespace aera
