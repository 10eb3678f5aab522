#include "aera/structured_output.hpp"

#include <cmath>
#include <cstdlib>

namespace aera {

using nlohmann::json;

std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::none: return "none";
    case ParseFailure::no_object: return "no_object";
    case ParseFailure::missing_keys: return "missing_keys";
    case ParseFailure::invalid_score: return "invalid_score";
    case ParseFailure::out_of_range: return "out_of_range";
    case ParseFailure::empty_rationale: return "empty_rationale";
  }
  return "no_object";
}

namespace {

std::optional<json> try_parse(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

// Content of the first ``` fence; an unterminated fence runs to the end.
std::optional<std::string_view> fenced_body(std::string_view raw) {
  const auto open = raw.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  auto body = open + 3;
  const auto eol = raw.find('\n', body);
  // Skip an info string such as ```json
  if (eol != std::string_view::npos) {
    const auto info = trim(raw.substr(body, eol - body));
    bool word = true;
    for (char c : info)
      if (!is_word_byte(static_cast<unsigned char>(c)) && c != '-' && c != '+') word = false;
    if (word) body = eol + 1;
  }
  const auto close = raw.find("```", body);
  return raw.substr(body, close == std::string_view::npos ? std::string_view::npos : close - body);
}

// End index (exclusive) of the balanced value opening at raw[start], honouring
// JSON string quoting.
std::optional<std::size_t> balanced_end(std::string_view raw, std::size_t start) {
  const char open = raw[start];
  const char close = open == '{' ? '}' : ']';
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') ++depth;
    else if (c == '}' || c == ']') {
      --depth;
      if (depth == 0) return c == close ? std::optional<std::size_t>(i + 1) : std::nullopt;
    }
  }
  return std::nullopt;
}

bool has_score_keys(const json& j) { return j.is_object() && j.contains("score") && j.contains("rationale"); }

}  // namespace

std::optional<ExtractedJson> extract_json(std::string_view raw,
                                          const std::function<bool(const json&)>& accept) noexcept {
  try {
    if (auto j = try_parse(raw); j && accept(*j)) return ExtractedJson{std::move(*j), false};
    if (const auto body = fenced_body(raw)) {
      if (auto j = try_parse(*body); j && accept(*j)) return ExtractedJson{std::move(*j), true};
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '{' && raw[i] != '[') continue;
      const auto end = balanced_end(raw, i);
      if (!end) continue;
      if (auto j = try_parse(raw.substr(i, *end - i)); j && accept(*j)) return ExtractedJson{std::move(*j), true};
    }
  } catch (...) {
  }
  return std::nullopt;
}

StructuredOutput parse_structured_output(std::string_view raw, ScoreRange range) noexcept {
  StructuredOutput out;
  try {
    auto found = extract_json(raw, has_score_keys);
    if (!found) {
      const bool any_object = extract_json(raw, [](const json& j) { return j.is_object(); }).has_value();
      out.failure = any_object ? ParseFailure::missing_keys : ParseFailure::no_object;
      out.detail = any_object ? "no JSON object with both \"score\" and \"rationale\"" : "no parseable JSON object";
      return out;
    }
    bool repaired = found->repaired;
    const json& score = found->value["score"];
    const json& rationale = found->value["rationale"];

    double value = 0.0;
    if (score.is_number_integer()) {
      value = static_cast<double>(score.get<long long>());
    } else if (score.is_number_float()) {
      value = score.get<double>();
      repaired = true;
    } else if (score.is_string()) {
      const std::string text{trim(score.get<std::string>())};
      char* end = nullptr;
      value = text.empty() ? 0.0 : std::strtod(text.c_str(), &end);
      if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(value)) {
        out.failure = ParseFailure::invalid_score;
        out.detail = "score is not numeric";
        return out;
      }
      repaired = true;
    } else {
      out.failure = ParseFailure::invalid_score;
      out.detail = "score is not a number";
      return out;
    }
    if (!std::isfinite(value) || std::fabs(value) > 1e9) {
      out.failure = ParseFailure::invalid_score;
      out.detail = "score is not a finite integer";
      return out;
    }
    const long long rounded = round_half_up(value);
    out.score = static_cast<int>(rounded);

    if (!rationale.is_string() || trim(rationale.get_ref<const std::string&>()).empty()) {
      out.failure = ParseFailure::empty_rationale;
      out.detail = "rationale must be a non-empty string";
      return out;
    }
    out.rationale = rationale.get<std::string>();

    if (!range.contains(rounded)) {
      out.failure = ParseFailure::out_of_range;
      out.detail = "score " + std::to_string(rounded) + " outside range " + std::to_string(range.min) + "-" +
                   std::to_string(range.max);
      return out;
    }
    out.status = repaired ? ParseStatus::repaired : ParseStatus::clean;
    out.failure = ParseFailure::none;
    return out;
  } catch (...) {
    out.status = ParseStatus::failed;
    out.failure = ParseFailure::no_object;
    out.detail = "unexpected error while parsing";
    return out;
  }
}

}  // namespace aera
