#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"

namespace aera {

enum class ParseFailure { none, no_object, missing_keys, invalid_score, out_of_range, empty_rationale };

std::string_view to_string(ParseFailure f);

struct StructuredOutput {
  int score = 0;
  std::string rationale;
  ParseStatus status = ParseStatus::failed;
  ParseFailure failure = ParseFailure::no_object;
  std::string detail;
};

struct ExtractedJson {
  nlohmann::json value;
  bool repaired = false;  // true when anything past a direct parse was needed
};

/// Repair ladder shared by score parsing and tag parsing: direct parse, then
/// Markdown fence stripping, then a scan for the first balanced {...} or [...]
/// accepted by `accept`. Never throws.
std::optional<ExtractedJson> extract_json(std::string_view raw,
                                          const std::function<bool(const nlohmann::json&)>& accept) noexcept;

/// Extracts {"score", "rationale"} from raw model output. Numeric-string and
/// non-integer scores are coerced (half-up) and mark the result repaired.
/// Out-of-range scores fail; nothing is clamped. Never throws.
StructuredOutput parse_structured_output(std::string_view raw, ScoreRange range) noexcept;

}  // namespace aera
