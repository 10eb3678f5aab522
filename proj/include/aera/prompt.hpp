#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "aera/domain.hpp"

namespace aera {

struct PromptText {
  std::string text;
  bool operator==(const PromptText&) const = default;
};

/// Grading prompt: fixed instructions, then the question, key elements and
/// rubric blocks, then the student answer substituted verbatim.
PromptText assemble_prompt(const QuestionSpec& spec, const StudentAnswer& answer);

enum class TagMode { key_elements, aspects };

std::string_view to_string(TagMode m);
std::optional<TagMode> tag_mode_from_string(std::string_view s);

/// Tagging prompt asking for a JSON array of {"phrase", "polarity"} objects
/// copied from `text`.
PromptText assemble_tagging_prompt(const QuestionSpec& spec, std::string_view text, TagMode mode);

// Pieces recovered from a prompt built by the functions above. Providers that
// only see prompt text (the mock) use this to find their inputs.
struct PromptSections {
  bool is_tagging = false;
  TagMode mode = TagMode::key_elements;
  std::string question;
  std::vector<std::string> key_elements;
  ScoreRange range;
  std::string subject_text;  // student answer, or the text to tag
};

std::optional<PromptSections> parse_prompt_sections(std::string_view prompt);

}  // namespace aera
