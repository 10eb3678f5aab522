#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"
#include "aera/gateway.hpp"
#include "aera/prompt.hpp"

namespace aera {

struct Tag {
  std::string phrase;
  Polarity polarity = Polarity::key_element;
  bool operator==(const Tag&) const = default;
};

struct TagSet {
  SpanTarget target = SpanTarget::answer;
  std::vector<Tag> tags;
  bool operator==(const TagSet&) const = default;
};

// key_elements tags student answers, aspects tags rationales
inline SpanTarget target_for(TagMode m) { return m == TagMode::key_elements ? SpanTarget::answer : SpanTarget::rationale; }

struct TagResult {
  TagSet tags;
  bool warning = false;  // tagging failed; tags is empty
  std::string detail;
};

/// Keeps well-formed tags and normalizes polarity for the mode: everything is
/// key_element in key_elements mode, only positive/negative survive in aspects.
TagSet parse_tags(const nlohmann::json& value, TagMode mode);

/// Asks `tagger_model` for phrases. Best effort: any failure yields an empty
/// TagSet with warning set. Throws ValidationError only for empty text.
TagResult request_tags(std::string_view text, TagMode mode, const QuestionSpec& spec, Gateway& gateway,
                       const std::string& tagger_model, const GenerationParams& params = {});

struct AlignResult {
  std::vector<HighlightSpan> spans;  // sorted by start, non-overlapping
  std::vector<Tag> unmatched;        // tags that produced no span
};

/// Locates every token-bounded, case-insensitive occurrence of each phrase.
/// Overlaps are resolved longest phrase first, then leftmost. Offsets are in
/// code points.
AlignResult align_spans(std::string_view text, const TagSet& tags);

void to_json(nlohmann::json& j, const Tag& t);
void to_json(nlohmann::json& j, const TagSet& t);

}  // namespace aera
