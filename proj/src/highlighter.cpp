#include "aera/highlighter.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "aera/errors.hpp"
#include "aera/structured_output.hpp"
#include "aera/util.hpp"

namespace aera {

using nlohmann::json;

TagSet parse_tags(const json& value, TagMode mode) {
  TagSet out{target_for(mode), {}};
  const json* arr = &value;
  if (value.is_object() && value.contains("tags")) arr = &value["tags"];
  if (!arr->is_array()) return out;
  std::set<std::pair<std::string, Polarity>> seen;
  for (const auto& item : *arr) {
    if (!item.is_object()) continue;
    const auto phrase = item.find("phrase");
    if (phrase == item.end() || !phrase->is_string()) continue;
    const std::string text{trim(phrase->get<std::string>())};
    if (text.empty()) continue;
    Polarity pol = Polarity::key_element;
    if (mode == TagMode::aspects) {
      const auto p = item.find("polarity");
      if (p == item.end() || !p->is_string()) continue;
      const auto parsed = polarity_from_string(p->get<std::string>());
      if (!parsed || *parsed == Polarity::key_element) continue;
      pol = *parsed;
    }
    if (seen.insert({to_lower_ascii(text), pol}).second) out.tags.push_back({text, pol});
  }
  return out;
}

TagResult request_tags(std::string_view text, TagMode mode, const QuestionSpec& spec, Gateway& gateway,
                       const std::string& tagger_model, const GenerationParams& params) {
  if (trim(text).empty()) throw ValidationError("text to tag must be non-empty");
  TagResult r;
  r.tags.target = target_for(mode);
  try {
    const auto raw = gateway.invoke(tagger_model, params, assemble_tagging_prompt(spec, text, mode)).raw;
    const auto extracted = extract_json(raw, [](const json& j) {
      return j.is_array() || (j.is_object() && j.contains("tags") && j["tags"].is_array());
    });
    if (!extracted) {
      r.warning = true;
      r.detail = "tagger returned no JSON tag list";
      return r;
    }
    r.tags = parse_tags(extracted->value, mode);
  } catch (const std::exception& e) {
    r.warning = true;
    r.detail = e.what();
    r.tags.tags.clear();
  }
  return r;
}

AlignResult align_spans(std::string_view text, const TagSet& tags) {
  struct Candidate {
    std::size_t start;  // bytes
    std::size_t len;    // bytes
    std::size_t cp_len;
    std::size_t tag;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < tags.tags.size(); ++i) {
    const auto& phrase = tags.tags[i].phrase;
    if (phrase.empty()) continue;
    const auto cp_len = codepoint_length(phrase);
    for (const auto pos : find_token_matches(text, phrase)) candidates.push_back({pos, phrase.size(), cp_len, i});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.cp_len != b.cp_len) return a.cp_len > b.cp_len;
    if (a.start != b.start) return a.start < b.start;
    return a.tag < b.tag;
  });

  std::map<std::size_t, const Candidate*> taken;  // by start byte
  std::vector<bool> used(tags.tags.size(), false);
  for (const auto& c : candidates) {
    const auto next = taken.lower_bound(c.start);
    if (next != taken.end() && next->first < c.start + c.len) continue;
    if (next != taken.begin()) {
      const auto prev = std::prev(next);
      if (prev->first + prev->second->len > c.start) continue;
    }
    taken.emplace(c.start, &c);
    used[c.tag] = true;
  }

  AlignResult out;
  for (const auto& [start, c] : taken) {
    const auto cp_start = codepoints_before(text, start);
    out.spans.push_back({tags.target, cp_start, cp_start + codepoints_before(text.substr(start), c->len),
                         tags.tags[c->tag].polarity});
  }
  for (std::size_t i = 0; i < tags.tags.size(); ++i)
    if (!used[i]) out.unmatched.push_back(tags.tags[i]);
  return out;
}

void to_json(json& j, const Tag& t) { j = {{"phrase", t.phrase}, {"polarity", to_string(t.polarity)}}; }

void to_json(json& j, const TagSet& t) { j = {{"target", to_string(t.target)}, {"tags", t.tags}}; }

}  // namespace aera
