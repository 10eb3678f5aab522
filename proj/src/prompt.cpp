#include "aera/prompt.hpp"

#include <charconv>
#include <sstream>

namespace aera {

namespace {

constexpr std::string_view kGradingPreamble =
    "You are an expert AI assistant tasked with grading a student's answer.\n"
    "Please assess the following student response based on the provided question, marking rubric, and key "
    "answer elements.\n"
    "\n"
    "Your output MUST be a single JSON object with two keys: \"score\" (an integer) and \"rationale\" (a string "
    "explaining your reasoning).\n";

constexpr std::string_view kTaggingPreamble =
    "You are an expert AI assistant helping a teacher review an assessed student answer.\n";

constexpr std::string_view kRule = "\n---\n\n";
constexpr std::string_view kNone = "(none provided)";

void render_context(std::ostringstream& out, const QuestionSpec& spec) {
  out << "Question:\n" << spec.question_text << "\n\n";
  out << "Key Answer Elements:\n";
  if (spec.key_elements.empty()) out << kNone << "\n";
  for (const auto& e : spec.key_elements) out << "- " << e << "\n";
  out << "\nMarking Rubric:\n";
  if (spec.rubric.empty()) out << kNone << "\n";
  for (const auto& c : spec.rubric)
    out << "- " << c.points << (c.points == 1 ? " point: " : " points: ") << c.description << "\n";
  out << "Score range: " << spec.score_min << "-" << spec.score_max << "\n";
}

std::string_view section(std::string_view text, std::string_view heading, std::string_view terminator) {
  const auto start = text.find(heading);
  if (start == std::string_view::npos) return {};
  const auto body = start + heading.size();
  const auto end = text.find(terminator, body);
  return text.substr(body, end == std::string_view::npos ? std::string_view::npos : end - body);
}

}  // namespace

std::string_view to_string(TagMode m) { return m == TagMode::key_elements ? "key_elements" : "aspects"; }

std::optional<TagMode> tag_mode_from_string(std::string_view s) {
  if (s == "key_elements") return TagMode::key_elements;
  if (s == "aspects") return TagMode::aspects;
  return std::nullopt;
}

PromptText assemble_prompt(const QuestionSpec& spec, const StudentAnswer& answer) {
  std::ostringstream out;
  out << kGradingPreamble << kRule;
  render_context(out, spec);
  out << kRule << "Student Answer:\n" << answer.answer_text << "\n" << kRule << "Your JSON Output:\n";
  return {out.str()};
}

PromptText assemble_tagging_prompt(const QuestionSpec& spec, std::string_view text, TagMode mode) {
  std::ostringstream out;
  out << kTaggingPreamble;
  if (mode == TagMode::key_elements) {
    out << "Find the words or short phrases in the student answer below that express one of the key answer "
           "elements.\n"
           "Mode: key_elements\n"
           "Every item must use the polarity \"key_element\".\n";
  } else {
    out << "Find the words or short phrases in the assessment rationale below that give reasons for awarding "
           "points (polarity \"positive\") or reasons for point deductions (polarity \"negative\").\n"
           "Mode: aspects\n";
  }
  out << "Copy each phrase exactly as it appears in the text. Do not report character offsets.\n"
         "Your output MUST be a single JSON array of objects with two keys: \"phrase\" (a string) and "
         "\"polarity\" (a string).\n";
  out << kRule;
  render_context(out, spec);
  out << kRule << "Text:\n" << text << "\n" << kRule << "Your JSON Output:\n";
  return {out.str()};
}

std::optional<PromptSections> parse_prompt_sections(std::string_view prompt) {
  PromptSections s;
  std::string_view subject_heading;
  if (prompt.starts_with(kGradingPreamble)) {
    subject_heading = "\n---\n\nStudent Answer:\n";
  } else if (prompt.starts_with(kTaggingPreamble)) {
    s.is_tagging = true;
    s.mode = prompt.find("\nMode: aspects\n") != std::string_view::npos ? TagMode::aspects : TagMode::key_elements;
    subject_heading = "\n---\n\nText:\n";
  } else {
    return std::nullopt;
  }

  const auto subject_start = prompt.find(subject_heading);
  const std::string_view tail = "\n\n---\n\nYour JSON Output:\n";
  const auto subject_end = prompt.rfind(tail);
  if (subject_start == std::string_view::npos || subject_end == std::string_view::npos ||
      subject_end < subject_start + subject_heading.size())
    return std::nullopt;
  const auto body = subject_start + subject_heading.size();
  s.subject_text = std::string(prompt.substr(body, subject_end - body));

  const auto context = prompt.substr(0, subject_start);
  s.question = std::string(section(context, "Question:\n", "\n\nKey Answer Elements:\n"));
  const auto elements = section(context, "Key Answer Elements:\n", "\nMarking Rubric:\n");
  for (const auto& line : split(elements, '\n'))
    if (line.starts_with("- ")) s.key_elements.push_back(line.substr(2));

  const auto range_pos = context.rfind("Score range: ");
  if (range_pos != std::string_view::npos) {
    const auto line_end = context.find('\n', range_pos);
    const auto range_text = context.substr(range_pos + 13, line_end - range_pos - 13);
    const auto dash = range_text.find('-');
    if (dash != std::string_view::npos) {
      std::from_chars(range_text.data(), range_text.data() + dash, s.range.min);
      std::from_chars(range_text.data() + dash + 1, range_text.data() + range_text.size(), s.range.max);
    }
  }
  return s;
}

}  // namespace aera
