#include "aera/chat.hpp"

#include <sstream>

namespace aera {

std::string chat_system_turn(const QuestionSpec& spec, const StudentAnswer& answer,
                             const std::vector<Assessment>& assessments) {
  std::ostringstream out;
  out << "You are an expert AI assistant helping a teacher discuss the assessment of a student answer. "
         "Answer the teacher's questions using the context below.\n\n";
  out << "Question:\n" << spec.question_text << "\n\n";
  out << "Key Answer Elements:\n";
  if (spec.key_elements.empty()) out << "(none provided)\n";
  for (const auto& e : spec.key_elements) out << "- " << e << "\n";
  out << "\nMarking Rubric:\n";
  if (spec.rubric.empty()) out << "(none provided)\n";
  for (const auto& r : spec.rubric)
    out << "- " << r.points << (r.points == 1 ? " point: " : " points: ") << r.description << "\n";
  out << "Score range: " << spec.score_min << "-" << spec.score_max << "\n";
  out << "\nStudent Answer:\n" << answer.answer_text << "\n";
  out << "\nAssessments:\n";
  if (assessments.empty()) out << "(none selected)\n";
  for (const auto& a : assessments) {
    if (a.usable())
      out << "Model " << a.model_id << " scored " << a.predicted_score << " with rationale: " << a.rationale << "\n";
    else
      out << "Model " << a.model_id << " produced no usable assessment (" << to_string(a.outcome) << ")\n";
  }
  return out.str();
}

std::vector<ChatMessage> chat_messages(const std::vector<ChatTurn>& history) {
  std::vector<ChatMessage> out;
  out.reserve(history.size());
  for (const auto& t : history) out.push_back({std::string(to_string(t.role)), t.content});
  return out;
}

std::vector<std::string> stream_chunks(const std::string& reply) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < reply.size()) {
    std::size_t j = i;
    while (j < reply.size() && reply[j] == ' ') ++j;
    while (j < reply.size() && reply[j] != ' ') ++j;
    out.push_back(reply.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace aera
