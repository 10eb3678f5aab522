#pragma once

#include <string>
#include <vector>

#include "aera/domain.hpp"
#include "aera/gateway.hpp"
#include "aera/store.hpp"

namespace aera {

/// Opening system turn of a chat session: the question context blocks, the
/// student answer and one "Model X scored S with rationale: R" line per
/// selected assessment.
std::string chat_system_turn(const QuestionSpec& spec, const StudentAnswer& answer,
                             const std::vector<Assessment>& assessments);

/// Provider messages for a stored history, oldest first.
std::vector<ChatMessage> chat_messages(const std::vector<ChatTurn>& history);

/// Splits a reply into whitespace-preserving chunks for token streaming.
/// Concatenating the chunks gives back `reply`.
std::vector<std::string> stream_chunks(const std::string& reply);

}  // namespace aera
