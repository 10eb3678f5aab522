#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"
#include "aera/gateway.hpp"

namespace aera {

enum class JobState { queued, running, done, failed };

std::string_view to_string(JobState s);
std::optional<JobState> job_state_from_string(std::string_view s);
inline bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

struct BulkJob {
  std::string job_id;
  std::string batch_id;
  std::vector<std::string> model_ids;
  GenerationParams params;
  JobState state = JobState::queued;
  std::size_t completed = 0;
  std::size_t total = 0;
  Timestamp started_at = 0;
  Timestamp finished_at = 0;
  std::string error;
};

struct ProgressEvent {
  std::string job_id;
  std::string answer_id;
  std::string model_id;
  Outcome outcome = Outcome::ok;
  std::size_t completed_so_far = 0;

  bool operator==(const ProgressEvent&) const = default;
};

// One entry on a job's realtime channel: either a progress event or the
// terminal state change that ends the stream.
struct JobUpdate {
  JobState state = JobState::running;
  std::optional<ProgressEvent> progress;
  std::size_t completed = 0;
  std::size_t total = 0;
};

// Assessments for one answer, one per selected model in submission order.
struct AnswerResults {
  std::string answer_id;
  std::vector<Assessment> assessments;
};

void to_json(nlohmann::json& j, const BulkJob& job);
void to_json(nlohmann::json& j, const ProgressEvent& e);
void to_json(nlohmann::json& j, const AnswerResults& r);

}  // namespace aera
