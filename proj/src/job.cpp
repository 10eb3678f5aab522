#include "aera/job.hpp"

namespace aera {

using nlohmann::json;

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

std::optional<JobState> job_state_from_string(std::string_view s) {
  if (s == "queued") return JobState::queued;
  if (s == "running") return JobState::running;
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  return std::nullopt;
}

void to_json(json& j, const BulkJob& job) {
  j = {{"job_id", job.job_id},       {"batch_id", job.batch_id},     {"model_ids", job.model_ids},
       {"params", job.params},       {"state", to_string(job.state)}, {"completed", job.completed},
       {"total", job.total},         {"started_at", job.started_at}, {"finished_at", job.finished_at}};
  if (!job.error.empty()) j["error"] = job.error;
}

void to_json(json& j, const ProgressEvent& e) {
  j = {{"job_id", e.job_id},
       {"answer_id", e.answer_id},
       {"model_id", e.model_id},
       {"outcome", to_string(e.outcome)},
       {"completed_so_far", e.completed_so_far}};
}

void to_json(json& j, const AnswerResults& r) {
  j = {{"answer_id", r.answer_id}, {"assessments", r.assessments}};
}

}  // namespace aera
