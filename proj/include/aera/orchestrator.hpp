#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aera/channel.hpp"
#include "aera/gateway.hpp"
#include "aera/job.hpp"
#include "aera/store.hpp"

namespace aera {

struct OrchestratorOptions {
  std::size_t max_in_flight = 16;  // global cap over all jobs and providers
  std::chrono::milliseconds watchdog_interval{100};
  // Overrides the computed job deadline when set (tests).
  std::optional<std::chrono::milliseconds> job_timeout;
};

using JobChannel = Channel<JobUpdate>;

/// One subscriber's cursor over a job's update stream.
class ProgressSubscription {
 public:
  ProgressSubscription(std::shared_ptr<const JobChannel> channel, std::uint64_t after = 0)
      : channel_(std::move(channel)), cursor_(after) {}

  /// Next progress event, or nullopt once the job reached a terminal state
  /// (see final_state()) or `wait` elapsed (see ended()).
  std::optional<ProgressEvent> next(std::chrono::milliseconds wait = std::chrono::seconds(30));
  bool ended() const { return ended_; }
  std::optional<JobState> final_state() const { return final_state_; }

 private:
  std::shared_ptr<const JobChannel> channel_;
  std::uint64_t cursor_;
  std::deque<JobUpdate> pending_;
  bool ended_ = false;
  std::optional<JobState> final_state_;
};

class Orchestrator {
 public:
  Orchestrator(Gateway& gateway, Store& store, OrchestratorOptions options = {});
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  /// Non-blocking. Throws NotFoundError (batch), ValidationError (empty or
  /// duplicate models, bad params) or UnknownModelError before any work.
  std::string start_bulk_job(const std::string& batch_id, const std::vector<std::string>& model_ids,
                             const GenerationParams& params, const std::string& owner = {});

  BulkJob job(const std::string& job_id) const;
  std::shared_ptr<const JobChannel> channel(const std::string& job_id) const;
  ProgressSubscription subscribe_progress(const std::string& job_id, std::uint64_t after = 0) const;

  /// Requires state done (NotReadyError otherwise). Grouped in batch order,
  /// each group ordered like the job's model_ids.
  std::vector<AnswerResults> collect_results(const std::string& job_id) const;
  /// Whatever has been persisted so far, same ordering, any state.
  std::vector<AnswerResults> partial_results(const std::string& job_id) const;

  /// True if the job is terminal within `timeout`.
  bool wait(const std::string& job_id, std::chrono::milliseconds timeout) const;

  /// Re-runs only the (answer, model) pairs with no stored assessment.
  void resume_job(const std::string& job_id);
  /// Resumes every job the store reports as queued or running.
  std::size_t resume_unfinished();

  std::chrono::milliseconds job_deadline(std::size_t total, const std::vector<std::string>& model_ids) const;
  int peak_in_flight() const { return peak_.load(); }

 private:
  struct Run;
  struct Task {
    std::shared_ptr<Run> run;
    std::size_t answer_index;
    std::string model_id;
  };

  std::shared_ptr<Run> find(const std::string& job_id) const;
  void launch(const std::shared_ptr<Run>& run, std::vector<Task> tasks);
  void worker();
  void watchdog();
  void execute(const Task& task);
  void finish(Run& run, JobState state, const std::string& error);  // run.mu held
  std::vector<AnswerResults> group(const BulkJob& job) const;

  Gateway& gateway_;
  Store& store_;
  OrchestratorOptions options_;

  mutable std::mutex mu_;
  std::condition_variable queue_cv_;
  std::deque<Task> queue_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  bool stopping_ = false;

  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
  std::vector<std::thread> workers_;
  std::thread watchdog_;
  std::condition_variable stop_cv_;
};

}  // namespace aera
