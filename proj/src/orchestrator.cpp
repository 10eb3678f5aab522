#include "aera/orchestrator.hpp"

#include <algorithm>
#include <set>

#include "aera/errors.hpp"
#include "aera/util.hpp"

namespace aera {

struct Orchestrator::Run {
  mutable std::mutex mu;
  std::condition_variable cv;
  BulkJob job;
  std::string owner;
  AnswerBatch batch;
  std::shared_ptr<JobChannel> channel;
  std::chrono::steady_clock::time_point deadline;
};

std::optional<ProgressEvent> ProgressSubscription::next(std::chrono::milliseconds wait) {
  const auto until = std::chrono::steady_clock::now() + wait;
  while (true) {
    while (!pending_.empty()) {
      JobUpdate u = std::move(pending_.front());
      pending_.pop_front();
      if (u.progress) return std::move(u.progress);
      if (is_terminal(u.state)) {
        ended_ = true;
        final_state_ = u.state;
        return std::nullopt;
      }
    }
    if (ended_) return std::nullopt;
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    auto r = channel_->read_after(cursor_, left);
    if (r.gap) throw std::runtime_error("progress subscriber fell out of the replay window");
    for (auto& item : r.items) {
      cursor_ = item.seq;
      pending_.push_back(std::move(item.value));
    }
    if (r.items.empty() && r.closed) {
      ended_ = true;
      return std::nullopt;
    }
  }
}

Orchestrator::Orchestrator(Gateway& gateway, Store& store, OrchestratorOptions options)
    : gateway_(gateway), store_(store), options_(options) {
  if (options_.max_in_flight == 0) throw std::invalid_argument("max_in_flight must be positive");
  for (std::size_t i = 0; i < options_.max_in_flight; ++i) workers_.emplace_back([this] { worker(); });
  watchdog_ = std::thread([this] { watchdog(); });
}

Orchestrator::~Orchestrator() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  stop_cv_.notify_all();
  for (auto& t : workers_) t.join();
  watchdog_.join();
}

std::chrono::milliseconds Orchestrator::job_deadline(std::size_t total, const std::vector<std::string>& model_ids) const {
  if (options_.job_timeout) return *options_.job_timeout;
  std::int64_t timeout = 0;
  for (const auto& m : model_ids) timeout = std::max<std::int64_t>(timeout, gateway_.config(m).timeout_ms);
  const auto& retry = gateway_.retry_policy();
  // never shorter than what a single pair may legitimately take with retries
  const std::int64_t per_pair =
      timeout * (retry.max_retries + 1) + retry.base_backoff.count() * ((std::int64_t{1} << retry.max_retries) - 1);
  const std::int64_t scaled = static_cast<std::int64_t>(total) * timeout / static_cast<std::int64_t>(options_.max_in_flight);
  return std::chrono::milliseconds(std::max(per_pair, scaled));
}

std::string Orchestrator::start_bulk_job(const std::string& batch_id, const std::vector<std::string>& model_ids,
                                         const GenerationParams& params, const std::string& owner) {
  if (auto v = validate_params(params); !v.empty()) throw ValidationError(std::move(v));
  if (model_ids.empty()) throw ValidationError("model_ids must be non-empty");
  std::set<std::string> seen;
  for (const auto& m : model_ids) {
    if (!seen.insert(m).second) throw ValidationError("duplicate model_id: " + m);
    if (!gateway_.has_model(m)) throw UnknownModelError(m);
  }
  auto batch = store_.load_batch(batch_id, false);
  if (!batch) throw NotFoundError("unknown batch " + batch_id);
  if (batch->answers.empty()) throw ValidationError("batch has no answers");

  auto run = std::make_shared<Run>();
  run->job.job_id = random_id("job");
  run->job.batch_id = batch_id;
  run->job.model_ids = model_ids;
  run->job.params = params;
  run->job.total = batch->answers.size() * model_ids.size();
  run->job.started_at = now_ms();
  run->owner = owner;
  run->batch = std::move(*batch);
  store_.save_job(run->job, owner);

  std::vector<Task> tasks;
  tasks.reserve(run->job.total);
  for (std::size_t i = 0; i < run->batch.answers.size(); ++i)
    for (const auto& m : model_ids) tasks.push_back({run, i, m});
  launch(run, std::move(tasks));
  return run->job.job_id;
}

void Orchestrator::launch(const std::shared_ptr<Run>& run, std::vector<Task> tasks) {
  run->channel = std::make_shared<JobChannel>(std::max<std::size_t>(1024, run->job.total + 4));
  run->deadline = std::chrono::steady_clock::now() + job_deadline(tasks.size(), run->job.model_ids);
  {
    std::lock_guard lock(mu_);
    runs_[run->job.job_id] = run;
    for (auto& t : tasks) queue_.push_back(std::move(t));
  }
  if (tasks.empty()) {
    std::lock_guard lock(run->mu);
    finish(*run, JobState::done, "");
  }
  queue_cv_.notify_all();
}

void Orchestrator::worker() {
  while (true) {
    Task task;
    {
      std::unique_lock lock(mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    execute(task);
    --in_flight_;
  }
}

void Orchestrator::execute(const Task& task) {
  Run& run = *task.run;
  {
    std::lock_guard lock(run.mu);
    if (is_terminal(run.job.state)) return;
    if (run.job.state == JobState::queued) {
      run.job.state = JobState::running;
      store_.save_job(run.job);
      run.channel->publish({JobState::running, std::nullopt, run.job.completed, run.job.total});
    }
  }
  const auto& answer = run.batch.answers[task.answer_index];
  Assessment a;
  try {
    a = gateway_.assess(task.model_id, run.job.params, run.batch.question, answer);
  } catch (const std::exception& e) {
    a = {};
    a.answer_id = answer.answer_id;
    a.model_id = task.model_id;
    a.outcome = Outcome::provider_error;
    a.parse_status = ParseStatus::failed;
    a.error = e.what();
  }
  try {
    store_.save_assessment(run.job.job_id, run.job.batch_id, a);
  } catch (const std::exception& e) {
    std::lock_guard lock(run.mu);
    if (!is_terminal(run.job.state)) finish(run, JobState::failed, std::string("persisting assessment: ") + e.what());
    return;
  }
  std::lock_guard lock(run.mu);
  if (is_terminal(run.job.state)) return;  // timed out; the stored result is kept
  ++run.job.completed;
  run.channel->publish({JobState::running,
                        ProgressEvent{run.job.job_id, a.answer_id, a.model_id, a.outcome, run.job.completed},
                        run.job.completed, run.job.total});
  if (run.job.completed == run.job.total) finish(run, JobState::done, "");
}

void Orchestrator::finish(Run& run, JobState state, const std::string& error) {
  run.job.state = state;
  run.job.finished_at = now_ms();
  run.job.error = error;
  try {
    store_.save_job(run.job);
  } catch (const std::exception&) {
    // the in-memory state stays authoritative; resume will reconcile
  }
  run.channel->publish({state, std::nullopt, run.job.completed, run.job.total});
  run.channel->close();
  run.cv.notify_all();
}

void Orchestrator::watchdog() {
  std::unique_lock lock(mu_);
  while (!stopping_) {
    stop_cv_.wait_for(lock, options_.watchdog_interval, [&] { return stopping_; });
    if (stopping_) return;
    const auto now = std::chrono::steady_clock::now();
    std::vector<std::shared_ptr<Run>> expired;
    for (const auto& [id, run] : runs_)
      if (run->deadline <= now) expired.push_back(run);
    lock.unlock();
    for (const auto& run : expired) {
      std::lock_guard rl(run->mu);
      if (!is_terminal(run->job.state)) finish(*run, JobState::failed, "job timed out");
    }
    lock.lock();
    // drop queued work of terminal jobs
    std::erase_if(queue_, [](const Task& t) {
      std::lock_guard rl(t.run->mu);
      return is_terminal(t.run->job.state);
    });
  }
}

std::shared_ptr<Orchestrator::Run> Orchestrator::find(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = runs_.find(job_id);
  return it == runs_.end() ? nullptr : it->second;
}

BulkJob Orchestrator::job(const std::string& job_id) const {
  if (const auto run = find(job_id)) {
    std::lock_guard lock(run->mu);
    return run->job;
  }
  if (auto stored = store_.load_job(job_id)) return *stored;
  throw NotFoundError("unknown job " + job_id);
}

std::shared_ptr<const JobChannel> Orchestrator::channel(const std::string& job_id) const {
  if (const auto run = find(job_id)) return run->channel;
  const auto stored = store_.load_job(job_id);
  if (!stored) throw NotFoundError("unknown job " + job_id);
  // not running in this process: a closed stream carrying only the state
  auto ch = std::make_shared<JobChannel>(4);
  ch->publish({stored->state, std::nullopt, stored->completed, stored->total});
  ch->close();
  return ch;
}

ProgressSubscription Orchestrator::subscribe_progress(const std::string& job_id, std::uint64_t after) const {
  return ProgressSubscription(channel(job_id), after);
}

std::vector<AnswerResults> Orchestrator::group(const BulkJob& job) const {
  const auto batch = store_.load_batch(job.batch_id, false);
  if (!batch) throw NotFoundError("unknown batch " + job.batch_id);
  std::map<std::pair<std::string, std::string>, Assessment> by_pair;
  for (auto& a : store_.assessments_for_job(job.job_id)) by_pair[{a.answer_id, a.model_id}] = std::move(a);
  std::vector<AnswerResults> out;
  for (const auto& answer : batch->answers) {
    AnswerResults r{answer.answer_id, {}};
    for (const auto& m : job.model_ids)
      if (const auto it = by_pair.find({answer.answer_id, m}); it != by_pair.end()) r.assessments.push_back(it->second);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AnswerResults> Orchestrator::collect_results(const std::string& job_id) const {
  const auto j = job(job_id);
  if (j.state != JobState::done)
    throw NotReadyError("job " + job_id + " is " + std::string(to_string(j.state)) + ", not done");
  return group(j);
}

std::vector<AnswerResults> Orchestrator::partial_results(const std::string& job_id) const { return group(job(job_id)); }

bool Orchestrator::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
  const auto run = find(job_id);
  if (!run) return is_terminal(job(job_id).state);
  std::unique_lock lock(run->mu);
  return run->cv.wait_for(lock, timeout, [&] { return is_terminal(run->job.state); });
}

void Orchestrator::resume_job(const std::string& job_id) {
  if (const auto active = find(job_id)) {
    std::lock_guard lock(active->mu);
    if (!is_terminal(active->job.state)) return;
  }
  auto stored = store_.load_job(job_id);
  if (!stored) throw NotFoundError("unknown job " + job_id);
  if (stored->state == JobState::done) return;
  for (const auto& m : stored->model_ids)
    if (!gateway_.has_model(m)) throw UnknownModelError(m);
  auto batch = store_.load_batch(stored->batch_id, false);
  if (!batch) throw NotFoundError("unknown batch " + stored->batch_id);

  std::set<std::pair<std::string, std::string>> have;
  for (const auto& a : store_.assessments_for_job(job_id)) have.insert({a.answer_id, a.model_id});

  auto run = std::make_shared<Run>();
  run->job = *stored;
  run->owner = store_.job_owner(job_id).value_or("");
  run->batch = std::move(*batch);
  run->job.state = JobState::queued;
  run->job.error.clear();
  run->job.finished_at = 0;
  run->job.completed = 0;
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < run->batch.answers.size(); ++i)
    for (const auto& m : run->job.model_ids) {
      if (have.count({run->batch.answers[i].answer_id, m})) ++run->job.completed;
      else tasks.push_back({run, i, m});
    }
  store_.save_job(run->job);
  launch(run, std::move(tasks));
}

std::size_t Orchestrator::resume_unfinished() {
  std::size_t n = 0;
  for (const auto& id : store_.unfinished_jobs()) {
    resume_job(id);
    ++n;
  }
  return n;
}

}  // namespace aera
