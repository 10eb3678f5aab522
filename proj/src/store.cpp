#include "aera/store.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <sqlite3.h>

#include "aera/errors.hpp"
#include "aera/prompt.hpp"
#include "aera/util.hpp"

namespace aera {

using nlohmann::json;

std::string_view to_string(ChatRole r) {
  switch (r) {
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
    case ChatRole::system: return "system";
  }
  return "user";
}

std::optional<ChatRole> chat_role_from_string(std::string_view s) {
  if (s == "user") return ChatRole::user;
  if (s == "assistant") return ChatRole::assistant;
  if (s == "system") return ChatRole::system;
  return std::nullopt;
}

void to_json(json& j, const ChatTurn& t) {
  j = {{"session_id", t.session_id}, {"turn_index", t.turn_index}, {"role", to_string(t.role)},
       {"content", t.content},       {"model_id", t.model_id},     {"created_at", t.created_at}};
}

void to_json(json& j, const ChatSession& s) {
  j = {{"session_id", s.session_id},         {"batch_id", s.batch_id}, {"answer_id", s.answer_id},
       {"assessment_ids", s.assessment_ids}, {"model_id", s.model_id}, {"created_at", s.created_at}};
}

namespace {

json scored(const ScoredRationale& s) { return json{{"score", s.score}, {"rationale", s.rationale}}; }

}  // namespace

std::string to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json line = {{"prompt", p.prompt},
                 {"chosen", dump_json(scored(p.chosen))},
                 {"rejected", dump_json(scored(p.rejected))},
                 {"meta",
                  {{"batch_id", p.batch_id},
                   {"answer_id", p.answer_id},
                   {"chosen_model", p.chosen_model},
                   {"rejected_model", p.rejected_model},
                   {"chosen_assessment_id", p.chosen_assessment_id},
                   {"rejected_assessment_id", p.rejected_assessment_id},
                   {"source_event_ids", p.source_event_ids}}}};
    out += dump_json(line);
    out += '\n';
  }
  return out;
}

std::string to_jsonl(const std::vector<SftExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    json line = {{"prompt", e.prompt},
                 {"completion", dump_json(scored(e.target))},
                 {"meta",
                  {{"batch_id", e.batch_id},
                   {"answer_id", e.answer_id},
                   {"source", e.source},
                   {"source_event_ids", e.source_event_ids}}}};
    out += dump_json(line);
    out += '\n';
  }
  return out;
}

std::size_t default_review_threshold(std::size_t model_count) { return std::max<std::size_t>(2, model_count / 2 + 1); }

std::vector<LabelReviewFlag> flag_label_reviews(const AnswerBatch& batch, const std::vector<Assessment>& assessments,
                                                std::size_t threshold) {
  std::vector<LabelReviewFlag> out;
  // latest usable assessment per (answer, model)
  std::map<std::string, std::map<std::string, int>> scores;
  for (const auto& a : assessments)
    if (a.usable()) scores[a.answer_id][a.model_id] = a.predicted_score;
  for (const auto& answer : batch.answers) {
    if (!answer.gold_score) continue;
    const auto it = scores.find(answer.answer_id);
    if (it == scores.end()) continue;
    std::map<int, std::vector<std::string>> by_score;
    for (const auto& [model, s] : it->second) by_score[s].push_back(model);
    const std::vector<std::string>* best = nullptr;
    int best_score = 0;
    bool tie = false;
    for (const auto& [s, models] : by_score) {
      if (!best || models.size() > best->size()) {
        best = &models;
        best_score = s;
        tie = false;
      } else if (models.size() == best->size()) {
        tie = true;
      }
    }
    if (!best || tie || best->size() < threshold || best_score == *answer.gold_score) continue;
    out.push_back({answer.answer_id, best_score, *answer.gold_score, *best});
  }
  return out;
}

// ------------------------------------------------------------------ sqlite

namespace {

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw std::runtime_error(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db) + " in " + sql);
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, const char* v) { return bind(i, std::string(v)); }
  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Stmt& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, std::size_t v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, bool v) { return bind(i, static_cast<std::int64_t>(v ? 1 : 0)); }
  template <class T>
  Stmt& bind(int i, const std::optional<T>& v) {
    if (!v) {
      check(sqlite3_bind_null(stmt_, i));
      return *this;
    }
    return bind(i, *v);
  }

  // true while rows are available
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    const int ext = sqlite3_extended_errcode(db_);
    const std::string msg = sqlite3_errmsg(db_);
    if ((ext & 0xFF) == SQLITE_CONSTRAINT) throw ConflictError("constraint violation: " + msg);
    throw std::runtime_error("sqlite step failed: " + msg);
  }
  void run() {
    while (step()) {
    }
  }

  std::string text(int c) const {
    const auto* p = sqlite3_column_text(stmt_, c);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, c)))
             : std::string{};
  }
  std::int64_t int64(int c) const { return sqlite3_column_int64(stmt_, c); }
  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }
  std::optional<int> opt_int(int c) const {
    return is_null(c) ? std::nullopt : std::optional<int>(static_cast<int>(int64(c)));
  }
  std::optional<std::string> opt_text(int c) const { return is_null(c) ? std::nullopt : std::optional(text(c)); }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw std::runtime_error(std::string("sqlite bind failed: ") + sqlite3_errmsg(db_));
  }
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

constexpr const char* kSchema = R"SQL(
CREATE TABLE IF NOT EXISTS users (
  user_id TEXT PRIMARY KEY,
  email TEXT NOT NULL UNIQUE,
  password_hash TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS tokens (
  token_hash TEXT PRIMARY KEY,
  user_id TEXT NOT NULL REFERENCES users(user_id),
  expires_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS questions (
  question_id TEXT PRIMARY KEY,
  owner TEXT NOT NULL,
  spec_json TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS batches (
  batch_id TEXT PRIMARY KEY,
  owner TEXT NOT NULL,
  question_id TEXT NOT NULL,
  question_json TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS answers (
  batch_id TEXT NOT NULL REFERENCES batches(batch_id),
  position INTEGER NOT NULL,
  answer_id TEXT NOT NULL,
  answer_text TEXT NOT NULL,
  gold_score INTEGER,
  PRIMARY KEY (batch_id, answer_id)
);
CREATE TABLE IF NOT EXISTS jobs (
  job_id TEXT PRIMARY KEY,
  owner TEXT NOT NULL,
  batch_id TEXT NOT NULL REFERENCES batches(batch_id),
  model_ids_json TEXT NOT NULL,
  params_json TEXT NOT NULL,
  state TEXT NOT NULL,
  completed INTEGER NOT NULL,
  total INTEGER NOT NULL,
  started_at INTEGER NOT NULL,
  finished_at INTEGER NOT NULL,
  error TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS assessments (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  assessment_id TEXT NOT NULL UNIQUE,
  job_id TEXT NOT NULL,
  batch_id TEXT NOT NULL,
  answer_id TEXT NOT NULL,
  model_id TEXT NOT NULL,
  predicted_score INTEGER NOT NULL,
  rationale TEXT NOT NULL,
  parse_status TEXT NOT NULL,
  outcome TEXT NOT NULL,
  raw_output TEXT NOT NULL,
  latency_ms INTEGER NOT NULL,
  error TEXT NOT NULL,
  UNIQUE (job_id, answer_id, model_id),
  FOREIGN KEY (batch_id, answer_id) REFERENCES answers(batch_id, answer_id)
);
CREATE TABLE IF NOT EXISTS events (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  event_id TEXT NOT NULL UNIQUE,
  kind TEXT NOT NULL,
  batch_id TEXT NOT NULL,
  answer_id TEXT NOT NULL,
  model_id TEXT,
  payload_json TEXT NOT NULL,
  author TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  FOREIGN KEY (batch_id, answer_id) REFERENCES answers(batch_id, answer_id)
);
CREATE TRIGGER IF NOT EXISTS events_no_update BEFORE UPDATE ON events
BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
CREATE TRIGGER IF NOT EXISTS events_no_delete BEFORE DELETE ON events
BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
CREATE TABLE IF NOT EXISTS chat_sessions (
  session_id TEXT PRIMARY KEY,
  owner TEXT NOT NULL,
  batch_id TEXT NOT NULL,
  answer_id TEXT NOT NULL,
  assessment_ids_json TEXT NOT NULL,
  model_id TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS chat_turns (
  session_id TEXT NOT NULL REFERENCES chat_sessions(session_id),
  turn_index INTEGER NOT NULL,
  role TEXT NOT NULL,
  content TEXT NOT NULL,
  model_id TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  PRIMARY KEY (session_id, turn_index)
);
CREATE TABLE IF NOT EXISTS eval_sessions (
  session_id TEXT PRIMARY KEY,
  owner TEXT NOT NULL,
  session_json TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS eval_judgments (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  session_id TEXT NOT NULL REFERENCES eval_sessions(session_id),
  grader TEXT NOT NULL,
  item_index INTEGER NOT NULL,
  slot INTEGER NOT NULL,
  correct INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS eval_preferences (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  session_id TEXT NOT NULL REFERENCES eval_sessions(session_id),
  grader TEXT NOT NULL,
  item_index INTEGER NOT NULL,
  slot INTEGER NOT NULL
);
)SQL";

constexpr const char* kAssessmentColumns =
    "assessment_id, answer_id, model_id, predicted_score, rationale, parse_status, outcome, raw_output, "
    "latency_ms, error, job_id, batch_id";

Assessment read_assessment(const Stmt& s) {
  Assessment a;
  a.assessment_id = s.text(0);
  a.answer_id = s.text(1);
  a.model_id = s.text(2);
  a.predicted_score = static_cast<int>(s.int64(3));
  a.rationale = s.text(4);
  a.parse_status = parse_status_from_string(s.text(5)).value_or(ParseStatus::failed);
  a.outcome = outcome_from_string(s.text(6)).value_or(Outcome::provider_error);
  a.raw_output = s.text(7);
  a.latency_ms = s.int64(8);
  a.error = s.text(9);
  return a;
}

}  // namespace

class Store::Impl {
 public:
  explicit Impl(const std::string& url) {
    std::string path = url;
    if (path.starts_with("sqlite://")) path = path.substr(9);
    else if (path.starts_with("sqlite:")) path = path.substr(7);
    if (path.empty()) path = ":memory:";
    if (sqlite3_open_v2(path.c_str(), &db, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
      const std::string err = db ? sqlite3_errmsg(db) : "out of memory";
      sqlite3_close(db);
      throw std::runtime_error("cannot open database " + path + ": " + err);
    }
    sqlite3_busy_timeout(db, 5000);
    exec("PRAGMA foreign_keys=ON;");
    if (path != ":memory:") exec("PRAGMA journal_mode=WAL;");
    exec("PRAGMA synchronous=FULL;");
    exec(kSchema);
  }
  ~Impl() { sqlite3_close(db); }

  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      const std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw std::runtime_error("sqlite exec failed: " + msg);
    }
  }

  // Transaction scope; rolls back unless committed.
  class Tx {
   public:
    explicit Tx(Impl& impl) : impl_(impl) { impl_.exec("BEGIN IMMEDIATE;"); }
    ~Tx() {
      if (!done_) {
        char* err = nullptr;
        sqlite3_exec(impl_.db, "ROLLBACK;", nullptr, nullptr, &err);
        sqlite3_free(err);
      }
    }
    void commit() {
      impl_.exec("COMMIT;");
      done_ = true;
    }

   private:
    Impl& impl_;
    bool done_ = false;
  };

  std::optional<AnswerBatch> load_batch(const std::string& batch_id, bool effective_gold) const {
    AnswerBatch b;
    {
      Stmt s(db, "SELECT question_json, created_at FROM batches WHERE batch_id = ?");
      s.bind(1, batch_id);
      if (!s.step()) return std::nullopt;
      b.batch_id = batch_id;
      b.question = json::parse(s.text(0)).get<QuestionSpec>();
      b.created_at = s.int64(1);
    }
    {
      Stmt s(db, "SELECT answer_id, answer_text, gold_score FROM answers WHERE batch_id = ? ORDER BY position");
      s.bind(1, batch_id);
      while (s.step()) b.answers.push_back({s.text(0), s.text(1), s.opt_int(2)});
    }
    if (effective_gold) {
      Stmt s(db,
             "SELECT answer_id, payload_json FROM events WHERE batch_id = ? AND kind = 'label_correction' "
             "ORDER BY seq");
      s.bind(1, batch_id);
      std::map<std::string, int> latest;
      while (s.step()) latest[s.text(0)] = json::parse(s.text(1)).at("score").get<int>();
      for (auto& a : b.answers)
        if (const auto it = latest.find(a.answer_id); it != latest.end()) a.gold_score = it->second;
    }
    return b;
  }

  std::optional<StoredAssessment> load_assessment(const std::string& id) const {
    Stmt s(db, (std::string("SELECT ") + kAssessmentColumns + " FROM assessments WHERE assessment_id = ?").c_str());
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    return StoredAssessment{read_assessment(s), s.text(10), s.text(11)};
  }

  // latest per (answer, model) in a batch
  std::map<std::pair<std::string, std::string>, Assessment> latest_assessments(const std::string& batch_id) const {
    std::map<std::pair<std::string, std::string>, Assessment> out;
    Stmt s(db, (std::string("SELECT ") + kAssessmentColumns + " FROM assessments WHERE batch_id = ? ORDER BY seq").c_str());
    s.bind(1, batch_id);
    while (s.step()) {
      auto a = read_assessment(s);
      out[{a.answer_id, a.model_id}] = std::move(a);
    }
    return out;
  }

  std::vector<AnnotationEvent> events(const std::optional<std::string>& batch_id, const char* kind = nullptr) const {
    std::string sql =
        "SELECT event_id, kind, batch_id, answer_id, model_id, payload_json, author, created_at FROM events";
    std::vector<std::string> where;
    if (batch_id) where.emplace_back("batch_id = ?1");
    if (kind) where.emplace_back("kind = ?2");
    if (!where.empty()) sql += " WHERE " + join(where, " AND ");
    sql += " ORDER BY seq";
    Stmt s(db, sql.c_str());
    if (batch_id) s.bind(1, *batch_id);
    if (kind) s.bind(2, kind);
    std::vector<AnnotationEvent> out;
    while (s.step()) {
      AnnotationEvent e;
      e.event_id = s.text(0);
      const auto k = event_kind_from_string(s.text(1)).value_or(EventKind::preference);
      e.subject = {s.text(2), s.text(3), s.opt_text(4)};
      e.payload = payload_from_json(k, json::parse(s.text(5)));
      e.author = s.text(6);
      e.created_at = s.int64(7);
      out.push_back(std::move(e));
    }
    return out;
  }

  std::vector<std::string> export_batches(const ExportFilter& f) const {
    std::string sql = "SELECT batch_id FROM batches";
    std::vector<std::string> where;
    if (f.batch_id) where.emplace_back("batch_id = ?1");
    if (f.owner) where.emplace_back("owner = ?2");
    if (!where.empty()) sql += " WHERE " + join(where, " AND ");
    sql += " ORDER BY created_at, batch_id";
    Stmt s(db, sql.c_str());
    if (f.batch_id) s.bind(1, *f.batch_id);
    if (f.owner) s.bind(2, *f.owner);
    std::vector<std::string> out;
    while (s.step()) out.push_back(s.text(0));
    return out;
  }

  struct PreferenceState {
    bool preferred = false;
    std::optional<std::string> assessment_id;
    std::string event_id;
  };

  // answer -> model -> latest preference
  std::map<std::string, std::map<std::string, PreferenceState>> preferences(const std::string& batch_id) const {
    std::map<std::string, std::map<std::string, PreferenceState>> out;
    for (const auto& e : events(batch_id, "preference")) {
      const auto& p = std::get<RationalePreference>(e.payload);
      out[e.subject.answer_id][e.subject.model_id.value_or("")] = {p.preferred, p.assessment_id, e.event_id};
    }
    return out;
  }

  std::optional<Assessment> resolve(const PreferenceState& p, const std::string& answer_id, const std::string& model,
                                    const std::map<std::pair<std::string, std::string>, Assessment>& latest) const {
    if (p.assessment_id) {
      auto a = load_assessment(*p.assessment_id);
      if (!a) return std::nullopt;
      return a->assessment;
    }
    const auto it = latest.find({answer_id, model});
    if (it == latest.end()) return std::nullopt;
    return it->second;
  }

  sqlite3* db = nullptr;
  mutable std::mutex mu;
};

Store::Store(const std::string& url) : impl_(std::make_unique<Impl>(url)) {}
Store::~Store() = default;

std::string Store::create_user(const std::string& email, const std::string& password_hash) {
  std::lock_guard lock(impl_->mu);
  const auto user_id = random_id("u");
  Stmt s(impl_->db, "INSERT INTO users (user_id, email, password_hash, created_at) VALUES (?, ?, ?, ?)");
  s.bind(1, user_id).bind(2, email).bind(3, password_hash).bind(4, now_ms());
  try {
    s.run();
  } catch (const ConflictError&) {
    throw ConflictError("email already registered");
  }
  return user_id;
}

std::optional<UserRecord> Store::find_user_by_email(const std::string& email) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT user_id, email, password_hash, created_at FROM users WHERE email = ?");
  s.bind(1, email);
  if (!s.step()) return std::nullopt;
  return UserRecord{s.text(0), s.text(1), s.text(2), s.int64(3)};
}

void Store::save_token(const std::string& token_hash, const std::string& user_id, Timestamp expires_at) {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "INSERT INTO tokens (token_hash, user_id, expires_at) VALUES (?, ?, ?)");
  s.bind(1, token_hash).bind(2, user_id).bind(3, expires_at).run();
}

std::optional<std::string> Store::user_for_token(const std::string& token_hash, Timestamp now) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT user_id FROM tokens WHERE token_hash = ? AND expires_at > ?");
  s.bind(1, token_hash).bind(2, now);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

std::string Store::save_question(QuestionSpec& question, const std::string& owner) {
  if (auto v = validate_question(question); !v.empty()) throw ValidationError(std::move(v));
  std::lock_guard lock(impl_->mu);
  if (question.question_id.empty()) question.question_id = random_id("q");
  Stmt s(impl_->db, "INSERT INTO questions (question_id, owner, spec_json, created_at) VALUES (?, ?, ?, ?)");
  s.bind(1, question.question_id).bind(2, owner).bind(3, dump_json(json(question))).bind(4, now_ms());
  try {
    s.run();
  } catch (const ConflictError&) {
    throw ConflictError("question " + question.question_id + " already exists");
  }
  return question.question_id;
}

std::optional<QuestionSpec> Store::load_question(const std::string& question_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT spec_json FROM questions WHERE question_id = ?");
  s.bind(1, question_id);
  if (!s.step()) return std::nullopt;
  return json::parse(s.text(0)).get<QuestionSpec>();
}

std::optional<std::string> Store::question_owner(const std::string& question_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT owner FROM questions WHERE question_id = ?");
  s.bind(1, question_id);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

std::string Store::save_batch(AnswerBatch& batch, const std::string& owner) {
  if (auto v = validate_question(batch.question); !v.empty()) throw ValidationError(std::move(v));
  std::lock_guard lock(impl_->mu);
  if (batch.batch_id.empty()) batch.batch_id = random_id("b");
  if (batch.created_at == 0) batch.created_at = now_ms();
  Impl::Tx tx(*impl_);
  {
    Stmt s(impl_->db,
           "INSERT INTO batches (batch_id, owner, question_id, question_json, created_at) VALUES (?, ?, ?, ?, ?)");
    s.bind(1, batch.batch_id)
        .bind(2, owner)
        .bind(3, batch.question.question_id)
        .bind(4, dump_json(json(batch.question)))
        .bind(5, batch.created_at)
        .run();
  }
  for (std::size_t i = 0; i < batch.answers.size(); ++i) {
    const auto& a = batch.answers[i];
    Stmt row(impl_->db,
             "INSERT INTO answers (batch_id, position, answer_id, answer_text, gold_score) VALUES (?, ?, ?, ?, ?)");
    row.bind(1, batch.batch_id).bind(2, i).bind(3, a.answer_id).bind(4, a.answer_text).bind(5, a.gold_score).run();
  }
  tx.commit();
  return batch.batch_id;
}

std::optional<AnswerBatch> Store::load_batch(const std::string& batch_id, bool effective_gold) const {
  std::lock_guard lock(impl_->mu);
  return impl_->load_batch(batch_id, effective_gold);
}

std::optional<std::string> Store::batch_owner(const std::string& batch_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT owner FROM batches WHERE batch_id = ?");
  s.bind(1, batch_id);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

void Store::save_job(const BulkJob& job, const std::string& owner) {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "INSERT INTO jobs (job_id, owner, batch_id, model_ids_json, params_json, state, completed, total, "
         "started_at, finished_at, error) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11) "
         "ON CONFLICT(job_id) DO UPDATE SET state = ?6, completed = ?7, total = ?8, started_at = ?9, "
         "finished_at = ?10, error = ?11");
  s.bind(1, job.job_id)
      .bind(2, owner)
      .bind(3, job.batch_id)
      .bind(4, dump_json(json(job.model_ids)))
      .bind(5, dump_json(json(job.params)))
      .bind(6, std::string(to_string(job.state)))
      .bind(7, job.completed)
      .bind(8, job.total)
      .bind(9, job.started_at)
      .bind(10, job.finished_at)
      .bind(11, job.error)
      .run();
}

std::optional<BulkJob> Store::load_job(const std::string& job_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "SELECT batch_id, model_ids_json, params_json, state, completed, total, started_at, finished_at, error "
         "FROM jobs WHERE job_id = ?");
  s.bind(1, job_id);
  if (!s.step()) return std::nullopt;
  BulkJob j;
  j.job_id = job_id;
  j.batch_id = s.text(0);
  j.model_ids = json::parse(s.text(1)).get<std::vector<std::string>>();
  j.params = json::parse(s.text(2)).get<GenerationParams>();
  j.state = job_state_from_string(s.text(3)).value_or(JobState::failed);
  j.completed = static_cast<std::size_t>(s.int64(4));
  j.total = static_cast<std::size_t>(s.int64(5));
  j.started_at = s.int64(6);
  j.finished_at = s.int64(7);
  j.error = s.text(8);
  return j;
}

std::optional<std::string> Store::job_owner(const std::string& job_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT owner FROM jobs WHERE job_id = ?");
  s.bind(1, job_id);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

std::vector<std::string> Store::unfinished_jobs() const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT job_id FROM jobs WHERE state IN ('queued', 'running') ORDER BY started_at, job_id");
  std::vector<std::string> out;
  while (s.step()) out.push_back(s.text(0));
  return out;
}

std::string Store::save_assessment(const std::string& job_id, const std::string& batch_id, Assessment& a) {
  std::lock_guard lock(impl_->mu);
  if (a.assessment_id.empty()) a.assessment_id = random_id("as");
  Stmt s(impl_->db,
         "INSERT INTO assessments (assessment_id, job_id, batch_id, answer_id, model_id, predicted_score, rationale, "
         "parse_status, outcome, raw_output, latency_ms, error) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
  s.bind(1, a.assessment_id)
      .bind(2, job_id)
      .bind(3, batch_id)
      .bind(4, a.answer_id)
      .bind(5, a.model_id)
      .bind(6, a.predicted_score)
      .bind(7, a.rationale)
      .bind(8, std::string(to_string(a.parse_status)))
      .bind(9, std::string(to_string(a.outcome)))
      .bind(10, a.raw_output)
      .bind(11, a.latency_ms)
      .bind(12, a.error)
      .run();
  return a.assessment_id;
}

std::optional<StoredAssessment> Store::load_assessment(const std::string& assessment_id) const {
  std::lock_guard lock(impl_->mu);
  return impl_->load_assessment(assessment_id);
}

std::vector<Assessment> Store::assessments_for_job(const std::string& job_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         (std::string("SELECT ") + kAssessmentColumns + " FROM assessments WHERE job_id = ? ORDER BY seq").c_str());
  s.bind(1, job_id);
  std::vector<Assessment> out;
  while (s.step()) out.push_back(read_assessment(s));
  return out;
}

std::vector<Assessment> Store::latest_assessments(const std::string& batch_id) const {
  std::lock_guard lock(impl_->mu);
  const auto latest = impl_->latest_assessments(batch_id);
  const auto batch = impl_->load_batch(batch_id, false);
  std::vector<Assessment> out;
  if (!batch) return out;
  // batch order, then model id
  for (const auto& answer : batch->answers)
    for (auto it = latest.lower_bound({answer.answer_id, ""}); it != latest.end() && it->first.first == answer.answer_id;
         ++it)
      out.push_back(it->second);
  return out;
}

std::string Store::record_event(AnnotationEvent event) {
  std::lock_guard lock(impl_->mu);
  Impl::Tx tx(*impl_);
  if (!event.event_id.empty()) {
    Stmt s(impl_->db, "SELECT 1 FROM events WHERE event_id = ?");
    s.bind(1, event.event_id);
    if (s.step()) return event.event_id;
  }
  const auto batch = impl_->load_batch(event.subject.batch_id, false);
  if (!batch) throw NotFoundError("unknown batch " + event.subject.batch_id);
  if (!batch->find(event.subject.answer_id))
    throw NotFoundError("unknown answer " + event.subject.answer_id + " in batch " + event.subject.batch_id);
  if (auto v = validate_event_payload(event, batch->question); !v.empty()) throw ValidationError(std::move(v));

  if (const auto* pref = std::get_if<RationalePreference>(&event.payload)) {
    if (pref->assessment_id) {
      const auto a = impl_->load_assessment(*pref->assessment_id);
      if (!a || a->batch_id != event.subject.batch_id || a->assessment.answer_id != event.subject.answer_id ||
          a->assessment.model_id != *event.subject.model_id)
        throw NotFoundError("assessment " + *pref->assessment_id + " does not match the event subject");
    } else {
      Stmt s(impl_->db, "SELECT 1 FROM assessments WHERE batch_id = ? AND answer_id = ? AND model_id = ?");
      s.bind(1, event.subject.batch_id).bind(2, event.subject.answer_id).bind(3, *event.subject.model_id);
      if (!s.step())
        throw NotFoundError("no assessment by " + *event.subject.model_id + " for answer " + event.subject.answer_id);
    }
  }
  if (const auto* turn = std::get_if<ChatTurnRecord>(&event.payload)) {
    Stmt s(impl_->db, "SELECT 1 FROM chat_sessions WHERE session_id = ?");
    s.bind(1, turn->session_id);
    if (!s.step()) throw NotFoundError("unknown chat session " + turn->session_id);
  }

  if (event.event_id.empty()) event.event_id = random_id("ev");
  if (event.created_at == 0) event.created_at = now_ms();
  Stmt s(impl_->db,
         "INSERT INTO events (event_id, kind, batch_id, answer_id, model_id, payload_json, author, created_at) "
         "VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
  s.bind(1, event.event_id)
      .bind(2, std::string(to_string(event.kind())))
      .bind(3, event.subject.batch_id)
      .bind(4, event.subject.answer_id)
      .bind(5, event.subject.model_id)
      .bind(6, dump_json(payload_to_json(event.payload)))
      .bind(7, event.author)
      .bind(8, event.created_at)
      .run();
  tx.commit();
  return event.event_id;
}

std::vector<AnnotationEvent> Store::events(const std::optional<std::string>& batch_id) const {
  std::lock_guard lock(impl_->mu);
  return impl_->events(batch_id);
}

std::vector<PreferencePair> Store::export_preference_pairs(const ExportFilter& filter) const {
  std::lock_guard lock(impl_->mu);
  std::vector<PreferencePair> out;
  for (const auto& batch_id : impl_->export_batches(filter)) {
    const auto batch = impl_->load_batch(batch_id, true);
    const auto prefs = impl_->preferences(batch_id);
    const auto latest = impl_->latest_assessments(batch_id);
    for (const auto& answer : batch->answers) {
      const auto it = prefs.find(answer.answer_id);
      if (it == prefs.end()) continue;
      struct Side {
        std::string model;
        Assessment assessment;
        std::string event_id;
      };
      std::vector<Side> chosen, rejected;
      for (const auto& [model, state] : it->second) {  // std::map: sorted by model id
        auto a = impl_->resolve(state, answer.answer_id, model, latest);
        if (!a || !a->usable()) continue;
        (state.preferred ? chosen : rejected).push_back({model, std::move(*a), state.event_id});
      }
      if (chosen.empty() || rejected.empty()) continue;
      const auto prompt = assemble_prompt(batch->question, answer).text;
      for (const auto& c : chosen)
        for (const auto& r : rejected) {
          if (c.assessment.assessment_id == r.assessment.assessment_id) continue;
          out.push_back({prompt,
                         {c.assessment.predicted_score, c.assessment.rationale},
                         {r.assessment.predicted_score, r.assessment.rationale},
                         batch_id,
                         answer.answer_id,
                         c.model,
                         r.model,
                         c.assessment.assessment_id,
                         r.assessment.assessment_id,
                         {c.event_id, r.event_id}});
        }
    }
  }
  return out;
}

std::vector<SftExample> Store::export_sft(const ExportFilter& filter) const {
  std::lock_guard lock(impl_->mu);
  std::vector<SftExample> out;
  for (const auto& batch_id : impl_->export_batches(filter)) {
    const auto batch = impl_->load_batch(batch_id, true);
    const auto prefs = impl_->preferences(batch_id);
    const auto latest = impl_->latest_assessments(batch_id);
    std::map<std::string, std::pair<DirectAnnotation, std::string>> direct;
    for (const auto& e : impl_->events(batch_id, "direct_annotation"))
      direct[e.subject.answer_id] = {std::get<DirectAnnotation>(e.payload), e.event_id};

    for (const auto& answer : batch->answers) {
      const auto prompt = assemble_prompt(batch->question, answer).text;
      if (const auto d = direct.find(answer.answer_id); d != direct.end()) {
        out.push_back({prompt,
                       {d->second.first.score, d->second.first.rationale},
                       batch_id,
                       answer.answer_id,
                       "direct_annotation",
                       {d->second.second}});
        continue;
      }
      const auto it = prefs.find(answer.answer_id);
      if (it == prefs.end() || !answer.gold_score) continue;
      for (const auto& [model, state] : it->second) {
        if (!state.preferred) continue;
        const auto a = impl_->resolve(state, answer.answer_id, model, latest);
        if (!a || !a->usable() || a->predicted_score != *answer.gold_score) continue;
        out.push_back({prompt,
                       {a->predicted_score, a->rationale},
                       batch_id,
                       answer.answer_id,
                       "preferred_assessment",
                       {state.event_id}});
      }
    }
  }
  return out;
}

std::string Store::create_chat_session(ChatSession& session) {
  std::lock_guard lock(impl_->mu);
  if (session.session_id.empty()) session.session_id = random_id("cs");
  if (session.created_at == 0) session.created_at = now_ms();
  Stmt s(impl_->db,
         "INSERT INTO chat_sessions (session_id, owner, batch_id, answer_id, assessment_ids_json, model_id, "
         "created_at) VALUES (?, ?, ?, ?, ?, ?, ?)");
  s.bind(1, session.session_id)
      .bind(2, session.owner)
      .bind(3, session.batch_id)
      .bind(4, session.answer_id)
      .bind(5, dump_json(json(session.assessment_ids)))
      .bind(6, session.model_id)
      .bind(7, session.created_at)
      .run();
  return session.session_id;
}

std::optional<ChatSession> Store::load_chat_session(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "SELECT owner, batch_id, answer_id, assessment_ids_json, model_id, created_at FROM chat_sessions "
         "WHERE session_id = ?");
  s.bind(1, session_id);
  if (!s.step()) return std::nullopt;
  return ChatSession{session_id, s.text(0), s.text(1), s.text(2),
                     json::parse(s.text(3)).get<std::vector<std::string>>(), s.text(4), s.int64(5)};
}

void Store::set_chat_model(const std::string& session_id, const std::string& model_id) {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "UPDATE chat_sessions SET model_id = ? WHERE session_id = ?");
  s.bind(1, model_id).bind(2, session_id).run();
  if (sqlite3_changes(impl_->db) == 0) throw NotFoundError("unknown chat session " + session_id);
}

std::size_t Store::record_chat(ChatTurn& turn) {
  std::lock_guard lock(impl_->mu);
  Impl::Tx tx(*impl_);
  {
    Stmt s(impl_->db, "SELECT COUNT(*) FROM chat_turns WHERE session_id = ?");
    s.bind(1, turn.session_id);
    s.step();
    turn.turn_index = static_cast<std::size_t>(s.int64(0));
  }
  if (turn.created_at == 0) turn.created_at = now_ms();
  Stmt s(impl_->db,
         "INSERT INTO chat_turns (session_id, turn_index, role, content, model_id, created_at) "
         "VALUES (?, ?, ?, ?, ?, ?)");
  s.bind(1, turn.session_id)
      .bind(2, turn.turn_index)
      .bind(3, std::string(to_string(turn.role)))
      .bind(4, turn.content)
      .bind(5, turn.model_id)
      .bind(6, turn.created_at)
      .run();
  tx.commit();
  return turn.turn_index;
}

std::vector<ChatTurn> Store::load_chat_history(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "SELECT turn_index, role, content, model_id, created_at FROM chat_turns WHERE session_id = ? "
         "ORDER BY turn_index");
  s.bind(1, session_id);
  std::vector<ChatTurn> out;
  while (s.step())
    out.push_back({session_id, static_cast<std::size_t>(s.int64(0)),
                   chat_role_from_string(s.text(1)).value_or(ChatRole::user), s.text(2), s.text(3), s.int64(4)});
  return out;
}

std::string Store::save_eval_session(EvalSession& session, const std::string& owner) {
  std::lock_guard lock(impl_->mu);
  if (session.session_id.empty()) session.session_id = random_id("es");
  Stmt s(impl_->db, "INSERT INTO eval_sessions (session_id, owner, session_json, created_at) VALUES (?, ?, ?, ?)");
  s.bind(1, session.session_id).bind(2, owner).bind(3, dump_json(json(session))).bind(4, now_ms()).run();
  return session.session_id;
}

std::optional<EvalSession> Store::load_eval_session(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT session_json FROM eval_sessions WHERE session_id = ?");
  s.bind(1, session_id);
  if (!s.step()) return std::nullopt;
  return json::parse(s.text(0)).get<EvalSession>();
}

std::optional<std::string> Store::eval_session_owner(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT owner FROM eval_sessions WHERE session_id = ?");
  s.bind(1, session_id);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

void Store::record_judgment(const std::string& session_id, const CorrectnessJudgment& j) {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "INSERT INTO eval_judgments (session_id, grader, item_index, slot, correct) VALUES (?, ?, ?, ?, ?)");
  s.bind(1, session_id).bind(2, j.grader).bind(3, j.item_index).bind(4, j.slot).bind(5, j.correct).run();
}

void Store::record_pair_preference(const std::string& session_id, const PairPreference& p) {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "INSERT INTO eval_preferences (session_id, grader, item_index, slot) VALUES (?, ?, ?, ?)");
  s.bind(1, session_id).bind(2, p.grader).bind(3, p.item_index).bind(4, p.winning_slot).run();
}

std::vector<CorrectnessJudgment> Store::judgments(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db,
         "SELECT grader, item_index, slot, correct FROM eval_judgments WHERE session_id = ? ORDER BY seq");
  s.bind(1, session_id);
  std::vector<CorrectnessJudgment> out;
  while (s.step())
    out.push_back({s.text(0), static_cast<std::size_t>(s.int64(1)), static_cast<std::size_t>(s.int64(2)),
                   s.int64(3) != 0});
  return out;
}

std::vector<PairPreference> Store::pair_preferences(const std::string& session_id) const {
  std::lock_guard lock(impl_->mu);
  Stmt s(impl_->db, "SELECT grader, item_index, slot FROM eval_preferences WHERE session_id = ? ORDER BY seq");
  s.bind(1, session_id);
  std::vector<PairPreference> out;
  while (s.step())
    out.push_back({s.text(0), static_cast<std::size_t>(s.int64(1)), static_cast<std::size_t>(s.int64(2))});
  return out;
}

}  // namespace aera
