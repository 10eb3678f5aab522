#include "aera/api_service.hpp"

#include <atomic>
#include <cstdlib>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "aera/auth.hpp"
#include "aera/chat.hpp"
#include "aera/errors.hpp"
#include "aera/highlighter.hpp"
#include "aera/human_eval.hpp"
#include "aera/metrics.hpp"
#include "aera/util.hpp"

namespace aera {

using nlohmann::json;
using httplib::Request;
using httplib::Response;

ServiceConfig service_config_from_env(ServiceConfig c) {
  if (const char* bind = std::getenv("AERA_BIND"); bind && *bind) {
    const std::string b = bind;
    const auto colon = b.rfind(':');
    if (colon == std::string::npos) {
      c.host = b;
    } else {
      if (colon > 0) c.host = b.substr(0, colon);
      c.port = std::stoi(b.substr(colon + 1));
    }
  }
  if (const char* db = std::getenv("AERA_DATABASE_URL"); db && *db) c.database_url = db;
  if (const char* p = std::getenv("AERA_PROVIDERS"); p && *p) c.providers_path = p;
  if (const char* t = std::getenv("AERA_TAGGER_MODEL"); t && *t) c.tagger_model = t;
  return c;
}

std::shared_ptr<Gateway> make_gateway(const ServiceConfig& config) {
  auto g = std::make_shared<Gateway>();
  const auto providers =
      config.providers_path.empty() ? default_mock_registry() : load_provider_registry(config.providers_path);
  for (const auto& p : providers) g->register_provider(p);
  return g;
}

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, json body) : std::runtime_error(body.dump()), status(status), body(std::move(body)) {}
  int status;
  json body;
};

void send(Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(dump_json(body), "application/json");
}

json parse_body(const Request& req) {
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw ValidationError("request body is not valid JSON");
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

struct Realtime {
  std::string kind;
  json payload;
};

std::string sse_frame(std::uint64_t seq, const std::string& kind, const json& payload) {
  const json msg = {{"seq", seq}, {"kind", kind}, {"payload", payload}};
  return "id: " + std::to_string(seq) + "\nevent: " + kind + "\ndata: " + dump_json(msg) + "\n\n";
}

Realtime job_message(const JobUpdate& u) {
  if (u.progress) {
    json p = *u.progress;
    p["total"] = u.total;
    return {"progress", p};
  }
  return {"job_state", {{"state", to_string(u.state)}, {"completed", u.completed}, {"total", u.total}}};
}

std::uint64_t replay_cursor(const Request& req) {
  std::string v;
  if (req.has_param("after")) v = req.get_param_value("after");
  else if (req.has_header("Last-Event-ID")) v = req.get_header_value("Last-Event-ID");
  if (v.empty()) return 0;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ValidationError("replay cursor must be a non-negative integer");
  }
}

std::optional<std::string> param(const Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

}  // namespace

OrchestratorOptions orchestrator_options(const ServiceConfig& c) {
  OrchestratorOptions o;
  o.max_in_flight = c.max_in_flight;
  return o;
}

struct ApiService::Impl {
  Impl(ServiceConfig c, std::shared_ptr<Gateway> g)
      : config(std::move(c)), gateway(std::move(g)), store(config.database_url),
        orchestrator(*gateway, store, orchestrator_options(config)) {
    const auto threads = config.http_threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    routes();
    if (const auto n = orchestrator.resume_unfinished()) spdlog::info("resumed {} unfinished job(s)", n);
  }

  ServiceConfig config;
  std::shared_ptr<Gateway> gateway;
  Store store;
  Orchestrator orchestrator;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};

  std::mutex chat_mu;
  std::map<std::string, std::shared_ptr<std::mutex>> chat_locks;
  std::map<std::string, std::shared_ptr<Channel<Realtime>>> chat_channels;

  // ------------------------------------------------------------ plumbing

  using Authed = std::function<void(const Request&, Response&, const std::string& user)>;

  void guarded(Response& res, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const HttpError& e) {
      send(res, e.status, e.body);
    } catch (const MalformedRowError& e) {
      send(res, 400, {{"error", "validation"}, {"violations", e.violations()}, {"row", e.row()}});
    } catch (const ValidationError& e) {
      send(res, 400, {{"error", "validation"}, {"violations", e.violations()}});
    } catch (const UnknownModelError& e) {
      send(res, 400, {{"error", "unknown_model"}, {"model_id", e.model_id()}, {"violations", {e.what()}}});
    } catch (const NotFoundError& e) {
      send(res, 404, {{"error", "not_found"}, {"detail", e.what()}});
    } catch (const NotReadyError& e) {
      send(res, 409, {{"error", "not_ready"}, {"detail", e.what()}});
    } catch (const NoGroundTruthError& e) {
      send(res, 409, {{"error", "no_ground_truth"}, {"detail", e.what()}});
    } catch (const ConflictError& e) {
      send(res, 409, {{"error", "conflict"}, {"detail", e.what()}});
    } catch (const json::exception& e) {
      send(res, 400, {{"error", "validation"}, {"violations", {std::string("malformed field: ") + e.what()}}});
    } catch (const std::invalid_argument& e) {
      send(res, 400, {{"error", "validation"}, {"violations", {e.what()}}});
    } catch (const std::exception& e) {
      spdlog::error("unhandled error: {}", e.what());
      send(res, 500, {{"error", "internal"}, {"detail", e.what()}});
    }
  }

  std::string authenticate(const Request& req) {
    std::string token;
    const auto header = req.get_header_value("Authorization");
    if (header.starts_with("Bearer ")) token = std::string(trim(header.substr(7)));
    else if (req.has_param("access_token")) token = req.get_param_value("access_token");  // EventSource
    if (token.empty()) throw HttpError(401, {{"error", "unauthorized"}, {"detail", "missing bearer token"}});
    const auto user = store.user_for_token(token_digest(token), now_ms());
    if (!user) throw HttpError(401, {{"error", "unauthorized"}, {"detail", "invalid or expired token"}});
    return *user;
  }

  httplib::Server::Handler open(std::function<void(const Request&, Response&)> h) {
    return [this, h](const Request& req, Response& res) { guarded(res, [&] { h(req, res); }); };
  }

  httplib::Server::Handler authed(Authed h) {
    return [this, h](const Request& req, Response& res) {
      guarded(res, [&] {
        const auto user = authenticate(req);
        h(req, res, user);
      });
    };
  }

  // Ownership checks answer 404 so ids of other users are not disclosed.
  AnswerBatch owned_batch(const std::string& batch_id, const std::string& user) {
    if (store.batch_owner(batch_id) != user) throw NotFoundError("unknown batch " + batch_id);
    return *store.load_batch(batch_id, true);
  }

  BulkJob owned_job(const std::string& job_id, const std::string& user) {
    if (store.job_owner(job_id) != user) throw NotFoundError("unknown job " + job_id);
    return orchestrator.job(job_id);
  }

  StoredAssessment owned_assessment(const std::string& id, const std::string& user) {
    auto a = store.load_assessment(id);
    if (!a || store.batch_owner(a->batch_id) != user) throw NotFoundError("unknown assessment " + id);
    return *a;
  }

  ChatSession owned_chat(const std::string& id, const std::string& user) {
    auto s = store.load_chat_session(id);
    if (!s || s->owner != user) throw NotFoundError("unknown chat session " + id);
    return *s;
  }

  EvalSession owned_eval(const std::string& id, const std::string& user) {
    if (store.eval_session_owner(id) != user) throw NotFoundError("unknown eval session " + id);
    return *store.load_eval_session(id);
  }

  std::shared_ptr<Channel<Realtime>> chat_channel(const std::string& session_id) {
    std::lock_guard lock(chat_mu);
    auto& ch = chat_channels[session_id];
    if (!ch) ch = std::make_shared<Channel<Realtime>>(1024);
    return ch;
  }

  std::shared_ptr<std::mutex> chat_lock(const std::string& session_id) {
    std::lock_guard lock(chat_mu);
    auto& m = chat_locks[session_id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  template <class T, class Convert>
  void stream(const Request& req, Response& res, std::shared_ptr<const Channel<T>> ch, Convert convert) {
    auto cursor = std::make_shared<std::uint64_t>(replay_cursor(req));
    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Accel-Buffering", "no");
    res.set_chunked_content_provider(
        "text/event-stream", [this, ch, cursor, convert](std::size_t, httplib::DataSink& sink) {
          if (stopping) {
            sink.done();
            return true;
          }
          auto r = ch->read_after(*cursor, std::chrono::milliseconds(1000));
          std::string out;
          if (r.gap) {
            // fell out of the replay window: the client refetches over REST
            *cursor = ch->last_seq();
            out = sse_frame(*cursor, "resync", {{"last_seq", *cursor}});
          }
          for (const auto& item : r.items) {
            const Realtime m = convert(item.value);
            out += sse_frame(item.seq, m.kind, m.payload);
            *cursor = item.seq;
          }
          if (out.empty() && !r.closed) out = ": keepalive\n\n";
          if (!out.empty() && !sink.write(out.data(), out.size())) return false;
          // read_after reports closed together with every remaining item
          if (r.closed && !r.gap) sink.done();
          return true;
        });
  }

  // --------------------------------------------------------------- routes

  void routes() {
    server.Get("/healthz", open([](const Request&, Response& res) { send(res, 200, {{"status", "ok"}}); }));

    server.Post("/auth/register", open([this](const Request& req, Response& res) {
                  const auto body = parse_body(req);
                  const auto email = to_lower_ascii(trim(body.at("email").get<std::string>()));
                  const auto password = body.at("password").get<std::string>();
                  std::vector<std::string> v;
                  if (email.find('@') == std::string::npos) v.emplace_back("email must contain '@'");
                  if (password.size() < 8) v.emplace_back("password must be at least 8 characters");
                  if (!v.empty()) throw ValidationError(v);
                  const auto user_id = store.create_user(email, hash_password(password));
                  send(res, 201, issue_token(user_id));
                }));

    server.Post("/auth/login", open([this](const Request& req, Response& res) {
                  const auto body = parse_body(req);
                  const auto email = to_lower_ascii(trim(body.at("email").get<std::string>()));
                  const auto user = store.find_user_by_email(email);
                  if (!user || !verify_password(user->password_hash, body.at("password").get<std::string>()))
                    throw HttpError(401, {{"error", "unauthorized"}, {"detail", "wrong email or password"}});
                  send(res, 200, issue_token(user->user_id));
                }));

    server.Get("/models", authed([this](const Request&, Response& res, const std::string&) {
                 json models = json::array();
                 for (const auto& id : gateway->model_ids()) {
                   const auto c = gateway->config(id);
                   models.push_back({{"model_id", id},
                                     {"kind", c.is_mock() ? "mock" : "remote"},
                                     {"max_concurrency", c.max_concurrency},
                                     {"timeout_ms", c.timeout_ms}});
                 }
                 send(res, 200, {{"models", models}, {"tagger_model", tagger()}});
               }));

    question_routes();
    job_routes();
    annotation_routes();
    chat_routes();
    export_routes();
    eval_routes();
  }

  json issue_token(const std::string& user_id) {
    const auto token = new_token();
    const auto expires = now_ms() + std::chrono::duration_cast<std::chrono::milliseconds>(config.token_ttl).count();
    store.save_token(token_digest(token), user_id, expires);
    return {{"user_id", user_id}, {"token", token}, {"expires_at", expires}};
  }

  std::string tagger() const {
    if (!config.tagger_model.empty()) return config.tagger_model;
    const auto ids = gateway->model_ids();
    return ids.empty() ? std::string{} : ids.front();
  }

  void question_routes() {
    server.Post("/questions", authed([this](const Request& req, Response& res, const std::string& user) {
                  auto q = parse_body(req).get<QuestionSpec>();
                  store.save_question(q, user);
                  send(res, 201, {{"question_id", q.question_id}, {"question", q}});
                }));

    server.Get(R"(/questions/([^/]+))", authed([this](const Request& req, Response& res, const std::string& user) {
                 const std::string id = req.matches[1];
                 if (store.question_owner(id) != user) throw NotFoundError("unknown question " + id);
                 send(res, 200, *store.load_question(id));
               }));

    server.Post(R"(/questions/([^/]+)/batches)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const std::string qid = req.matches[1];
                  if (store.question_owner(qid) != user) throw NotFoundError("unknown question " + qid);
                  const auto question = *store.load_question(qid);

                  std::string bytes = req.body;
                  std::string name;
                  if (req.is_multipart_form_data()) {
                    if (!req.has_file("file")) throw ValidationError("multipart upload needs a 'file' field");
                    const auto f = req.get_file_value("file");
                    bytes = f.content;
                    name = f.filename;
                  }
                  std::optional<BatchFormat> format;
                  if (const auto p = param(req, "format")) {
                    format = batch_format_from_string(*p);
                    if (!format) throw ValidationError("format must be csv or json");
                  } else if (name.ends_with(".json") || req.get_header_value("Content-Type") == "application/json") {
                    format = BatchFormat::json;
                  } else {
                    format = BatchFormat::csv;
                  }
                  auto batch = parse_answer_batch(bytes, *format, question);
                  store.save_batch(batch, user);
                  send(res, 201,
                       {{"batch_id", batch.batch_id}, {"answers", batch.answers.size()}, {"has_gold", batch.has_gold()}});
                }));

    server.Get(R"(/batches/([^/]+))", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto b = owned_batch(req.matches[1], user);
                 send(res, 200,
                      {{"batch_id", b.batch_id},
                       {"question", b.question},
                       {"answers", b.answers},
                       {"created_at", b.created_at}});
               }));

    server.Get(R"(/batches/([^/]+)/assessments)",
               authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto b = owned_batch(req.matches[1], user);
                 send(res, 200, {{"batch_id", b.batch_id}, {"assessments", store.latest_assessments(b.batch_id)}});
               }));
  }

  void job_routes() {
    server.Post(R"(/batches/([^/]+)/jobs)", authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto b = owned_batch(req.matches[1], user);
                  const auto body = parse_body(req);
                  const auto models = body.at("model_ids").get<std::vector<std::string>>();
                  const auto params = body.value("params", GenerationParams{});
                  const auto job_id = orchestrator.start_bulk_job(b.batch_id, models, params, user);
                  const auto job = orchestrator.job(job_id);
                  send(res, 202, job);
                }));

    server.Get(R"(/jobs/([^/]+))", authed([this](const Request& req, Response& res, const std::string& user) {
                 send(res, 200, owned_job(req.matches[1], user));
               }));

    server.Get(R"(/jobs/([^/]+)/results)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto job = owned_job(req.matches[1], user);
                 const bool partial = param(req, "partial").value_or("0") == "1";
                 const auto results =
                     partial ? orchestrator.partial_results(job.job_id) : orchestrator.collect_results(job.job_id);
                 send(res, 200,
                      {{"job_id", job.job_id},
                       {"state", to_string(job.state)},
                       {"partial", job.state != JobState::done},
                       {"results", results}});
               }));

    server.Get(R"(/jobs/([^/]+)/events)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto job = owned_job(req.matches[1], user);
                 stream(req, res, orchestrator.channel(job.job_id), job_message);
               }));
  }

  void annotation_routes() {
    server.Post(R"(/assessments/([^/]+)/highlights)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto stored = owned_assessment(req.matches[1], user);
                  const auto body = req.body.empty() ? json::object() : parse_body(req);
                  const auto mode = tag_mode_from_string(body.value("mode", std::string{"key_elements"}));
                  if (!mode) throw ValidationError("mode must be key_elements or aspects");
                  const auto batch = *store.load_batch(stored.batch_id, false);
                  const auto* answer = batch.find(stored.assessment.answer_id);
                  const std::string text =
                      *mode == TagMode::key_elements ? answer->answer_text : stored.assessment.rationale;
                  const auto tags = request_tags(text, *mode, batch.question, *gateway, tagger());
                  const auto aligned = align_spans(text, tags.tags);
                  json out = {{"assessment_id", stored.assessment.assessment_id},
                              {"mode", to_string(*mode)},
                              {"target", to_string(tags.tags.target)},
                              {"spans", aligned.spans},
                              {"unmatched", aligned.unmatched},
                              {"warning", tags.warning}};
                  if (tags.warning) out["warning_detail"] = tags.detail;
                  send(res, 200, out);
                }));

    server.Post("/events", authed([this](const Request& req, Response& res, const std::string& user) {
                  auto event = parse_body(req).get<AnnotationEvent>();
                  owned_batch(event.subject.batch_id, user);
                  event.author = user;
                  const auto id = store.record_event(std::move(event));
                  send(res, 201, {{"event_id", id}});
                }));

    server.Get("/events", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto batch_id = param(req, "batch_id");
                 if (!batch_id) throw ValidationError("batch_id query parameter is required");
                 owned_batch(*batch_id, user);
                 send(res, 200, {{"events", store.events(*batch_id)}});
               }));

    server.Get(R"(/batches/([^/]+)/report)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto batch = owned_batch(req.matches[1], user);
                 std::vector<Assessment> assessments;
                 std::vector<std::string> models;
                 if (const auto job_id = param(req, "job_id")) {
                   const auto job = owned_job(*job_id, user);
                   if (job.batch_id != batch.batch_id) throw NotFoundError("job " + *job_id + " is not in this batch");
                   assessments = store.assessments_for_job(job.job_id);
                   models = job.model_ids;
                 } else {
                   assessments = store.latest_assessments(batch.batch_id);
                   std::set<std::string> seen;
                   for (const auto& a : assessments) seen.insert(a.model_id);
                   models.assign(seen.begin(), seen.end());
                 }
                 if (const auto m = param(req, "models")) models = split(*m, ',');
                 const auto reports = build_reports(batch, assessments, models);
                 const auto format = param(req, "format").value_or("json");
                 if (format == "csv") {
                   res.set_content(reports_to_csv(reports), "text/csv");
                 } else if (format == "md") {
                   res.set_content(reports_to_markdown(reports), "text/markdown");
                 } else if (format == "json") {
                   send(res, 200, {{"batch_id", batch.batch_id}, {"reports", reports}});
                 } else {
                   throw ValidationError("format must be json, csv or md");
                 }
               }));

    server.Get(R"(/batches/([^/]+)/flags)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto batch = owned_batch(req.matches[1], user);
                 const auto assessments = store.latest_assessments(batch.batch_id);
                 std::set<std::string> models;
                 for (const auto& a : assessments) models.insert(a.model_id);
                 std::size_t threshold = default_review_threshold(models.size());
                 if (const auto t = param(req, "threshold")) {
                   try {
                     threshold = std::stoul(*t);
                   } catch (const std::exception&) {
                     throw ValidationError("threshold must be a positive integer");
                   }
                   if (threshold == 0) throw ValidationError("threshold must be a positive integer");
                 }
                 json flags = json::array();
                 for (const auto& f : flag_label_reviews(batch, assessments, threshold))
                   flags.push_back({{"answer_id", f.answer_id},
                                    {"agreed_score", f.agreed_score},
                                    {"gold_score", f.gold_score},
                                    {"models", f.models}});
                 send(res, 200, {{"batch_id", batch.batch_id}, {"threshold", threshold}, {"flags", flags}});
               }));
  }

  json session_json(const ChatSession& s) {
    return {{"session", s}, {"turns", store.load_chat_history(s.session_id)}};
  }

  void record_turn_event(const ChatSession& s, const ChatTurn& t, const std::string& user) {
    AnnotationEvent e;
    e.subject = {s.batch_id, s.answer_id, t.model_id.empty() ? std::nullopt : std::optional(t.model_id)};
    e.payload = ChatTurnRecord{s.session_id, std::string(to_string(t.role)), t.content};
    e.author = user;
    store.record_event(std::move(e));
  }

  void chat_routes() {
    server.Post("/chat/sessions", authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto body = parse_body(req);
                  ChatSession s;
                  s.owner = user;
                  s.batch_id = body.at("batch_id").get<std::string>();
                  s.answer_id = body.at("answer_id").get<std::string>();
                  s.model_id = body.at("model_id").get<std::string>();
                  s.assessment_ids = body.value("assessment_ids", std::vector<std::string>{});
                  if (!gateway->has_model(s.model_id)) throw UnknownModelError(s.model_id);
                  const auto batch = owned_batch(s.batch_id, user);
                  const auto* answer = batch.find(s.answer_id);
                  if (!answer) throw NotFoundError("unknown answer " + s.answer_id);

                  std::vector<Assessment> selected;
                  if (s.assessment_ids.empty()) {
                    for (const auto& a : store.latest_assessments(s.batch_id))
                      if (a.answer_id == s.answer_id) {
                        selected.push_back(a);
                        s.assessment_ids.push_back(a.assessment_id);
                      }
                  } else {
                    for (const auto& id : s.assessment_ids) {
                      const auto a = store.load_assessment(id);
                      if (!a || a->batch_id != s.batch_id || a->assessment.answer_id != s.answer_id)
                        throw NotFoundError("assessment " + id + " does not belong to this answer");
                      selected.push_back(a->assessment);
                    }
                  }
                  store.create_chat_session(s);
                  ChatTurn system{s.session_id, 0, ChatRole::system,
                                  chat_system_turn(batch.question, *answer, selected), s.model_id, 0};
                  store.record_chat(system);
                  record_turn_event(s, system, user);
                  send(res, 201, session_json(s));
                }));

    server.Get(R"(/chat/sessions/([^/]+))", authed([this](const Request& req, Response& res, const std::string& user) {
                 send(res, 200, session_json(owned_chat(req.matches[1], user)));
               }));

    server.Post(R"(/chat/sessions/([^/]+)/messages)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto body = parse_body(req);
                  const auto content = body.at("content").get<std::string>();
                  if (trim(content).empty()) throw ValidationError("content must be non-empty");
                  const std::string id = req.matches[1];
                  owned_chat(id, user);
                  const auto lock_ptr = chat_lock(id);
                  std::lock_guard lock(*lock_ptr);  // one model call in flight per session
                  const auto session = owned_chat(id, user);
                  const auto channel = chat_channel(id);

                  ChatTurn user_turn{id, 0, ChatRole::user, content, session.model_id, 0};
                  store.record_chat(user_turn);
                  record_turn_event(session, user_turn, user);

                  std::string reply;
                  try {
                    reply = gateway->chat(session.model_id, body.value("params", GenerationParams{}),
                                          chat_messages(store.load_chat_history(id)))
                                .raw;
                  } catch (const ProviderError& e) {
                    channel->publish({"chat_error", {{"session_id", id}, {"detail", e.what()}}});
                    send(res, 502, {{"error", "provider_error"}, {"detail", e.what()}, {"user_turn", user_turn}});
                    return;
                  }
                  const auto next_index = user_turn.turn_index + 1;
                  for (const auto& chunk : stream_chunks(reply))
                    channel->publish({"chat_token",
                                      {{"session_id", id}, {"turn_index", next_index}, {"token", chunk},
                                       {"model_id", session.model_id}}});
                  ChatTurn assistant{id, 0, ChatRole::assistant, reply, session.model_id, 0};
                  store.record_chat(assistant);
                  record_turn_event(session, assistant, user);
                  channel->publish({"chat_done", {{"session_id", id}, {"turn", assistant}}});
                  send(res, 200, {{"user_turn", user_turn}, {"assistant_turn", assistant}});
                }));

    server.Post(R"(/chat/sessions/([^/]+)/switch-model)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const std::string id = req.matches[1];
                  owned_chat(id, user);
                  const auto model = parse_body(req).at("model_id").get<std::string>();
                  if (!gateway->has_model(model)) throw UnknownModelError(model);
                  const auto lock_ptr = chat_lock(id);
                  std::lock_guard lock(*lock_ptr);
                  store.set_chat_model(id, model);
                  send(res, 200, session_json(owned_chat(id, user)));
                }));

    server.Get(R"(/chat/sessions/([^/]+)/events)",
               authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto s = owned_chat(req.matches[1], user);
                 stream(req, res, std::shared_ptr<const Channel<Realtime>>(chat_channel(s.session_id)),
                        [](const Realtime& m) { return m; });
               }));
  }

  ExportFilter export_filter(const Request& req, const std::string& user) {
    ExportFilter f;
    f.owner = user;
    if (const auto b = param(req, "batch_id")) {
      owned_batch(*b, user);
      f.batch_id = *b;
    }
    return f;
  }

  void export_routes() {
    server.Get("/exports/preferences.jsonl", authed([this](const Request& req, Response& res, const std::string& user) {
                 res.set_content(to_jsonl(store.export_preference_pairs(export_filter(req, user))),
                                 "application/x-ndjson");
               }));
    server.Get("/exports/sft.jsonl", authed([this](const Request& req, Response& res, const std::string& user) {
                 res.set_content(to_jsonl(store.export_sft(export_filter(req, user))), "application/x-ndjson");
               }));
  }

  void eval_routes() {
    server.Post("/eval/sessions", authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto body = parse_body(req);
                  std::vector<EvalDataset> datasets;
                  for (const auto& id : body.at("batch_ids").get<std::vector<std::string>>()) {
                    const auto b = owned_batch(id, user);
                    EvalDataset d{b.batch_id, {}};
                    for (const auto& a : b.answers) d.answer_ids.push_back(a.answer_id);
                    datasets.push_back(std::move(d));
                  }
                  EvalSession s;
                  s.n_per_dataset = body.at("n_per_dataset").get<std::size_t>();
                  s.model_ids = body.at("model_ids").get<std::vector<std::string>>();
                  s.graders = body.at("graders").get<std::vector<std::string>>();
                  s.model_order_seed = body.value("seed", std::uint64_t{0});
                  std::vector<std::string> v;
                  if (datasets.empty()) v.emplace_back("batch_ids must be non-empty");
                  if (s.n_per_dataset == 0) v.emplace_back("n_per_dataset must be positive");
                  if (s.model_ids.size() < 2) v.emplace_back("at least two model_ids are needed");
                  if (s.graders.empty()) v.emplace_back("graders must be non-empty");
                  if (!v.empty()) throw ValidationError(v);
                  s.items = sample_items(datasets, s.n_per_dataset, s.model_order_seed);
                  store.save_eval_session(s, user);
                  send(res, 201,
                       {{"session_id", s.session_id},
                        {"items", s.items.size()},
                        {"slots", s.model_ids.size()},
                        {"graders", s.graders}});
                }));

    server.Get(R"(/eval/sessions/([^/]+)/items)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto s = owned_eval(req.matches[1], user);
                 std::map<std::string, std::vector<Assessment>> latest;
                 json items = json::array();
                 for (std::size_t i = 0; i < s.items.size(); ++i) {
                   const auto& item = s.items[i];
                   if (!latest.count(item.dataset_id)) latest[item.dataset_id] = store.latest_assessments(item.dataset_id);
                   const auto batch = store.load_batch(item.dataset_id, false);
                   const auto* answer = batch ? batch->find(item.answer_id) : nullptr;
                   json slots = json::array();
                   for (std::size_t slot = 0; slot < s.model_ids.size(); ++slot) {
                     const auto& model = s.model_for_slot(i, slot);
                     json entry = {{"slot", slot}, {"predicted_score", nullptr}, {"rationale", nullptr}};
                     for (const auto& a : latest[item.dataset_id])
                       if (a.answer_id == item.answer_id && a.model_id == model && a.usable()) {
                         entry["predicted_score"] = a.predicted_score;
                         entry["rationale"] = a.rationale;
                       }
                     slots.push_back(std::move(entry));
                   }
                   items.push_back({{"item_index", i},
                                    {"question_text", batch ? batch->question.question_text : ""},
                                    {"answer_text", answer ? answer->answer_text : ""},
                                    {"slots", slots}});
                 }
                 send(res, 200, {{"session_id", s.session_id}, {"items", items}});
               }));

    server.Post(R"(/eval/sessions/([^/]+)/judgments)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto s = owned_eval(req.matches[1], user);
                  const auto body = parse_body(req);
                  const CorrectnessJudgment j{body.at("grader").get<std::string>(), body.at("item_index").get<std::size_t>(),
                                              body.at("slot").get<std::size_t>(), body.at("correct").get<bool>()};
                  check_judgment(s, j);
                  store.record_judgment(s.session_id, j);
                  send(res, 201, {{"recorded", true}});
                }));

    server.Post(R"(/eval/sessions/([^/]+)/preferences)",
                authed([this](const Request& req, Response& res, const std::string& user) {
                  const auto s = owned_eval(req.matches[1], user);
                  const auto body = parse_body(req);
                  const PairPreference p{body.at("grader").get<std::string>(), body.at("item_index").get<std::size_t>(),
                                         body.at("winning_slot").get<std::size_t>()};
                  check_preference(s, p);
                  store.record_pair_preference(s.session_id, p);
                  send(res, 201, {{"recorded", true}});
                }));

    server.Get(R"(/eval/sessions/([^/]+)/report)", authed([this](const Request& req, Response& res, const std::string& user) {
                 const auto s = owned_eval(req.matches[1], user);
                 const auto report =
                     aggregate_session(s, store.judgments(s.session_id), store.pair_preferences(s.session_id));
                 const auto format = param(req, "format").value_or("json");
                 if (format == "md") res.set_content(report_to_markdown(report), "text/markdown");
                 else if (format == "csv") res.set_content(report_to_csv(report), "text/csv");
                 else if (format == "json") send(res, 200, report);
                 else throw ValidationError("format must be json, csv or md");
               }));
  }

  bool bind() {
    if (config.port == 0) {
      config.port = server.bind_to_any_port(config.host);
      return config.port > 0;
    }
    return server.bind_to_port(config.host, config.port);
  }
};

ApiService::ApiService(ServiceConfig config, std::shared_ptr<Gateway> gateway)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(gateway))) {}

ApiService::~ApiService() { stop(); }

int ApiService::start() {
  if (!impl_->bind())
    throw std::runtime_error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  spdlog::info("listening on {}:{}", impl_->config.host, impl_->config.port);
  return impl_->config.port;
}

void ApiService::run() {
  if (!impl_->bind())
    throw std::runtime_error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  spdlog::info("listening on {}:{}", impl_->config.host, impl_->config.port);
  impl_->server.listen_after_bind();
}

void ApiService::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

Store& ApiService::store() { return impl_->store; }
Orchestrator& ApiService::orchestrator() { return impl_->orchestrator; }
Gateway& ApiService::gateway() { return *impl_->gateway; }

}  // namespace aera
