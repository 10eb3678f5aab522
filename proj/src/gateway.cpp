#include "aera/gateway.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "aera/errors.hpp"

namespace aera {

using nlohmann::json;

std::vector<std::string> validate_params(const GenerationParams& p) {
  std::vector<std::string> v;
  if (!(p.temperature >= 0.0 && p.temperature <= 2.0)) v.emplace_back("temperature must be within [0, 2]");
  if (p.max_output_tokens < 1) v.emplace_back("max_output_tokens must be positive");
  return v;
}

std::vector<std::string> validate_provider(const ProviderConfig& c) {
  std::vector<std::string> v;
  if (c.model_id.empty()) v.emplace_back("model_id is required");
  if (c.endpoint.empty()) v.emplace_back(c.model_id + ": endpoint is required");
  if (c.max_concurrency < 1) v.emplace_back(c.model_id + ": max_concurrency must be >= 1");
  if (c.timeout_ms < 1000) v.emplace_back(c.model_id + ": timeout_ms must be >= 1000");
  if (!c.is_mock() && !c.endpoint.starts_with("http://") && !c.endpoint.starts_with("https://"))
    v.emplace_back(c.model_id + ": endpoint must be \"mock\" or an http(s) URL");
  return v;
}

void to_json(json& j, const GenerationParams& p) {
  j = {{"temperature", p.temperature}, {"max_output_tokens", p.max_output_tokens}, {"seed", p.seed}};
}

void from_json(const json& j, GenerationParams& p) {
  GenerationParams d;
  p.temperature = j.value("temperature", d.temperature);
  p.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
  p.seed = j.value("seed", d.seed);
}

void to_json(json& j, const ProviderConfig& c) {
  j = {{"model_id", c.model_id},
       {"endpoint", c.endpoint},
       {"credentials_ref", c.credentials_ref},
       {"max_concurrency", c.max_concurrency},
       {"timeout_ms", c.timeout_ms}};
  if (!c.api_model.empty()) j["api_model"] = c.api_model;
}

void from_json(const json& j, ProviderConfig& c) {
  ProviderConfig d;
  c.model_id = j.at("model_id").get<std::string>();
  c.endpoint = j.at("endpoint").get<std::string>();
  c.credentials_ref = j.value("credentials_ref", std::string{});
  c.max_concurrency = j.value("max_concurrency", d.max_concurrency);
  c.timeout_ms = j.value("timeout_ms", d.timeout_ms);
  c.api_model = j.value("api_model", std::string{});
}

// ---------------------------------------------------------------- mock

namespace {

std::vector<std::size_t> missed_clause_ranges(const std::string& text, std::vector<std::string>* phrases) {
  // pairs of [start, end) byte ranges flattened
  std::vector<std::size_t> ranges;
  const std::string lower = to_lower_ascii(text);
  for (const auto pos : find_token_matches(lower, "missed")) {
    std::size_t start = pos + 6;
    while (start < text.size() && (text[start] == ' ' || text[start] == '\t')) ++start;
    std::size_t end = text.find_first_of(";,.\n", start);
    if (end == std::string::npos) end = text.size();
    const auto phrase = trim(std::string_view(text).substr(start, end - start));
    if (phrase.empty()) continue;
    ranges.push_back(pos);
    ranges.push_back(end);
    if (phrases) phrases->emplace_back(phrase);
  }
  return ranges;
}

std::optional<std::size_t> first_match_outside(const std::string& text, const std::string& phrase,
                                               const std::vector<std::size_t>& excluded) {
  for (const auto pos : find_token_matches(text, phrase)) {
    bool inside = false;
    for (std::size_t i = 0; i + 1 < excluded.size(); i += 2)
      if (pos >= excluded[i] && pos < excluded[i + 1]) inside = true;
    if (!inside) return pos;
  }
  return std::nullopt;
}

std::string mock_chat_reply(const std::string& model_id, const std::vector<ChatMessage>& messages) {
  std::vector<std::string> context;
  std::string last_user;
  for (const auto& m : messages) {
    if (m.role == "system") {
      for (const auto& line : split(m.content, '\n'))
        if (line.starts_with("Model ")) context.push_back(line);
    } else if (m.role == "user") {
      last_user = m.content;
    }
  }
  std::ostringstream out;
  out << "[" << model_id << "] ";
  if (!context.empty()) out << "Reviewing the stored assessment: " << join(context, " ") << " ";
  out << "You asked: \"" << last_user << "\". ";
  const auto h = fnv1a64(last_user, fnv1a64(model_id));
  static constexpr const char* kClosings[] = {
      "The score follows from which key elements the answer states explicitly.",
      "Partial credit depends on whether each rubric point is matched by the answer text.",
      "A revised decision should cite the rubric criterion it relies on.",
  };
  out << kClosings[h % 3];
  return out.str();
}

}  // namespace

std::string mock_invoke(const PromptText& prompt, std::uint64_t seed) {
  const auto sections = parse_prompt_sections(prompt.text);
  const std::string answer = sections ? sections->subject_text : prompt.text;
  ScoreRange range = sections ? sections->range : ScoreRange{0, 0};
  if (range.max < range.min) range = {range.min, range.min};

  const std::uint64_t h = mix64(fnv1a64(answer) ^ mix64(seed) ^ fnv1a64(prompt.text));
  const int span = range.max - range.min + 1;
  const int score = range.min + static_cast<int>(h % static_cast<std::uint64_t>(span));

  std::vector<std::string> matched, missed;
  if (sections) {
    for (const auto& e : sections->key_elements)
      (find_token_matches(answer, e).empty() ? missed : matched).push_back(e);
  }
  std::ostringstream r;
  r << "Awarded " << score << " of " << range.max << (range.max == 1 ? " point." : " points.");
  if (matched.empty() && missed.empty()) r << " No key elements were listed for this question.";
  if (!matched.empty()) {
    r << " Credit for " << matched.front();
    for (std::size_t i = 1; i < matched.size(); ++i) r << "; credit for " << matched[i];
    r << ".";
  }
  if (!missed.empty()) {
    r << " Missed " << missed.front();
    for (std::size_t i = 1; i < missed.size(); ++i) r << "; missed " << missed[i];
    r << ".";
  }
  return dump_json(json{{"score", score}, {"rationale", r.str()}});
}

std::string mock_tag(const PromptSections& sections) {
  const std::string& text = sections.subject_text;
  struct Found {
    std::size_t pos;
    std::string phrase;
    Polarity polarity;
  };
  std::vector<Found> found;
  std::vector<std::string> negatives;
  const auto excluded = sections.mode == TagMode::aspects ? missed_clause_ranges(text, &negatives)
                                                          : std::vector<std::size_t>{};
  const Polarity pos_polarity = sections.mode == TagMode::aspects ? Polarity::positive : Polarity::key_element;
  for (const auto& e : sections.key_elements) {
    if (const auto p = first_match_outside(text, e, excluded)) found.push_back({*p, e, pos_polarity});
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const auto start = text.find(negatives[i], excluded[2 * i]);
    found.push_back({start == std::string::npos ? excluded[2 * i] : start, negatives[i], Polarity::negative});
  }
  std::stable_sort(found.begin(), found.end(), [](const Found& a, const Found& b) { return a.pos < b.pos; });
  json arr = json::array();
  for (const auto& f : found) arr.push_back({{"phrase", f.phrase}, {"polarity", to_string(f.polarity)}});
  return dump_json(arr);
}

Completion MockProvider::complete(const ProviderConfig& config, const CompletionRequest& request) {
  // Single-user-message prompts built by assemble_* are graded or tagged;
  // anything else is a chat conversation.
  if (request.messages.size() == 1 && request.messages[0].role == "user") {
    const PromptText prompt{request.messages[0].content};
    if (const auto sections = parse_prompt_sections(prompt.text)) {
      if (sections->is_tagging) return {mock_tag(*sections), 0};
      return {mock_invoke(prompt, mix64(request.params.seed ^ fnv1a64(config.model_id))), 0};
    }
  }
  return {mock_chat_reply(config.model_id, request.messages), 0};
}

// ---------------------------------------------------------------- remote

Completion OpenAiCompatibleProvider::complete(const ProviderConfig& config, const CompletionRequest& request) {
  std::string key;
  if (!config.credentials_ref.empty()) {
    const char* v = std::getenv(config.credentials_ref.c_str());
    if (!v || !*v) throw ProviderError("credentials env var " + config.credentials_ref + " is not set", false);
    key = v;
  }
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config.endpoint, m, url_re)) throw ProviderError("bad endpoint " + config.endpoint, false);
  std::string path = m[2].matched ? m[2].str() : std::string{};
  while (!path.empty() && path.back() == '/') path.pop_back();
  path += "/chat/completions";

  json body = {{"model", config.api_model.empty() ? config.model_id : config.api_model},
               {"temperature", request.params.temperature},
               {"max_tokens", request.params.max_output_tokens},
               {"messages", json::array()}};
  for (const auto& msg : request.messages) body["messages"].push_back({{"role", msg.role}, {"content", msg.content}});

  httplib::Client client(m[1].str());
  const auto secs = request.timeout.count() / 1000;
  const auto usecs = (request.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

  auto res = client.Post(path, headers, dump_json(body), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
      throw TimeoutError("provider " + config.model_id + " timed out: " + httplib::to_string(err));
    throw ProviderError("transport error calling " + config.model_id + ": " + httplib::to_string(err), true);
  }
  if (res->status == 401 || res->status == 403)
    throw ProviderError("provider " + config.model_id + " rejected credentials", false, res->status);
  if (res->status == 408 || res->status == 429 || res->status >= 500)
    throw ProviderError("provider " + config.model_id + " returned HTTP " + std::to_string(res->status), true,
                        res->status);
  if (res->status != 200)
    throw ProviderError("provider " + config.model_id + " returned HTTP " + std::to_string(res->status), false,
                        res->status);
  const json reply = json::parse(res->body, nullptr, false);
  try {
    return {reply.at("choices").at(0).at("message").at("content").get<std::string>(), std::nullopt};
  } catch (const json::exception&) {
    throw ProviderError("provider " + config.model_id + " returned an unexpected body", false, res->status);
  }
}

// ---------------------------------------------------------------- gateway

struct Gateway::Entry {
  ProviderConfig config;
  std::shared_ptr<Provider> impl;
  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;
  int peak = 0;
};

Gateway::Gateway(RetryPolicy retry) : retry_(retry) {}
Gateway::~Gateway() = default;

void Gateway::register_provider(ProviderConfig config, std::shared_ptr<Provider> impl) {
  if (auto v = validate_provider(config); !v.empty()) throw ValidationError(std::move(v));
  if (!impl) {
    if (config.is_mock()) impl = std::make_shared<MockProvider>();
    else impl = std::make_shared<OpenAiCompatibleProvider>();
  }
  auto e = std::make_shared<Entry>();
  e->config = std::move(config);
  e->impl = std::move(impl);
  std::lock_guard lock(mu_);
  const auto id = e->config.model_id;
  if (!entries_.count(id)) order_.push_back(id);
  entries_[id] = std::move(e);
}

bool Gateway::has_model(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  return entries_.count(model_id) > 0;
}

std::vector<std::string> Gateway::model_ids() const {
  std::lock_guard lock(mu_);
  return order_;
}

ProviderConfig Gateway::config(const std::string& model_id) const { return entry(model_id)->config; }

std::shared_ptr<Gateway::Entry> Gateway::entry(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(model_id);
  if (it == entries_.end()) throw UnknownModelError(model_id);
  return it->second;
}

int Gateway::in_flight(const std::string& model_id) const {
  auto e = entry(model_id);
  std::lock_guard lock(e->mu);
  return e->in_flight;
}

int Gateway::peak_in_flight(const std::string& model_id) const {
  auto e = entry(model_id);
  std::lock_guard lock(e->mu);
  return e->peak;
}

InvokeResult Gateway::call(const std::shared_ptr<Entry>& e, const CompletionRequest& request) {
  for (int attempt = 0;; ++attempt) {
    {
      std::unique_lock lock(e->mu);
      e->cv.wait(lock, [&] { return e->in_flight < e->config.max_concurrency; });
      ++e->in_flight;
      e->peak = std::max(e->peak, e->in_flight);
    }
    struct Release {
      Entry& e;
      ~Release() {
        {
          std::lock_guard lock(e.mu);
          --e.in_flight;
        }
        e.cv.notify_one();
      }
    };
    try {
      const auto t0 = std::chrono::steady_clock::now();
      Completion c;
      {
        Release release{*e};
        c = e->impl->complete(e->config, request);
      }
      const auto measured =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      if (!c.latency_ms && measured > e->config.timeout_ms)
        throw TimeoutError("provider " + e->config.model_id + " exceeded " + std::to_string(e->config.timeout_ms) +
                           " ms");
      return {std::move(c.text), c.latency_ms.value_or(measured), attempt + 1};
    } catch (ProviderError& err) {
      err.set_attempts(attempt + 1);
      if (!err.retryable() || attempt >= retry_.max_retries) throw;
      std::this_thread::sleep_for(retry_.base_backoff * (1 << attempt));
    }
  }
}

InvokeResult Gateway::invoke(const std::string& model_id, const GenerationParams& params, const PromptText& prompt) {
  return chat(model_id, params, {ChatMessage{"user", prompt.text}});
}

InvokeResult Gateway::chat(const std::string& model_id, const GenerationParams& params,
                           const std::vector<ChatMessage>& messages) {
  auto e = entry(model_id);
  CompletionRequest request{messages, params, std::chrono::milliseconds(e->config.timeout_ms)};
  return call(e, request);
}

Assessment Gateway::assess(const std::string& model_id, const GenerationParams& params, const QuestionSpec& spec,
                           const StudentAnswer& answer) {
  Assessment a;
  a.answer_id = answer.answer_id;
  a.model_id = model_id;
  const auto prompt = assemble_prompt(spec, answer);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto result = invoke(model_id, params, prompt);
    a.latency_ms = result.latency_ms;
    a.raw_output = std::move(result.raw);
  } catch (const UnknownModelError&) {
    throw;
  } catch (const ProviderError& err) {
    a.parse_status = ParseStatus::failed;
    a.outcome = Outcome::provider_error;
    a.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    a.error = std::string(dynamic_cast<const TimeoutError*>(&err) ? "timeout" : "provider_error") + " after " +
              std::to_string(err.attempts()) + " attempt(s): " + err.what();
    return a;
  }
  const auto parsed = parse_structured_output(a.raw_output, spec.range());
  a.predicted_score = parsed.score;
  a.rationale = parsed.rationale;
  a.parse_status = parsed.status;
  if (parsed.status == ParseStatus::failed) {
    a.outcome = Outcome::parse_failed;
    a.error = std::string(to_string(parsed.failure)) + ": " + parsed.detail;
  } else {
    a.outcome = Outcome::ok;
  }
  return a;
}

std::vector<ProviderConfig> parse_provider_registry(const json& doc) {
  if (!doc.is_object() || !doc.contains("providers") || !doc["providers"].is_array())
    throw ValidationError("provider registry must be an object with a \"providers\" array");
  std::vector<ProviderConfig> out;
  std::vector<std::string> violations;
  for (const auto& item : doc["providers"]) {
    try {
      auto c = item.get<ProviderConfig>();
      auto v = validate_provider(c);
      violations.insert(violations.end(), v.begin(), v.end());
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      violations.emplace_back(e.what());
    }
  }
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return out;
}

std::vector<ProviderConfig> load_provider_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open provider registry " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded()) throw ValidationError("provider registry " + path + " is not valid JSON");
  return parse_provider_registry(doc);
}

std::vector<ProviderConfig> default_mock_registry() {
  std::vector<ProviderConfig> out;
  for (const char* id : {"mock-a", "mock-b", "mock-c"}) out.push_back({id, "mock", "", 8, 30000, ""});
  return out;
}

}  // namespace aera
