#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aera/domain.hpp"
#include "aera/prompt.hpp"
#include "aera/structured_output.hpp"

namespace aera {

struct GenerationParams {
  double temperature = 0.7;
  int max_output_tokens = 512;
  std::uint64_t seed = 0;  // only the mock provider consumes it

  bool operator==(const GenerationParams&) const = default;
};

std::vector<std::string> validate_params(const GenerationParams& p);

struct ProviderConfig {
  std::string model_id;
  std::string endpoint;         // base URL of an OpenAI-compatible API, or "mock"
  std::string credentials_ref;  // name of the environment variable holding the API key
  int max_concurrency = 4;
  int timeout_ms = 30000;
  std::string api_model;  // model name sent upstream; defaults to model_id

  bool is_mock() const { return endpoint == "mock"; }
};

std::vector<std::string> validate_provider(const ProviderConfig& c);

void to_json(nlohmann::json& j, const GenerationParams& p);
void from_json(const nlohmann::json& j, GenerationParams& p);
void to_json(nlohmann::json& j, const ProviderConfig& c);
void from_json(const nlohmann::json& j, ProviderConfig& c);

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

class ProviderError : public std::runtime_error {
 public:
  ProviderError(const std::string& what, bool retryable, int http_status = 0)
      : std::runtime_error(what), retryable_(retryable), http_status_(http_status) {}
  bool retryable() const noexcept { return retryable_; }
  int http_status() const noexcept { return http_status_; }
  int attempts() const noexcept { return attempts_; }
  void set_attempts(int n) noexcept { attempts_ = n; }

 private:
  bool retryable_;
  int http_status_;
  int attempts_ = 1;
};

class TimeoutError : public ProviderError {
 public:
  explicit TimeoutError(const std::string& what) : ProviderError(what, true, 0) {}
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  GenerationParams params;
  std::chrono::milliseconds timeout{30000};
};

struct Completion {
  std::string text;
  std::optional<std::int64_t> latency_ms;  // provider-reported; measured when absent
};

class Provider {
 public:
  virtual ~Provider() = default;
  // Throws ProviderError / TimeoutError on failure.
  virtual Completion complete(const ProviderConfig& config, const CompletionRequest& request) = 0;
};

/// Deterministic offline completion for a grading prompt: the score is a
/// seeded hash of the answer text folded into the score range, the rationale
/// names the key elements the answer mentions and misses.
std::string mock_invoke(const PromptText& prompt, std::uint64_t seed);

/// Deterministic tagger over a tagging prompt: key elements found in the text
/// (outside "missed ..." clauses) plus, in aspects mode, "missed X" phrases as
/// negatives. Returns a JSON array.
std::string mock_tag(const PromptSections& sections);

class MockProvider final : public Provider {
 public:
  Completion complete(const ProviderConfig& config, const CompletionRequest& request) override;
};

/// POSTs {base}/chat/completions with bearer auth from the credentials env var.
class OpenAiCompatibleProvider final : public Provider {
 public:
  Completion complete(const ProviderConfig& config, const CompletionRequest& request) override;
};

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds base_backoff{250};
};

struct InvokeResult {
  std::string raw;
  std::int64_t latency_ms = 0;
  int attempts = 1;
};

class UnknownModelError : public std::invalid_argument {
 public:
  explicit UnknownModelError(const std::string& model_id)
      : std::invalid_argument("unknown model_id: " + model_id), model_id_(model_id) {}
  const std::string& model_id() const noexcept { return model_id_; }

 private:
  std::string model_id_;
};

/// Routes calls to registered providers. Thread-safe; the number of calls in
/// flight per provider never exceeds its max_concurrency.
class Gateway {
 public:
  explicit Gateway(RetryPolicy retry = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // `impl` defaults to MockProvider for endpoint "mock", otherwise
  // OpenAiCompatibleProvider. Re-registering a model id replaces it.
  void register_provider(ProviderConfig config, std::shared_ptr<Provider> impl = nullptr);

  bool has_model(const std::string& model_id) const;
  std::vector<std::string> model_ids() const;
  ProviderConfig config(const std::string& model_id) const;

  InvokeResult invoke(const std::string& model_id, const GenerationParams& params, const PromptText& prompt);
  InvokeResult chat(const std::string& model_id, const GenerationParams& params,
                    const std::vector<ChatMessage>& messages);

  /// assemble_prompt + invoke + parse_structured_output. Provider failures
  /// after retries become an Assessment with outcome provider_error.
  Assessment assess(const std::string& model_id, const GenerationParams& params, const QuestionSpec& spec,
                    const StudentAnswer& answer);

  const RetryPolicy& retry_policy() const { return retry_; }
  int in_flight(const std::string& model_id) const;
  int peak_in_flight(const std::string& model_id) const;

 private:
  struct Entry;
  std::shared_ptr<Entry> entry(const std::string& model_id) const;
  InvokeResult call(const std::shared_ptr<Entry>& e, const CompletionRequest& request);

  RetryPolicy retry_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  std::vector<std::string> order_;
};

/// Registry file: {"providers": [ProviderConfig, ...]}. Throws ValidationError.
std::vector<ProviderConfig> load_provider_registry(const std::string& path);
std::vector<ProviderConfig> parse_provider_registry(const nlohmann::json& doc);

/// Three mock models used when no registry is configured.
std::vector<ProviderConfig> default_mock_registry();

}  // namespace aera
