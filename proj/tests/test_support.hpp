#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "aera/domain.hpp"

namespace testsupport {

inline std::string data_path(const std::string& name) { return std::string(AERA_TEST_DATA_DIR) + "/" + name; }
inline std::string fixture_path(const std::string& name) { return std::string(AERA_FIXTURES_DIR) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline aera::QuestionSpec stem_question() {
  aera::QuestionSpec q;
  q.question_id = "q-stem";
  q.question_text = "Describe the role of the stem in a flowering plant such as a rose.";
  q.key_elements = {"stem", "support", "transport water", "xylem", "phloem"};
  q.rubric = {{1, "Names support as a function"}, {1, "Names transport of water or food"}, {1, "Names xylem or phloem"}};
  q.score_min = 0;
  q.score_max = 3;
  return q;
}

inline aera::AnswerBatch small_batch(std::size_t n, bool gold = true) {
  aera::AnswerBatch b;
  b.question = stem_question();
  for (std::size_t i = 0; i < n; ++i) {
    aera::StudentAnswer a;
    a.answer_id = "a" + std::to_string(i + 1);
    a.answer_text = "The stem gives support and variant " + std::to_string(i);
    if (gold) a.gold_score = static_cast<int>(i % 4);
    b.answers.push_back(a);
  }
  return b;
}

}  // namespace testsupport

#include <atomic>
#include <functional>
#include <thread>

#include "aera/gateway.hpp"

namespace testsupport {

// Provider whose behaviour is a test-supplied function of the call number.
class ScriptedProvider final : public aera::Provider {
 public:
  using Script = std::function<aera::Completion(int call, const aera::CompletionRequest&)>;
  explicit ScriptedProvider(Script s) : script_(std::move(s)) {}
  aera::Completion complete(const aera::ProviderConfig&, const aera::CompletionRequest& r) override {
    return script_(calls_.fetch_add(1), r);
  }
  int calls() const { return calls_.load(); }

 private:
  Script script_;
  std::atomic<int> calls_{0};
};

inline aera::ProviderConfig mock_config(const std::string& id, int concurrency = 8, int timeout_ms = 30000) {
  aera::ProviderConfig c;
  c.model_id = id;
  c.endpoint = "mock";
  c.max_concurrency = concurrency;
  c.timeout_ms = timeout_ms;
  return c;
}

inline aera::RetryPolicy fast_retry(int retries = 2) { return {retries, std::chrono::milliseconds(1)}; }

}  // namespace testsupport
