#include <gtest/gtest.h>

#include <thread>

#include "aera/errors.hpp"
#include "aera/gateway.hpp"
#include "test_support.hpp"

using namespace aera;
using namespace std::chrono_literals;
using testsupport::ScriptedProvider;

TEST(MockProvider, DeterministicPerSeedAndAnswer) {
  const auto q = testsupport::stem_question();
  const auto p = assemble_prompt(q, {"a", "The stem gives support", std::nullopt});
  EXPECT_EQ(mock_invoke(p, 1), mock_invoke(p, 1));
  bool differs = false;
  for (std::uint64_t s = 2; s < 20 && !differs; ++s) differs = mock_invoke(p, s) != mock_invoke(p, 1);
  EXPECT_TRUE(differs);
}

TEST(MockProvider, OutputParsesCleanlyInRangeAndNamesElements) {
  const auto q = testsupport::stem_question();
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto raw = mock_invoke(assemble_prompt(q, {"a", "The stem gives support", std::nullopt}), s);
    const auto out = parse_structured_output(raw, q.range());
    ASSERT_EQ(out.status, ParseStatus::clean) << raw;
    EXPECT_NE(out.rationale.find("Credit for stem; credit for support."), std::string::npos);
    EXPECT_NE(out.rationale.find("Missed transport water"), std::string::npos);
  }
}

TEST(Gateway, MockModelsDifferButEachIsReproducible) {
  Gateway g;
  for (const auto& c : default_mock_registry()) g.register_provider(c);
  const auto q = testsupport::stem_question();
  const StudentAnswer a{"a", "xylem carries water", std::nullopt};
  GenerationParams p;
  p.seed = 3;
  for (const auto& id : g.model_ids()) EXPECT_EQ(g.assess(id, p, q, a), g.assess(id, p, q, a));
  EXPECT_EQ(g.model_ids(), (std::vector<std::string>{"mock-a", "mock-b", "mock-c"}));
}

TEST(Gateway, UnknownModel) {
  Gateway g;
  EXPECT_THROW(g.invoke("nope", {}, {"x"}), UnknownModelError);
  EXPECT_THROW(g.assess("nope", {}, testsupport::stem_question(), {"a", "x", std::nullopt}), UnknownModelError);
}

TEST(Gateway, RetriesTransientFailuresThenSucceeds) {
  Gateway g(testsupport::fast_retry(2));
  auto fake = std::make_shared<ScriptedProvider>([](int call, const CompletionRequest&) -> Completion {
    if (call < 2) throw ProviderError("503", true, 503);
    return {R"({"score": 1, "rationale": "ok"})", 5};
  });
  g.register_provider(testsupport::mock_config("m"), fake);
  const auto r = g.invoke("m", {}, {"x"});
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.latency_ms, 5);
  EXPECT_EQ(fake->calls(), 3);
}

TEST(Gateway, GivesUpAfterRetryBudget) {
  Gateway g(testsupport::fast_retry(2));
  auto fake = std::make_shared<ScriptedProvider>(
      [](int, const CompletionRequest&) -> Completion { throw ProviderError("down", true, 500); });
  g.register_provider(testsupport::mock_config("m"), fake);
  const auto a = g.assess("m", {}, testsupport::stem_question(), {"a", "x", std::nullopt});
  EXPECT_EQ(a.outcome, Outcome::provider_error);
  EXPECT_EQ(a.parse_status, ParseStatus::failed);
  EXPECT_NE(a.error.find("after 3 attempt(s)"), std::string::npos) << a.error;
  EXPECT_EQ(fake->calls(), 3);
}

TEST(Gateway, NonRetryableFailsImmediately) {
  Gateway g(testsupport::fast_retry(5));
  auto fake = std::make_shared<ScriptedProvider>(
      [](int, const CompletionRequest&) -> Completion { throw ProviderError("bad key", false, 401); });
  g.register_provider(testsupport::mock_config("m"), fake);
  try {
    g.invoke("m", {}, {"x"});
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.attempts(), 1);
    EXPECT_EQ(e.http_status(), 401);
  }
  EXPECT_EQ(fake->calls(), 1);
}

TEST(Gateway, SlowCallBecomesTimeout) {
  Gateway g(testsupport::fast_retry(0));
  auto fake = std::make_shared<ScriptedProvider>([](int, const CompletionRequest&) -> Completion {
    std::this_thread::sleep_for(1100ms);
    return {R"({"score": 1, "rationale": "late"})", std::nullopt};
  });
  g.register_provider(testsupport::mock_config("m", 1, 1000), fake);
  const auto a = g.assess("m", {}, testsupport::stem_question(), {"a", "x", std::nullopt});
  EXPECT_EQ(a.outcome, Outcome::provider_error);
  EXPECT_EQ(a.error.rfind("timeout", 0), 0u) << a.error;
}

TEST(Gateway, MalformedOutputIsParseFailureWithRawKept) {
  Gateway g;
  auto fake = std::make_shared<ScriptedProvider>(
      [](int, const CompletionRequest&) -> Completion { return {"I think it deserves a two.", 1}; });
  g.register_provider(testsupport::mock_config("m"), fake);
  const auto a = g.assess("m", {}, testsupport::stem_question(), {"a", "x", std::nullopt});
  EXPECT_EQ(a.outcome, Outcome::parse_failed);
  EXPECT_EQ(a.raw_output, "I think it deserves a two.");
  EXPECT_FALSE(a.usable());
}

TEST(GatewayProperty, InFlightNeverExceedsProviderCap) {
  for (int cap : {1, 3, 5}) {
    Gateway g;
    std::atomic<int> live{0}, worst{0};
    auto fake = std::make_shared<ScriptedProvider>([&](int, const CompletionRequest&) -> Completion {
      const int now = ++live;
      int prev = worst.load();
      while (now > prev && !worst.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --live;
      return {"{}", 1};
    });
    g.register_provider(testsupport::mock_config("m", cap), fake);
    std::vector<std::thread> threads;
    for (int i = 0; i < 24; ++i) threads.emplace_back([&] { g.invoke("m", {}, {"x"}); });
    for (auto& t : threads) t.join();
    EXPECT_LE(worst.load(), cap);
    EXPECT_LE(g.peak_in_flight("m"), cap);
    EXPECT_EQ(g.in_flight("m"), 0);
    EXPECT_EQ(fake->calls(), 24);
  }
}

TEST(ProviderRegistry, ParsesAndValidates) {
  const auto ok = parse_provider_registry(nlohmann::json::parse(
      R"({"providers":[{"model_id":"m","endpoint":"mock"},{"model_id":"r","endpoint":"https://x/v1","credentials_ref":"K","max_concurrency":2,"timeout_ms":5000}]})"));
  ASSERT_EQ(ok.size(), 2u);
  EXPECT_EQ(ok[1].max_concurrency, 2);
  EXPECT_THROW(parse_provider_registry(nlohmann::json::parse(R"({"providers":[{"model_id":"m"}]})")),
               ValidationError);
  EXPECT_THROW(
      parse_provider_registry(nlohmann::json::parse(R"({"providers":[{"model_id":"m","endpoint":"ftp://x"}]})")),
      ValidationError);
  EXPECT_THROW(parse_provider_registry(nlohmann::json::array()), ValidationError);
}

TEST(ProviderRegistry, ShippedConfigLoads) {
  const auto providers = load_provider_registry(std::string(AERA_SOURCE_DIR) + "/config/providers.json");
  EXPECT_GE(providers.size(), 3u);
  EXPECT_THROW(load_provider_registry("/nonexistent/providers.json"), ValidationError);
}

TEST(GenerationParamsValidation, Bounds) {
  GenerationParams p;
  EXPECT_TRUE(validate_params(p).empty());
  p.temperature = 2.5;
  p.max_output_tokens = 0;
  EXPECT_EQ(validate_params(p).size(), 2u);
}
