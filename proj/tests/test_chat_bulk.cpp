#include <gtest/gtest.h>

#include <random>
#include <set>

#include "aera/auth.hpp"
#include "aera/bulk_run.hpp"
#include "aera/chat.hpp"
#include "aera/util.hpp"
#include "test_support.hpp"

using namespace aera;
using nlohmann::json;

namespace {

Assessment assessment(const std::string& model, int score, const std::string& rationale, bool usable = true) {
  Assessment a;
  a.answer_id = "a1";
  a.model_id = model;
  a.predicted_score = score;
  a.rationale = rationale;
  a.parse_status = usable ? ParseStatus::clean : ParseStatus::failed;
  a.outcome = usable ? Outcome::ok : Outcome::parse_failed;
  return a;
}

std::shared_ptr<Gateway> mocks() {
  auto g = std::make_shared<Gateway>();
  for (const auto& p : default_mock_registry()) g->register_provider(p);
  return g;
}

}  // namespace

TEST(Chat, SystemTurnCarriesContextAndEveryAssessment) {
  const auto q = testsupport::stem_question();
  const StudentAnswer answer{"a1", "The stem carries water.", 2};
  const auto text = chat_system_turn(q, answer, {assessment("m1", 2, "Credit for transport water."),
                                                 assessment("m2", 0, "", false)});
  EXPECT_NE(text.find(q.question_text), std::string::npos);
  EXPECT_NE(text.find("Student Answer:\nThe stem carries water.\n"), std::string::npos);
  EXPECT_NE(text.find("Model m1 scored 2 with rationale: Credit for transport water.\n"), std::string::npos);
  EXPECT_NE(text.find("Model m2 produced no usable assessment"), std::string::npos);
  for (const auto& e : q.key_elements) EXPECT_NE(text.find("- " + e + "\n"), std::string::npos);
  EXPECT_LT(text.find("Question:"), text.find("Student Answer:"));
  EXPECT_LT(text.find("Student Answer:"), text.find("Assessments:"));
}

TEST(Chat, MessagesFollowHistoryOrder) {
  const std::vector<ChatTurn> history = {{"s", 0, ChatRole::system, "ctx", "m", 0},
                                         {"s", 1, ChatRole::user, "why?", "m", 0},
                                         {"s", 2, ChatRole::assistant, "because", "m", 0}};
  const auto msgs = chat_messages(history);
  ASSERT_EQ(msgs.size(), 3u);
  EXPECT_EQ(msgs[0], (ChatMessage{"system", "ctx"}));
  EXPECT_EQ(msgs[1], (ChatMessage{"user", "why?"}));
  EXPECT_EQ(msgs[2], (ChatMessage{"assistant", "because"}));
}

TEST(Chat, StreamChunksConcatenateBackToReply) {
  EXPECT_TRUE(stream_chunks("").empty());
  EXPECT_EQ(stream_chunks("one two"), (std::vector<std::string>{"one", " two"}));
  std::mt19937 rng(17);
  const std::string alphabet = "ab  \n\xc3\xa9";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    std::string joined;
    for (const auto& c : stream_chunks(s)) {
      EXPECT_FALSE(c.empty());
      joined += c;
    }
    EXPECT_EQ(joined, s);
  }
}

TEST(Chat, MockReplyDependsOnCarriedContext) {
  auto g = mocks();
  const std::vector<ChatMessage> with = {{"system", "Model mock-b scored 3 with rationale: fine"}, {"user", "why?"}};
  const std::vector<ChatMessage> without = {{"user", "why?"}};
  const auto a = g->chat("mock-a", {}, with).raw;
  EXPECT_TRUE(a.starts_with("[mock-a] "));
  EXPECT_NE(a.find("Model mock-b scored 3"), std::string::npos);
  EXPECT_EQ(g->chat("mock-a", {}, without).raw.find("Model mock-b"), std::string::npos);
  EXPECT_EQ(a, g->chat("mock-a", {}, with).raw);
}

TEST(BulkRun, DeterministicDocumentAndRoundTrip) {
  auto g = mocks();
  const auto batch = testsupport::small_batch(6, true);
  GenerationParams params;
  params.seed = 21;
  const std::vector<std::string> models = {"mock-a", "mock-b", "mock-c"};
  const auto first = run_bulk(*g, batch, models, params);
  const auto second = run_bulk(*g, batch, models, params);

  EXPECT_EQ(first.job.state, JobState::done);
  ASSERT_EQ(first.progress.size(), 18u);
  for (std::size_t i = 0; i < first.progress.size(); ++i) EXPECT_EQ(first.progress[i].completed_so_far, i + 1);

  const auto dumped = dump_json(results_to_json(first.document));
  EXPECT_EQ(dumped, dump_json(results_to_json(second.document)));
  EXPECT_EQ(dumped.find("assessment_id"), std::string::npos);

  const auto back = results_from_json(json::parse(dumped));
  EXPECT_EQ(dump_json(results_to_json(back)), dumped);
  ASSERT_EQ(back.results.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back.results[i].answer_id, batch.answers[i].answer_id);
    ASSERT_EQ(back.results[i].assessments.size(), 3u);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(back.results[i].assessments[m].model_id, models[m]);
  }

  ASSERT_TRUE(first.document.metrics);
  const auto recomputed = recompute_metrics(back);
  ASSERT_TRUE(recomputed);
  EXPECT_EQ(json(*recomputed), json(*first.document.metrics));
}

TEST(BulkRun, NoGoldOmitsMetrics) {
  auto g = mocks();
  const auto out = run_bulk(*g, testsupport::small_batch(3, false), {"mock-a"}, {});
  EXPECT_FALSE(out.document.metrics);
  EXPECT_FALSE(recompute_metrics(out.document));
  const auto j = results_to_json(out.document);
  EXPECT_FALSE(j.contains("metrics"));
  EXPECT_TRUE(j.contains("metrics_notice"));
}

TEST(BulkRun, RejectsUnknownModel) {
  auto g = mocks();
  EXPECT_THROW(run_bulk(*g, testsupport::small_batch(2, true), {"mock-a", "ghost"}, {}), UnknownModelError);
}

TEST(Auth, PasswordHashVerifies) {
  const auto h = hash_password("correct horse");
  EXPECT_TRUE(verify_password(h, "correct horse"));
  EXPECT_FALSE(verify_password(h, "correct horsf"));
  EXPECT_FALSE(verify_password("garbage", "correct horse"));
  EXPECT_NE(h, hash_password("correct horse"));  // salted
  EXPECT_EQ(h.find("correct horse"), std::string::npos);
}

TEST(Auth, TokensAreUniqueAndDigestIsStable) {
  std::set<std::string> tokens;
  for (int i = 0; i < 200; ++i) {
    const auto t = new_token();
    EXPECT_EQ(t.size(), 64u);
    tokens.insert(t);
  }
  EXPECT_EQ(tokens.size(), 200u);
  const auto t = *tokens.begin();
  EXPECT_EQ(token_digest(t), token_digest(t));
  EXPECT_NE(token_digest(t), t);
  EXPECT_NE(token_digest(t), token_digest(*tokens.rbegin()));
}
