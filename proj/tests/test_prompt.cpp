#include <gtest/gtest.h>

#include <random>
#include <set>

#include "aera/prompt.hpp"
#include "test_support.hpp"

using namespace aera;
using testsupport::stem_question;

TEST(GradingPrompt, ContainsContextBlocksInOrder) {
  const auto q = stem_question();
  const auto p = assemble_prompt(q, {"a1", "The stem holds the rose", std::nullopt}).text;
  const auto question = p.find("Question:\n" + q.question_text);
  const auto elements = p.find("Key Answer Elements:\n- stem\n- support\n");
  const auto rubric = p.find("Marking Rubric:\n- 1 point: Names support as a function\n");
  const auto range = p.find("Score range: 0-3\n");
  const auto answer = p.find("Student Answer:\nThe stem holds the rose\n");
  ASSERT_NE(question, std::string::npos);
  ASSERT_NE(elements, std::string::npos);
  ASSERT_NE(rubric, std::string::npos);
  ASSERT_NE(range, std::string::npos);
  ASSERT_NE(answer, std::string::npos);
  EXPECT_LT(question, elements);
  EXPECT_LT(elements, rubric);
  EXPECT_LT(rubric, range);
  EXPECT_LT(range, answer);
  EXPECT_NE(p.find("\"score\""), std::string::npos);
  EXPECT_NE(p.find("\"rationale\""), std::string::npos);
  EXPECT_TRUE(p.ends_with("Your JSON Output:\n"));
}

TEST(GradingPrompt, EmptyKeyElementsRenderPlaceholder) {
  auto q = stem_question();
  q.key_elements.clear();
  const auto p = assemble_prompt(q, {"a", "x", std::nullopt}).text;
  EXPECT_NE(p.find("Key Answer Elements:\n(none provided)\n"), std::string::npos);
}

TEST(GradingPrompt, PluralPoints) {
  auto q = stem_question();
  q.rubric = {{2, "two things"}};
  EXPECT_NE(assemble_prompt(q, {"a", "x", std::nullopt}).text.find("- 2 points: two things"), std::string::npos);
}

TEST(GradingPrompt, DependsOnlyOnQuestionAndAnswerText) {
  const auto q = stem_question();
  EXPECT_EQ(assemble_prompt(q, {"a", "same", 1}), assemble_prompt(q, {"b", "same", std::nullopt}));
}

TEST(GradingPromptProperty, DistinctAnswersGiveDistinctPrompts) {
  std::mt19937 rng(5);
  const auto q = stem_question();
  const std::string alphabet = "ab \n-:{}\"";
  std::set<std::string> answers, prompts;
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const int n = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    if (!answers.insert(s).second) continue;
    ASSERT_TRUE(prompts.insert(assemble_prompt(q, {"x", s, std::nullopt}).text).second) << s;
  }
}

TEST(PromptSections, RecoverGradingInputs) {
  const auto q = stem_question();
  std::mt19937 rng(9);
  const std::vector<std::string> pieces = {"stem", "\n---\n\n", "Student Answer:\n", "Your JSON Output:\n", "x", "\n"};
  for (int i = 0; i < 500; ++i) {
    std::string answer;
    for (int k = 0; k < 5; ++k) answer += pieces[rng() % pieces.size()];
    const auto s = parse_prompt_sections(assemble_prompt(q, {"a", answer, std::nullopt}).text);
    ASSERT_TRUE(s);
    EXPECT_FALSE(s->is_tagging);
    EXPECT_EQ(s->subject_text, answer);
    EXPECT_EQ(s->question, q.question_text);
    EXPECT_EQ(s->key_elements, q.key_elements);
    EXPECT_EQ(s->range, q.range());
  }
}

TEST(PromptSections, RecoverTaggingInputs) {
  const auto q = stem_question();
  for (auto mode : {TagMode::key_elements, TagMode::aspects}) {
    const auto p = assemble_tagging_prompt(q, "the rationale text", mode);
    EXPECT_NE(p.text.find("Copy each phrase exactly"), std::string::npos);
    const auto s = parse_prompt_sections(p.text);
    ASSERT_TRUE(s);
    EXPECT_TRUE(s->is_tagging);
    EXPECT_EQ(s->mode, mode);
    EXPECT_EQ(s->subject_text, "the rationale text");
  }
  EXPECT_FALSE(parse_prompt_sections("random text"));
}

TEST(TagModeNames, RoundTrip) {
  EXPECT_EQ(tag_mode_from_string(to_string(TagMode::aspects)), TagMode::aspects);
  EXPECT_EQ(tag_mode_from_string(to_string(TagMode::key_elements)), TagMode::key_elements);
  EXPECT_EQ(tag_mode_from_string("x"), std::nullopt);
}
