#include <gtest/gtest.h>

#include <random>

#include "aera/errors.hpp"
#include "aera/domain.hpp"
#include "test_support.hpp"

using namespace aera;
using testsupport::stem_question;

TEST(QuestionValidation, AcceptsWellFormedQuestion) { EXPECT_TRUE(validate_question(stem_question()).empty()); }

TEST(QuestionValidation, ReportsEveryViolation) {
  QuestionSpec q = stem_question();
  q.score_min = 4;
  q.score_max = 2;
  q.question_text = "  ";
  q.key_elements = {"ok", " "};
  q.rubric = {{-1, "x"}, {1, ""}};
  const auto v = validate_question(q);
  EXPECT_EQ(v.size(), 5u);
}

TEST(QuestionValidation, KeyElementsOptionalOnlyWithRubric) {
  QuestionSpec q = stem_question();
  q.key_elements.clear();
  EXPECT_TRUE(validate_question(q).empty());
  q.rubric.clear();
  EXPECT_EQ(validate_question(q).size(), 1u);
}

TEST(QuestionValidation, NegativeBoundsRejected) {
  QuestionSpec q = stem_question();
  q.score_min = -1;
  EXPECT_FALSE(validate_question(q).empty());
}

TEST(QuestionJson, RoundTrip) {
  const QuestionSpec q = stem_question();
  const nlohmann::json j = q;
  EXPECT_EQ(j.get<QuestionSpec>(), q);
}

TEST(BatchCsv, ParsesInFileOrderWithOptionalGold) {
  const std::string csv = "answer_id,answer_text,gold_score\nx2,\"Stem, supports\",2\nx1,plain,\n";
  const auto b = parse_answer_batch(csv, BatchFormat::csv, stem_question());
  ASSERT_EQ(b.answers.size(), 2u);
  EXPECT_EQ(b.answers[0].answer_id, "x2");
  EXPECT_EQ(b.answers[0].answer_text, "Stem, supports");
  EXPECT_EQ(b.answers[0].gold_score, 2);
  EXPECT_EQ(b.answers[1].gold_score, std::nullopt);
  EXPECT_TRUE(b.has_gold());
}

TEST(BatchCsv, MissingIdsUseRowNumbers) {
  const auto b = parse_answer_batch("answer_text\nfirst\nsecond\n", BatchFormat::csv, stem_question());
  EXPECT_EQ(b.answers[0].answer_id, "1");
  EXPECT_EQ(b.answers[1].answer_id, "2");
  EXPECT_FALSE(b.has_gold());
}

TEST(BatchCsv, StripsBomAndHandlesCrlf) {
  const auto b = parse_answer_batch("\xEF\xBB\xBF" "answer_id,answer_text\r\nz,hello\r\n", BatchFormat::csv,
                                    stem_question());
  ASSERT_EQ(b.answers.size(), 1u);
  EXPECT_EQ(b.answers[0].answer_id, "z");
  EXPECT_EQ(b.answers[0].answer_text, "hello");
}

TEST(BatchCsv, MalformedRowNamesTheRow) {
  try {
    parse_answer_batch("answer_id,answer_text,gold_score\na,ok,1\nb,bad,two\n", BatchFormat::csv, stem_question());
    FAIL() << "expected MalformedRowError";
  } catch (const MalformedRowError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
  try {
    parse_answer_batch("answer_id,answer_text\na,ok\nb,too,many\n", BatchFormat::csv, stem_question());
    FAIL() << "expected MalformedRowError";
  } catch (const MalformedRowError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
}

TEST(BatchCsv, RejectsDuplicatesRangeAndEncoding) {
  const auto q = stem_question();
  EXPECT_THROW(parse_answer_batch("answer_id,answer_text\na,x\na,y\n", BatchFormat::csv, q), ValidationError);
  try {
    parse_answer_batch("answer_id,answer_text,gold_score\na,x,9\nb,y,1\n", BatchFormat::csv, q);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
  }
  EXPECT_THROW(parse_answer_batch("answer_text\n\xFF\n", BatchFormat::csv, q), ValidationError);
  EXPECT_THROW(parse_answer_batch("answer_id\nx\n", BatchFormat::csv, q), ValidationError);
  EXPECT_THROW(parse_answer_batch("answer_text\n", BatchFormat::csv, q), ValidationError);
  EXPECT_THROW(parse_answer_batch("answer_text\n\"open\n", BatchFormat::csv, q), MalformedRowError);
}

TEST(BatchJson, ParsesArrayOfObjects) {
  const auto b = parse_answer_batch(R"([{"answer_id":7,"answer_text":"t","gold_score":1},{"answer_text":"u"}])",
                                    BatchFormat::json, stem_question());
  ASSERT_EQ(b.answers.size(), 2u);
  EXPECT_EQ(b.answers[0].answer_id, "7");
  EXPECT_EQ(b.answers[1].answer_id, "2");
  EXPECT_EQ(b.answers[1].gold_score, std::nullopt);
}

TEST(BatchJson, Rejections) {
  const auto q = stem_question();
  EXPECT_THROW(parse_answer_batch("{}", BatchFormat::json, q), ValidationError);
  EXPECT_THROW(parse_answer_batch("[", BatchFormat::json, q), ValidationError);
  try {
    parse_answer_batch(R"([{"answer_text":"a"},{"answer_text":"b","gold_score":"x"}])", BatchFormat::json, q);
    FAIL();
  } catch (const MalformedRowError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
}

namespace {

std::string random_text(std::mt19937& rng) {
  static const std::vector<std::string> pieces = {"stem", ",", "\"", "\n", " ", "xylem", "é", "\r\n", "'", "support"};
  std::string s;
  const int n = std::uniform_int_distribution<int>(1, 8)(rng);
  for (int i = 0; i < n; ++i) s += pieces[std::uniform_int_distribution<std::size_t>(0, pieces.size() - 1)(rng)];
  return s;
}

}  // namespace

TEST(BatchProperty, SerializeThenParseIsIdentity) {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    AnswerBatch b;
    b.question = stem_question();
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    for (int i = 0; i < n; ++i) {
      StudentAnswer a;
      a.answer_id = "id" + std::to_string(trial) + "_" + std::to_string(i);
      a.answer_text = random_text(rng);
      if (rng() % 3) a.gold_score = std::uniform_int_distribution<int>(0, 3)(rng);
      b.answers.push_back(a);
    }
    for (auto fmt : {BatchFormat::csv, BatchFormat::json}) {
      const auto back = parse_answer_batch(serialize_answer_batch(b, fmt), fmt, b.question);
      ASSERT_EQ(back.answers, b.answers) << "trial " << trial;
    }
  }
}

TEST(EventPayload, ValidationAgainstQuestion) {
  const auto q = stem_question();
  AnnotationEvent e;
  e.subject = {"b", "a", std::nullopt};
  e.payload = LabelCorrection{3};
  EXPECT_TRUE(validate_event_payload(e, q).empty());
  e.payload = LabelCorrection{4};
  EXPECT_EQ(validate_event_payload(e, q).size(), 1u);
  e.payload = RationalePreference{true, std::nullopt};
  EXPECT_EQ(validate_event_payload(e, q).size(), 1u);
  e.subject.model_id = "m";
  EXPECT_TRUE(validate_event_payload(e, q).empty());
  e.payload = DirectAnnotation{-1, " "};
  EXPECT_EQ(validate_event_payload(e, q).size(), 2u);
}

TEST(EventJson, RoundTripEveryKind) {
  const std::vector<EventPayload> payloads = {LabelCorrection{2}, RationalePreference{false, "as_1"},
                                              DirectAnnotation{1, "why"}, ChatTurnRecord{"cs_1", "user", "hi"}};
  for (const auto& p : payloads) {
    AnnotationEvent e;
    e.event_id = "ev_1";
    e.subject = {"b", "a", std::string("m")};
    e.payload = p;
    e.author = "u";
    e.created_at = 123;
    const nlohmann::json j = e;
    EXPECT_EQ(j.get<AnnotationEvent>(), e) << j.dump();
  }
}

TEST(EventJson, PayloadTypeErrorsAreValidationErrors) {
  EXPECT_THROW(payload_from_json(EventKind::label_correction, {{"score", "x"}}), ValidationError);
  EXPECT_THROW(payload_from_json(EventKind::direct_annotation, {{"score", 1}}), ValidationError);
  EXPECT_THROW(payload_from_json(EventKind::preference, nlohmann::json::array()), ValidationError);
}

TEST(EnumNames, RoundTrip) {
  for (auto k : {EventKind::label_correction, EventKind::preference, EventKind::direct_annotation,
                 EventKind::chat_turn})
    EXPECT_EQ(event_kind_from_string(to_string(k)), k);
  for (auto s : {ParseStatus::clean, ParseStatus::repaired, ParseStatus::failed})
    EXPECT_EQ(parse_status_from_string(to_string(s)), s);
  EXPECT_EQ(event_kind_from_string("nope"), std::nullopt);
}

TEST(DumpJson, InvalidUtf8DoesNotThrow) {
  EXPECT_NO_THROW(dump_json(nlohmann::json("bad\xFF")));
}
