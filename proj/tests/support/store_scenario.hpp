#pragma once

// A batch of three graded answers with four models' assessments and a fixed
// set of annotation events:
//   a1: m1 preferred; m2, m3 not preferred          -> 1 x 2 = 2 pairs
//   a2: m1, m2 preferred; m3, m4 not preferred      -> 2 x 2 = 4 pairs
//   a2: direct annotation (score 3)                 -> SFT from the annotation
//   a1: m1 scored the gold value 2                  -> SFT from the preference
//   a3: label correction 1 -> 0

#include <string>

#include "aera/store.hpp"

namespace scenario {

inline aera::QuestionSpec question() {
  aera::QuestionSpec q;
  q.question_id = "q-scenario";
  q.question_text = "Describe the role of the stem in a flowering plant.";
  q.key_elements = {"stem", "support", "xylem"};
  q.rubric = {{1, "support"}, {1, "transport"}, {1, "vascular tissue"}};
  q.score_min = 0;
  q.score_max = 3;
  return q;
}

struct Ids {
  std::string batch_id;
  std::string job_id;
};

inline Ids populate(aera::Store& store, const std::string& owner = "owner") {
  aera::AnswerBatch b;
  b.question = question();
  b.answers = {{"a1", "The stem supports the plant.", 2},
               {"a2", "Xylem in the stem moves water.", 3},
               {"a3", "Leaves make food.", 1}};
  Ids ids;
  ids.batch_id = store.save_batch(b, owner);
  aera::BulkJob job;
  job.job_id = "job_scenario";
  job.batch_id = ids.batch_id;
  job.model_ids = {"m1", "m2", "m3", "m4"};
  job.state = aera::JobState::done;
  job.total = job.completed = 12;
  store.save_job(job, owner);
  ids.job_id = job.job_id;

  const int scores[3][4] = {{2, 1, 0, 3}, {3, 3, 1, 2}, {1, 0, 0, 0}};
  for (int a = 0; a < 3; ++a)
    for (int m = 0; m < 4; ++m) {
      aera::Assessment x;
      x.answer_id = b.answers[a].answer_id;
      x.model_id = job.model_ids[m];
      x.predicted_score = scores[a][m];
      x.rationale = "rationale " + x.answer_id + "/" + x.model_id;
      x.parse_status = aera::ParseStatus::clean;
      x.outcome = aera::Outcome::ok;
      x.raw_output = "{}";
      store.save_assessment(job.job_id, ids.batch_id, x);
    }

  auto pref = [&](const char* answer, const char* model, bool preferred) {
    aera::AnnotationEvent e;
    e.subject = {ids.batch_id, answer, std::string(model)};
    e.payload = aera::RationalePreference{preferred, std::nullopt};
    e.author = owner;
    store.record_event(e);
  };
  pref("a1", "m1", true);
  pref("a1", "m2", false);
  pref("a1", "m3", false);
  pref("a2", "m1", true);
  pref("a2", "m2", true);
  pref("a2", "m3", false);
  pref("a2", "m4", false);

  aera::AnnotationEvent d;
  d.subject = {ids.batch_id, "a2", std::nullopt};
  d.payload = aera::DirectAnnotation{3, "Names xylem and water transport."};
  d.author = owner;
  store.record_event(d);

  aera::AnnotationEvent c;
  c.subject = {ids.batch_id, "a3", std::nullopt};
  c.payload = aera::LabelCorrection{0};
  c.author = owner;
  store.record_event(c);
  return ids;
}

}  // namespace scenario
