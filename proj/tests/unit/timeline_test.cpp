#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/timeline.hpp"
#include "turnwise/timeline_io.hpp"

using namespace turnwise;
using testsupport::make_timeline;
using testsupport::make_traj;

TEST(NormalizeOutput, SilentMarkerAndBlankAreSilent) {
  EXPECT_FALSE(normalize_output("<silent>").is_respond());
  EXPECT_FALSE(normalize_output("  <SILENT>\n").is_respond());
  EXPECT_FALSE(normalize_output("").is_respond());
  EXPECT_FALSE(normalize_output(" \t\n").is_respond());
}

TEST(NormalizeOutput, ResponseKeepsVerbatimText) {
  const Action a = normalize_output("  The sign says EXIT. ", 7);
  ASSERT_TRUE(a.is_respond());
  EXPECT_EQ(a.text, "  The sign says EXIT. ");
  EXPECT_EQ(a.completion_tokens, 7);
}

TEST(NormalizeOutput, MissingUsageFallsBackToWhitespaceTokens) {
  EXPECT_EQ(normalize_output("one two  three").completion_tokens, 3);
  EXPECT_EQ(normalize_output("<silent>").completion_tokens, 1);
}

TEST(NormalizeOutput, MarkerInsideTextIsAResponse) {
  EXPECT_TRUE(normalize_output("<silent> but actually, a dog").is_respond());
}

TEST(Action, RespondRejectsBlankText) {
  EXPECT_THROW(Action::respond("   ", 1), InvalidInput);
}

TEST(AnswerRate, CountsResponsesOverTurns) {
  const AnswerRate r = answer_rate(make_traj("a..b."));
  EXPECT_EQ(r.responses, 2);
  EXPECT_EQ(r.turns, 5);
  EXPECT_DOUBLE_EQ(r.value(), 0.4);
  EXPECT_EQ(response_turns(make_traj("a..b.")), (std::vector<int>{1, 4}));
}

TEST(Timeline, ValidateRejectsBrokenInvariants) {
  auto tl = make_timeline(Subtask::OCR, 5, {3});
  EXPECT_NO_THROW(tl.validate());

  auto bad = tl;
  bad.ground_truth.gt_turns = {6};
  bad.ground_truth.references[6].answer = "x";
  EXPECT_THROW(bad.validate(), InvalidInput);

  bad = tl;
  bad.ground_truth.references.clear();
  EXPECT_THROW(bad.validate(), InvalidInput);

  bad = tl;
  bad.ground_truth.delta = 2;  // only ForwardActive has a window
  EXPECT_THROW(bad.validate(), InvalidInput);

  bad = tl;
  bad.ground_truth.mode = TaskMode::ForwardActive;
  EXPECT_THROW(bad.validate(), InvalidInput);

  bad = tl;
  bad.queries[0] = "too early";
  EXPECT_THROW(bad.validate(), InvalidInput);

  bad = tl;
  bad.fps = 0;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(Timeline, LatestQueryAt) {
  auto tl = make_timeline(Subtask::EPM, 6, {5});
  tl.queries = {{2, "first"}, {5, "second"}};
  EXPECT_FALSE(tl.latest_query_at(1));
  EXPECT_EQ(*tl.latest_query_at(2), "first");
  EXPECT_EQ(*tl.latest_query_at(4), "first");
  EXPECT_EQ(*tl.latest_query_at(6), "second");
}

TEST(Alignment, ReportsLengthAndEmptyResponses) {
  auto tl = make_timeline(Subtask::OCR, 4, {2});
  EXPECT_TRUE(validate_alignment(tl, make_traj("a...")).empty());
  auto v = validate_alignment(tl, make_traj("a.."));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, AlignmentViolation::Kind::Length);

  Trajectory tr = make_traj("....");
  tr.turns[2].kind = ActionKind::Respond;  // bypasses Action::respond
  v = validate_alignment(tl, tr);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, AlignmentViolation::Kind::EmptyResponse);
  EXPECT_EQ(v[0].turn, 3);
}

TEST(TimelineIo, DefaultsFillOmittedFpsAndFarDelta) {
  const nlohmann::json doc = {
      {"format_version", 1},
      {"sample_id", "rec1"},
      {"turn_count", 10},
      {"ground_truth",
       {{"subtask", "REC"}, {"gt_turns", {6}}, {"references", {{{"turn", 6}, {"answer", "3"}, {"expected_count", 3}}}}}}};
  const StreamTimeline a = timeline_from_json(doc);
  EXPECT_EQ(a.fps, 0.5);
  EXPECT_EQ(a.ground_truth.delta, kDefaultFarDelta);
  EXPECT_EQ(a.ground_truth.mode, TaskMode::ForwardActive);
  EXPECT_EQ(a.ground_truth.references.at(6).expected_count, 3);

  const StreamTimeline b = timeline_from_json(doc, TimelineDefaults{1.0, 2});
  EXPECT_EQ(b.fps, 1.0);
  EXPECT_EQ(b.ground_truth.delta, 2);
}

TEST(TimelineIo, RejectsUnknownKeysAndVersions) {
  nlohmann::json doc = to_json(make_timeline(Subtask::OCR, 3, {2}));
  doc["extra"] = 1;
  EXPECT_THROW(timeline_from_json(doc), InvalidInput);
  doc.erase("extra");
  doc["format_version"] = 2;
  EXPECT_THROW(timeline_from_json(doc), InvalidInput);
}

TEST(TimelineIo, TimelineRoundTrip) {
  auto tl = make_timeline(Subtask::SSR, 12, {4, 9});
  tl.queries = {{1, "Tell me when each stage starts."}};
  tl.ground_truth.references[4].expected_stage = "mixing";
  tl.ground_truth.options = {"a", "b"};
  tl.ground_truth.question = "Which stage?";
  EXPECT_EQ(timeline_from_json(to_json(tl)), tl);
}

// Property: random trajectories survive the JSONL log format unchanged.
TEST(TimelineIo, TrajectoryJsonlRoundTripProperty) {
  std::mt19937 rng(testsupport::kSeed);
  std::uniform_int_distribution<int> len(1, 30);
  std::uniform_int_distribution<int> coin(0, 2);
  std::uniform_int_distribution<int> tok(0, 50);
  const std::vector<std::string> texts = {"a dog", "Exit", "  padded  ", "line\nbreak", "quote \" and \\ slash", "ünïcode"};
  std::uniform_int_distribution<std::size_t> pick(0, texts.size() - 1);

  std::ostringstream out;
  std::map<std::string, Trajectory> expected;
  for (int s = 0; s < 200; ++s) {
    Trajectory tr;
    tr.sample_id = "sample_" + std::to_string(s);
    const int n = len(rng);
    for (int t = 0; t < n; ++t) {
      tr.turns.push_back(coin(rng) == 0 ? Action::respond(texts[pick(rng)], tok(rng)) : Action::silent(tok(rng)));
    }
    write_trajectory_jsonl(out, tr);
    expected[tr.sample_id] = tr;
  }
  std::istringstream in(out.str());
  const auto got = read_trajectory_jsonl(in);
  ASSERT_EQ(got.size(), expected.size());
  for (const auto& [id, tr] : expected) {
    ASSERT_TRUE(got.contains(id));
    EXPECT_EQ(got.at(id).turns, tr.turns) << id;
  }
}

TEST(TimelineIo, TrajectoryLogNeedsContiguousTurns) {
  std::istringstream in(
      R"({"format_version":1,"sample_id":"a","turn":1,"action":"silent","completion_tokens":0}
{"format_version":1,"sample_id":"a","turn":3,"action":"silent","completion_tokens":0}
)");
  EXPECT_THROW(read_trajectory_jsonl(in), InvalidInput);
}
