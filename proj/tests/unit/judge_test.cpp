#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/judge.hpp"

using namespace turnwise;
using nlohmann::json;
using testsupport::make_timeline;
using testsupport::make_traj;

namespace {

std::string chat_body(const std::string& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

std::string prompt_of(const std::string& body) {
  return json::parse(body).at("messages")[0].at("content").get<std::string>();
}

JudgeConfig fast_config() {
  JudgeConfig c;
  c.endpoint.url = "http://judge";
  c.endpoint.model = "judge-model";
  c.endpoint.retry.initial_backoff = std::chrono::milliseconds(1);
  c.concurrency = 4;
  return c;
}

// Replies by template, recognizable from the rendered prompt text.
std::string scripted_reply(const std::string& prompt) {
  if (prompt.find("\"correct\"") != std::string::npos) return R"({"correct": true, "reasoning": "ok"})";
  if (prompt.find("\"is_repeated\"") != std::string::npos) return R"({"is_repeated": false, "reasoning": "ok"})";
  if (prompt.find("yes\" or \"no") != std::string::npos) return "yes";
  return "0.5";
}

}  // namespace

TEST(ParseVerdict, CorrectnessReadsFirstObjectWithBooleanKey) {
  auto v = parse_verdict(JudgeTemplate::C1Accuracy, R"(Thinking... {"a": 1} {"correct": false, "reasoning": "no"})");
  ASSERT_TRUE(v.ok());
  EXPECT_FALSE(v.flag);
  EXPECT_EQ(v.reasoning, "no");
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C1Accuracy, R"({"correct": "true"})").ok());
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C1Accuracy, "correct").ok());
  EXPECT_TRUE(parse_verdict(JudgeTemplate::C2Repetition, "```json\n{\"is_repeated\": true}\n```").flag);
}

TEST(ParseVerdict, IntentionReadsFirstYesNoWord) {
  EXPECT_TRUE(parse_verdict(JudgeTemplate::C3CrrIntention, "Yes.").flag);
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C4SsrRecIntention, "  NO").flag);
  EXPECT_TRUE(parse_verdict(JudgeTemplate::C4SsrRecIntention, "Answer: yes, because").flag);
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C3CrrIntention, "yesterday maybe").ok());
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C3CrrIntention, "").ok());
}

TEST(ParseVerdict, ConsistencySnapsToRubric) {
  auto score = [](JudgeTemplate id, const char* raw) {
    auto v = parse_verdict(id, raw);
    EXPECT_TRUE(v.ok()) << raw;
    return v.score;
  };
  EXPECT_EQ(score(JudgeTemplate::C5FarCrr, "0.5"), 0.5);
  EXPECT_EQ(score(JudgeTemplate::C5FarCrr, "Score: 0.3"), 0.3);
  EXPECT_EQ(score(JudgeTemplate::C5FarCrr, "0.45"), 0.5);
  EXPECT_EQ(score(JudgeTemplate::C5FarCrr, "0.4"), 0.3);  // tie goes to the lower point
  EXPECT_EQ(score(JudgeTemplate::C6FarSsr, "0.3"), 0.2);
  EXPECT_EQ(score(JudgeTemplate::C6FarSsr, "0.1"), 0.0);  // tie goes to the lower point
  EXPECT_EQ(score(JudgeTemplate::C7FarRec, "0.9"), 0.5);  // clamped
  EXPECT_EQ(score(JudgeTemplate::C7FarRec, "-0.3"), 0.0);
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C7FarRec, "no idea").ok());
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C7FarRec, "v2 looks good").ok());  // glued to letters
}

// Property: whatever number comes back, the parsed score is a rubric point.
TEST(ParseVerdict, ScoreIsAlwaysARubricPointProperty) {
  std::mt19937 rng(testsupport::kSeed);
  std::uniform_real_distribution<double> x(-1.0, 2.0);
  for (JudgeTemplate id : {JudgeTemplate::C5FarCrr, JudgeTemplate::C6FarSsr, JudgeTemplate::C7FarRec}) {
    const auto& points = rubric_points(id);
    for (int i = 0; i < 500; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", x(rng));
      const auto v = parse_verdict(id, buf);
      ASSERT_TRUE(v.ok()) << buf;
      EXPECT_NE(std::find(points.begin(), points.end(), v.score), points.end()) << buf;
    }
  }
}

TEST(JudgeVerdict, FailuresAreConservative) {
  const auto v = parse_verdict(JudgeTemplate::C2Repetition, "garbage");
  EXPECT_FALSE(v.conservative_flag());
  EXPECT_EQ(parse_verdict(JudgeTemplate::C5FarCrr, "garbage").conservative_score(), 0.0);
}

TEST(JudgeClient, CachesByModelAndPrompt) {
  testsupport::TempDir dir;
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string& body) { return HttpResponse{200, chat_body(scripted_reply(prompt_of(body)))}; });
  auto cache = std::make_shared<ContentCache>(dir.path);
  JudgeClient a(fast_config(), t, cache);
  EXPECT_TRUE(a.judge(JudgeTemplate::C3CrrIntention, "Question: q\nModel's Output: x\nyes\" or \"no").flag);
  EXPECT_EQ(t->requests(), 1);
  JudgeClient b(fast_config(), t, cache);
  const auto again = b.judge(JudgeTemplate::C3CrrIntention, "Question: q\nModel's Output: x\nyes\" or \"no");
  EXPECT_TRUE(again.from_cache);
  EXPECT_EQ(t->requests(), 1);

  JudgeConfig other = fast_config();
  other.endpoint.model = "another-judge";
  JudgeClient c(other, t, cache);
  c.judge(JudgeTemplate::C3CrrIntention, "Question: q\nModel's Output: x\nyes\" or \"no");
  EXPECT_EQ(t->requests(), 2);
}

TEST(JudgeClient, RetriesUnparseableThenCachesFailure) {
  testsupport::TempDir dir;
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string&) { return HttpResponse{200, chat_body("hmm")}; });
  auto cache = std::make_shared<ContentCache>(dir.path);
  JudgeClient judge(fast_config(), t, cache);
  const auto v = judge.judge(JudgeTemplate::C4SsrRecIntention, "prompt");
  EXPECT_FALSE(v.ok());
  EXPECT_EQ(t->requests(), 2);  // one retry
  EXPECT_EQ(judge.stats().parse_failures, 1);
  EXPECT_TRUE(judge.judge(JudgeTemplate::C4SsrRecIntention, "prompt").from_cache);
  EXPECT_EQ(t->requests(), 2);
}

TEST(JudgeClient, TransportFailureIsNotCached) {
  testsupport::TempDir dir;
  bool up = false;
  auto t = std::make_shared<CountingTransport>([&](const std::string&, const std::string&) -> HttpResponse {
    if (!up) throw TransportError("down");
    return HttpResponse{200, chat_body("no")};
  });
  JudgeClient judge(fast_config(), t, std::make_shared<ContentCache>(dir.path));
  const auto v = judge.judge(JudgeTemplate::C3CrrIntention, "p");
  EXPECT_FALSE(v.ok());
  EXPECT_EQ(judge.stats().transport_failures, 1);
  up = true;
  const auto w = judge.judge(JudgeTemplate::C3CrrIntention, "p");
  EXPECT_TRUE(w.ok());
  EXPECT_FALSE(w.from_cache);
}

TEST(JudgeSample, PerceptionJobs) {
  auto tl = make_timeline(Subtask::OCR, 6, {3, 5});
  const auto tr = make_traj("..a.b.");
  std::vector<std::string> prompts;
  std::mutex mu;
  auto t = std::make_shared<CountingTransport>([&](const std::string&, const std::string& body) {
    std::lock_guard<std::mutex> lock(mu);
    prompts.push_back(prompt_of(body));
    return HttpResponse{200, chat_body(scripted_reply(prompts.back()))};
  });
  JudgeClient judge(fast_config(), t, nullptr);
  const auto j = judge_sample(tl, tr, judge);
  EXPECT_EQ(j.calls.size(), 3u);  // (3,3), (5,5) and one repetition check
  EXPECT_EQ(j.bundle.quality.size(), 2u);
  EXPECT_EQ(j.bundle.repeated, false);
  EXPECT_EQ(j.failed_calls, 0);
}

TEST(JudgeSample, SilentTrajectoryNeedsNoCalls) {
  auto tl = make_timeline(Subtask::EPM, 6, {3});
  JudgeClient judge(fast_config(), reference_match_responder());
  const auto j = judge_sample(tl, make_traj("......"), judge);
  EXPECT_TRUE(j.calls.empty());
  EXPECT_FALSE(j.bundle.repeated);
}

TEST(JudgeSample, ForwardActiveGateAndScale) {
  auto tl = make_timeline(Subtask::CRR, 20, {10}, 2);
  const auto tr = make_traj("a.......xy.z........");  // turn 1 is outside every window
  auto responder = [](JudgeTemplate id, const Slots& s) -> std::string {
    if (id == JudgeTemplate::C3CrrIntention) return s.at("content") == "y" ? "no" : "yes";
    return s.at("prediction") == "x" ? "0.3" : "0.5";
  };
  JudgeClient doubled(fast_config(), responder);
  auto j = judge_sample(tl, tr, doubled);
  EXPECT_EQ(j.bundle.gated_turns, (std::set<int>{10}));
  EXPECT_EQ(j.bundle.quality.at({10, 9}), 0.6);
  EXPECT_EQ(j.bundle.quality.at({10, 12}), 1.0);
  EXPECT_FALSE(j.bundle.quality.contains({10, 10}));
  // 3 gate calls (turns 9, 10, 12) and 2 consistency calls.
  EXPECT_EQ(j.calls.size(), 5u);

  JudgeConfig raw = fast_config();
  raw.far_scale = FarScale::Raw;
  JudgeClient plain(raw, responder);
  j = judge_sample(tl, tr, plain);
  EXPECT_EQ(j.bundle.quality.at({10, 12}), 0.5);
}

TEST(JudgeSample, TransportFailuresCountButStillScore) {
  auto tl = make_timeline(Subtask::OCR, 4, {2});
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string&) -> HttpResponse { throw TransportError("down"); });
  JudgeConfig c = fast_config();
  c.endpoint.retry.max_retries = 0;
  JudgeClient judge(c, t, nullptr);
  const auto j = judge_sample(tl, make_traj(".a.."), judge);
  EXPECT_EQ(j.failed_calls, 2);
  EXPECT_EQ(j.bundle.quality.at({2, 2}), 0.0);
}

TEST(ReferenceMatch, Verdicts) {
  const auto r = reference_match_responder();
  auto c1 = [&](const std::string& answer, const std::string& gt) {
    return parse_verdict(JudgeTemplate::C1Accuracy, r(JudgeTemplate::C1Accuracy, {{"model_answer", answer}, {"ground_truth", gt}})).flag;
  };
  EXPECT_TRUE(c1("The sign says EXIT!", "Exit"));
  EXPECT_FALSE(c1("The sign says exits", "Exit"));
  EXPECT_TRUE(parse_verdict(JudgeTemplate::C2Repetition,
                            r(JudgeTemplate::C2Repetition, {{"context_text", "User: q\nModel: Red.\nModel: red"}}))
                  .flag);
  EXPECT_EQ(parse_verdict(JudgeTemplate::C7FarRec,
                          r(JudgeTemplate::C7FarRec, {{"expected_count", "5"}, {"prediction", "that makes 4"}}))
                .score,
            0.3);
  EXPECT_FALSE(parse_verdict(JudgeTemplate::C3CrrIntention,
                             r(JudgeTemplate::C3CrrIntention, {{"content", "I don't know."}}))
                   .flag);
}

TEST(JudgeClient, OfflineClientRejectsRenderedPrompts) {
  JudgeClient judge(fast_config(), reference_match_responder());
  EXPECT_THROW(judge.judge(JudgeTemplate::C1Accuracy, std::string("prompt")), std::logic_error);
}
