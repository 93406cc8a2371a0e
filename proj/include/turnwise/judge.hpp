#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/model_call.hpp"
#include "turnwise/prompts.hpp"
#include "turnwise/scoring.hpp"
#include "turnwise/timeline.hpp"

namespace turnwise {

enum class VerdictKind { Correctness, Repetition, Intention, Consistency };
enum class ParseStatus { Ok, Failed };

VerdictKind kind_of(JudgeTemplate id);

struct JudgeVerdict {
  JudgeTemplate source = JudgeTemplate::C1Accuracy;
  VerdictKind kind = VerdictKind::Correctness;
  ParseStatus status = ParseStatus::Failed;
  bool flag = false;   // correct / is_repeated / intention yes
  double score = 0.0;  // consistency score on the rubric scale [0, 0.5]
  std::string reasoning;
  std::string raw;
  bool from_cache = false;

  bool ok() const { return status == ParseStatus::Ok; }
  // Boolean verdict with failures mapped to the conservative side: not
  // correct, not repeated, no intention.
  bool conservative_flag() const { return ok() && flag; }
  double conservative_score() const { return ok() ? score : 0.0; }
};

// Rubric points a consistency judge may award.
const std::vector<double>& rubric_points(JudgeTemplate id);

// Total: every input yields a verdict, with status Failed when nothing
// usable was found. Correctness/repetition read the first JSON object that
// carries the expected boolean key; intention reads the first standalone
// yes/no word; consistency reads the first number, clamps it to [0, 0.5]
// and snaps it to the nearest rubric point (ties go to the lower point).
JudgeVerdict parse_verdict(JudgeTemplate id, std::string_view raw);

enum class FarScale { Doubled, Raw };

struct JudgeConfig {
  EndpointConfig endpoint;
  std::size_t concurrency = 8;
  FarScale far_scale = FarScale::Doubled;
  int max_parse_retries = 1;
  int max_tokens = 256;
};

struct JudgeStats {
  long cache_hits = 0;
  long requests = 0;
  long transport_failures = 0;
  long parse_failures = 0;
};

// Offline judge: produces a raw reply from the template and its slots
// without any model call.
using JudgeResponder = std::function<std::string(JudgeTemplate, const Slots&)>;

// Deterministic judge that compares answers with references by normalized
// substring and number matching. Useful for smoke runs; it is not a
// substitute for a model judge.
JudgeResponder reference_match_responder();

// Thread-safe. Results are cached on (judge model id, rendered prompt).
class JudgeClient {
 public:
  JudgeClient(JudgeConfig config, std::shared_ptr<Transport> transport, std::shared_ptr<ContentCache> cache,
              const PromptLibrary& prompts = PromptLibrary::builtin());
  // Offline client: every verdict comes from `responder`; nothing is cached.
  JudgeClient(JudgeConfig config, JudgeResponder responder, const PromptLibrary& prompts = PromptLibrary::builtin());

  std::string render(JudgeTemplate id, const Slots& slots) const { return prompts_.render(id, slots); }

  // Never throws for endpoint trouble: a transport failure yields a Failed
  // verdict that is not cached, so a later run can fill it in. Unparseable
  // replies are retried `max_parse_retries` times, then cached as Failed.
  JudgeVerdict judge(JudgeTemplate id, const std::string& prompt);
  JudgeVerdict judge(JudgeTemplate id, const Slots& slots);

  const JudgeConfig& config() const { return config_; }
  JudgeStats stats() const;

 private:
  JudgeConfig config_;
  const PromptLibrary& prompts_;
  std::unique_ptr<CachedChat> chat_;
  JudgeResponder responder_;
  std::atomic<long> parse_failures_{0};
};

struct JudgeCallRecord {
  JudgeTemplate source;
  int gt_turn = 0;  // 0 for per-sample calls
  int turn = 0;
  bool ok = false;
  bool from_cache = false;
  double value = 0.0;  // value handed to scoring; flag as 0/1 for booleans
};

struct SampleJudgement {
  VerdictBundle bundle;
  std::vector<JudgeCallRecord> calls;
  int failed_calls = 0;
};

// Slot builders shared by judge_sample and the golden-file tests.
Slots accuracy_slots(const StreamTimeline& timeline, int gt_turn, const Action& action, int turn);
Slots repetition_slots(const StreamTimeline& timeline, const Trajectory& traj, std::size_t max_turns = 20);
JudgeTemplate intention_template(Subtask subtask);
JudgeTemplate consistency_template(Subtask subtask);
Slots intention_slots(const StreamTimeline& timeline, const Action& action, int turn);
Slots consistency_slots(const StreamTimeline& timeline, int gt_turn, const Action& action, int turn);

// RealTimePerception / BackwardTracing: one correctness call per eligible
// (t*, t) pair and one repetition call when the trajectory responds at all.
// ForwardActive: an intention call per response turn that falls inside some
// matching window, then a consistency call per eligible pair whose turn
// passed the gate. Calls for one sample run concurrently.
SampleJudgement judge_sample(const StreamTimeline& timeline, const Trajectory& traj, JudgeClient& client);

}  // namespace turnwise
