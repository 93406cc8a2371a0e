#pragma once

#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "turnwise/timeline.hpp"

namespace turnwise {

// Judge value J(a_t, a*_{t*}) in [0, 1], keyed by (t*, t).
using VerdictMap = std::map<std::pair<int, int>, double>;

// Everything scoring needs from the judge for one sample.
struct VerdictBundle {
  VerdictMap quality;
  // RealTimePerception / BackwardTracing only. Absent when the sample has no
  // response to judge.
  std::optional<bool> repeated;
  // ForwardActive responses that failed the intention gate. They still count
  // toward the answer rate but never match a ground-truth window.
  std::set<int> gated_turns;
};

struct ScoringParams {
  double premature_penalty = 0.1;
};

struct MatchDetail {
  int gt_turn = 0;
  std::optional<int> matched_turn;
  double value = 0.0;
};

struct SampleScore {
  double quality = 0.0;
  AnswerRate rate;
  double multiplier = 1.0;
  bool premature = false;
  double premature_value = 0.0;  // penalty actually subtracted
  double final_score = 0.0;
  std::vector<MatchDetail> matches;

  double r_ans() const { return rate.value(); }
};

// (t*, t) pairs that need a judge value: t responds, |t - t*| <= delta and t
// is not in `ineligible`. Ordered by t* then t.
std::vector<std::pair<int, int>> eligible_pairs(const StreamTimeline& timeline, const Trajectory& traj,
                                                const std::set<int>& ineligible = {});

// Mean over t* of the best judge value inside the matching window; an empty
// window contributes 0. Throws IncompleteVerdicts for a missing eligible pair
// and InvalidInput for values outside [0, 1].
double quality_term(const StreamTimeline& timeline, const Trajectory& traj, const VerdictMap& verdicts,
                    const std::set<int>& ineligible = {}, std::vector<MatchDetail>* detail = nullptr);

// Step-decay verbosity multiplier for ForwardActive samples.
double far_multiplier(double r_ans);
// Exact-arithmetic variant used by score_sample.
double far_multiplier(const AnswerRate& rate);

// 0.5 on a repetition verdict, 1.0 otherwise; a trajectory without responses
// is never repetitive. Throws ModeMismatch for ForwardActive timelines.
double repetition_multiplier(const StreamTimeline& timeline, const Trajectory& traj, bool repetition_verdict);

// Returns `value` iff a ForwardActive trajectory responds strictly before
// min(T*) - delta, else 0. Always 0 for other modes.
double premature_penalty(const StreamTimeline& timeline, const Trajectory& traj, double value = 0.1);

SampleScore score_sample(const StreamTimeline& timeline, const Trajectory& traj, const VerdictBundle& verdicts,
                         const ScoringParams& params = {});

}  // namespace turnwise
