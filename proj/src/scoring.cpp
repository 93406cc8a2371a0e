#include "turnwise/scoring.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

#include "turnwise/errors.hpp"

namespace turnwise {

namespace {

// max(1 - 0.2 * k, 0.2) for k = 0..5, stored exactly rather than computed.
constexpr std::array<double, 6> kFarSteps{1.0, 0.8, 0.6, 0.4, 0.2, 0.2};

}  // namespace

std::vector<std::pair<int, int>> eligible_pairs(const StreamTimeline& timeline, const Trajectory& traj,
                                                const std::set<int>& ineligible) {
  std::vector<std::pair<int, int>> out;
  const auto responses = response_turns(traj);
  const int delta = timeline.ground_truth.delta;
  for (int gt : timeline.ground_truth.gt_turns) {
    for (int t : responses) {
      if (std::abs(t - gt) <= delta && !ineligible.contains(t)) out.emplace_back(gt, t);
    }
  }
  return out;
}

double quality_term(const StreamTimeline& timeline, const Trajectory& traj, const VerdictMap& verdicts,
                    const std::set<int>& ineligible, std::vector<MatchDetail>* detail) {
  const auto& gt_turns = timeline.ground_truth.gt_turns;
  if (gt_turns.empty()) throw InvalidInput("quality_term: empty ground-truth turn set");
  const auto responses = response_turns(traj);
  const int delta = timeline.ground_truth.delta;

  double sum = 0.0;
  for (int gt : gt_turns) {
    MatchDetail m{gt, std::nullopt, 0.0};
    for (int t : responses) {
      if (std::abs(t - gt) > delta || ineligible.contains(t)) continue;
      auto it = verdicts.find({gt, t});
      if (it == verdicts.end()) throw IncompleteVerdicts(gt, t);
      const double j = it->second;
      if (!(j >= 0.0 && j <= 1.0)) throw InvalidInput("judge value outside [0, 1]");
      if (!m.matched_turn || j > m.value) {
        m.matched_turn = t;
        m.value = j;
      }
    }
    sum += m.value;
    if (detail) detail->push_back(m);
  }
  return sum / static_cast<double>(gt_turns.size());
}

double far_multiplier(double r_ans) {
  if (!(r_ans >= 0.0 && r_ans <= 1.0)) throw InvalidInput("far_multiplier: r_ans outside [0, 1]");
  if (r_ans < 0.4) return 1.0;
  const auto steps = static_cast<std::size_t>(std::floor(5.0 * r_ans));
  return kFarSteps[std::min<std::size_t>(steps, 5)];
}

double far_multiplier(const AnswerRate& rate) {
  if (rate.turns <= 0 || rate.responses < 0 || rate.responses > rate.turns) {
    throw InvalidInput("far_multiplier: invalid answer rate");
  }
  if (5 * rate.responses < 2 * rate.turns) return 1.0;
  const auto steps = static_cast<std::size_t>((5 * rate.responses) / rate.turns);
  return kFarSteps[std::min<std::size_t>(steps, 5)];
}

double repetition_multiplier(const StreamTimeline& timeline, const Trajectory& traj, bool repetition_verdict) {
  if (timeline.ground_truth.mode == TaskMode::ForwardActive) {
    throw ModeMismatch("repetition multiplier does not apply to ForwardActive samples");
  }
  const bool any_response = std::any_of(traj.turns.begin(), traj.turns.end(), [](const Action& a) { return a.is_respond(); });
  return (any_response && repetition_verdict) ? 0.5 : 1.0;
}

double premature_penalty(const StreamTimeline& timeline, const Trajectory& traj, double value) {
  const auto& gt = timeline.ground_truth;
  if (gt.mode != TaskMode::ForwardActive || gt.gt_turns.empty()) return 0.0;
  const int open = *gt.gt_turns.begin() - gt.delta;
  const auto responses = response_turns(traj);
  return (!responses.empty() && responses.front() < open) ? value : 0.0;
}

SampleScore score_sample(const StreamTimeline& timeline, const Trajectory& traj, const VerdictBundle& verdicts,
                         const ScoringParams& params) {
  SampleScore s;
  s.quality = quality_term(timeline, traj, verdicts.quality, verdicts.gated_turns, &s.matches);
  s.rate = answer_rate(traj);
  if (timeline.ground_truth.mode == TaskMode::ForwardActive) {
    s.multiplier = far_multiplier(s.rate);
  } else {
    if (s.rate.responses > 0 && !verdicts.repeated) {
      throw IncompleteVerdicts("sample " + timeline.sample_id + " has responses but no repetition verdict");
    }
    s.multiplier = repetition_multiplier(timeline, traj, verdicts.repeated.value_or(false));
  }
  s.premature_value = premature_penalty(timeline, traj, params.premature_penalty);
  s.premature = s.premature_value > 0.0;
  s.final_score = std::max(0.0, s.quality * s.multiplier - s.premature_value);
  return s;
}

}  // namespace turnwise
