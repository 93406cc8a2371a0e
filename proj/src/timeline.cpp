#include "turnwise/timeline.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

#include "turnwise/errors.hpp"

namespace turnwise {

namespace {

struct SubtaskInfo {
  Subtask subtask;
  std::string_view code;
  std::string_view name;
  TaskMode mode;
};

constexpr std::array<SubtaskInfo, 12> kSubtaskTable{{
    {Subtask::OCR, "OCR", "Optical Character Recognition", TaskMode::RealTimePerception},
    {Subtask::ACR, "ACR", "Action Recognition", TaskMode::RealTimePerception},
    {Subtask::ATR, "ATR", "Attribute Recognition", TaskMode::RealTimePerception},
    {Subtask::STU, "STU", "Spatial Understanding", TaskMode::RealTimePerception},
    {Subtask::FPD, "FPD", "Future Prediction", TaskMode::RealTimePerception},
    {Subtask::OJR, "OJR", "Object Recognition", TaskMode::RealTimePerception},
    {Subtask::EPM, "EPM", "Episodic Memory", TaskMode::BackwardTracing},
    {Subtask::ASI, "ASI", "Action Sequence Identification", TaskMode::BackwardTracing},
    {Subtask::HLD, "HLD", "Hallucination Detection", TaskMode::BackwardTracing},
    {Subtask::REC, "REC", "Repetition Event Count", TaskMode::ForwardActive},
    {Subtask::SSR, "SSR", "Sequential Steps Recognition", TaskMode::ForwardActive},
    {Subtask::CRR, "CRR", "Clues Reveal Responding", TaskMode::ForwardActive},
}};

const SubtaskInfo& info(Subtask s) { return kSubtaskTable[static_cast<std::size_t>(s)]; }

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::RealTimePerception:
      return "RealTimePerception";
    case TaskMode::BackwardTracing:
      return "BackwardTracing";
    case TaskMode::ForwardActive:
      return "ForwardActive";
  }
  return "?";
}

std::string_view to_string(Subtask subtask) { return info(subtask).code; }
std::string_view full_name(Subtask subtask) { return info(subtask).name; }
TaskMode mode_of(Subtask subtask) { return info(subtask).mode; }

TaskMode parse_mode(std::string_view text) {
  for (TaskMode m : kAllModes) {
    if (iequals(text, to_string(m))) return m;
  }
  throw InvalidInput("unknown task mode '" + std::string(text) + "'");
}

std::optional<Subtask> try_parse_subtask(std::string_view text) {
  for (const auto& row : kSubtaskTable) {
    if (iequals(text, row.code)) return row.subtask;
  }
  return std::nullopt;
}

Subtask parse_subtask(std::string_view text) {
  if (auto s = try_parse_subtask(text)) return *s;
  throw InvalidInput("unknown subtask code '" + std::string(text) + "'");
}

void StreamTimeline::validate() const {
  if (turn_count < 1) throw InvalidInput(sample_id + ": turn_count must be >= 1");
  if (!(fps > 0.0)) throw InvalidInput(sample_id + ": fps must be positive");
  for (const auto& [turn, text] : queries) {
    if (turn < 1 || turn > turn_count) {
      throw InvalidInput(sample_id + ": query turn " + std::to_string(turn) + " outside [1, " +
                         std::to_string(turn_count) + "]");
    }
  }
  const auto& gt = ground_truth;
  if (mode_of(gt.subtask) != gt.mode) {
    throw InvalidInput(sample_id + ": subtask " + std::string(to_string(gt.subtask)) + " does not belong to mode " +
                       std::string(to_string(gt.mode)));
  }
  if (gt.gt_turns.empty()) throw InvalidInput(sample_id + ": ground-truth turn set is empty");
  for (int t : gt.gt_turns) {
    if (t < 1 || t > turn_count) {
      throw InvalidInput(sample_id + ": ground-truth turn " + std::to_string(t) + " outside [1, " +
                         std::to_string(turn_count) + "]");
    }
    if (!gt.references.contains(t)) {
      throw InvalidInput(sample_id + ": ground-truth turn " + std::to_string(t) + " has no reference");
    }
  }
  if (gt.delta < 0) throw InvalidInput(sample_id + ": delta must be nonnegative");
  if (gt.mode != TaskMode::ForwardActive && gt.delta != 0) {
    throw InvalidInput(sample_id + ": delta must be 0 outside ForwardActive mode");
  }
}

std::optional<std::string> StreamTimeline::latest_query_at(int turn) const {
  auto it = queries.upper_bound(turn);
  if (it == queries.begin()) return std::nullopt;
  return std::prev(it)->second;
}

std::string trim(std::string_view text) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

int whitespace_token_count(std::string_view text) {
  int count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

Action Action::silent(int completion_tokens) {
  if (completion_tokens < 0) throw InvalidInput("completion_tokens must be nonnegative");
  return Action{ActionKind::Silent, {}, completion_tokens};
}

Action Action::respond(std::string text, int completion_tokens) {
  if (trim(text).empty()) throw InvalidInput("Respond action requires non-blank text");
  if (completion_tokens < 0) throw InvalidInput("completion_tokens must be nonnegative");
  return Action{ActionKind::Respond, std::move(text), completion_tokens};
}

Action normalize_output(std::string_view raw, std::optional<int> reported_tokens) {
  const int tokens = reported_tokens.value_or(whitespace_token_count(raw));
  const std::string trimmed = trim(raw);
  if (trimmed.empty() || iequals(trimmed, kSilentMarker)) return Action::silent(tokens);
  return Action::respond(std::string(raw), tokens);
}

AnswerRate answer_rate(const Trajectory& traj) {
  if (traj.turns.empty()) throw InvalidInput("answer_rate: empty trajectory");
  const auto responses = std::count_if(traj.turns.begin(), traj.turns.end(), [](const Action& a) { return a.is_respond(); });
  return AnswerRate{static_cast<long>(responses), static_cast<long>(traj.turns.size())};
}

std::vector<int> response_turns(const Trajectory& traj) {
  std::vector<int> out;
  for (std::size_t i = 0; i < traj.turns.size(); ++i) {
    if (traj.turns[i].is_respond()) out.push_back(static_cast<int>(i) + 1);
  }
  return out;
}

std::vector<AlignmentViolation> validate_alignment(const StreamTimeline& timeline, const Trajectory& traj) {
  std::vector<AlignmentViolation> out;
  if (traj.length() != timeline.turn_count) {
    out.push_back({AlignmentViolation::Kind::Length, 0,
                   "trajectory has " + std::to_string(traj.length()) + " turns, timeline expects " +
                       std::to_string(timeline.turn_count)});
  }
  for (int t = 1; t <= traj.length(); ++t) {
    const Action& a = traj.turns[static_cast<std::size_t>(t - 1)];
    if (a.is_respond() && trim(a.text).empty()) {
      out.push_back({AlignmentViolation::Kind::EmptyResponse, t, "empty response at turn " + std::to_string(t)});
    }
  }
  return out;
}

}  // namespace turnwise
