#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace turnwise {

// Canonical assistant marker for a Silent action.
inline constexpr std::string_view kSilentMarker = "<silent>";

enum class TaskMode { RealTimePerception, BackwardTracing, ForwardActive };

enum class Subtask { OCR, ACR, ATR, STU, FPD, OJR, EPM, ASI, HLD, REC, SSR, CRR };

inline constexpr Subtask kAllSubtasks[] = {Subtask::OCR, Subtask::ACR, Subtask::ATR, Subtask::STU,
                                           Subtask::FPD, Subtask::OJR, Subtask::EPM, Subtask::ASI,
                                           Subtask::HLD, Subtask::REC, Subtask::SSR, Subtask::CRR};

inline constexpr TaskMode kAllModes[] = {TaskMode::RealTimePerception, TaskMode::BackwardTracing,
                                         TaskMode::ForwardActive};

std::string_view to_string(TaskMode mode);
std::string_view to_string(Subtask subtask);
// Human-readable subtask name, e.g. "Optical Character Recognition".
std::string_view full_name(Subtask subtask);
TaskMode mode_of(Subtask subtask);

// Both accept the canonical names above; throw InvalidInput otherwise.
TaskMode parse_mode(std::string_view text);
Subtask parse_subtask(std::string_view text);
std::optional<Subtask> try_parse_subtask(std::string_view text);

// Default matching tolerance for ForwardActive samples that omit delta.
inline constexpr int kDefaultFarDelta = 5;

struct Reference {
  std::string answer;
  std::optional<int> expected_count;         // REC
  std::optional<std::string> expected_stage;  // SSR

  bool operator==(const Reference&) const = default;
};

struct GroundTruthSpec {
  TaskMode mode = TaskMode::RealTimePerception;
  Subtask subtask = Subtask::OCR;
  std::set<int> gt_turns;                // T*, 1-based turn indices
  std::map<int, Reference> references;   // keyed by t*
  int delta = 0;
  std::vector<std::string> options;      // multiple-choice options, may be empty
  std::string question;                  // benchmark question shown to judges
  std::string activity;                  // REC: what is being counted

  bool operator==(const GroundTruthSpec&) const = default;
};

struct StreamTimeline {
  std::string sample_id;
  double fps = 0.5;
  int turn_count = 1;
  std::map<int, std::string> queries;  // turn -> q_t; absent turns have no query
  GroundTruthSpec ground_truth;

  // Throws InvalidInput describing the first violated invariant.
  void validate() const;

  // Query text issued at or before `turn`, latest first. Used when the
  // ground truth does not carry an explicit question.
  std::optional<std::string> latest_query_at(int turn) const;

  bool operator==(const StreamTimeline&) const = default;
};

enum class ActionKind { Silent, Respond };

struct Action {
  ActionKind kind = ActionKind::Silent;
  std::string text;  // empty for Silent
  int completion_tokens = 0;

  static Action silent(int completion_tokens = 0);
  // Throws InvalidInput when text is blank after trimming.
  static Action respond(std::string text, int completion_tokens);

  bool is_respond() const { return kind == ActionKind::Respond; }
  bool operator==(const Action&) const = default;
};

// Maps raw model output to an Action: blank output or the silent marker
// (case-insensitive, after trimming) is Silent; anything else is a Respond
// with the verbatim text. Missing usage falls back to a whitespace-token count.
Action normalize_output(std::string_view raw, std::optional<int> reported_tokens = std::nullopt);

int whitespace_token_count(std::string_view text);
std::string trim(std::string_view text);

struct TurnMeta {
  std::optional<double> wall_time_ms;
  std::string backend_id;
  bool failed = false;

  bool operator==(const TurnMeta&) const = default;
};

struct Trajectory {
  std::string sample_id;
  std::vector<Action> turns;
  std::vector<TurnMeta> meta;  // empty, or one entry per turn

  int length() const { return static_cast<int>(turns.size()); }
  bool operator==(const Trajectory&) const = default;
};

// |T| / T kept as an exact fraction.
struct AnswerRate {
  long responses = 0;
  long turns = 1;

  double value() const { return static_cast<double>(responses) / static_cast<double>(turns); }
};

AnswerRate answer_rate(const Trajectory& traj);
std::vector<int> response_turns(const Trajectory& traj);

struct AlignmentViolation {
  enum class Kind { Length, EmptyResponse };
  Kind kind;
  int turn = 0;  // 1-based; 0 when not turn-specific
  std::string message;
};

std::vector<AlignmentViolation> validate_alignment(const StreamTimeline& timeline, const Trajectory& traj);

}  // namespace turnwise
