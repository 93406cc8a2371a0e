#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/scoring.hpp"
#include "turnwise/timeline.hpp"

namespace turnwise {

struct LabeledScore {
  std::string subtask;  // subtask code, e.g. "OCR"
  double final_score = 0.0;
};

struct TokenStats {
  long long completion_tokens = 0;
  long long turns = 0;

  double avg_per_turn() const { return turns > 0 ? static_cast<double>(completion_tokens) / static_cast<double>(turns) : 0.0; }
  void add(const Trajectory& traj);
};

// Percent-scale summary in the benchmark's column layout. Means are taken
// over subtasks / modes that have at least one sample.
struct BenchmarkReport {
  std::string model;
  std::map<Subtask, double> subtask_mean;  // x100
  std::map<Subtask, std::size_t> subtask_count;
  std::map<TaskMode, double> mode_mean;
  double overall = 0.0;  // unweighted mean of subtask means
  double avg_tokens_per_turn = 0.0;
  std::optional<double> eta;  // absent when no tokens were generated
};

// Throws InvalidInput for an unknown subtask label or an empty score list.
BenchmarkReport aggregate(const std::vector<LabeledScore>& scores, const TokenStats& tokens, std::string model = {});

nlohmann::json to_json(const BenchmarkReport& report);
nlohmann::json to_json(const SampleScore& score);

// Fixed-width table: 12 subtasks, three mode averages, overall.
std::string format_table(const std::vector<BenchmarkReport>& reports);

}  // namespace turnwise
