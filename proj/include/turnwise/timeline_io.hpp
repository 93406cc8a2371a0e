#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/timeline.hpp"

namespace turnwise {

inline constexpr int kFormatVersion = 1;

// Timeline spec document: one JSON object per sample.
nlohmann::json to_json(const StreamTimeline& timeline);
// Values used when a timeline document omits them.
struct TimelineDefaults {
  double fps = 0.5;
  int far_delta = kDefaultFarDelta;
};

// Fills omitted fps / ForwardActive delta from `defaults` and validates.
// Throws InvalidInput.
StreamTimeline timeline_from_json(const nlohmann::json& doc, const TimelineDefaults& defaults = {});
StreamTimeline load_timeline(const std::string& path, const TimelineDefaults& defaults = {});

// Trajectory log: JSON-Lines, one record per turn. When `timeline` is given,
// the query issued at each turn is written alongside the action.
std::vector<nlohmann::json> to_jsonl_records(const Trajectory& traj, const StreamTimeline* timeline = nullptr);
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, const StreamTimeline* timeline = nullptr);

// Groups records by sample_id and orders by turn. Turns must be contiguous
// from 1; throws InvalidInput otherwise.
std::map<std::string, Trajectory> read_trajectory_jsonl(std::istream& in);
std::map<std::string, Trajectory> load_trajectory_log(const std::string& path);

}  // namespace turnwise
