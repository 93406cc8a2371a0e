#include "turnwise/timeline_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;

namespace {

void check_version(const json& doc, const std::string& what) {
  if (!doc.is_object()) throw InvalidInput(what + ": expected a JSON object");
  if (!doc.contains("format_version") || doc.at("format_version") != kFormatVersion) {
    throw InvalidInput(what + ": missing or unsupported format_version (expected 1)");
  }
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto k : allowed) ok = ok || it.key() == k;
    if (!ok) throw InvalidInput(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw InvalidInput(where + ": missing '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidInput(where + ": bad '" + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const StreamTimeline& tl) {
  json queries = json::array();
  for (const auto& [turn, text] : tl.queries) queries.push_back({{"turn", turn}, {"text", text}});

  const auto& gt = tl.ground_truth;
  json refs = json::array();
  for (const auto& [turn, ref] : gt.references) {
    json r{{"turn", turn}, {"answer", ref.answer}};
    if (ref.expected_count) r["expected_count"] = *ref.expected_count;
    if (ref.expected_stage) r["expected_stage"] = *ref.expected_stage;
    refs.push_back(std::move(r));
  }
  json g{{"mode", to_string(gt.mode)},
         {"subtask", to_string(gt.subtask)},
         {"gt_turns", gt.gt_turns},
         {"references", refs},
         {"delta", gt.delta}};
  if (!gt.options.empty()) g["options"] = gt.options;
  if (!gt.question.empty()) g["question"] = gt.question;
  if (!gt.activity.empty()) g["activity"] = gt.activity;

  return json{{"format_version", kFormatVersion}, {"sample_id", tl.sample_id}, {"fps", tl.fps},
              {"turn_count", tl.turn_count},      {"queries", queries},          {"ground_truth", g}};
}

StreamTimeline timeline_from_json(const json& doc, const TimelineDefaults& defaults) {
  check_version(doc, "timeline");
  reject_unknown(doc, {"format_version", "sample_id", "fps", "turn_count", "queries", "ground_truth"}, "timeline");
  StreamTimeline tl;
  tl.sample_id = required<std::string>(doc, "sample_id", "timeline");
  const std::string where = "timeline " + tl.sample_id;
  tl.fps = doc.value("fps", defaults.fps);
  tl.turn_count = required<int>(doc, "turn_count", where);
  if (doc.contains("queries")) {
    for (const auto& q : doc.at("queries")) {
      reject_unknown(q, {"turn", "text"}, where + " query");
      const int turn = required<int>(q, "turn", where);
      if (!tl.queries.emplace(turn, required<std::string>(q, "text", where)).second) {
        throw InvalidInput(where + ": duplicate query at turn " + std::to_string(turn));
      }
    }
  }

  if (!doc.contains("ground_truth")) throw InvalidInput(where + ": missing 'ground_truth'");
  const json& g = doc.at("ground_truth");
  reject_unknown(g, {"mode", "subtask", "gt_turns", "references", "delta", "options", "question", "activity"},
                 where + " ground_truth");
  auto& gt = tl.ground_truth;
  gt.subtask = parse_subtask(required<std::string>(g, "subtask", where));
  gt.mode = g.contains("mode") ? parse_mode(g.at("mode").get<std::string>()) : mode_of(gt.subtask);
  for (int t : required<std::vector<int>>(g, "gt_turns", where)) gt.gt_turns.insert(t);
  for (const auto& r : required<json>(g, "references", where)) {
    reject_unknown(r, {"turn", "answer", "expected_count", "expected_stage"}, where + " reference");
    Reference ref;
    ref.answer = required<std::string>(r, "answer", where);
    if (r.contains("expected_count")) ref.expected_count = r.at("expected_count").get<int>();
    if (r.contains("expected_stage")) ref.expected_stage = r.at("expected_stage").get<std::string>();
    gt.references[required<int>(r, "turn", where)] = std::move(ref);
  }
  if (g.contains("delta")) {
    gt.delta = g.at("delta").get<int>();
  } else {
    gt.delta = gt.mode == TaskMode::ForwardActive ? defaults.far_delta : 0;
  }
  gt.options = g.value("options", std::vector<std::string>{});
  gt.question = g.value("question", std::string{});
  gt.activity = g.value("activity", std::string{});
  tl.validate();
  return tl;
}

StreamTimeline load_timeline(const std::string& path, const TimelineDefaults& defaults) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open timeline " + path);
  try {
    return timeline_from_json(json::parse(in), defaults);
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

std::vector<json> to_jsonl_records(const Trajectory& traj, const StreamTimeline* timeline) {
  std::vector<json> out;
  out.reserve(traj.turns.size());
  const bool with_meta = !traj.meta.empty();
  for (std::size_t i = 0; i < traj.turns.size(); ++i) {
    const int turn = static_cast<int>(i) + 1;
    const Action& a = traj.turns[i];
    json rec{{"format_version", kFormatVersion},
             {"sample_id", traj.sample_id},
             {"turn", turn},
             {"action", a.is_respond() ? "respond" : "silent"},
             {"completion_tokens", a.completion_tokens}};
    if (timeline) {
      if (auto q = timeline->queries.find(turn); q != timeline->queries.end()) rec["query"] = q->second;
    }
    if (a.is_respond()) rec["text"] = a.text;
    if (with_meta && i < traj.meta.size()) {
      const TurnMeta& m = traj.meta[i];
      rec["backend_id"] = m.backend_id;
      rec["failed"] = m.failed;
      if (m.wall_time_ms) rec["wall_time_ms"] = *m.wall_time_ms;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, const StreamTimeline* timeline) {
  for (const auto& rec : to_jsonl_records(traj, timeline)) out << rec.dump() << '\n';
}

std::map<std::string, Trajectory> read_trajectory_jsonl(std::istream& in) {
  struct Row {
    Action action;
    std::optional<TurnMeta> meta;
  };
  std::map<std::string, std::map<int, Row>> grouped;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "trajectory log line " + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    check_version(rec, where);
    reject_unknown(rec,
                   {"format_version", "sample_id", "turn", "query", "action", "text", "completion_tokens",
                    "wall_time_ms", "backend_id", "failed"},
                   where);
    const auto sample = required<std::string>(rec, "sample_id", where);
    const int turn = required<int>(rec, "turn", where);
    const auto kind = required<std::string>(rec, "action", where);
    const int tokens = rec.value("completion_tokens", 0);
    Row row;
    if (kind == "silent") {
      if (rec.contains("text")) throw InvalidInput(where + ": silent action carries text");
      row.action = Action::silent(tokens);
    } else if (kind == "respond") {
      row.action = Action::respond(required<std::string>(rec, "text", where), tokens);
    } else {
      throw InvalidInput(where + ": action must be 'silent' or 'respond'");
    }
    if (rec.contains("backend_id")) {
      TurnMeta m;
      m.backend_id = rec.at("backend_id").get<std::string>();
      m.failed = rec.value("failed", false);
      if (rec.contains("wall_time_ms")) m.wall_time_ms = rec.at("wall_time_ms").get<double>();
      row.meta = std::move(m);
    }
    if (!grouped[sample].emplace(turn, std::move(row)).second) {
      throw InvalidInput(where + ": duplicate turn " + std::to_string(turn) + " for " + sample);
    }
  }

  std::map<std::string, Trajectory> out;
  for (auto& [sample, rows] : grouped) {
    Trajectory traj;
    traj.sample_id = sample;
    int expected = 1;
    bool any_meta = false;
    for (auto& [turn, row] : rows) {
      if (turn != expected) {
        throw InvalidInput("trajectory " + sample + ": turns not contiguous at " + std::to_string(expected));
      }
      ++expected;
      any_meta = any_meta || row.meta.has_value();
    }
    for (auto& [turn, row] : rows) {
      traj.turns.push_back(std::move(row.action));
      if (any_meta) traj.meta.push_back(row.meta.value_or(TurnMeta{}));
    }
    out.emplace(sample, std::move(traj));
  }
  return out;
}

std::map<std::string, Trajectory> load_trajectory_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open trajectory log " + path);
  return read_trajectory_jsonl(in);
}

}  // namespace turnwise
