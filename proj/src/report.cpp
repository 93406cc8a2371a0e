#include "turnwise/report.hpp"

#include <cstdio>
#include <sstream>

#include "turnwise/analysis.hpp"
#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;

void TokenStats::add(const Trajectory& traj) {
  for (const auto& a : traj.turns) completion_tokens += a.completion_tokens;
  turns += traj.length();
}

BenchmarkReport aggregate(const std::vector<LabeledScore>& scores, const TokenStats& tokens, std::string model) {
  if (scores.empty()) throw InvalidInput("aggregate: no samples");
  std::map<Subtask, double> sums;
  BenchmarkReport r;
  r.model = std::move(model);
  for (const auto& s : scores) {
    const auto subtask = try_parse_subtask(s.subtask);
    if (!subtask) throw InvalidInput("aggregate: invalid subtask label '" + s.subtask + "'");
    sums[*subtask] += s.final_score;
    ++r.subtask_count[*subtask];
  }
  for (const auto& [subtask, sum] : sums) {
    r.subtask_mean[subtask] = 100.0 * sum / static_cast<double>(r.subtask_count[subtask]);
  }

  std::map<TaskMode, std::pair<double, int>> per_mode;
  double overall_sum = 0.0;
  for (const auto& [subtask, mean] : r.subtask_mean) {
    auto& acc = per_mode[mode_of(subtask)];
    acc.first += mean;
    ++acc.second;
    overall_sum += mean;
  }
  for (const auto& [mode, acc] : per_mode) r.mode_mean[mode] = acc.first / acc.second;
  r.overall = overall_sum / static_cast<double>(r.subtask_mean.size());

  r.avg_tokens_per_turn = tokens.avg_per_turn();
  if (r.avg_tokens_per_turn > 0.0) r.eta = analysis::per_token_score(r.overall, r.avg_tokens_per_turn);
  return r;
}

json to_json(const BenchmarkReport& r) {
  json subtasks = json::object();
  for (const auto& [s, mean] : r.subtask_mean) {
    subtasks[std::string(to_string(s))] = {{"mean", mean}, {"count", r.subtask_count.at(s)}};
  }
  json modes = json::object();
  for (const auto& [m, mean] : r.mode_mean) modes[std::string(to_string(m))] = mean;
  json out{{"model", r.model},
           {"subtasks", subtasks},
           {"modes", modes},
           {"overall", r.overall},
           {"avg_tokens_per_turn", r.avg_tokens_per_turn}};
  out["per_token_score"] = r.eta ? json(*r.eta) : json(nullptr);
  return out;
}

json to_json(const SampleScore& s) {
  json matches = json::array();
  for (const auto& m : s.matches) {
    matches.push_back({{"gt_turn", m.gt_turn},
                       {"matched_turn", m.matched_turn ? json(*m.matched_turn) : json(nullptr)},
                       {"value", m.value}});
  }
  return json{{"quality", s.quality},
              {"responses", s.rate.responses},
              {"turns", s.rate.turns},
              {"r_ans", s.r_ans()},
              {"multiplier", s.multiplier},
              {"premature", s.premature},
              {"premature_penalty", s.premature_value},
              {"final", s.final_score},
              {"matches", matches}};
}

namespace {

std::string cell(const std::optional<double>& v) {
  char buf[16];
  if (v) {
    std::snprintf(buf, sizeof buf, "%6.1f", *v);
  } else {
    std::snprintf(buf, sizeof buf, "%6s", "-");
  }
  return buf;
}

template <typename Map, typename Key>
std::optional<double> lookup(const Map& m, Key k) {
  auto it = m.find(k);
  return it == m.end() ? std::nullopt : std::optional<double>(it->second);
}

}  // namespace

std::string format_table(const std::vector<BenchmarkReport>& reports) {
  std::size_t name_width = 5;
  for (const auto& r : reports) name_width = std::max(name_width, r.model.size());

  std::ostringstream out;
  auto pad = [&](const std::string& s) { return s + std::string(name_width - s.size(), ' '); };
  auto header = [&](std::initializer_list<const char*> cols) {
    for (const char* c : cols) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%6s", c);
      out << buf;
    }
  };

  out << pad("Model") << " |";
  header({"OCR", "ACR", "ATR", "STU", "FPD", "OJR", "Avg."});
  out << " |";
  header({"EPM", "ASI", "HLD", "Avg."});
  out << " |";
  header({"REC", "SSR", "CRR", "Avg."});
  out << " |";
  header({"All"});
  out << '\n';
  out << std::string(name_width, '-') << "-+" << std::string(42, '-') << "-+" << std::string(24, '-') << "-+"
      << std::string(24, '-') << "-+" << std::string(6, '-') << '\n';

  for (const auto& r : reports) {
    out << pad(r.model) << " |";
    for (Subtask s : {Subtask::OCR, Subtask::ACR, Subtask::ATR, Subtask::STU, Subtask::FPD, Subtask::OJR}) {
      out << cell(lookup(r.subtask_mean, s));
    }
    out << cell(lookup(r.mode_mean, TaskMode::RealTimePerception)) << " |";
    for (Subtask s : {Subtask::EPM, Subtask::ASI, Subtask::HLD}) out << cell(lookup(r.subtask_mean, s));
    out << cell(lookup(r.mode_mean, TaskMode::BackwardTracing)) << " |";
    for (Subtask s : {Subtask::REC, Subtask::SSR, Subtask::CRR}) out << cell(lookup(r.subtask_mean, s));
    out << cell(lookup(r.mode_mean, TaskMode::ForwardActive)) << " |";
    out << cell(r.overall) << '\n';
  }
  return out.str();
}

}  // namespace turnwise
