#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/config.hpp"
#include "turnwise/evo.hpp"
#include "turnwise/http.hpp"
#include "turnwise/judge.hpp"
#include "turnwise/report.hpp"
#include "turnwise/session.hpp"
#include "turnwise/timeline_io.hpp"

namespace turnwise {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitUnreachable = 2, kExitPartial = 3 };

struct BenchmarkSample {
  StreamTimeline timeline;
  std::vector<std::string> frames;  // one ref per turn
};

// Manifest document:
//   {"format_version": 1,
//    "samples": [{"timeline": "<path>" | {...inline...}, "frames": ["<ref>", ...]}]}
// Timeline paths resolve against the manifest's directory. Samples without
// frames get placeholder refs "frame://<sample_id>/<t>".
std::vector<BenchmarkSample> load_benchmark(const std::filesystem::path& manifest, const TimelineDefaults& defaults);
std::vector<BenchmarkSample> benchmark_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                                 const TimelineDefaults& defaults);

struct EvalOptions {
  std::optional<std::filesystem::path> from_logs;  // trajectory JSONL; no backend calls are made
};

struct SampleResult {
  std::string sample_id;
  Subtask subtask = Subtask::OCR;
  SampleScore score;
  SampleJudgement judgement;
  int failed_turns = 0;
};

struct EvalResult {
  int exit_code = kExitOk;
  std::string message;
  std::optional<BenchmarkReport> report;
  std::vector<SampleResult> samples;
  long backend_turns = 0;
  long failed_turns = 0;
  long judge_calls = 0;
  long failed_judge_calls = 0;
  JudgeStats judge_stats;
  std::filesystem::path output_dir;
};

// Runs sessions (or reads logs), judges, scores and aggregates, writing under
// config.output_dir: report.json, report.txt, samples.jsonl,
// trajectories.jsonl, transcripts.jsonl (sessions only) and run_manifest.json.
// Transports are injected so tests can count or fake requests; they are only
// used by http backends and judges. Per-sample failures never abort the run.
EvalResult run_eval(const RunConfig& config, std::shared_ptr<Transport> backend_transport,
                    std::shared_ptr<Transport> judge_transport, const EvalOptions& options = {});

struct SynthOptions {
  std::optional<std::filesystem::path> resume;  // handoff manifest of the last finished iteration
  // Endpoints supplied on the command line. The first serves the starting
  // iteration, the next one the iteration after it, and so on.
  std::vector<EndpointConfig> endpoints;
};

struct SynthResult {
  int exit_code = kExitOk;
  std::string message;
  evo::IterationReport report;
};

SynthResult run_synth(const RunConfig& config, std::shared_ptr<Transport> transport, const SynthOptions& options = {});

struct AuditResult {
  int exit_code = kExitOk;
  std::string message;
  evo::AuditReport report;
};

// Writes audit.json under config.output_dir. Model-assisted dimensions use
// the first generator endpoint (or the scripted program) when
// audit.llm_checks is set.
AuditResult run_audit(const RunConfig& config, std::shared_ptr<Transport> transport);

}  // namespace turnwise
