#include "turnwise/runner.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "turnwise/content_cache.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/parallel.hpp"

namespace turnwise {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<BenchmarkSample> benchmark_from_json(const json& doc, const fs::path& base_dir,
                                                 const TimelineDefaults& defaults) {
  if (!doc.is_object()) throw InvalidInput("benchmark manifest must be an object");
  const int version = doc.value("format_version", kFormatVersion);
  if (version != kFormatVersion) throw InvalidInput("unsupported benchmark format_version " + std::to_string(version));
  if (!doc.contains("samples") || !doc.at("samples").is_array()) {
    throw InvalidInput("benchmark manifest needs a 'samples' array");
  }
  std::vector<BenchmarkSample> out;
  std::map<std::string, std::size_t> seen;
  for (const json& entry : doc.at("samples")) {
    if (!entry.is_object() || !entry.contains("timeline")) throw InvalidInput("benchmark sample needs a 'timeline'");
    BenchmarkSample s;
    const json& tl = entry.at("timeline");
    if (tl.is_string()) {
      fs::path p = tl.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      s.timeline = load_timeline(p.string(), defaults);
    } else {
      s.timeline = timeline_from_json(tl, defaults);
    }
    if (!seen.emplace(s.timeline.sample_id, out.size()).second) {
      throw InvalidInput("duplicate sample_id '" + s.timeline.sample_id + "'");
    }
    if (entry.contains("frames")) {
      s.frames = entry.at("frames").get<std::vector<std::string>>();
      if (static_cast<int>(s.frames.size()) != s.timeline.turn_count) {
        throw InvalidInput(s.timeline.sample_id + ": " + std::to_string(s.frames.size()) + " frames for " +
                           std::to_string(s.timeline.turn_count) + " turns");
      }
    } else {
      for (int t = 1; t <= s.timeline.turn_count; ++t) {
        s.frames.push_back("frame://" + s.timeline.sample_id + "/" + std::to_string(t));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<BenchmarkSample> load_benchmark(const fs::path& manifest, const TimelineDefaults& defaults) {
  if (manifest.empty()) throw ConfigError("manifest is not set");
  std::ifstream in(manifest);
  if (!in) throw InvalidInput("cannot open benchmark manifest " + manifest.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw InvalidInput(manifest.string() + ": not valid JSON");
  return benchmark_from_json(doc, manifest.parent_path(), defaults);
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string far_scale_name(FarScale s) { return s == FarScale::Doubled ? "doubled" : "raw"; }

json judge_calls_json(const SampleJudgement& j) {
  json calls = json::array();
  for (const auto& c : j.calls) {
    calls.push_back({{"template", template_label(c.source)},
                     {"gt_turn", c.gt_turn},
                     {"turn", c.turn},
                     {"ok", c.ok},
                     {"value", c.value}});
  }
  return calls;
}

struct SampleWork {
  std::optional<SessionRecord> session;
  std::optional<Trajectory> trajectory;
  std::optional<SampleResult> result;
  std::string error;
};

std::shared_ptr<Transport> or_default(std::shared_ptr<Transport> t) { return t ? t : make_http_transport(); }

}  // namespace

EvalResult run_eval(const RunConfig& config, std::shared_ptr<Transport> backend_transport,
                    std::shared_ptr<Transport> judge_transport, const EvalOptions& options) {
  EvalResult r;
  r.output_dir = config.output_dir;
  const TimelineDefaults defaults{config.fps, config.delta_far};
  std::vector<BenchmarkSample> samples;
  try {
    samples = load_benchmark(config.manifest, defaults);
  } catch (const std::exception& e) {
    r.exit_code = kExitUsage;
    r.message = e.what();
    return r;
  }
  if (samples.empty()) {
    r.exit_code = kExitUsage;
    r.message = "no samples";
    return r;
  }
  fs::create_directories(config.output_dir);

  std::vector<SampleWork> work(samples.size());
  std::unique_ptr<ModelBackend> backend;
  if (options.from_logs) {
    std::map<std::string, Trajectory> logs;
    try {
      logs = load_trajectory_log(options.from_logs->string());
    } catch (const std::exception& e) {
      r.exit_code = kExitUsage;
      r.message = e.what();
      return r;
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto it = logs.find(samples[i].timeline.sample_id);
      if (it == logs.end()) {
        work[i].error = "no trajectory in log";
        continue;
      }
      const auto violations = validate_alignment(samples[i].timeline, it->second);
      if (!violations.empty()) {
        work[i].error = violations.front().message;
        continue;
      }
      work[i].trajectory = it->second;
    }
  } else {
    const bool http = config.backend.kind == BackendConfig::Kind::HttpChat;
    backend = make_backend(config.backend, http ? or_default(backend_transport) : backend_transport);
    SessionOptions so;
    so.max_context_turns = config.backend.max_context_turns;
    parallel_for(samples.size(), config.parallelism, [&](std::size_t i) {
      try {
        work[i].session = run_session(samples[i].timeline, samples[i].frames, *backend, so);
        work[i].trajectory = work[i].session->trajectory;
      } catch (const std::exception& e) {
        work[i].error = e.what();
      }
    });
    for (const auto& w : work) {
      if (!w.session) continue;
      r.backend_turns += w.session->trajectory.length();
      r.failed_turns += w.session->failed_turns;
    }
  }

  auto write_trajectories = [&] {
    std::ostringstream traj, transcripts;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (work[i].trajectory) write_trajectory_jsonl(traj, *work[i].trajectory, &samples[i].timeline);
      if (work[i].session) {
        for (const auto& e : work[i].session->transcript) transcripts << to_json(e, work[i].session->sample_id).dump() << "\n";
      }
    }
    write_file(config.output_dir / "trajectories.jsonl", traj.str());
    if (!options.from_logs) write_file(config.output_dir / "transcripts.jsonl", transcripts.str());
  };

  if (r.backend_turns > 0 && r.failed_turns == r.backend_turns) {
    write_trajectories();
    r.exit_code = kExitUnreachable;
    r.message = "backend unreachable: every turn failed (" + config.backend.endpoint.url + ")";
    return r;
  }

  std::unique_ptr<JudgeClient> judge;
  if (config.judge.kind == JudgeSettings::Kind::Http) {
    auto cache = std::make_shared<ContentCache>(config.cache_dir);
    judge = std::make_unique<JudgeClient>(config.judge.config, or_default(judge_transport), cache);
  } else {
    judge = std::make_unique<JudgeClient>(config.judge.config, reference_match_responder());
  }

  ScoringParams params;
  params.premature_penalty = config.p_early;
  parallel_for(samples.size(), config.parallelism, [&](std::size_t i) {
    SampleWork& w = work[i];
    if (!w.trajectory) return;
    try {
      SampleResult res;
      res.sample_id = samples[i].timeline.sample_id;
      res.subtask = samples[i].timeline.ground_truth.subtask;
      res.judgement = judge_sample(samples[i].timeline, *w.trajectory, *judge);
      res.score = score_sample(samples[i].timeline, *w.trajectory, res.judgement.bundle, params);
      res.failed_turns = w.session ? w.session->failed_turns : 0;
      w.result = std::move(res);
    } catch (const std::exception& e) {
      w.error = e.what();
    }
  });

  std::vector<LabeledScore> labeled;
  TokenStats tokens;
  json failed = json::array();
  std::ostringstream sample_lines;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SampleWork& w = work[i];
    if (!w.result) {
      failed.push_back({{"sample_id", samples[i].timeline.sample_id}, {"error", w.error}});
      continue;
    }
    const SampleResult& s = *w.result;
    r.judge_calls += static_cast<long>(s.judgement.calls.size());
    r.failed_judge_calls += s.judgement.failed_calls;
    labeled.push_back({std::string(to_string(s.subtask)), s.score.final_score});
    tokens.add(*w.trajectory);
    sample_lines << json{{"sample_id", s.sample_id},
                         {"subtask", to_string(s.subtask)},
                         {"mode", to_string(mode_of(s.subtask))},
                         {"score", to_json(s.score)},
                         {"judge_calls", judge_calls_json(s.judgement)},
                         {"failed_judge_calls", s.judgement.failed_calls},
                         {"failed_turns", s.failed_turns}}
                        .dump()
                 << "\n";
    r.samples.push_back(s);
  }
  r.judge_stats = judge->stats();
  write_trajectories();
  write_file(config.output_dir / "samples.jsonl", sample_lines.str());

  json settings{{"fps", config.fps},
                {"delta_far", config.delta_far},
                {"p_early", config.p_early},
                {"tokens_per_frame", config.tokens_per_frame},
                {"far_scale", far_scale_name(config.judge.config.far_scale)},
                {"judge", config.judge.kind == JudgeSettings::Kind::Http ? config.judge.config.endpoint.model
                                                                         : std::string("reference-match")},
                {"source", options.from_logs ? "logs" : "sessions"}};
  json report_doc{{"model", config.model_name},
                  {"settings", settings},
                  {"scored_samples", r.samples.size()},
                  {"failed_samples", failed}};
  if (!labeled.empty()) {
    r.report = aggregate(labeled, tokens, config.model_name);
    report_doc["report"] = to_json(*r.report);
    write_file(config.output_dir / "report.txt", format_table({*r.report}));
  } else {
    report_doc["report"] = nullptr;
  }
  const std::string report_text = report_doc.dump(2) + "\n";
  write_file(config.output_dir / "report.json", report_text);

  if (r.judge_calls > 0 && r.failed_judge_calls == r.judge_calls && r.judge_stats.transport_failures > 0) {
    r.exit_code = kExitUnreachable;
    r.message = "judge unreachable: every judge call failed (" + config.judge.config.endpoint.url + ")";
  } else if (labeled.empty()) {
    r.exit_code = kExitPartial;
    r.message = "every sample failed";
  } else if (!failed.empty() || r.failed_turns > 0 || r.failed_judge_calls > 0) {
    r.exit_code = kExitPartial;
    r.message = std::to_string(failed.size()) + " failed samples, " + std::to_string(r.failed_turns) +
                " failed turns, " + std::to_string(r.failed_judge_calls) + " failed judge calls";
  }

  const json effective = to_json(config);
  json hashes{{"report.json", sha256_hex(report_text)}, {"samples.jsonl", sha256_hex(sample_lines.str())}};
  json inputs{{"manifest", file_sha256(config.manifest)}};
  if (options.from_logs) inputs["logs"] = file_sha256(*options.from_logs);
  json run_manifest{{"config", effective},
                    {"config_sha256", sha256_hex(effective.dump())},
                    {"inputs", inputs},
                    {"outputs", hashes},
                    {"backend", backend ? backend->fingerprint() : json(nullptr)},
                    {"stats",
                     {{"backend_turns", r.backend_turns},
                      {"failed_turns", r.failed_turns},
                      {"judge_calls", r.judge_calls},
                      {"failed_judge_calls", r.failed_judge_calls},
                      {"judge_requests", r.judge_stats.requests},
                      {"judge_cache_hits", r.judge_stats.cache_hits},
                      {"judge_transport_failures", r.judge_stats.transport_failures},
                      {"judge_parse_failures", r.judge_stats.parse_failures}}},
                    {"exit_code", r.exit_code}};
  write_file(config.output_dir / "run_manifest.json", run_manifest.dump(2) + "\n");
  return r;
}

SynthResult run_synth(const RunConfig& config, std::shared_ptr<Transport> transport, const SynthOptions& options) {
  SynthResult r;
  if (config.synth.videos.empty()) {
    r.exit_code = kExitUsage;
    r.message = "synth.videos is not set";
    return r;
  }
  evo::IterationPlan plan;
  try {
    plan.videos = evo::load_videos(config.synth.videos);
  } catch (const std::exception& e) {
    r.exit_code = kExitUsage;
    r.message = e.what();
    return r;
  }
  plan.options.max_questions = config.synth.max_questions;
  plan.options.segment_seconds = config.synth.segment_seconds;
  plan.options.caption_cap = config.synth.caption_cap;
  plan.options.fps = config.fps;
  plan.iterations = config.synth.iterations;
  plan.out_dir = config.output_dir;
  plan.parallelism = config.parallelism;
  plan.max_records = config.synth.max_records;

  int start = 0;
  if (options.resume) {
    try {
      start = evo::load_manifest(*options.resume).iteration + 1;
    } catch (const std::exception& e) {
      r.exit_code = kExitUsage;
      r.message = e.what();
      return r;
    }
    if (start >= plan.iterations) {
      r.message = "all " + std::to_string(plan.iterations) + " iterations are already done";
      r.report.next_iteration = start;
      return r;
    }
  }

  std::map<int, EndpointConfig> endpoints;
  for (std::size_t i = 0; i < config.synth.generator.endpoints.size(); ++i) {
    endpoints[static_cast<int>(i)] = config.synth.generator.endpoints[i];
  }
  for (std::size_t j = 0; j < options.endpoints.size(); ++j) endpoints[start + static_cast<int>(j)] = options.endpoints[j];

  const bool http = config.synth.generator.kind == GeneratorSettings::Kind::Http || !options.endpoints.empty();
  evo::BackendFactory factory;
  if (http) {
    auto cache = std::make_shared<ContentCache>(config.cache_dir);
    auto net = or_default(transport);
    factory = [&, cache, net](int i) -> std::shared_ptr<evo::GeneratorBackend> {
      auto it = endpoints.find(i);
      if (it == endpoints.end()) return nullptr;
      return std::make_shared<evo::HttpGenerator>(it->second, net, cache, config.parallelism,
                                                  config.synth.generator.max_tokens);
    };
  } else {
    std::shared_ptr<evo::GeneratorBackend> scripted = evo::ScriptedGenerator::from_json(config.synth.generator.program);
    factory = [scripted](int) { return scripted; };
  }

  fs::create_directories(plan.out_dir);
  r.report = evo::run_iterations(plan, factory, start);
  const auto& rep = r.report;
  const std::string resume_hint = (plan.out_dir / "handoff.json").string();
  if (rep.paused && rep.videos_total > 0 && rep.videos_failed_transport == rep.videos_total) {
    r.exit_code = kExitUnreachable;
    r.message = "generator unreachable during iteration " + std::to_string(rep.next_iteration) +
                "; rerun to resume" + (rep.next_iteration > 0 ? " with --resume " + resume_hint : std::string());
  } else if (rep.paused) {
    r.exit_code = kExitUnreachable;
    r.message = "no generator endpoint for iteration " + std::to_string(rep.next_iteration) + "; rerun with --resume " +
                resume_hint + " --backend <url>";
  } else if (rep.videos_failed_transport > 0) {
    r.exit_code = kExitPartial;
    r.message = std::to_string(rep.videos_failed_transport) + " of " + std::to_string(rep.videos_total) +
                " videos hit transport failures in the last iteration";
  }
  return r;
}

AuditResult run_audit(const RunConfig& config, std::shared_ptr<Transport> transport) {
  AuditResult r;
  if (config.audit.dataset.empty()) {
    r.exit_code = kExitUsage;
    r.message = "audit.dataset is not set";
    return r;
  }
  std::vector<evo::TrainingConversation> dataset;
  try {
    dataset = evo::load_dataset(config.audit.dataset);
  } catch (const std::exception& e) {
    r.exit_code = kExitUsage;
    r.message = e.what();
    return r;
  }
  std::shared_ptr<evo::GeneratorBackend> judge;
  if (config.audit.llm_checks) {
    const auto& eps = config.synth.generator.endpoints;
    if (config.synth.generator.kind != GeneratorSettings::Kind::Http || eps.empty()) {
      r.exit_code = kExitUsage;
      r.message = "audit.llm_checks needs an http generator endpoint";
      return r;
    }
    judge = std::make_shared<evo::HttpGenerator>(eps.front(), or_default(transport),
                                                 std::make_shared<ContentCache>(config.cache_dir), config.parallelism,
                                                 config.synth.generator.max_tokens);
  }
  r.report = evo::audit(dataset, config.audit.samples, config.seed, judge.get());
  fs::create_directories(config.output_dir);
  write_file(config.output_dir / "audit.json", evo::to_json(r.report).dump(2) + "\n");
  return r;
}

}  // namespace turnwise
