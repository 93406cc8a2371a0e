#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/http.hpp"
#include "turnwise/judge.hpp"
#include "turnwise/session.hpp"

namespace turnwise {

enum class ReportFormat { Json, Table, Both };
ReportFormat parse_report_format(const std::string& text);  // throws ConfigError
std::string_view to_string(ReportFormat f);

struct JudgeSettings {
  enum class Kind { Http, ReferenceMatch };
  Kind kind = Kind::ReferenceMatch;
  JudgeConfig config;
};

struct GeneratorSettings {
  enum class Kind { Http, Scripted };
  Kind kind = Kind::Scripted;
  std::vector<EndpointConfig> endpoints;  // endpoint i serves iteration i
  nlohmann::json program = nlohmann::json::object();
  int max_tokens = 1024;
};

struct SynthSettings {
  std::filesystem::path videos;
  int iterations = 1;
  std::size_t max_questions = 5;
  double segment_seconds = 30.0;
  std::size_t caption_cap = 40;
  std::optional<std::size_t> max_records;
  GeneratorSettings generator;
};

struct AuditSettings {
  std::filesystem::path dataset;
  std::size_t samples = 50;
  bool llm_checks = false;  // run the model-assisted dimensions via the generator
};

struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::filesystem::path manifest;
  std::string model_name = "model";
  BackendConfig backend;
  JudgeSettings judge;
  double fps = 0.5;
  int delta_far = 5;
  double p_early = 0.1;
  int tokens_per_frame = 768;
  std::uint64_t seed = 42;
  std::size_t parallelism = 4;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path output_dir = "out";
  ReportFormat report_format = ReportFormat::Json;
  SynthSettings synth;
  AuditSettings audit;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Strict JSON: unknown keys are errors, defaults fill omitted fields and
// relative paths resolve against `base_dir`. "${NAME}" in an api_key field is
// replaced by the environment variable NAME; no other field is interpolated.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

// Effective settings with secrets removed; hashed into run manifests.
nlohmann::json to_json(const RunConfig& config);

}  // namespace turnwise
