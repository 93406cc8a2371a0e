#include "turnwise/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;
namespace fs = std::filesystem;

ReportFormat parse_report_format(const std::string& text) {
  if (text == "json") return ReportFormat::Json;
  if (text == "table") return ReportFormat::Table;
  if (text == "both") return ReportFormat::Both;
  throw ConfigError("report_format must be one of json, table, both");
}

std::string_view to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::Json: return "json";
    case ReportFormat::Table: return "table";
    case ReportFormat::Both: return "both";
  }
  return "";
}

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path(key) + " has the wrong type");
    }
  }

  template <typename T>
  void read(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    T value{};
    read(key, value);
    out = value;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key().c_str()) + "'");
    }
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string interpolate_secret(const std::string& value, const std::string& field) {
  std::string out;
  std::size_t i = 0;
  while (i < value.size()) {
    const std::size_t open = value.find("${", i);
    if (open == std::string::npos) {
      out += value.substr(i);
      break;
    }
    const std::size_t close = value.find('}', open);
    if (close == std::string::npos) throw ConfigError(field + ": unterminated ${...}");
    out += value.substr(i, open - i);
    const std::string var = value.substr(open + 2, close - open - 2);
    const char* env = std::getenv(var.c_str());
    if (!env) throw ConfigError(field + ": environment variable " + var + " is not set");
    out += env;
    i = close + 1;
  }
  return out;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

// A scripted program is either inline JSON or a path to a JSON file.
json load_program(const json& value, const fs::path& base, const std::string& field) {
  if (!value.is_string()) return value;
  const fs::path path = resolve(base, value.get<std::string>());
  std::ifstream in(path);
  if (!in) throw ConfigError(field + ": cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(field + ": " + path.string() + " is not valid JSON");
  return doc;
}

void read_endpoint(Fields& f, EndpointConfig& e) {
  long timeout_ms = e.timeout.count();
  long backoff_ms = e.retry.initial_backoff.count();
  f.read("url", e.url);
  f.read("model", e.model);
  f.read("api_key", e.api_key);
  f.read("timeout_ms", timeout_ms);
  f.read("max_retries", e.retry.max_retries);
  f.read("backoff_ms", backoff_ms);
  e.api_key = interpolate_secret(e.api_key, f.path("api_key"));
  e.timeout = std::chrono::milliseconds(timeout_ms);
  e.retry.initial_backoff = std::chrono::milliseconds(backoff_ms);
  if (timeout_ms <= 0) throw ConfigError(f.path("timeout_ms") + " must be positive");
  if (e.retry.max_retries < 0) throw ConfigError(f.path("max_retries") + " must be >= 0");
  if (backoff_ms < 0) throw ConfigError(f.path("backoff_ms") + " must be >= 0");
}

json endpoint_json(const EndpointConfig& e) {
  return json{{"url", e.url},
              {"model", e.model},
              {"timeout_ms", e.timeout.count()},
              {"max_retries", e.retry.max_retries},
              {"backoff_ms", e.retry.initial_backoff.count()}};
}

}  // namespace

void RunConfig::validate() const {
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  if (delta_far < 0) throw ConfigError("delta_far must be >= 0");
  if (!(p_early >= 0.0 && p_early <= 1.0)) throw ConfigError("p_early must be in [0, 1]");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (judge.config.concurrency < 1) throw ConfigError("judge.concurrency must be >= 1");
  if (judge.config.max_parse_retries < 0) throw ConfigError("judge.max_parse_retries must be >= 0");
  if (judge.kind == JudgeSettings::Kind::Http) {
    if (judge.config.endpoint.url.empty()) throw ConfigError("judge.url is required for http judges");
    if (judge.config.endpoint.model.empty()) throw ConfigError("judge.model is required for http judges");
  }
  if (synth.iterations < 1) throw ConfigError("synth.iterations must be >= 1");
  if (synth.max_questions < 1) throw ConfigError("synth.max_questions must be >= 1");
  if (!(synth.segment_seconds > 0.0)) throw ConfigError("synth.segment_seconds must be positive");
  if (synth.caption_cap < 1) throw ConfigError("synth.caption_cap must be >= 1");
  if (synth.generator.kind == GeneratorSettings::Kind::Http) {
    for (std::size_t i = 0; i < synth.generator.endpoints.size(); ++i) {
      const auto& e = synth.generator.endpoints[i];
      if (e.url.empty() || e.model.empty()) {
        throw ConfigError("synth.generator.endpoints[" + std::to_string(i) + "] needs url and model");
      }
    }
  }
  try {
    backend.validate();
  } catch (const ConfigError& e) {
    // tokens_per_frame is a top-level setting copied into the backend.
    const std::string msg = e.what();
    if (msg.rfind("backend.tokens_per_frame", 0) == 0) throw ConfigError("tokens_per_frame must be 128 or 768");
    throw;
  }
}

RunConfig parse_config(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  Fields top(doc, "");
  std::string manifest, cache_dir = c.cache_dir.string(), output_dir = c.output_dir.string(), format = "json";
  top.read("manifest", manifest);
  top.read("model_name", c.model_name);
  top.read("fps", c.fps);
  top.read("delta_far", c.delta_far);
  top.read("p_early", c.p_early);
  top.read("tokens_per_frame", c.tokens_per_frame);
  top.read("seed", c.seed);
  top.read("parallelism", c.parallelism);
  top.read("cache_dir", cache_dir);
  top.read("output_dir", output_dir);
  top.read("report_format", format);
  c.manifest = resolve(base_dir, manifest);
  c.cache_dir = resolve(base_dir, cache_dir);
  c.output_dir = resolve(base_dir, output_dir);
  c.report_format = parse_report_format(format);

  if (const json* b = top.child("backend")) {
    Fields f(*b, "backend");
    std::string kind = "scripted";
    f.read("kind", kind);
    if (kind == "http-chat") {
      c.backend.kind = BackendConfig::Kind::HttpChat;
    } else if (kind == "scripted") {
      c.backend.kind = BackendConfig::Kind::Scripted;
    } else {
      throw ConfigError("backend.kind must be http-chat or scripted");
    }
    read_endpoint(f, c.backend.endpoint);
    f.read("max_tokens", c.backend.max_tokens);
    f.read("temperature", c.backend.temperature);
    f.read("max_context_turns", c.backend.max_context_turns);
    f.read("system_prompt", c.backend.system_prompt);
    f.read("extra_body", c.backend.extra_body);
    f.read("program", c.backend.program);
    c.backend.program = load_program(c.backend.program, base_dir, "backend.program");
    f.finish();
  }
  c.backend.tokens_per_frame = c.tokens_per_frame;

  if (const json* j = top.child("judge")) {
    Fields f(*j, "judge");
    std::string kind = "reference-match", scale = "doubled";
    f.read("kind", kind);
    if (kind == "http") {
      c.judge.kind = JudgeSettings::Kind::Http;
    } else if (kind == "reference-match") {
      c.judge.kind = JudgeSettings::Kind::ReferenceMatch;
    } else {
      throw ConfigError("judge.kind must be http or reference-match");
    }
    read_endpoint(f, c.judge.config.endpoint);
    f.read("concurrency", c.judge.config.concurrency);
    f.read("max_parse_retries", c.judge.config.max_parse_retries);
    f.read("max_tokens", c.judge.config.max_tokens);
    f.read("far_scale", scale);
    if (scale == "doubled") {
      c.judge.config.far_scale = FarScale::Doubled;
    } else if (scale == "raw") {
      c.judge.config.far_scale = FarScale::Raw;
    } else {
      throw ConfigError("judge.far_scale must be doubled or raw");
    }
    f.finish();
  }

  if (const json* s = top.child("synth")) {
    Fields f(*s, "synth");
    std::string videos;
    f.read("videos", videos);
    c.synth.videos = resolve(base_dir, videos);
    f.read("iterations", c.synth.iterations);
    f.read("max_questions", c.synth.max_questions);
    f.read("segment_seconds", c.synth.segment_seconds);
    f.read("caption_cap", c.synth.caption_cap);
    f.read("max_records", c.synth.max_records);
    if (const json* g = f.child("generator")) {
      Fields gf(*g, "synth.generator");
      std::string kind = "scripted";
      gf.read("kind", kind);
      if (kind == "http") {
        c.synth.generator.kind = GeneratorSettings::Kind::Http;
      } else if (kind == "scripted") {
        c.synth.generator.kind = GeneratorSettings::Kind::Scripted;
      } else {
        throw ConfigError("synth.generator.kind must be http or scripted");
      }
      gf.read("program", c.synth.generator.program);
      c.synth.generator.program = load_program(c.synth.generator.program, base_dir, "synth.generator.program");
      gf.read("max_tokens", c.synth.generator.max_tokens);
      if (const json* eps = gf.child("endpoints")) {
        if (!eps->is_array()) throw ConfigError("synth.generator.endpoints must be an array");
        for (std::size_t i = 0; i < eps->size(); ++i) {
          Fields ef((*eps)[i], "synth.generator.endpoints[" + std::to_string(i) + "]");
          EndpointConfig e;
          read_endpoint(ef, e);
          ef.finish();
          c.synth.generator.endpoints.push_back(std::move(e));
        }
      }
      gf.finish();
    }
    f.finish();
  }

  if (const json* a = top.child("audit")) {
    Fields f(*a, "audit");
    std::string dataset;
    f.read("dataset", dataset);
    c.audit.dataset = resolve(base_dir, dataset);
    f.read("samples", c.audit.samples);
    f.read("llm_checks", c.audit.llm_checks);
    f.finish();
  }

  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  const fs::path base = fs::absolute(path).parent_path();
  return parse_config(doc, base);
}

json to_json(const RunConfig& c) {
  json backend = endpoint_json(c.backend.endpoint);
  backend["kind"] = c.backend.kind == BackendConfig::Kind::HttpChat ? "http-chat" : "scripted";
  backend["fingerprint"] = c.backend.fingerprint();
  backend["max_context_turns"] = c.backend.max_context_turns;

  json judge = endpoint_json(c.judge.config.endpoint);
  judge["kind"] = c.judge.kind == JudgeSettings::Kind::Http ? "http" : "reference-match";
  judge["concurrency"] = c.judge.config.concurrency;
  judge["far_scale"] = c.judge.config.far_scale == FarScale::Doubled ? "doubled" : "raw";
  judge["max_parse_retries"] = c.judge.config.max_parse_retries;
  judge["max_tokens"] = c.judge.config.max_tokens;

  json endpoints = json::array();
  for (const auto& e : c.synth.generator.endpoints) endpoints.push_back(endpoint_json(e));
  json synth{{"videos", c.synth.videos.string()},
             {"iterations", c.synth.iterations},
             {"max_questions", c.synth.max_questions},
             {"segment_seconds", c.synth.segment_seconds},
             {"caption_cap", c.synth.caption_cap},
             {"max_records", c.synth.max_records ? json(*c.synth.max_records) : json(nullptr)},
             {"generator",
              {{"kind", c.synth.generator.kind == GeneratorSettings::Kind::Http ? "http" : "scripted"},
               {"endpoints", endpoints},
               {"program", c.synth.generator.program},
               {"max_tokens", c.synth.generator.max_tokens}}}};

  return json{{"manifest", c.manifest.string()},
              {"model_name", c.model_name},
              {"fps", c.fps},
              {"delta_far", c.delta_far},
              {"p_early", c.p_early},
              {"tokens_per_frame", c.tokens_per_frame},
              {"seed", c.seed},
              {"parallelism", c.parallelism},
              {"cache_dir", c.cache_dir.string()},
              {"output_dir", c.output_dir.string()},
              {"report_format", to_string(c.report_format)},
              {"backend", backend},
              {"judge", judge},
              {"synth", synth},
              {"audit", {{"dataset", c.audit.dataset.string()}, {"samples", c.audit.samples}, {"llm_checks", c.audit.llm_checks}}}};
}

}  // namespace turnwise
