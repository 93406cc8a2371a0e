#include "turnwise/session.hpp"

#include <algorithm>
#include <sstream>

#include "turnwise/content_cache.hpp"
#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;

TurnContext::TurnContext(const StreamTimeline& timeline, const std::vector<std::string>& frames,
                         const std::vector<Action>& history, int turn)
    : timeline_(timeline), frames_(frames), history_(history), turn_(turn) {}

void TurnContext::check(int i, int limit, const char* what) const {
  if (i < 1) throw InvalidInput(std::string(what) + " index must be >= 1");
  if (i > limit) {
    throw CausalityViolation(std::string(what) + " " + std::to_string(i) + " requested at turn " +
                             std::to_string(turn_));
  }
}

const std::string& TurnContext::frame(int i) const {
  check(i, turn_, "frame");
  return frames_[static_cast<std::size_t>(i - 1)];
}

std::optional<std::string> TurnContext::query(int i) const {
  check(i, turn_, "query");
  auto it = timeline_.queries.find(i);
  if (it == timeline_.queries.end()) return std::nullopt;
  return it->second;
}

const Action& TurnContext::action(int i) const {
  check(i, turn_ - 1, "action");
  return history_[static_cast<std::size_t>(i - 1)];
}

std::vector<std::string> TurnContext::visible_frames() const {
  return {frames_.begin(), frames_.begin() + turn_};
}

std::map<int, std::string> TurnContext::visible_queries() const {
  return {timeline_.queries.begin(), timeline_.queries.upper_bound(turn_)};
}

std::vector<Action> TurnContext::history() const {
  return {history_.begin(), history_.begin() + (turn_ - 1)};
}

// --- scripted ---------------------------------------------------------------

ScriptedBackend::ScriptedBackend(Program program, std::string id, json fingerprint)
    : program_(std::move(program)), id_(std::move(id)), fingerprint_(std::move(fingerprint)) {
  if (fingerprint_.is_null()) fingerprint_ = json{{"kind", "scripted"}, {"id", id_}};
}

namespace {

std::string substitute(std::string text, const std::string& key, const std::string& value) {
  for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

struct RuleSet {
  std::string fallback = std::string(kSilentMarker);
  std::map<int, std::string> at_turns;
  std::optional<std::string> on_query;
  std::optional<std::string> frame_contains;
  std::string frame_text;
  bool frame_once = true;
};

RuleSet parse_rules(const json& doc, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + ": expected an object");
  RuleSet r;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "default") {
        r.fallback = it->get<std::string>();
      } else if (key == "at_turns") {
        for (auto t = it->begin(); t != it->end(); ++t) r.at_turns[std::stoi(t.key())] = t->get<std::string>();
      } else if (key == "on_query") {
        r.on_query = it->get<std::string>();
      } else if (key == "on_frame") {
        for (auto f = it->begin(); f != it->end(); ++f) {
          if (f.key() == "contains") {
            r.frame_contains = f->get<std::string>();
          } else if (f.key() == "text") {
            r.frame_text = f->get<std::string>();
          } else if (f.key() == "once") {
            r.frame_once = f->get<bool>();
          } else {
            throw ConfigError(where + ".on_frame: unknown key '" + f.key() + "'");
          }
        }
        if (!r.frame_contains) throw ConfigError(where + ".on_frame: missing 'contains'");
      } else if (key != "samples") {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError(where + "." + key + ": " + e.what());
    } catch (const std::invalid_argument&) {
      throw ConfigError(where + "." + key + ": turn keys must be integers");
    }
  }
  return r;
}

std::string apply_rules(const RuleSet& r, const TurnContext& ctx) {
  const int t = ctx.turn();
  if (auto it = r.at_turns.find(t); it != r.at_turns.end()) return it->second;
  if (r.on_query) {
    if (auto q = ctx.current_query()) {
      return substitute(substitute(*r.on_query, "{query}", *q), "{turn}", std::to_string(t));
    }
  }
  if (r.frame_contains) {
    auto hit = [&](int i) { return ctx.frame(i).find(*r.frame_contains) != std::string::npos; };
    if (hit(t)) {
      bool earlier = false;
      for (int i = 1; r.frame_once && i < t && !earlier; ++i) earlier = hit(i);
      if (!earlier) return substitute(r.frame_text, "{turn}", std::to_string(t));
    }
  }
  return r.fallback;
}

}  // namespace

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const json& program) {
  const RuleSet base = parse_rules(program, "program");
  std::map<std::string, RuleSet> per_sample;
  if (program.contains("samples")) {
    const json& samples = program.at("samples");
    if (!samples.is_object()) throw ConfigError("program.samples: expected an object");
    for (auto it = samples.begin(); it != samples.end(); ++it) {
      if (it->contains("samples")) throw ConfigError("program.samples." + it.key() + ": nesting is not allowed");
      per_sample.emplace(it.key(), parse_rules(*it, "program.samples." + it.key()));
    }
  }
  auto fn = [base, per_sample](const TurnContext& ctx) {
    auto it = per_sample.find(ctx.sample_id());
    return apply_rules(it == per_sample.end() ? base : it->second, ctx);
  };
  json fp{{"kind", "scripted"}, {"program_sha256", sha256_hex(program.dump())}};
  return std::make_unique<ScriptedBackend>(fn, "scripted", fp);
}

BackendReply ScriptedBackend::step(const TurnContext& ctx) {
  BackendReply reply;
  json request{{"frames", ctx.turn()}};
  if (auto q = ctx.current_query()) request["query"] = *q;
  reply.request = std::move(request);
  reply.raw = program_(ctx);
  return reply;
}

// --- http -------------------------------------------------------------------

void BackendConfig::validate() const {
  if (std::find(std::begin(kTokenBudgets), std::end(kTokenBudgets), tokens_per_frame) == std::end(kTokenBudgets)) {
    throw ConfigError("backend.tokens_per_frame must be 128 or 768");
  }
  if (max_tokens <= 0) throw ConfigError("backend.max_tokens must be positive");
  if (max_context_turns <= 0) throw ConfigError("backend.max_context_turns must be positive");
  if (kind == Kind::HttpChat) {
    if (endpoint.url.empty()) throw ConfigError("backend.url is required for http-chat backends");
    if (endpoint.model.empty()) throw ConfigError("backend.model is required for http-chat backends");
    if (endpoint.timeout.count() <= 0) throw ConfigError("backend.timeout_ms must be positive");
  }
  if (!extra_body.is_object()) throw ConfigError("backend.extra_body must be an object");
}

json BackendConfig::fingerprint() const {
  if (kind == Kind::Scripted) {
    return json{{"kind", "scripted"}, {"program_sha256", sha256_hex(program.dump())},
                {"tokens_per_frame", tokens_per_frame}};
  }
  return json{{"kind", "http-chat"},
              {"url", endpoint.url},
              {"model", endpoint.model},
              {"tokens_per_frame", tokens_per_frame},
              {"max_tokens", max_tokens},
              {"temperature", temperature},
              {"system_prompt_sha256", sha256_hex(system_prompt)},
              {"extra_body", extra_body}};
}

HttpChatBackend::HttpChatBackend(BackendConfig config, std::shared_ptr<Transport> transport,
                                 const PromptLibrary& prompts)
    : config_(std::move(config)),
      system_template_(config_.system_prompt.empty() ? prompts.raw("s0_stream_system") : config_.system_prompt),
      client_(config_.endpoint, std::move(transport)) {
  config_.validate();
}

namespace {

std::string format_fps(double fps) {
  std::ostringstream s;
  s << fps;
  return s.str();
}

json user_content(const std::string& frame, const std::optional<std::string>& query) {
  json parts = json::array();
  parts.push_back({{"type", "image_url"}, {"image_url", {{"url", frame}}}});
  if (query) parts.push_back({{"type", "text"}, {"text", *query}});
  return parts;
}

}  // namespace

ChatRequest HttpChatBackend::build_request(const TurnContext& ctx) const {
  ChatRequest req;
  req.model = config_.endpoint.model;
  req.max_tokens = config_.max_tokens;
  req.temperature = config_.temperature;
  req.extra = config_.extra_body;
  req.messages.push_back({"system", render_template(system_template_, {{"fps", format_fps(ctx.fps())}})});
  for (int i = 1; i <= ctx.turn(); ++i) {
    req.messages.push_back({"user", user_content(ctx.frame(i), ctx.query(i))});
    if (i < ctx.turn()) {
      const Action& a = ctx.action(i);
      req.messages.push_back({"assistant", a.is_respond() ? a.text : std::string(kSilentMarker)});
    }
  }
  return req;
}

BackendReply HttpChatBackend::step(const TurnContext& ctx) {
  const ChatRequest req = build_request(ctx);
  BackendReply reply;
  json request{{"frames", ctx.turn()}, {"messages", req.messages.size()}, {"frame", ctx.current_frame()}};
  if (auto q = ctx.current_query()) request["query"] = *q;
  reply.request = std::move(request);
  ChatResponse res = client_.complete(req);
  reply.raw = std::move(res.content);
  reply.completion_tokens = res.completion_tokens;
  reply.attempts = res.attempts;
  return reply;
}

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& config, std::shared_ptr<Transport> transport) {
  config.validate();
  if (config.kind == BackendConfig::Kind::HttpChat) {
    return std::make_unique<HttpChatBackend>(config, std::move(transport));
  }
  return ScriptedBackend::from_json(config.program);
}

// --- driver -----------------------------------------------------------------

SessionRecord run_session(const StreamTimeline& timeline, const std::vector<std::string>& frames,
                          ModelBackend& backend, const SessionOptions& options) {
  timeline.validate();
  if (static_cast<int>(frames.size()) != timeline.turn_count) {
    throw InvalidInput(timeline.sample_id + ": expected " + std::to_string(timeline.turn_count) + " frames, got " +
                       std::to_string(frames.size()));
  }
  if (options.max_context_turns > 0 && timeline.turn_count > options.max_context_turns) {
    throw ContextOverflow(timeline.sample_id + ": " + std::to_string(timeline.turn_count) +
                          " turns exceed the context cap of " + std::to_string(options.max_context_turns));
  }

  SessionRecord rec;
  rec.sample_id = timeline.sample_id;
  rec.fingerprint = backend.fingerprint();
  rec.trajectory.sample_id = timeline.sample_id;
  std::vector<Action>& actions = rec.trajectory.turns;
  actions.reserve(frames.size());
  const std::string backend_id = backend.id();

  for (int t = 1; t <= timeline.turn_count; ++t) {
    TurnContext ctx(timeline, frames, actions, t);
    TranscriptEntry entry;
    entry.turn = t;
    TurnMeta meta;
    meta.backend_id = backend_id;
    try {
      BackendReply reply = backend.step(ctx);
      entry.request = std::move(reply.request);
      entry.raw_output = reply.raw;
      entry.attempts = reply.attempts;
      actions.push_back(normalize_output(reply.raw, reply.completion_tokens));
    } catch (const CausalityViolation& e) {
      ++rec.causality_violations;
      entry.error = e.what();
      entry.failed = true;
    } catch (const TransportError& e) {
      entry.error = e.what();
      entry.failed = true;
    }
    if (entry.failed) {
      ++rec.failed_turns;
      meta.failed = true;
      actions.push_back(Action::silent());
    }
    rec.trajectory.meta.push_back(std::move(meta));
    rec.transcript.push_back(std::move(entry));
  }
  return rec;
}

json to_json(const TranscriptEntry& e, const std::string& sample_id) {
  json out{{"format_version", 1}, {"sample_id", sample_id}, {"turn", e.turn},
           {"request", e.request},  {"raw_output", e.raw_output}, {"attempts", e.attempts},
           {"failed", e.failed}};
  if (!e.error.empty()) out["error"] = e.error;
  return out;
}

}  // namespace turnwise
