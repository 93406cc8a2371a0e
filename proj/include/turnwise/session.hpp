#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/http.hpp"
#include "turnwise/prompts.hpp"
#include "turnwise/timeline.hpp"

namespace turnwise {

// What a backend may see at turn t: frames 1..t, queries issued at turns
// 1..t and its own actions 1..t-1. Reaching past t throws
// CausalityViolation, which the driver records against the turn.
class TurnContext {
 public:
  TurnContext(const StreamTimeline& timeline, const std::vector<std::string>& frames,
              const std::vector<Action>& history, int turn);

  int turn() const { return turn_; }
  int turn_count() const { return timeline_.turn_count; }
  double fps() const { return timeline_.fps; }
  const std::string& sample_id() const { return timeline_.sample_id; }

  const std::string& frame(int i) const;
  std::optional<std::string> query(int i) const;
  const Action& action(int i) const;  // i < turn

  const std::string& current_frame() const { return frame(turn_); }
  std::optional<std::string> current_query() const { return query(turn_); }
  std::vector<std::string> visible_frames() const;
  std::map<int, std::string> visible_queries() const;
  // Actions for turns 1..t-1.
  std::vector<Action> history() const;

 private:
  void check(int i, int limit, const char* what) const;

  const StreamTimeline& timeline_;
  const std::vector<std::string>& frames_;
  const std::vector<Action>& history_;
  int turn_;
};

struct BackendReply {
  std::string raw;
  std::optional<int> completion_tokens;
  nlohmann::json request;  // compact description of what was sent
  int attempts = 1;
};

// One model under evaluation. step() must be safe to call from several
// sessions at once and must not keep per-session state between calls.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  // Throws TransportError when the model cannot be reached.
  virtual BackendReply step(const TurnContext& ctx) = 0;
  virtual std::string id() const = 0;
  virtual nlohmann::json fingerprint() const = 0;
};

// Deterministic backend driven by a function of the visible context. The
// returned string is raw output and goes through the usual normalization.
class ScriptedBackend : public ModelBackend {
 public:
  using Program = std::function<std::string(const TurnContext&)>;

  ScriptedBackend(Program program, std::string id = "scripted", nlohmann::json fingerprint = nullptr);

  // Rule program:
  //   {"default": "<silent>",             raw output when no rule fires
  //    "at_turns": {"3": "A"},            fixed output per turn
  //    "on_query": "Answer: {query}",     output on turns that carry a query
  //    "on_frame": {"contains": "x", "text": "...", "once": true},
  //    "samples": {"<sample_id>": {...}}} per-sample override of the above
  // Precedence: at_turns, on_query, on_frame, default. Throws ConfigError for
  // an unknown key.
  static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& program);

  BackendReply step(const TurnContext& ctx) override;
  std::string id() const override { return id_; }
  nlohmann::json fingerprint() const override { return fingerprint_; }

 private:
  Program program_;
  std::string id_;
  nlohmann::json fingerprint_;
};

// Budgets the evaluated models are run at.
inline constexpr int kTokenBudgets[] = {128, 768};

struct BackendConfig {
  enum class Kind { HttpChat, Scripted };
  Kind kind = Kind::Scripted;
  EndpointConfig endpoint;
  nlohmann::json program = nlohmann::json::object();  // Scripted
  int tokens_per_frame = 768;
  int max_tokens = 256;
  double temperature = 0.0;
  int max_context_turns = 2048;  // sessions longer than this are rejected
  std::string system_prompt;     // empty: built-in streaming prompt
  nlohmann::json extra_body = nlohmann::json::object();

  // Throws ConfigError naming the bad field.
  void validate() const;
  // Identifies everything that affects model output; never includes secrets.
  nlohmann::json fingerprint() const;
};

// Chat-completions backend. Each turn re-sends the causal history: the
// system prompt, then per earlier turn a user message (frame, optional
// query) and the assistant's raw output.
class HttpChatBackend : public ModelBackend {
 public:
  HttpChatBackend(BackendConfig config, std::shared_ptr<Transport> transport,
                  const PromptLibrary& prompts = PromptLibrary::builtin());

  BackendReply step(const TurnContext& ctx) override;
  std::string id() const override { return config_.endpoint.model; }
  nlohmann::json fingerprint() const override { return config_.fingerprint(); }

  ChatRequest build_request(const TurnContext& ctx) const;

 private:
  BackendConfig config_;
  std::string system_template_;
  ChatClient client_;
};

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& config, std::shared_ptr<Transport> transport);

struct TranscriptEntry {
  int turn = 0;
  nlohmann::json request;
  std::string raw_output;
  std::string error;
  int attempts = 0;
  bool failed = false;
};

struct SessionRecord {
  std::string sample_id;
  Trajectory trajectory;
  std::vector<TranscriptEntry> transcript;
  nlohmann::json fingerprint;
  int failed_turns = 0;
  int causality_violations = 0;
};

struct SessionOptions {
  int max_context_turns = 0;  // 0: no cap
};

// Drives turns 1..T in order. A turn whose backend call fails (transport
// error after retries, or a causality violation) is recorded as Silent with
// the failed flag so the sample still scores. Throws InvalidInput when
// |frames| != T and ContextOverflow when T exceeds the cap.
SessionRecord run_session(const StreamTimeline& timeline, const std::vector<std::string>& frames,
                          ModelBackend& backend, const SessionOptions& options = {});

nlohmann::json to_json(const TranscriptEntry& entry, const std::string& sample_id);

}  // namespace turnwise
