#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "turnwise/timeline.hpp"

namespace testsupport {

using nlohmann::json;

inline constexpr std::uint32_t kSeed = 20260113;

inline turnwise::StreamTimeline make_timeline(turnwise::Subtask subtask, int turns, std::set<int> gt_turns, int delta = -1,
                                              std::string id = "s") {
  turnwise::StreamTimeline tl;
  tl.sample_id = std::move(id);
  tl.turn_count = turns;
  tl.ground_truth.subtask = subtask;
  tl.ground_truth.mode = turnwise::mode_of(subtask);
  tl.ground_truth.gt_turns = gt_turns;
  for (int t : gt_turns) tl.ground_truth.references[t].answer = "answer " + std::to_string(t);
  if (delta >= 0) {
    tl.ground_truth.delta = delta;
  } else {
    tl.ground_truth.delta = tl.ground_truth.mode == turnwise::TaskMode::ForwardActive ? turnwise::kDefaultFarDelta : 0;
  }
  return tl;
}

// One character per turn: '.' silent, anything else responds with that text.
inline turnwise::Trajectory make_traj(const std::string& pattern, std::string id = "s") {
  turnwise::Trajectory tr;
  tr.sample_id = std::move(id);
  for (char c : pattern) {
    tr.turns.push_back(c == '.' ? turnwise::Action::silent() : turnwise::Action::respond(std::string(1, c), 1));
  }
  return tr;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("turnwise_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Minimal OpenAI-compatible chat-completions server on a loopback port.
class FakeChatServer {
 public:
  struct Reply {
    int status = 200;
    std::string content;
    int completion_tokens = -1;  // omitted from usage when negative
    std::string raw_body;        // sent verbatim when non-empty
  };
  using Handler = std::function<Reply(const json& request)>;

  explicit FakeChatServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      json body = json::parse(req.body, nullptr, false);
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      const Reply r = handler_(body);
      res.status = r.status;
      if (!r.raw_body.empty()) {
        res.set_content(r.raw_body, "application/json");
        return;
      }
      json out{{"id", "chatcmpl-test"},
               {"object", "chat.completion"},
               {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", r.content}}}}}}};
      if (r.completion_tokens >= 0) out["usage"] = {{"completion_tokens", r.completion_tokens}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeChatServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int requests() const { return requests_.load(); }
  std::vector<json> bodies() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> requests_{0};
  mutable std::mutex mu_;
  std::vector<json> bodies_;
  std::vector<std::string> auth_;
};

// Text of the last user message in a chat request, joining text parts.
inline std::string last_user_text(const json& request) {
  const auto& msgs = request.at("messages");
  for (auto it = msgs.rbegin(); it != msgs.rend(); ++it) {
    if (it->value("role", "") != "user") continue;
    const json& c = it->at("content");
    if (c.is_string()) return c.get<std::string>();
    std::string out;
    for (const auto& part : c) {
      if (part.value("type", "") == "text") out += part.value("text", "");
    }
    return out;
  }
  return {};
}

}  // namespace testsupport
