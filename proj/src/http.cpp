#include "turnwise/http.hpp"

#include <map>
#include <mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw TransportError("invalid URL (no scheme): " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public Transport {
 public:
  HttpResponse post_json(const std::string& url, const std::string& body, const Headers& headers,
                         std::chrono::milliseconds timeout) override {
    const SplitUrl parts = split_url(url);
    auto client = acquire(parts.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());

    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client->Post(parts.path, h, body, "application/json");
    if (!res) {
      const std::string err = httplib::to_string(res.error());
      throw TransportError("POST " + url + " failed: " + err);
    }
    HttpResponse out{res->status, res->body};
    release(parts.origin, std::move(client));
    return out;
  }

 private:
  std::unique_ptr<httplib::Client> acquire(const std::string& origin) {
    {
      std::lock_guard lock(mu_);
      auto& idle = pool_[origin];
      if (!idle.empty()) {
        auto c = std::move(idle.back());
        idle.pop_back();
        return c;
      }
    }
    auto c = std::make_unique<httplib::Client>(origin);
    c->set_keep_alive(true);
    return c;
  }

  void release(const std::string& origin, std::unique_ptr<httplib::Client> client) {
    std::lock_guard lock(mu_);
    auto& idle = pool_[origin];
    if (idle.size() < kMaxIdlePerHost) idle.push_back(std::move(client));
  }

  static constexpr std::size_t kMaxIdlePerHost = 16;
  std::mutex mu_;
  std::map<std::string, std::vector<std::unique_ptr<httplib::Client>>> pool_;
};

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

HttpResponse CountingTransport::post_json(const std::string& url, const std::string& body, const Headers& headers,
                                          std::chrono::milliseconds timeout) {
  requests_.fetch_add(1);
  if (handler_) return handler_(url, body);
  return inner_->post_json(url, body, headers, timeout);
}

std::string chat_completions_url(const std::string& base) {
  static constexpr std::string_view kSuffix = "/chat/completions";
  std::string url = base;
  while (!url.empty() && url.back() == '/') url.pop_back();
  if (url.size() >= kSuffix.size() && url.compare(url.size() - kSuffix.size(), kSuffix.size(), kSuffix) == 0) {
    return url;
  }
  const SplitUrl parts = split_url(url);
  if (parts.path == "/") return url + "/v1" + std::string(kSuffix);
  return url + std::string(kSuffix);
}

json to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body{{"model", request.model},
            {"messages", std::move(messages)},
            {"max_tokens", request.max_tokens},
            {"temperature", request.temperature}};
  for (auto it = request.extra.begin(); it != request.extra.end(); ++it) body[it.key()] = it.value();
  return body;
}

ChatResponse parse_chat_response(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("chat response is not JSON: ") + e.what());
  }
  ChatResponse out;
  out.raw_body = body;
  try {
    const json& message = doc.at("choices").at(0).at("message");
    const json& content = message.at("content");
    if (content.is_string()) {
      out.content = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.value("type", "") == "text") out.content += part.value("text", "");
      }
    } else if (!content.is_null()) {
      throw TransportError("chat response content has unexpected type");
    }
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed chat response: ") + e.what());
  }
  if (doc.contains("usage") && doc["usage"].is_object() && doc["usage"].contains("completion_tokens") &&
      doc["usage"]["completion_tokens"].is_number_integer()) {
    out.completion_tokens = doc["usage"]["completion_tokens"].get<int>();
  }
  return out;
}

ChatClient::ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), url_(chat_completions_url(config_.url)), transport_(std::move(transport)) {
  if (config_.timeout.count() <= 0) throw InvalidInput("endpoint timeout must be positive");
  if (!transport_) throw InvalidInput("ChatClient requires a transport");
}

ChatResponse ChatClient::complete(const ChatRequest& request) const {
  const std::string body = to_json(request).dump();
  Headers headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);

  auto backoff = config_.retry.initial_backoff;
  std::string last_error;
  const int attempts = 1 + std::max(0, config_.retry.max_retries);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      HttpResponse res = transport_->post_json(url_, body, headers, config_.timeout);
      if (res.status >= 200 && res.status < 300) {
        ChatResponse out = parse_chat_response(res.body);
        out.attempts = attempt;
        return out;
      }
      last_error = "HTTP " + std::to_string(res.status) + " from " + url_;
      if (!retryable_status(res.status)) break;
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (attempt < attempts && backoff.count() > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long>(static_cast<double>(backoff.count()) * config_.retry.multiplier));
    }
  }
  throw TransportError(last_error);
}

}  // namespace turnwise
