#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace turnwise {

using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Blocking JSON POST. Implementations must be safe to call concurrently.
// Connection-level failures throw TransportError; HTTP error statuses are
// returned as-is.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post_json(const std::string& url, const std::string& body, const Headers& headers,
                                 std::chrono::milliseconds timeout) = 0;
};

// cpp-httplib backed transport with a small pool of keep-alive clients per
// host.
std::shared_ptr<Transport> make_http_transport();

// Counts requests and forwards them to `inner` (or to `handler` when given).
// Used to assert the number of network calls.
class CountingTransport : public Transport {
 public:
  using Handler = std::function<HttpResponse(const std::string& url, const std::string& body)>;

  explicit CountingTransport(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}
  explicit CountingTransport(Handler handler) : handler_(std::move(handler)) {}

  HttpResponse post_json(const std::string& url, const std::string& body, const Headers& headers,
                         std::chrono::milliseconds timeout) override;

  long requests() const { return requests_.load(); }

 private:
  std::shared_ptr<Transport> inner_;
  Handler handler_;
  std::atomic<long> requests_{0};
};

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

struct EndpointConfig {
  std::string url;  // base URL; "/chat/completions" is appended when missing
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
};

std::string chat_completions_url(const std::string& base);

struct ChatMessage {
  std::string role;
  nlohmann::json content;  // string, or an array of content parts
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  int max_tokens = 256;
  double temperature = 0.0;
  nlohmann::json extra = nlohmann::json::object();  // merged into the top-level body
};

nlohmann::json to_json(const ChatRequest& request);

struct ChatResponse {
  std::string content;
  std::optional<int> completion_tokens;
  std::string raw_body;
  int attempts = 1;
};

// Reads choices[0].message.content and usage.completion_tokens. Throws
// TransportError when the body is not a chat-completions response.
ChatResponse parse_chat_response(const std::string& body);

class ChatClient {
 public:
  ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport);

  // Retries transport failures and 5xx/429 statuses per the retry policy,
  // then throws TransportError.
  ChatResponse complete(const ChatRequest& request) const;

  const EndpointConfig& config() const { return config_; }

 private:
  EndpointConfig config_;
  std::string url_;
  std::shared_ptr<Transport> transport_;
};

}  // namespace turnwise
