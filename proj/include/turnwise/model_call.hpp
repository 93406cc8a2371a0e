#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>

#include "turnwise/content_cache.hpp"
#include "turnwise/http.hpp"
#include "turnwise/parallel.hpp"

namespace turnwise {

struct CallResult {
  std::string text;
  std::optional<int> completion_tokens;
  bool from_cache = false;
};

struct CallStats {
  long cache_hits = 0;
  long requests = 0;            // ChatClient::complete invocations
  long transport_failures = 0;  // requests that exhausted their retries
};

// Chat client with an optional content-addressed cache in front of it. The
// cache key is (model id, payload); callers choose the payload so that it
// identifies the request, e.g. the rendered judge prompt.
//
// lookup/call/store are separate so callers can decide which replies are
// worth caching (a judge keeps retrying unparseable replies before storing).
class CachedChat {
 public:
  CachedChat(EndpointConfig endpoint, std::shared_ptr<Transport> transport, std::shared_ptr<ContentCache> cache,
             std::size_t max_in_flight);

  std::optional<CallResult> lookup(const std::string& payload) const;
  // Throws TransportError after the retry policy is exhausted.
  CallResult call(const ChatRequest& request);
  void store(const std::string& payload, const CallResult& result) const;

  const std::string& model() const { return client_.config().model; }
  const EndpointConfig& endpoint() const { return client_.config(); }
  CallStats stats() const;

 private:
  ChatClient client_;
  std::shared_ptr<ContentCache> cache_;
  Limiter limiter_;
  mutable std::atomic<long> hits_{0};
  std::atomic<long> requests_{0};
  std::atomic<long> failures_{0};
};

}  // namespace turnwise
