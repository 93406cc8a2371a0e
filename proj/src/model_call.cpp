#include "turnwise/model_call.hpp"

#include "turnwise/errors.hpp"

namespace turnwise {

using nlohmann::json;

CachedChat::CachedChat(EndpointConfig endpoint, std::shared_ptr<Transport> transport,
                       std::shared_ptr<ContentCache> cache, std::size_t max_in_flight)
    : client_(std::move(endpoint), std::move(transport)), cache_(std::move(cache)), limiter_(max_in_flight) {}

std::optional<CallResult> CachedChat::lookup(const std::string& payload) const {
  if (!cache_) return std::nullopt;
  auto record = cache_->get(ContentCache::key(model(), payload));
  if (!record || !record->is_object() || !record->contains("text") || !(*record)["text"].is_string()) {
    return std::nullopt;
  }
  CallResult out;
  out.text = (*record)["text"].get<std::string>();
  if (record->contains("completion_tokens") && (*record)["completion_tokens"].is_number_integer()) {
    out.completion_tokens = (*record)["completion_tokens"].get<int>();
  }
  out.from_cache = true;
  hits_.fetch_add(1);
  return out;
}

CallResult CachedChat::call(const ChatRequest& request) {
  Limiter::Guard guard(limiter_);
  requests_.fetch_add(1);
  try {
    ChatResponse res = client_.complete(request);
    return CallResult{std::move(res.content), res.completion_tokens, false};
  } catch (const TransportError&) {
    failures_.fetch_add(1);
    throw;
  }
}

void CachedChat::store(const std::string& payload, const CallResult& result) const {
  if (!cache_) return;
  json record{{"model", model()}, {"payload_sha256", sha256_hex(payload)}, {"text", result.text}};
  if (result.completion_tokens) record["completion_tokens"] = *result.completion_tokens;
  cache_->put(ContentCache::key(model(), payload), record);
}

CallStats CachedChat::stats() const { return CallStats{hits_.load(), requests_.load(), failures_.load()}; }

}  // namespace turnwise
