#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/content_cache.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/http.hpp"
#include "turnwise/json_extract.hpp"
#include "turnwise/model_call.hpp"

using namespace turnwise;
using testsupport::FakeChatServer;
using nlohmann::json;

namespace {

EndpointConfig fast_endpoint(const std::string& url) {
  EndpointConfig e;
  e.url = url;
  e.model = "m";
  e.timeout = std::chrono::milliseconds(5000);
  e.retry.initial_backoff = std::chrono::milliseconds(1);
  return e;
}

std::string ok_body(const std::string& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
              {"usage", {{"completion_tokens", 4}}}}
      .dump();
}

}  // namespace

TEST(ChatUrl, AppendsPathWhenMissing) {
  EXPECT_EQ(chat_completions_url("http://h:8000"), "http://h:8000/v1/chat/completions");
  EXPECT_EQ(chat_completions_url("http://h:8000/"), "http://h:8000/v1/chat/completions");
  EXPECT_EQ(chat_completions_url("http://h/v1"), "http://h/v1/chat/completions");
  EXPECT_EQ(chat_completions_url("https://h/api/v1/chat/completions"), "https://h/api/v1/chat/completions");
}

TEST(ChatResponseParse, ReadsContentAndUsage) {
  const ChatResponse r = parse_chat_response(ok_body("hello"));
  EXPECT_EQ(r.content, "hello");
  EXPECT_EQ(r.completion_tokens, 4);
  EXPECT_THROW(parse_chat_response("not json"), TransportError);
  EXPECT_THROW(parse_chat_response(R"({"choices": []})"), TransportError);
}

TEST(ChatRequestJson, ExtraFieldsMergeIntoBody) {
  ChatRequest req;
  req.model = "m";
  req.messages.push_back({"user", "hi"});
  req.extra = {{"top_p", 0.5}};
  const json j = to_json(req);
  EXPECT_EQ(j.at("model"), "m");
  EXPECT_EQ(j.at("top_p"), 0.5);
  EXPECT_EQ(j.at("messages")[0].at("content"), "hi");
  EXPECT_EQ(j.at("temperature"), 0.0);
}

TEST(ChatClient, RetriesRetryableStatusesThenSucceeds) {
  int calls = 0;
  auto t = std::make_shared<CountingTransport>([&](const std::string&, const std::string&) {
    ++calls;
    if (calls == 1) return HttpResponse{429, "slow down"};
    if (calls == 2) return HttpResponse{503, "busy"};
    return HttpResponse{200, ok_body("done")};
  });
  ChatClient client(fast_endpoint("http://x"), t);
  const ChatResponse r = client.complete({});
  EXPECT_EQ(r.content, "done");
  EXPECT_EQ(r.attempts, 3);
}

TEST(ChatClient, GivesUpAfterRetries) {
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string&) -> HttpResponse { throw TransportError("refused"); });
  ChatClient client(fast_endpoint("http://x"), t);
  EXPECT_THROW(client.complete({}), TransportError);
  EXPECT_EQ(t->requests(), 3);
}

TEST(ChatClient, ClientErrorsAreNotRetried) {
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string&) { return HttpResponse{400, "bad"}; });
  ChatClient client(fast_endpoint("http://x"), t);
  EXPECT_THROW(client.complete({}), TransportError);
  EXPECT_EQ(t->requests(), 1);
}

TEST(HttpTransport, TalksToAChatServer) {
  FakeChatServer server([](const json& req) {
    return FakeChatServer::Reply{200, "echo " + testsupport::last_user_text(req), 2, ""};
  });
  EndpointConfig e = fast_endpoint(server.base_url());
  e.api_key = "sk-test";
  ChatClient client(e, make_http_transport());
  ChatRequest req;
  req.model = "m";
  req.messages.push_back({"user", "ping"});
  const ChatResponse r = client.complete(req);
  EXPECT_EQ(r.content, "echo ping");
  EXPECT_EQ(r.completion_tokens, 2);
  ASSERT_EQ(server.auth_headers().size(), 1u);
  EXPECT_EQ(server.auth_headers()[0], "Bearer sk-test");
}

TEST(HttpTransport, UnreachableHostIsATransportError) {
  EndpointConfig e = fast_endpoint("http://127.0.0.1:1");
  e.retry.max_retries = 0;
  e.timeout = std::chrono::milliseconds(500);
  ChatClient client(e, make_http_transport());
  EXPECT_THROW(client.complete({}), TransportError);
}

TEST(ContentCache, PutGetAndLayout) {
  testsupport::TempDir dir;
  ContentCache cache(dir.path);
  const std::string k = ContentCache::key("judge-model", "prompt");
  EXPECT_EQ(k.size(), 64u);
  EXPECT_NE(k, ContentCache::key("other-model", "prompt"));
  EXPECT_NE(k, ContentCache::key("judge-model", "prompt2"));
  EXPECT_FALSE(cache.get(k));
  cache.put(k, {{"text", "yes"}});
  EXPECT_EQ(cache.get(k)->at("text"), "yes");
  EXPECT_EQ(cache.path_for(k), dir.path / k.substr(0, 2) / (k + ".json"));
  EXPECT_TRUE(std::filesystem::exists(cache.path_for(k)));
}

TEST(ContentCache, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CachedChat, LookupStoreRoundTrip) {
  testsupport::TempDir dir;
  auto t = std::make_shared<CountingTransport>(
      [](const std::string&, const std::string&) { return HttpResponse{200, ok_body("fresh")}; });
  CachedChat chat(fast_endpoint("http://x"), t, std::make_shared<ContentCache>(dir.path), 2);
  EXPECT_FALSE(chat.lookup("p"));
  const CallResult r = chat.call({});
  chat.store("p", r);
  auto hit = chat.lookup("p");
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->text, "fresh");
  EXPECT_EQ(hit->completion_tokens, 4);
  EXPECT_TRUE(hit->from_cache);
  EXPECT_EQ(chat.stats().requests, 1);
  EXPECT_EQ(chat.stats().cache_hits, 1);
}

TEST(JsonExtract, FindsFirstAcceptableObject) {
  auto accept_correct = [](const json& j) { return j.contains("correct") && j.at("correct").is_boolean(); };
  auto got = find_json_object(R"(Sure! {"note": "x"} then {"correct": true, "reasoning": "has } brace"} end)",
                              accept_correct);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->at("correct"), true);
  EXPECT_FALSE(find_json_object("no json {here", accept_correct));
  EXPECT_FALSE(find_json_object(R"({"correct": "yes"})", accept_correct));
}
