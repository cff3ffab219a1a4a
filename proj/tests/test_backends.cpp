#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/error.hpp"
#include "taskguide/http_backends.hpp"
#include "taskguide/mock_backends.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a macro named _res.
#include <httplib.h>

using namespace taskguide;
using nlohmann::json;

namespace {

/// Local stand-in for the remote providers; records the last request.
class FakeProvider {
 public:
  FakeProvider() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      if (status_ != 200) {
        res.status = status_;
        res.set_content(R"({"error":"nope"})", "application/json");
        return;
      }
      if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      const json body = json::parse(req.body);
      const std::string last = body["messages"].back()["content"];
      res.set_content(json{{"choices", {{{"message", {{"content", "re: " + last}}}}}},
                           {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      const json body = json::parse(req.body);
      json data = json::array();
      const std::size_t n = partial_ ? body["input"].size() - 1 : body["input"].size();
      for (std::size_t i = 0; i < n; ++i) {
        data.push_back({{"index", i}, {"embedding", {3.0, 4.0, static_cast<double>(i)}}});
      }
      res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    server_.Post(R"(/v1/speech:recognize)", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      const json body = json::parse(req.body);
      const std::string audio = base64_decode(body["audio"]["content"].get<std::string>());
      res.set_content(json{{"results", {{{"alternatives", {{{"transcript", "heard " + audio}}}}}}}}.dump(),
                      "application/json");
    });
    server_.Post(R"(/v1/text:synthesize)", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      const json body = json::parse(req.body);
      res.set_content(json{{"audioContent", base64_encode("mp3:" + body["input"]["text"].get<std::string>())}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeProvider() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::string header(const std::string& name) {
    std::lock_guard lock(mutex_);
    auto it = last_headers_.find(name);
    return it == last_headers_.end() ? std::string{} : it->second;
  }
  json last_body() {
    std::lock_guard lock(mutex_);
    return json::parse(last_body_);
  }

  std::atomic<int> status_{200};
  std::atomic<int> delay_ms_{0};
  std::atomic<bool> partial_{false};

 private:
  void record(const httplib::Request& req) {
    std::lock_guard lock(mutex_);
    last_headers_ = {req.headers.begin(), req.headers.end()};
    last_body_ = req.body;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::map<std::string, std::string> last_headers_;
  std::string last_body_;
};

BackendConfig http_config(const std::string& id, const std::string& url, const char* env) {
  BackendConfig cfg;
  cfg.backend_id = id;
  cfg.endpoint_url = url;
  cfg.auth_env = env;
  cfg.timeout_ms = 2000;
  cfg.model_name = "test-model";
  return cfg;
}

}  // namespace

TEST_CASE("echo mock round trip") {
  auto chat = make_chat_backend(BackendConfig{"mock:echo"});
  CHECK(chat_complete(*chat, ChatRequest{"", "ping"}).text == "ping");
  CHECK(chat->id() == "mock:echo");
}

TEST_CASE("scripted mock lookup order") {
  ScriptedChat s({{"ping", "pong"}}, {{"butter", "spread it"}}, std::string("default"));
  CHECK(s.complete({"", "ping"}).text == "pong");
  CHECK(s.complete({"system mentions butter", "other"}).text == "spread it");
  CHECK(s.complete({"", "other"}).text == "default");
  ScriptedChat strict(std::map<std::string, std::string>{{"ping", "pong"}});
  CHECK_THROWS_AS(strict.complete({"", "other"}), ProtocolError);
}

TEST_CASE("mock delay beyond the timeout is a timeout") {
  BackendConfig cfg{"mock:echo"};
  cfg.timeout_ms = 1;
  cfg.options = {{"delay_ms", 50}};
  auto chat = make_chat_backend(cfg);
  CHECK_THROWS_AS(chat->complete({"", "ping"}), TimeoutError);

  cfg.timeout_ms = 1000;
  cfg.options = {{"delay_ms", 20}};
  auto slow = make_chat_backend(cfg);
  const auto start = std::chrono::steady_clock::now();
  CHECK(slow->complete({"", "ping"}).text == "ping");
  CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(20));
}

TEST_CASE("failing mock modes") {
  FailingChat always;
  CHECK_THROWS_AS(always.complete({"", "x"}), BackendError);
  FailingChat substring(FailingChatOptions{std::string("boom"), std::nullopt, 0});
  CHECK(substring.complete({"", "fine"}).text == "fine");
  CHECK_THROWS_AS(substring.complete({"", "boom now"}), BackendError);
  FailingChat none(FailingChatOptions{std::nullopt, 0.0, 1});
  CHECK(none.complete({"", "x"}).text == "x");
}

TEST_CASE("trigram embedder is pure and unit-norm") {
  TrigramEmbedder e;
  const std::vector<std::string> texts = {"Spread butter", "roll the tortilla", "spread   BUTTER!"};
  const auto a = embed_batch(e, texts);
  const auto b = embed_batch(e, texts);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    CHECK(a[i].size() == kTrigramDim);
    CHECK(std::abs(a[i].norm() - 1.0) < 1e-12);
  }
  CHECK(a[0] == a[2]);
  CHECK_THROWS_AS(trigram_embedding("!!!"), DomainError);
}

TEST_CASE("speech mocks round trip") {
  MockAsr asr;
  MockTts tts;
  CHECK(transcribe(asr, AudioInput{"ask_next", 16000}) == "what is the next step");
  CHECK_THROWS_AS(transcribe(asr, AudioInput{"ask_next", 12345}), InputError);
  CHECK_THROWS_AS(transcribe(asr, AudioInput{"", 16000}), InputError);
  CHECK_THROWS_AS(transcribe(asr, AudioInput{"unknown clip", 16000}), ProtocolError);
  const auto audio = synthesize(tts, "Roll it tightly.");
  CHECK(audio.format == kMockAudioFormat);
  CHECK(mock_audio_text(audio.bytes) == "Roll it tightly.");
  CHECK(transcribe(asr, AudioInput{audio.bytes, 16000}) == "Roll it tightly.");
  CHECK_THROWS_AS(synthesize(tts, ""), InputError);
}

TEST_CASE("backend config parsing and registry") {
  const json doc = json::parse(R"({
    "backends": [
      {"backend_id": "mock:scripted:dialog", "options": {"contains": [["next", "go on"]], "default_reply": "ok"}},
      {"backend_id": "remote", "endpoint_url": "https://example.invalid/v1", "auth_env": "TG_CHAT_API_KEY",
       "timeout_ms": 1500, "model_name": "m", "max_in_flight": 2}
    ],
    "roles": {"chat": "mock:scripted:dialog", "embed": "mock:trigram"}
  })");
  const auto reg = parse_backend_registry(doc);
  CHECK(reg.configs.size() == 2);
  CHECK(reg.for_role("chat", "mock:echo").mock_kind() == "scripted");
  CHECK(reg.for_role("asr", "mock:asr").backend_id == "mock:asr");
  CHECK(reg.configs.at("remote").timeout_ms == 1500);
  CHECK_THROWS_AS(reg.resolve("other"), ConfigError);

  auto chat = make_chat_backend(reg.for_role("chat", "mock:echo"));
  CHECK(chat->complete({"", "what next"}).text == "go on");
  CHECK(chat->complete({"", "hmm"}).text == "ok");

  const auto serialized = to_json(reg.configs.at("remote")).dump();
  CHECK(serialized.find("TG_CHAT_API_KEY") != std::string::npos);

  CHECK_THROWS_AS(parse_backend_registry(json::parse(R"({"roles": {"chat": "nowhere"}})")), ConfigError);
  CHECK_THROWS_AS(parse_backend_registry(json::parse(R"({"backends": [{"backend_id": "a"}, {"backend_id": "a"}]})")),
                  ConfigError);
  CHECK_THROWS_AS(make_chat_backend(BackendConfig{"mock:nonsense"}), ConfigError);
  BackendConfig bad{"mock:echo"};
  bad.timeout_ms = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mock kinds ignore suffixes") {
  CHECK(BackendConfig{"mock:rule"}.mock_kind() == "rule");
  CHECK(BackendConfig{"mock:rule:enhance"}.mock_kind() == "rule");
  CHECK(BackendConfig{"openai"}.mock_kind().empty());
}

TEST_CASE("base64 helpers") {
  for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)}) {
    CHECK(base64_decode(base64_encode(s)) == s);
  }
  CHECK(base64_encode("hello") == "aGVsbG8=");
  CHECK_THROWS_AS(base64_decode("abc"), InputError);
}

TEST_CASE("missing credential fails at construction") {
  ::unsetenv("TG_TEST_MISSING_KEY");
  const auto cfg = http_config("remote-chat", "http://127.0.0.1:9/v1", "TG_TEST_MISSING_KEY");
  CHECK_THROWS_AS(HttpChatBackend{cfg}, ConfigError);
  CHECK_THROWS_AS(make_embed_backend(cfg), ConfigError);
  try {
    ::setenv("TG_TEST_MISSING_KEY", "", 1);
    HttpChatBackend backend(cfg);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("TG_TEST_MISSING_KEY") != std::string::npos);
  }
}

TEST_CASE("HTTP adapters against a local provider") {
  FakeProvider fake;
  ::setenv("TG_TEST_CHAT_KEY", "chat-secret", 1);
  ::setenv("TG_TEST_SPEECH_KEY", "speech-secret", 1);

  SUBCASE("chat completions") {
    HttpChatBackend chat(http_config("remote-chat", fake.url(), "TG_TEST_CHAT_KEY"));
    const auto resp = chat.complete({"be brief", "hello", 0.0, 32});
    CHECK(resp.text == "re: hello");
    CHECK(resp.usage.prompt_tokens == 11);
    CHECK(resp.usage.completion_tokens == 3);
    CHECK(fake.header("Authorization") == "Bearer chat-secret");
    const auto body = fake.last_body();
    CHECK(body["model"] == "test-model");
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["max_tokens"] == 32);
  }
  SUBCASE("non-2xx status") {
    HttpChatBackend chat(http_config("remote-chat", fake.url(), "TG_TEST_CHAT_KEY"));
    fake.status_ = 503;
    try {
      chat.complete({"", "hello"});
      FAIL("expected a protocol error");
    } catch (const ProtocolError& e) {
      CHECK(e.status() == 503);
      CHECK(std::string(e.what()).find("chat-secret") == std::string::npos);
    }
  }
  SUBCASE("slow provider times out") {
    auto cfg = http_config("remote-chat", fake.url(), "TG_TEST_CHAT_KEY");
    cfg.timeout_ms = 100;
    HttpChatBackend chat(cfg);
    fake.delay_ms_ = 400;
    CHECK_THROWS_AS(chat.complete({"", "hello"}), TimeoutError);
  }
  SUBCASE("embeddings") {
    HttpEmbedBackend embed(http_config("remote-embed", fake.url(), "TG_TEST_CHAT_KEY"));
    const std::vector<std::string> texts = {"a", "b"};
    const auto out = embed.embed_batch(texts);
    REQUIRE(out.size() == 2);
    CHECK(out[0](0) == doctest::Approx(0.6));
    CHECK(out[0](1) == doctest::Approx(0.8));
    CHECK(std::abs(out[1].norm() - 1.0) < 1e-12);
    fake.partial_ = true;
    CHECK_THROWS_AS(embed.embed_batch(texts), ProtocolError);
  }
  SUBCASE("speech recognition and synthesis") {
    HttpAsrBackend asr(http_config("remote-asr", fake.url(), "TG_TEST_SPEECH_KEY"));
    CHECK(asr.transcribe({"pcm", 16000}) == "heard pcm");
    CHECK(fake.header("X-Goog-Api-Key") == "speech-secret");
    CHECK(fake.last_body()["config"]["sampleRateHertz"] == 16000);
    HttpTtsBackend tts(http_config("remote-tts", fake.url(), "TG_TEST_SPEECH_KEY"));
    const auto audio = tts.synthesize("hi");
    CHECK(audio.bytes == "mp3:hi");
    CHECK(audio.format == "audio/mpeg");
  }
  SUBCASE("unreachable provider") {
    HttpChatBackend chat(http_config("remote-chat", "http://127.0.0.1:1/v1", "TG_TEST_CHAT_KEY"));
    CHECK_THROWS_AS(chat.complete({"", "hello"}), BackendError);
  }
}

TEST_CASE("admission gate bounds concurrency") {
  AdmissionGate gate(2);
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      AdmissionGate::Ticket t(gate);
      const int now = ++active;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      --active;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 2);
  CHECK(peak.load() >= 1);
}
