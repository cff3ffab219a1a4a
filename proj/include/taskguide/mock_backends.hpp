#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "taskguide/backends.hpp"

namespace taskguide {

/// Dimension of the deterministic test embedder.
inline constexpr Eigen::Index kTrigramDim = 256;

/// Character-trigram hashing embedding. Text is lowercased, every
/// non-alphanumeric byte becomes a space, whitespace runs collapse to one
/// space, and the result is padded with one space on each side. Each byte
/// trigram increments bucket `fnv1a64(trigram) % dim`; counts are
/// L2-normalized. Throws DomainError when the text has no trigram.
EmbeddingVector trigram_embedding(std::string_view text, Eigen::Index dim = kTrigramDim);

/// Simulated latency: sleeps `delay_ms` unless it exceeds `timeout_ms`, in
/// which case it sleeps `timeout_ms` and throws TimeoutError.
void simulate_latency(std::int64_t delay_ms, std::int64_t timeout_ms, const std::string& who);

class TrigramEmbedder final : public EmbedBackend {
 public:
  explicit TrigramEmbedder(std::string id = "mock:trigram", Eigen::Index dim = kTrigramDim,
                           std::int64_t delay_ms = 0, std::int64_t timeout_ms = 30000);
  const std::string& id() const override { return id_; }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;

 private:
  std::string id_;
  Eigen::Index dim_;
  std::int64_t delay_ms_;
  std::int64_t timeout_ms_;
};

/// Shared latency handling for chat mocks.
class MockChatBase : public ChatBackend {
 public:
  MockChatBase(std::string id, std::int64_t delay_ms, std::int64_t timeout_ms)
      : id_(std::move(id)), delay_ms_(delay_ms), timeout_ms_(timeout_ms) {}
  const std::string& id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) final;
  std::uint64_t calls() const { return calls_.load(); }

 protected:
  virtual std::string reply(const ChatRequest& request) = 0;

 private:
  std::string id_;
  std::int64_t delay_ms_;
  std::int64_t timeout_ms_;
  std::atomic<std::uint64_t> calls_{0};
};

/// Replies with the request prompt.
class EchoChat final : public MockChatBase {
 public:
  explicit EchoChat(std::string id = "mock:echo", std::int64_t delay_ms = 0,
                    std::int64_t timeout_ms = 30000)
      : MockChatBase(std::move(id), delay_ms, timeout_ms) {}

 protected:
  std::string reply(const ChatRequest& request) override { return request.prompt; }
};

/// Looks the prompt up in an exact-match table, then tries `contains` rules
/// in order (first rule whose key occurs in system or prompt wins), then the
/// default reply. With no match and no default it throws ProtocolError.
class ScriptedChat final : public MockChatBase {
 public:
  ScriptedChat(std::map<std::string, std::string> table,
               std::vector<std::pair<std::string, std::string>> contains = {},
               std::optional<std::string> default_reply = std::nullopt,
               std::string id = "mock:scripted", std::int64_t delay_ms = 0,
               std::int64_t timeout_ms = 30000);

 protected:
  std::string reply(const ChatRequest& request) override;

 private:
  std::map<std::string, std::string> table_;
  std::vector<std::pair<std::string, std::string>> contains_;
  std::optional<std::string> default_reply_;
};

/// Fails deterministically: always (no options), when system or prompt
/// contains `fail_substring`, or for a seeded pseudo-random fraction of
/// prompts. Requests that do not fail are echoed.
struct FailingChatOptions {
  std::optional<std::string> fail_substring;
  std::optional<double> fail_rate;
  std::uint64_t seed = 0;
};

class FailingChat final : public MockChatBase {
 public:
  using Options = FailingChatOptions;
  explicit FailingChat(Options opts = {}, std::string id = "mock:failing",
                       std::int64_t delay_ms = 0, std::int64_t timeout_ms = 30000)
      : MockChatBase(std::move(id), delay_ms, timeout_ms), opts_(std::move(opts)) {}

  bool should_fail(const ChatRequest& request) const;

 protected:
  std::string reply(const ChatRequest& request) override;

 private:
  Options opts_;
};

/// Caption-rewriting mock. Reads the numbered step list (`Step N: text`
/// lines) from the system message and answers with the step text nearest to
/// the prompt under the trigram embedder. Echoes the prompt if the system
/// message lists no steps.
class RuleChat final : public MockChatBase {
 public:
  explicit RuleChat(std::string id = "mock:rule", std::int64_t delay_ms = 0,
                    std::int64_t timeout_ms = 30000)
      : MockChatBase(std::move(id), delay_ms, timeout_ms) {}

 protected:
  std::string reply(const ChatRequest& request) override;
};

/// Extracts `Step N: text` lines (N is 1-based) in order of appearance.
std::vector<std::pair<std::size_t, std::string>> parse_step_lines(std::string_view text);

inline constexpr std::string_view kMockAudioFormat = "audio/x-taskguide-mock";
inline constexpr std::string_view kMockAudioMagic = "TGMOCKAUDIO\x01";

/// Text embedded in a mock TTS payload, if `bytes` is one.
std::optional<std::string> mock_audio_text(std::string_view bytes);

/// Maps fixture audio ids (the raw bytes) to transcripts and decodes mock
/// TTS payloads, so synthesize-then-transcribe round-trips.
class MockAsr final : public AsrBackend {
 public:
  explicit MockAsr(std::map<std::string, std::string> transcripts = default_transcripts(),
                   std::string id = "mock:asr");
  const std::string& id() const override { return id_; }
  std::string transcribe(const AudioInput& audio) override;

  static std::map<std::string, std::string> default_transcripts();

 private:
  std::string id_;
  std::map<std::string, std::string> transcripts_;
};

class MockTts final : public TtsBackend {
 public:
  explicit MockTts(std::string id = "mock:tts") : id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  AudioPayload synthesize(std::string_view text) override;

 private:
  std::string id_;
};

}  // namespace taskguide
