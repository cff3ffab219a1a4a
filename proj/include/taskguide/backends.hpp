#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "taskguide/similarity.hpp"

namespace taskguide {

/// Environment variables holding provider credentials.
inline constexpr const char* kChatKeyEnv = "TG_CHAT_API_KEY";
inline constexpr const char* kEmbedKeyEnv = "TG_EMBED_API_KEY";
inline constexpr const char* kSpeechKeyEnv = "TG_SPEECH_API_KEY";

/// Selection and connection settings for one backend. `backend_id` values
/// starting with `mock:` select an in-process deterministic mock; the
/// credential itself is never stored here, only the variable name.
struct BackendConfig {
  std::string backend_id;
  std::string endpoint_url;
  std::string auth_env;
  std::int64_t timeout_ms = 30000;
  std::string model_name;
  std::size_t max_in_flight = 4;
  nlohmann::json options = nlohmann::json::object();

  bool is_mock() const { return backend_id.rfind("mock:", 0) == 0; }
  /// `mock:rule` and `mock:rule:enhance` both have kind `rule`.
  std::string mock_kind() const {
    return is_mock() ? backend_id.substr(5, backend_id.find(':', 5) - 5) : std::string{};
  }
  /// Throws ConfigError when timeout_ms <= 0 or max_in_flight == 0.
  void validate() const;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);
/// Serializes everything except credentials (there are none to leak here).
nlohmann::json to_json(const BackendConfig& cfg);

struct ChatRequest {
  /// Optional system message; adapters send it before `prompt`.
  std::string system;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 256;
};

struct ChatUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  ChatUsage usage;
  double latency_ms = 0.0;
};

struct AudioInput {
  std::string bytes;
  int sample_rate_hz = 16000;
};

struct AudioPayload {
  std::string format;  // MIME-style tag
  std::string bytes;
};

bool is_supported_sample_rate(int hz);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual const std::string& id() const = 0;
  /// Throws TimeoutError, ProtocolError or BackendError.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

class EmbedBackend {
 public:
  virtual ~EmbedBackend() = default;
  virtual const std::string& id() const = 0;
  /// Unit-norm vectors, same order and length as `texts`. Any per-item
  /// failure fails the whole batch.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;
};

class AsrBackend {
 public:
  virtual ~AsrBackend() = default;
  virtual const std::string& id() const = 0;
  virtual std::string transcribe(const AudioInput& audio) = 0;
};

class TtsBackend {
 public:
  virtual ~TtsBackend() = default;
  virtual const std::string& id() const = 0;
  virtual AudioPayload synthesize(std::string_view text) = 0;
};

/// Counting gate bounding concurrent requests to one backend.
class AdmissionGate {
 public:
  explicit AdmissionGate(std::size_t limit) : limit_(limit == 0 ? 1 : limit) {}

  class Ticket {
   public:
    explicit Ticket(AdmissionGate& gate) : gate_(&gate) { gate_->acquire(); }
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;
    ~Ticket() { gate_->release(); }

   private:
    AdmissionGate* gate_;
  };

  std::size_t limit() const { return limit_; }

 private:
  void acquire();
  void release();

  std::size_t limit_;
  std::size_t in_use_ = 0;
  std::mutex mutex_;
  std::condition_variable cv_;
};

/// Convenience wrappers matching the free-function form of the operations.
ChatResponse chat_complete(ChatBackend& backend, const ChatRequest& req);
std::vector<EmbeddingVector> embed_batch(EmbedBackend& backend, std::span<const std::string> texts);
std::string transcribe(AsrBackend& backend, const AudioInput& audio);
AudioPayload synthesize(TtsBackend& backend, std::string_view text);

/// Builds a backend from its config. Mock ids:
///   chat:  mock:echo, mock:scripted, mock:failing, mock:rule
///   embed: mock:trigram
///   asr:   mock:asr       tts: mock:tts
/// `options.delay_ms` adds simulated latency to any mock (honoring timeout_ms).
/// Real backends read their credential from `auth_env` here, so a missing
/// credential is a ConfigError at construction rather than at call time.
std::unique_ptr<ChatBackend> make_chat_backend(const BackendConfig& cfg);
std::unique_ptr<EmbedBackend> make_embed_backend(const BackendConfig& cfg);
std::unique_ptr<AsrBackend> make_asr_backend(const BackendConfig& cfg);
std::unique_ptr<TtsBackend> make_tts_backend(const BackendConfig& cfg);

/// Contents of a backends config file:
/// `{"backends": [BackendConfig...], "roles": {"chat": id, "embed": id, "asr": id, "tts": id}}`.
struct BackendRegistry {
  std::map<std::string, BackendConfig> configs;
  std::map<std::string, std::string> roles;

  /// Known config for `id`, or a default config when `id` is a mock.
  /// Throws ConfigError for unknown non-mock ids.
  BackendConfig resolve(const std::string& id) const;
  /// Config bound to `role`, or `fallback_id` if the role is unset.
  BackendConfig for_role(const std::string& role, const std::string& fallback_id) const;
};

BackendRegistry parse_backend_registry(const nlohmann::json& doc);
BackendRegistry load_backend_registry(const std::filesystem::path& path);

}  // namespace taskguide
