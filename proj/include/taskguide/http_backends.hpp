#pragma once

#include <string>
#include <string_view>

#include "taskguide/backends.hpp"

namespace taskguide {

std::string base64_encode(std::string_view bytes);
/// Throws InputError on malformed input.
std::string base64_decode(std::string_view text);

/// Reads `cfg.auth_env` from the environment. Throws ConfigError if the
/// variable name is empty or the variable is unset.
std::string read_credential(const BackendConfig& cfg);

/// Chat completions over an OpenAI-compatible `POST {endpoint}/chat/completions`.
class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig cfg);
  const std::string& id() const override { return cfg_.backend_id; }
  ChatResponse complete(const ChatRequest& request) override;

 private:
  BackendConfig cfg_;
  std::string credential_;
  AdmissionGate gate_;
};

/// Embeddings over an OpenAI-compatible `POST {endpoint}/embeddings`.
class HttpEmbedBackend final : public EmbedBackend {
 public:
  explicit HttpEmbedBackend(BackendConfig cfg);
  const std::string& id() const override { return cfg_.backend_id; }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;

 private:
  BackendConfig cfg_;
  std::string credential_;
  AdmissionGate gate_;
};

/// Google Speech-to-Text style `POST {endpoint}/speech:recognize`.
class HttpAsrBackend final : public AsrBackend {
 public:
  explicit HttpAsrBackend(BackendConfig cfg);
  const std::string& id() const override { return cfg_.backend_id; }
  std::string transcribe(const AudioInput& audio) override;

 private:
  BackendConfig cfg_;
  std::string credential_;
  AdmissionGate gate_;
};

/// Google Text-to-Speech style `POST {endpoint}/text:synthesize`.
class HttpTtsBackend final : public TtsBackend {
 public:
  explicit HttpTtsBackend(BackendConfig cfg);
  const std::string& id() const override { return cfg_.backend_id; }
  AudioPayload synthesize(std::string_view text) override;

 private:
  BackendConfig cfg_;
  std::string credential_;
  AdmissionGate gate_;
};

}  // namespace taskguide
