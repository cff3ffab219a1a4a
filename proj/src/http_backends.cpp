#include "taskguide/http_backends.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <openssl/evp.h>

#include "taskguide/error.hpp"

namespace taskguide {

using nlohmann::json;

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InputError("base64 input length is not a multiple of 4");
  if (text.empty()) return {};
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw InputError("malformed base64 input");
  // EVP_DecodeBlock keeps the padding bytes as zeros.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string read_credential(const BackendConfig& cfg) {
  if (cfg.auth_env.empty()) {
    throw ConfigError(cfg.backend_id + ": no credential variable configured (auth_env)");
  }
  const char* value = std::getenv(cfg.auth_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw ConfigError(cfg.backend_id + ": environment variable " + cfg.auth_env + " is not set");
  }
  return value;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

Endpoint split_endpoint(const BackendConfig& cfg) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg.endpoint_url, m, kUrl)) {
    throw ConfigError(cfg.backend_id + ": invalid endpoint_url '" + cfg.endpoint_url + "'");
  }
  std::string path = m[2].matched ? m[2].str() : std::string{};
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {m[1].str(), path};
}

struct HttpReply {
  json body;
  double latency_ms = 0.0;
};

HttpReply post_json(const BackendConfig& cfg, const std::string& path, const json& body,
                    const httplib::Headers& headers) {
  const Endpoint ep = split_endpoint(cfg);
  httplib::Client client(ep.origin);
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(ep.base_path + path, headers, body.dump(), "application/json");
  const double elapsed =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout ||
        ((err == httplib::Error::Read || err == httplib::Error::Write) &&
         elapsed >= 0.9 * static_cast<double>(cfg.timeout_ms))) {
      throw TimeoutError(cfg.backend_id + ": timed out after " + std::to_string(cfg.timeout_ms) +
                         " ms");
    }
    throw ProtocolError(cfg.backend_id + ": request failed: " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError(cfg.backend_id + ": HTTP status " + std::to_string(res->status),
                        res->status);
  }
  HttpReply reply;
  reply.latency_ms = elapsed;
  try {
    reply.body = json::parse(res->body);
  } catch (const json::parse_error&) {
    throw ProtocolError(cfg.backend_id + ": response is not JSON", res->status);
  }
  return reply;
}

httplib::Headers bearer(const std::string& credential) {
  return {{"Authorization", "Bearer " + credential}};
}

httplib::Headers google_key(const std::string& credential) {
  return {{"X-Goog-Api-Key", credential}};
}

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), credential_(read_credential(cfg_)), gate_(cfg_.max_in_flight) {
  split_endpoint(cfg_);
}

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
  json messages = json::array();
  if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
  messages.push_back({{"role", "user"}, {"content", request.prompt}});
  const json body = {{"model", cfg_.model_name},
                     {"messages", std::move(messages)},
                     {"temperature", request.temperature},
                     {"max_tokens", request.max_tokens}};

  AdmissionGate::Ticket ticket(gate_);
  HttpReply reply = post_json(cfg_, "/chat/completions", body, bearer(credential_));
  ChatResponse out;
  out.latency_ms = reply.latency_ms;
  try {
    out.text = reply.body.at("choices").at(0).at("message").at("content").get<std::string>();
    if (auto usage = reply.body.find("usage"); usage != reply.body.end()) {
      out.usage.prompt_tokens = usage->value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens = usage->value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    throw ProtocolError(cfg_.backend_id + ": unexpected chat response shape: " + e.what());
  }
  return out;
}

HttpEmbedBackend::HttpEmbedBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), credential_(read_credential(cfg_)), gate_(cfg_.max_in_flight) {
  split_endpoint(cfg_);
}

std::vector<EmbeddingVector> HttpEmbedBackend::embed_batch(std::span<const std::string> texts) {
  if (texts.empty()) throw InputError("embed_batch: empty input");
  const json body = {{"model", cfg_.model_name},
                     {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  AdmissionGate::Ticket ticket(gate_);
  HttpReply reply = post_json(cfg_, "/embeddings", body, bearer(credential_));

  std::vector<EmbeddingVector> out(texts.size());
  std::vector<bool> seen(texts.size(), false);
  try {
    const json& data = reply.body.at("data");
    for (std::size_t pos = 0; pos < data.size(); ++pos) {
      const json& item = data[pos];
      const std::size_t idx = item.value("index", pos);
      if (idx >= texts.size() || seen[idx]) {
        throw ProtocolError(cfg_.backend_id + ": embedding index out of range or repeated");
      }
      const auto values = item.at("embedding").get<std::vector<double>>();
      out[idx] = normalized_embedding(
          Eigen::Map<const EmbeddingVector>(values.data(), static_cast<Eigen::Index>(values.size())));
      seen[idx] = true;
    }
  } catch (const json::exception& e) {
    throw ProtocolError(cfg_.backend_id + ": unexpected embedding response shape: " + e.what());
  } catch (const DomainError& e) {
    throw ProtocolError(cfg_.backend_id + ": " + e.what());
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!seen[i]) throw ProtocolError(cfg_.backend_id + ": missing embedding " + std::to_string(i));
    if (out[i].size() != out[0].size()) {
      throw ProtocolError(cfg_.backend_id + ": embedding dimensions differ within a batch");
    }
  }
  return out;
}

HttpAsrBackend::HttpAsrBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), credential_(read_credential(cfg_)), gate_(cfg_.max_in_flight) {
  split_endpoint(cfg_);
}

std::string HttpAsrBackend::transcribe(const AudioInput& audio) {
  if (audio.bytes.empty()) throw InputError("transcribe: empty audio");
  if (!is_supported_sample_rate(audio.sample_rate_hz)) {
    throw InputError("transcribe: unsupported sample rate " + std::to_string(audio.sample_rate_hz));
  }
  const json body = {
      {"config",
       {{"encoding", cfg_.options.value("encoding", "LINEAR16")},
        {"sampleRateHertz", audio.sample_rate_hz},
        {"languageCode", cfg_.options.value("language_code", "en-US")}}},
      {"audio", {{"content", base64_encode(audio.bytes)}}}};
  AdmissionGate::Ticket ticket(gate_);
  HttpReply reply = post_json(cfg_, "/speech:recognize", body, google_key(credential_));
  std::string transcript;
  try {
    for (const json& result : reply.body.value("results", json::array())) {
      if (!transcript.empty()) transcript += ' ';
      transcript += result.at("alternatives").at(0).at("transcript").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ProtocolError(cfg_.backend_id + ": unexpected ASR response shape: " + e.what());
  }
  return transcript;
}

HttpTtsBackend::HttpTtsBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), credential_(read_credential(cfg_)), gate_(cfg_.max_in_flight) {
  split_endpoint(cfg_);
}

AudioPayload HttpTtsBackend::synthesize(std::string_view text) {
  if (text.empty()) throw InputError("synthesize: empty text");
  const json body = {
      {"input", {{"text", std::string(text)}}},
      {"voice", {{"languageCode", cfg_.options.value("language_code", "en-US")}}},
      {"audioConfig", {{"audioEncoding", cfg_.options.value("audio_encoding", "MP3")}}}};
  AdmissionGate::Ticket ticket(gate_);
  HttpReply reply = post_json(cfg_, "/text:synthesize", body, google_key(credential_));
  AudioPayload out;
  out.format = cfg_.options.value("audio_encoding", "MP3") == "MP3" ? "audio/mpeg" : "audio/wav";
  try {
    out.bytes = base64_decode(reply.body.at("audioContent").get<std::string>());
  } catch (const json::exception& e) {
    throw ProtocolError(cfg_.backend_id + ": unexpected TTS response shape: " + e.what());
  } catch (const InputError& e) {
    throw ProtocolError(cfg_.backend_id + ": " + e.what());
  }
  return out;
}

}  // namespace taskguide
