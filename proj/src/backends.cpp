#include "taskguide/backends.hpp"

#include <fstream>

#include "taskguide/error.hpp"
#include "taskguide/http_backends.hpp"
#include "taskguide/mock_backends.hpp"

namespace taskguide {

using nlohmann::json;

void BackendConfig::validate() const {
  if (backend_id.empty()) throw ConfigError("backend_id is empty");
  if (timeout_ms <= 0) throw ConfigError(backend_id + ": timeout_ms must be positive");
  if (max_in_flight == 0) throw ConfigError(backend_id + ": max_in_flight must be positive");
}

BackendConfig backend_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("backend config must be an object");
  BackendConfig cfg;
  try {
    cfg.backend_id = j.at("backend_id").get<std::string>();
    cfg.endpoint_url = j.value("endpoint_url", "");
    cfg.auth_env = j.value("auth_env", "");
    cfg.timeout_ms = j.value("timeout_ms", std::int64_t{30000});
    cfg.model_name = j.value("model_name", "");
    cfg.max_in_flight = j.value("max_in_flight", std::size_t{4});
    if (auto it = j.find("options"); it != j.end()) cfg.options = *it;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backend config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const BackendConfig& cfg) {
  return json{{"backend_id", cfg.backend_id},   {"endpoint_url", cfg.endpoint_url},
              {"auth_env", cfg.auth_env},       {"timeout_ms", cfg.timeout_ms},
              {"model_name", cfg.model_name},   {"max_in_flight", cfg.max_in_flight},
              {"options", cfg.options}};
}

bool is_supported_sample_rate(int hz) {
  switch (hz) {
    case 8000:
    case 16000:
    case 22050:
    case 24000:
    case 44100:
    case 48000:
      return true;
    default:
      return false;
  }
}

void AdmissionGate::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_use_ < limit_; });
  ++in_use_;
}

void AdmissionGate::release() {
  {
    std::lock_guard lock(mutex_);
    --in_use_;
  }
  cv_.notify_one();
}

ChatResponse chat_complete(ChatBackend& backend, const ChatRequest& req) {
  return backend.complete(req);
}

std::vector<EmbeddingVector> embed_batch(EmbedBackend& backend, std::span<const std::string> texts) {
  if (texts.empty()) throw InputError("embed_batch: empty input");
  auto out = backend.embed_batch(texts);
  if (out.size() != texts.size()) {
    throw BackendError(backend.id() + ": returned " + std::to_string(out.size()) +
                       " vectors for " + std::to_string(texts.size()) + " texts");
  }
  return out;
}

std::string transcribe(AsrBackend& backend, const AudioInput& audio) {
  return backend.transcribe(audio);
}

AudioPayload synthesize(TtsBackend& backend, std::string_view text) {
  return backend.synthesize(text);
}

namespace {

std::int64_t delay_of(const BackendConfig& cfg) { return cfg.options.value("delay_ms", std::int64_t{0}); }

/// Bounds concurrent calls into a mock the same way the HTTP clients do.
class GatedChat final : public ChatBackend {
 public:
  GatedChat(std::unique_ptr<ChatBackend> inner, std::size_t limit)
      : inner_(std::move(inner)), gate_(limit) {}
  const std::string& id() const override { return inner_->id(); }
  ChatResponse complete(const ChatRequest& request) override {
    AdmissionGate::Ticket ticket(gate_);
    return inner_->complete(request);
  }

 private:
  std::unique_ptr<ChatBackend> inner_;
  AdmissionGate gate_;
};

std::unique_ptr<ChatBackend> make_mock_chat(const BackendConfig& cfg) {
  const std::string kind = cfg.mock_kind();
  const std::int64_t delay = delay_of(cfg);
  const json& opts = cfg.options;
  if (kind == "echo") return std::make_unique<EchoChat>(cfg.backend_id, delay, cfg.timeout_ms);
  if (kind == "rule") return std::make_unique<RuleChat>(cfg.backend_id, delay, cfg.timeout_ms);
  if (kind == "failing") {
    FailingChat::Options fo;
    if (opts.contains("fail_substring")) fo.fail_substring = opts["fail_substring"].get<std::string>();
    if (opts.contains("fail_rate")) fo.fail_rate = opts["fail_rate"].get<double>();
    fo.seed = opts.value("seed", std::uint64_t{0});
    return std::make_unique<FailingChat>(fo, cfg.backend_id, delay, cfg.timeout_ms);
  }
  if (kind == "scripted") {
    std::map<std::string, std::string> table;
    if (opts.contains("table")) table = opts["table"].get<std::map<std::string, std::string>>();
    std::vector<std::pair<std::string, std::string>> contains;
    if (opts.contains("contains")) {
      for (const json& rule : opts["contains"]) {
        contains.emplace_back(rule.at(0).get<std::string>(), rule.at(1).get<std::string>());
      }
    }
    std::optional<std::string> fallback;
    if (opts.contains("default_reply")) fallback = opts["default_reply"].get<std::string>();
    return std::make_unique<ScriptedChat>(std::move(table), std::move(contains), fallback,
                                          cfg.backend_id, delay, cfg.timeout_ms);
  }
  throw ConfigError("unknown chat mock '" + cfg.backend_id + "'");
}

}  // namespace

std::unique_ptr<ChatBackend> make_chat_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (!cfg.is_mock()) return std::make_unique<HttpChatBackend>(cfg);
  try {
    return std::make_unique<GatedChat>(make_mock_chat(cfg), cfg.max_in_flight);
  } catch (const json::exception& e) {
    throw ConfigError(cfg.backend_id + ": invalid options: " + e.what());
  }
}

std::unique_ptr<EmbedBackend> make_embed_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (!cfg.is_mock()) return std::make_unique<HttpEmbedBackend>(cfg);
  if (cfg.mock_kind() == "trigram") {
    const auto dim = cfg.options.value("dimension", std::int64_t{kTrigramDim});
    return std::make_unique<TrigramEmbedder>(cfg.backend_id, static_cast<Eigen::Index>(dim),
                                             delay_of(cfg), cfg.timeout_ms);
  }
  throw ConfigError("unknown embedding mock '" + cfg.backend_id + "'");
}

std::unique_ptr<AsrBackend> make_asr_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (!cfg.is_mock()) return std::make_unique<HttpAsrBackend>(cfg);
  if (cfg.mock_kind() == "asr") {
    auto transcripts = MockAsr::default_transcripts();
    if (cfg.options.contains("transcripts")) {
      for (const auto& [k, v] : cfg.options["transcripts"].items()) transcripts[k] = v.get<std::string>();
    }
    return std::make_unique<MockAsr>(std::move(transcripts), cfg.backend_id);
  }
  throw ConfigError("unknown ASR mock '" + cfg.backend_id + "'");
}

std::unique_ptr<TtsBackend> make_tts_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (!cfg.is_mock()) return std::make_unique<HttpTtsBackend>(cfg);
  if (cfg.mock_kind() == "tts") return std::make_unique<MockTts>(cfg.backend_id);
  throw ConfigError("unknown TTS mock '" + cfg.backend_id + "'");
}

BackendConfig BackendRegistry::resolve(const std::string& id) const {
  if (auto it = configs.find(id); it != configs.end()) return it->second;
  BackendConfig cfg;
  cfg.backend_id = id;
  if (!cfg.is_mock()) throw ConfigError("no backend configured with id '" + id + "'");
  return cfg;
}

BackendConfig BackendRegistry::for_role(const std::string& role, const std::string& fallback_id) const {
  if (auto it = roles.find(role); it != roles.end()) return resolve(it->second);
  return resolve(fallback_id);
}

BackendRegistry parse_backend_registry(const json& doc) {
  BackendRegistry reg;
  if (!doc.is_object()) throw ConfigError("backend config file must be a JSON object");
  if (auto it = doc.find("backends"); it != doc.end()) {
    if (!it->is_array()) throw ConfigError("'backends' must be an array");
    for (const json& entry : *it) {
      BackendConfig cfg = backend_config_from_json(entry);
      if (!reg.configs.emplace(cfg.backend_id, cfg).second) {
        throw ConfigError("duplicate backend_id '" + cfg.backend_id + "'");
      }
    }
  }
  if (auto it = doc.find("roles"); it != doc.end()) {
    if (!it->is_object()) throw ConfigError("'roles' must be an object");
    for (const auto& [role, id] : it->items()) {
      if (!id.is_string()) throw ConfigError("role '" + role + "' must name a backend_id");
      reg.roles[role] = id.get<std::string>();
      reg.resolve(reg.roles[role]);
    }
  }
  return reg;
}

BackendRegistry load_backend_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read backend config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_backend_registry(doc);
}

}  // namespace taskguide
