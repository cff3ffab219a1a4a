#include "taskguide/service.hpp"

#include <algorithm>
#include <charconv>
#include <random>

#include <httplib.h>

#include "taskguide/error.hpp"
#include "taskguide/http_backends.hpp"
#include "taskguide/mock_backends.hpp"

namespace taskguide {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string_view to_string(FrameKind k) {
  switch (k) {
    case FrameKind::CaptionRaw:
      return "CaptionRaw";
    case FrameKind::CaptionEnhanced:
      return "CaptionEnhanced";
    case FrameKind::Estimate:
      return "Estimate";
    case FrameKind::DialogUser:
      return "DialogUser";
    case FrameKind::DialogAssistant:
      break;
  }
  return "DialogAssistant";
}

std::optional<FrameKind> parse_frame_kind(std::string_view s) {
  for (FrameKind k : {FrameKind::CaptionRaw, FrameKind::CaptionEnhanced, FrameKind::Estimate,
                      FrameKind::DialogUser, FrameKind::DialogAssistant}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

json to_json(const EventFrame& f) {
  return json{{"seq", f.seq}, {"kind", to_string(f.kind)}, {"ts", f.ts_ms}, {"payload", f.payload}};
}

EventFrame event_frame_from_json(const json& j) {
  try {
    auto kind = parse_frame_kind(j.at("kind").get<std::string>());
    if (!kind) throw ParseError("unknown frame kind '" + j.at("kind").get<std::string>() + "'");
    return EventFrame{*kind, j.at("seq").get<std::uint64_t>(), j.value("ts", std::int64_t{0}), j.at("payload")};
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed event frame: ") + e.what());
  }
}

std::string encode_frame(const json& body) {
  const std::string text = body.dump();
  return std::to_string(text.size()) + "\n" + text + "\n";
}

json overflow_frame(std::uint64_t next_seq, std::size_t capacity) {
  return json{{"kind", "Overflow"},
              {"code", "buffer_overflow"},
              {"next_seq", next_seq},
              {"capacity", capacity}};
}

void FrameDecoder::feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<json> FrameDecoder::next() {
  const std::size_t nl = buffer_.find('\n');
  if (nl == std::string::npos) {
    if (buffer_.size() > 20) throw ParseError("frame stream: length prefix too long");
    return std::nullopt;
  }
  std::size_t length = 0;
  const auto [end, ec] = std::from_chars(buffer_.data(), buffer_.data() + nl, length);
  if (ec != std::errc() || end != buffer_.data() + nl || nl == 0) {
    throw ParseError("frame stream: malformed length prefix");
  }
  if (buffer_.size() < nl + 1 + length + 1) return std::nullopt;
  if (buffer_[nl + 1 + length] != '\n') throw ParseError("frame stream: missing frame terminator");
  json frame;
  try {
    frame = json::parse(buffer_.begin() + static_cast<std::ptrdiff_t>(nl + 1),
                        buffer_.begin() + static_cast<std::ptrdiff_t>(nl + 1 + length));
  } catch (const json::exception& e) {
    throw ParseError(std::string("frame stream: invalid JSON: ") + e.what());
  }
  buffer_.erase(0, nl + 1 + length + 1);
  return frame;
}

EventLog::EventLog(std::optional<std::filesystem::path> journal) {
  if (journal) {
    journal_.open(*journal, std::ios::binary | std::ios::app);
    if (!journal_) throw IoError("cannot open journal " + journal->string());
  }
}

std::uint64_t EventLog::append(FrameKind kind, json payload) {
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mutex_);
    if (closed_) throw SessionClosedError("session is closed");
    seq = frames_.size();
    auto frame = std::make_shared<const EventFrame>(EventFrame{kind, seq, now_ms(), std::move(payload)});
    if (journal_.is_open()) {
      journal_ << to_json(*frame).dump() << '\n';
      journal_.flush();
    }
    frames_.push_back(std::move(frame));
  }
  cv_.notify_all();
  return seq;
}

std::vector<std::shared_ptr<const EventFrame>> EventLog::since(std::uint64_t from_seq) const {
  std::lock_guard lock(mutex_);
  if (from_seq >= frames_.size()) return {};
  return {frames_.begin() + static_cast<std::ptrdiff_t>(from_seq), frames_.end()};
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mutex_);
  return frames_.size();
}

void EventLog::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventLog::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

EventLog::Subscription EventLog::subscribe(std::uint64_t from_seq, std::size_t capacity) const {
  std::lock_guard lock(mutex_);
  return Subscription(this, from_seq, frames_.size(), capacity == 0 ? 1 : capacity);
}

EventLog::Subscription::Result EventLog::Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(log_->mutex_);
  const bool ready = log_->cv_.wait_for(lock, timeout, [&] {
    return cursor_ < log_->frames_.size() || log_->closed_;
  });
  if (!ready) return {Status::Timeout, nullptr};
  const std::uint64_t size = log_->frames_.size();
  if (cursor_ < size) {
    const std::uint64_t pending_live = size - std::max(cursor_, live_from_);
    if (pending_live > capacity_) return {Status::Overflow, nullptr};
    return {Status::Frame, log_->frames_[cursor_++]};
  }
  return {Status::Closed, nullptr};
}

void SessionOptions::validate() const {
  smoothing.validate();
  if (enhance_window == 0) throw ConfigError("enhance_window must be at least 1");
  if (history_cap < 2) throw ConfigError("history_cap must be at least 2");
}

SessionOptions session_options_from_json(const json& j, SessionOptions o) {
  if (!j.is_object()) throw InputError("session options must be a JSON object");
  try {
    auto granularity = [&](const char* key, Granularity fallback) {
      if (!j.contains(key)) return fallback;
      auto g = parse_granularity(j.at(key).get<std::string>());
      if (!g) throw InputError(std::string("unknown granularity for ") + key);
      return *g;
    };
    o.granularity = granularity("granularity", o.granularity);
    o.enhance_context = granularity("enhance_context", o.enhance_context);
    o.smoothing.window_size = j.value("window_size", o.smoothing.window_size);
    o.smoothing.forward_bias = j.value("forward_bias", o.smoothing.forward_bias);
    o.enhance = j.value("enhance", o.enhance);
    o.enhance_window = j.value("enhance_window", o.enhance_window);
    o.history_cap = j.value("history_cap", o.history_cap);
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid session options: ") + e.what());
  }
  try {
    o.validate();
  } catch (const ConfigError& e) {
    throw InputError(e.what());
  }
  return o;
}

json to_json(const SessionOptions& o) {
  return json{{"granularity", to_string(o.granularity)},
              {"window_size", o.smoothing.window_size},
              {"forward_bias", o.smoothing.forward_bias},
              {"enhance", o.enhance},
              {"enhance_window", o.enhance_window},
              {"enhance_context", to_string(o.enhance_context)},
              {"history_cap", o.history_cap}};
}

ServiceBackends ServiceBackends::from_registry(const BackendRegistry& registry) {
  ServiceBackends b;
  b.chat = make_chat_backend(registry.for_role("chat", "mock:echo"));
  if (registry.roles.count("enhance") != 0) {
    b.enhance = make_chat_backend(registry.for_role("enhance", "mock:rule"));
  } else {
    b.enhance = b.chat;
  }
  b.embed = make_embed_backend(registry.for_role("embed", "mock:trigram"));
  b.asr = make_asr_backend(registry.for_role("asr", "mock:asr"));
  b.tts = make_tts_backend(registry.for_role("tts", "mock:tts"));
  return b;
}

ServiceBackends ServiceBackends::mocks() {
  ServiceBackends b;
  b.chat = std::make_shared<EchoChat>();
  b.enhance = std::make_shared<RuleChat>();
  b.embed = std::make_shared<TrigramEmbedder>();
  b.asr = std::make_shared<MockAsr>();
  b.tts = std::make_shared<MockTts>();
  return b;
}

ServiceConfig ServiceConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
  ServiceConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : (base_dir / path).lexically_normal();
  };
  try {
    cfg.recipes_dir = resolve(doc.value("recipes_dir", "recipes"));
    cfg.templates_dir = resolve(doc.value("templates_dir", "templates"));
    if (doc.contains("journal_dir") && !doc["journal_dir"].is_null()) {
      cfg.journal_dir = resolve(doc["journal_dir"].get<std::string>());
    }
    if (doc.contains("session")) {
      cfg.session_defaults = session_options_from_json(doc["session"]);
    }
    if (doc.contains("cadence")) {
      const json& c = doc["cadence"];
      cfg.cadence.frame_rate_fps = c.value("frame_rate_fps", cfg.cadence.frame_rate_fps);
      cfg.cadence.frame_stride = c.value("frame_stride", cfg.cadence.frame_stride);
    }
    cfg.subscriber_buffer = doc.value("subscriber_buffer", cfg.subscriber_buffer);
    if (doc.contains("server")) {
      const json& s = doc["server"];
      cfg.host = s.value("host", cfg.host);
      cfg.port = s.value("port", cfg.port);
      cfg.http_threads = s.value("threads", cfg.http_threads);
    }
    cfg.backends = parse_backend_registry(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid service config: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  cfg.cadence.validate();
  if (cfg.subscriber_buffer == 0) throw ConfigError("subscriber_buffer must be at least 1");
  if (cfg.http_threads < 4) throw ConfigError("server.threads must be at least 4");
  return cfg;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

ServiceConfig default_service_config() {
  return ServiceConfig::load(std::filesystem::path(TASKGUIDE_SOURCE_DIR) / "config" / "taskguide.json");
}

std::string_view to_string(SessionStatus s) { return s == SessionStatus::Active ? "Active" : "Closed"; }

Session::Session(std::string id, std::shared_ptr<const Recipe> recipe, SessionOptions options,
                 const ServiceBackends& backends, const TemplateRegistry& templates,
                 std::shared_ptr<ReferenceCache> cache, CadencePolicy cadence,
                 std::optional<std::filesystem::path> journal)
    : id_(std::move(id)),
      recipe_(std::move(recipe)),
      options_(options),
      backends_(backends),
      templates_(&templates),
      cadence_(cadence),
      created_at_(std::chrono::system_clock::now()),
      events_(std::move(journal)),
      dialog_(recipe_, DialogPromptOptions{&templates, kDefaultDialogTemplate, options.history_cap}),
      estimator_(recipe_, options.granularity, *backends.embed, options.smoothing, std::move(cache)),
      window_(options.enhance_window),
      latest_(initial_estimate(recipe_->size())) {
  options_.validate();
  if (options_.enhance && backends_.enhance) {
    EnhancementContext probe{recipe_.get(), templates_, options_.enhance_context};
    probe.validate();
    worker_ = std::jthread([this](std::stop_token stop) { enhance_loop(stop); });
  }
}

Session::~Session() {
  worker_.request_stop();
  queue_cv_.notify_all();
}

SessionStatus Session::status() const {
  std::lock_guard lock(state_mutex_);
  return closed_ ? SessionStatus::Closed : SessionStatus::Active;
}

std::uint64_t Session::push_caption(CaptionEvent event) {
  std::lock_guard ingest(ingest_mutex_);
  if (status() == SessionStatus::Closed) throw SessionClosedError("session " + id_ + " is closed");
  event.session_id = id_;
  const std::uint64_t seq = captions_.append(event);

  json raw = event;
  raw["seq"] = seq;
  events_.append(FrameKind::CaptionRaw, std::move(raw));

  const StepEstimate estimate = estimator_.observe(event.text, static_cast<std::int64_t>(seq));
  events_.append(FrameKind::Estimate, to_json(estimate));
  {
    std::lock_guard lock(state_mutex_);
    latest_ = estimate;
  }

  if (worker_.joinable()) {
    {
      std::lock_guard lock(queue_mutex_);
      queue_.push_back({event, seq, window_.snapshot()});
    }
    queue_cv_.notify_all();
  }
  window_.push(event.text);
  return seq;
}

std::vector<CaptionEvent> Session::caption_log(std::uint64_t from_seq) const {
  return captions_.since(from_seq);
}

StepEstimate Session::state() const {
  std::lock_guard lock(state_mutex_);
  return latest_;
}

void Session::enhance_loop(std::stop_token stop) {
  while (true) {
    EnhanceJob job;
    {
      std::unique_lock lock(queue_mutex_);
      if (!queue_cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    EnhancementContext ctx{recipe_.get(), templates_, options_.enhance_context, kDefaultEnhanceTemplate,
                           options_.enhance_window, std::move(job.window)};
    try {
      const EnhancedCaption out = enhance_caption(ctx, job.event, *backends_.enhance, job.seq);
      events_.append(FrameKind::CaptionEnhanced, to_json(out));
    } catch (const std::exception&) {
      // The session closed underneath us, or the context was rejected.
    }
    {
      std::lock_guard lock(queue_mutex_);
      busy_ = false;
    }
    queue_cv_.notify_all();
  }
}

bool Session::wait_enhanced(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(queue_mutex_);
  return queue_cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_; });
}

ChatOutcome Session::chat(const ChatInput& input) {
  if (status() == SessionStatus::Closed) throw SessionClosedError("session " + id_ + " is closed");
  ChatOutcome out;
  std::string text;
  if (input.audio) {
    try {
      text = backends_.asr->transcribe(*input.audio);
    } catch (const BackendError& e) {
      throw AsrFailure(e.what());
    }
    out.transcript = text;
  } else if (input.text) {
    text = *input.text;
  } else {
    throw InputError("chat request needs text or audio");
  }
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw InputError("utterance is empty");

  events_.append(FrameKind::DialogUser, json{{"text", text}, {"source", input.audio ? "audio" : "text"}});
  out.turn = dialog_.answer(text, state(), *backends_.chat);
  events_.append(FrameKind::DialogAssistant, to_json(out.turn));

  if (input.speak) {
    try {
      AudioPayload audio = backends_.tts->synthesize(out.turn.assistant_text);
      std::lock_guard lock(audio_mutex_);
      out.audio_index = audio_.size();
      out.audio_format = audio.format;
      audio_.push_back(std::move(audio));
    } catch (const Error&) {
      // The text reply stands on its own; the response simply carries no audio.
    }
  }
  return out;
}

AudioPayload Session::audio(std::size_t index) const {
  std::lock_guard lock(audio_mutex_);
  if (index >= audio_.size()) {
    throw NotFoundError("session " + id_ + " has no audio " + std::to_string(index));
  }
  return audio_[index];
}

void Session::close() {
  {
    std::lock_guard lock(state_mutex_);
    closed_ = true;
  }
  worker_.request_stop();
  queue_cv_.notify_all();
  events_.close();
}

json Session::info() const {
  const auto created = std::chrono::duration_cast<std::chrono::milliseconds>(
                           created_at_.time_since_epoch())
                           .count();
  return json{{"session_id", id_},
              {"recipe_id", recipe_->id},
              {"created_at_ms", created},
              {"status", to_string(status())},
              {"captions_accepted", captions_.size()},
              {"turns_answered", dialog_.size()},
              {"event_count", events_.size()},
              {"options", to_json(options_)}};
}

std::string new_session_id() {
  static constexpr std::string_view kAlphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::string id(22, '\0');
  for (char& c : id) c = kAlphabet[rng() & 63u];
  return id;
}

SessionManager::SessionManager(ServiceConfig config, ServiceBackends backends)
    : config_(std::move(config)),
      backends_(std::move(backends)),
      templates_(TemplateRegistry::load_directory(config_.templates_dir)),
      cache_(std::make_shared<ReferenceCache>()) {
  if (!backends_.chat || !backends_.embed || !backends_.asr || !backends_.tts) {
    throw ConfigError("service backends are incomplete");
  }
  config_.session_defaults.validate();
  if (!config_.recipes_dir.empty()) {
    std::error_code ec;
    if (!std::filesystem::is_directory(config_.recipes_dir, ec)) {
      throw IoError("recipes directory " + config_.recipes_dir.string() + " does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(config_.recipes_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_recipe(load_recipe(f));
  }
  if (config_.journal_dir) std::filesystem::create_directories(*config_.journal_dir);
}

void SessionManager::add_recipe(Recipe recipe) {
  std::unique_lock lock(mutex_);
  const std::string id = recipe.id;
  recipes_[id] = std::make_shared<const Recipe>(std::move(recipe));
}

std::vector<std::string> SessionManager::recipe_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : recipes_) ids.push_back(id);
  return ids;
}

std::shared_ptr<const Recipe> SessionManager::recipe(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = recipes_.find(id);
  if (it == recipes_.end()) throw NotFoundError("unknown recipe '" + id + "'");
  return it->second;
}

std::shared_ptr<Session> SessionManager::create_session(const std::string& recipe_id,
                                                        std::optional<SessionOptions> options) {
  auto r = recipe(recipe_id);
  std::string id;
  {
    std::shared_lock lock(mutex_);
    do {
      id = new_session_id();
    } while (sessions_.count(id) != 0);
  }
  std::optional<std::filesystem::path> journal;
  if (config_.journal_dir) journal = *config_.journal_dir / (id + ".jsonl");
  auto session = std::make_shared<Session>(id, r, options.value_or(config_.session_defaults), backends_,
                                           templates_, cache_, config_.cadence, journal);
  std::unique_lock lock(mutex_);
  if (!sessions_.emplace(id, session).second) throw ConsistencyError("session id collision");
  return session;
}

std::shared_ptr<Session> SessionManager::find(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

std::size_t SessionManager::session_count() const {
  std::shared_lock lock(mutex_);
  return sessions_.size();
}

int http_status_for(const Error& e) {
  static const std::map<std::string, int> kStatus = {
      {"not_found", 404}, {"ordering", 409}, {"closed", 410},  {"input", 400},
      {"parse", 400},     {"schema", 400},   {"validation", 400}, {"range", 400},
      {"shape", 400},     {"domain", 400},   {"asr", 502},     {"backend", 502},
      {"timeout", 504},   {"protocol", 502}, {"config", 500},  {"io", 500}};
  auto it = kStatus.find(e.kind());
  return it == kStatus.end() ? 500 : it->second;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json error_body(const Error& e) { return json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}; }

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const AsrFailure& e) {
    json body = error_body(e);
    body["degraded"] = true;
    send_json(res, http_status_for(e), body);
  } catch (const Error& e) {
    send_json(res, http_status_for(e), error_body(e));
  } catch (const json::exception& e) {
    send_json(res, 400, json{{"error", {{"kind", "input"}, {"message", e.what()}}}});
  } catch (const std::exception& e) {
    send_json(res, 500, json{{"error", {{"kind", "internal"}, {"message", e.what()}}}});
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw InputError(std::string("request body is not JSON: ") + e.what());
  }
}

std::uint64_t query_u64(const httplib::Request& req, const char* name, std::uint64_t fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string v = req.get_param_value(name);
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw InputError(std::string("query parameter ") + name + " must be a non-negative integer");
  }
  return out;
}

CaptionEvent caption_from_body(const json& body, const CadencePolicy& cadence) {
  CaptionEvent e;
  if (!body.contains("frame_index") || !body["frame_index"].is_number_unsigned()) {
    throw InputError("caption needs a non-negative integer frame_index");
  }
  if (!body.contains("text") || !body["text"].is_string()) throw InputError("caption needs a text string");
  e.frame_index = body["frame_index"].get<std::uint64_t>();
  e.text = body["text"].get<std::string>();
  e.timestamp_ms = body.contains("timestamp_ms") ? body["timestamp_ms"].get<std::int64_t>()
                                                 : cadence.timestamp_ms(e.frame_index);
  e.source = body.value("source", "live") == "replay" ? CaptionSource::Replay : CaptionSource::LiveBackend;
  if (body.contains("step") && !body["step"].is_null()) e.ground_truth_step = body["step"].get<std::size_t>();
  return e;
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(SessionManager& m) : manager(m) {}
  SessionManager& manager;
  httplib::Server server;
};

HttpServer::HttpServer(SessionManager& manager) : impl_(std::make_unique<Impl>(manager)) {
  auto& srv = impl_->server;
  SessionManager& m = manager;
  const std::size_t threads = m.config().http_threads;
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}});
  });

  srv.Get("/v1/recipes", [&m](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, json{{"recipes", m.recipe_ids()}}); });
  });

  srv.Get("/v1/recipes/:id", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(serialize_recipe(*m.recipe(req.path_params.at("id"))), "application/json");
    });
  });

  srv.Post("/v1/sessions", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("recipe_id") || !body["recipe_id"].is_string()) {
        throw InputError("request needs a recipe_id string");
      }
      std::optional<SessionOptions> options;
      if (body.contains("options")) {
        options = session_options_from_json(body["options"], m.config().session_defaults);
      }
      auto session = m.create_session(body["recipe_id"].get<std::string>(), options);
      send_json(res, 201, session->info());
    });
  });

  srv.Get("/v1/sessions/:id", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, m.find(req.path_params.at("id"))->info()); });
  });

  srv.Post("/v1/sessions/:id/captions", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      const std::uint64_t seq = session->push_caption(caption_from_body(parse_body(req), m.config().cadence));
      send_json(res, 202, json{{"seq", seq}});
    });
  });

  srv.Get("/v1/sessions/:id/captions", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      json events = json::array();
      for (const CaptionEvent& e : session->caption_log(query_u64(req, "from_seq", 0))) events.push_back(e);
      send_json(res, 200, json{{"captions", std::move(events)}});
    });
  });

  srv.Get("/v1/sessions/:id/state", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      json body = to_json(session->state());
      body["session_id"] = session->id();
      send_json(res, 200, body);
    });
  });

  srv.Post("/v1/sessions/:id/chat", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      const json body = parse_body(req);
      ChatInput input;
      if (body.contains("audio")) {
        AudioInput audio;
        audio.bytes = base64_decode(body["audio"].get<std::string>());
        audio.sample_rate_hz = body.value("sample_rate_hz", 16000);
        input.audio = std::move(audio);
      } else if (body.contains("text") && body["text"].is_string()) {
        input.text = body["text"].get<std::string>();
      } else {
        throw InputError("chat request needs text or audio");
      }
      input.speak = body.value("speak", false);
      const ChatOutcome out = session->chat(input);
      json reply = to_json(out.turn);
      if (out.transcript) reply["transcript"] = *out.transcript;
      if (out.audio_index) {
        reply["audio"] = {{"index", *out.audio_index},
                          {"format", *out.audio_format},
                          {"url", "/v1/sessions/" + session->id() + "/audio/" + std::to_string(*out.audio_index)}};
      }
      send_json(res, 200, reply);
    });
  });

  srv.Get("/v1/sessions/:id/audio/:n", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      const std::string& n = req.path_params.at("n");
      std::size_t index = 0;
      const auto [end, ec] = std::from_chars(n.data(), n.data() + n.size(), index);
      if (ec != std::errc() || end != n.data() + n.size()) throw NotFoundError("no audio '" + n + "'");
      AudioPayload audio = session->audio(index);
      res.status = 200;
      res.set_content(std::move(audio.bytes), audio.format);
    });
  });

  srv.Post("/v1/sessions/:id/close", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      session->close();
      send_json(res, 200, session->info());
    });
  });

  srv.Get("/v1/sessions/:id/events", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = m.find(req.path_params.at("id"));
      auto sub = std::make_shared<EventLog::Subscription>(
          session->events().subscribe(query_u64(req, "from_seq", 0), m.config().subscriber_buffer));
      res.status = 200;
      res.set_chunked_content_provider(
          "application/x-taskguide-frames", [session, sub](std::size_t, httplib::DataSink& sink) {
            const auto r = sub->next(std::chrono::milliseconds(200));
            switch (r.status) {
              case EventLog::Subscription::Status::Frame: {
                const std::string bytes = encode_frame(to_json(*r.frame));
                return sink.write(bytes.data(), bytes.size());
              }
              case EventLog::Subscription::Status::Timeout:
                return sink.is_writable();
              case EventLog::Subscription::Status::Overflow: {
                const std::string bytes = encode_frame(overflow_frame(sub->cursor(), sub->capacity()));
                sink.write(bytes.data(), bytes.size());
                sink.done();
                return true;
              }
              case EventLog::Subscription::Status::Closed:
                break;
            }
            sink.done();
            return true;
          });
    });
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    port_ = srv.bind_to_any_port(host);
  } else {
    port_ = srv.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (!srv.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  srv.listen_after_bind();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace taskguide
