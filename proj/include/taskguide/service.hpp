#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/dialog.hpp"
#include "taskguide/enhancer.hpp"
#include "taskguide/estimator.hpp"
#include "taskguide/recipe.hpp"
#include "taskguide/templates.hpp"

namespace taskguide {

enum class FrameKind { CaptionRaw, CaptionEnhanced, Estimate, DialogUser, DialogAssistant };

std::string_view to_string(FrameKind k);
std::optional<FrameKind> parse_frame_kind(std::string_view s);

/// One record of a session's ordered event log.
struct EventFrame {
  FrameKind kind = FrameKind::CaptionRaw;
  std::uint64_t seq = 0;
  std::int64_t ts_ms = 0;  // server wall clock, ms since epoch
  nlohmann::json payload;
};

nlohmann::json to_json(const EventFrame& f);
EventFrame event_frame_from_json(const nlohmann::json& j);

/// Wire encoding of a stream frame: `<decimal byte length>\n<json>\n`.
std::string encode_frame(const nlohmann::json& body);

/// Terminal frame sent to a subscriber that fell too far behind.
nlohmann::json overflow_frame(std::uint64_t next_seq, std::size_t capacity);

/// Incremental decoder for the stream encoding. Feed arbitrary byte chunks,
/// then pull complete frames.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  /// Next complete frame, if any. Throws ParseError on a malformed stream.
  std::optional<nlohmann::json> next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  std::string buffer_;
};

/// Append-only, gapless event log for one session. Appends are serialized;
/// readers take cheap snapshots or follow it through a Subscription.
class EventLog {
 public:
  explicit EventLog(std::optional<std::filesystem::path> journal = std::nullopt);

  /// Assigns the next seq, stamps the time, writes the journal line.
  /// Throws SessionClosedError once closed.
  std::uint64_t append(FrameKind kind, nlohmann::json payload);
  std::vector<std::shared_ptr<const EventFrame>> since(std::uint64_t from_seq) const;
  std::size_t size() const;
  void close();
  bool closed() const;

  class Subscription {
   public:
    enum class Status { Frame, Timeout, Closed, Overflow };
    struct Result {
      Status status = Status::Timeout;
      std::shared_ptr<const EventFrame> frame;
    };

    /// Waits up to `timeout` for the next frame. Overflow is reported once
    /// more than `capacity` live frames are pending; Closed once the log is
    /// closed and drained.
    Result next(std::chrono::milliseconds timeout);
    std::uint64_t cursor() const { return cursor_; }
    std::size_t capacity() const { return capacity_; }

   private:
    friend class EventLog;
    Subscription(const EventLog* log, std::uint64_t from_seq, std::uint64_t live_from, std::size_t capacity)
        : log_(log), cursor_(from_seq), live_from_(live_from), capacity_(capacity) {}

    const EventLog* log_;
    std::uint64_t cursor_;
    std::uint64_t live_from_;
    std::size_t capacity_;
  };

  /// Replays frames from `from_seq`, then follows live appends. Frames
  /// that existed at subscription time never count toward `capacity`.
  Subscription subscribe(std::uint64_t from_seq, std::size_t capacity) const;

 private:
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::vector<std::shared_ptr<const EventFrame>> frames_;
  bool closed_ = false;
  std::ofstream journal_;
};

inline constexpr std::size_t kDefaultSubscriberBuffer = 1024;

struct SessionOptions {
  Granularity granularity = Granularity::Medium;
  SmoothingConfig smoothing;
  bool enhance = true;
  std::size_t enhance_window = kDefaultEnhanceWindow;
  Granularity enhance_context = Granularity::Medium;
  std::size_t history_cap = kDefaultHistoryCap;

  void validate() const;
};

SessionOptions session_options_from_json(const nlohmann::json& j, SessionOptions base = {});
nlohmann::json to_json(const SessionOptions& o);

/// Backends shared by every session of a service.
struct ServiceBackends {
  std::shared_ptr<ChatBackend> chat;     // dialog
  std::shared_ptr<ChatBackend> enhance;  // caption rewriting
  std::shared_ptr<EmbedBackend> embed;
  std::shared_ptr<AsrBackend> asr;
  std::shared_ptr<TtsBackend> tts;

  /// Roles: chat, enhance (defaults to chat), embed, asr, tts.
  static ServiceBackends from_registry(const BackendRegistry& registry);
  /// Deterministic in-process mocks.
  static ServiceBackends mocks();
};

struct ServiceConfig {
  std::filesystem::path recipes_dir;
  std::filesystem::path templates_dir;
  std::optional<std::filesystem::path> journal_dir;
  SessionOptions session_defaults;
  CadencePolicy cadence;
  std::size_t subscriber_buffer = kDefaultSubscriberBuffer;
  BackendRegistry backends;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t http_threads = 32;

  /// Relative paths inside the file resolve against the file's directory.
  static ServiceConfig load(const std::filesystem::path& path);
  static ServiceConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
};

/// Bundled defaults (fixtures and templates of the source tree, mock backends).
ServiceConfig default_service_config();

enum class SessionStatus { Active, Closed };
std::string_view to_string(SessionStatus s);

struct ChatInput {
  std::optional<std::string> text;
  std::optional<AudioInput> audio;
  bool speak = false;
};

struct ChatOutcome {
  DialogTurn turn;
  std::optional<std::string> transcript;
  std::optional<std::size_t> audio_index;
  std::optional<std::string> audio_format;
};

/// Thrown when speech recognition fails for a chat request.
class AsrFailure : public BackendError {
 public:
  explicit AsrFailure(const std::string& what) : BackendError("asr", what) {}
};

/// One guidance session: caption log, event log, estimator, enhancement
/// worker and dialog history.
class Session {
 public:
  Session(std::string id, std::shared_ptr<const Recipe> recipe, SessionOptions options,
          const ServiceBackends& backends, const TemplateRegistry& templates,
          std::shared_ptr<ReferenceCache> cache, CadencePolicy cadence,
          std::optional<std::filesystem::path> journal);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }
  const Recipe& recipe() const { return *recipe_; }
  const SessionOptions& options() const { return options_; }
  SessionStatus status() const;

  /// Appends to the caption log, updates the estimate and queues the
  /// caption for enhancement. Returns the caption sequence number.
  /// Throws OrderingError, InputError or SessionClosedError.
  std::uint64_t push_caption(CaptionEvent event);
  std::vector<CaptionEvent> caption_log(std::uint64_t from_seq) const;
  /// Latest estimate; never waits on enhancement or dialog.
  StepEstimate state() const;
  /// Throws AsrFailure (audio input), InputError or SessionClosedError.
  ChatOutcome chat(const ChatInput& input);
  /// Synthesized reply audio by index. Throws NotFoundError.
  AudioPayload audio(std::size_t index) const;

  EventLog& events() { return events_; }
  const EventLog& events() const { return events_; }
  std::vector<DialogTurn> dialog_history() const { return dialog_.history(); }

  /// Blocks until every queued caption has been enhanced or `timeout` passes.
  bool wait_enhanced(std::chrono::milliseconds timeout) const;
  void close();
  nlohmann::json info() const;

 private:
  struct EnhanceJob {
    CaptionEvent event;
    std::uint64_t seq;
    std::vector<std::string> window;
  };
  void enhance_loop(std::stop_token stop);

  std::string id_;
  std::shared_ptr<const Recipe> recipe_;
  SessionOptions options_;
  ServiceBackends backends_;
  const TemplateRegistry* templates_;
  CadencePolicy cadence_;
  std::chrono::system_clock::time_point created_at_;

  CaptionLog captions_;
  EventLog events_;
  DialogSession dialog_;

  std::mutex ingest_mutex_;
  StateEstimator estimator_;
  CaptionWindow window_;

  mutable std::mutex state_mutex_;
  StepEstimate latest_;
  bool closed_ = false;

  mutable std::mutex audio_mutex_;
  std::vector<AudioPayload> audio_;

  mutable std::mutex queue_mutex_;
  mutable std::condition_variable_any queue_cv_;
  std::deque<EnhanceJob> queue_;
  bool busy_ = false;
  std::jthread worker_;
};

/// Registry of recipes and live sessions.
class SessionManager {
 public:
  SessionManager(ServiceConfig config, ServiceBackends backends);

  void add_recipe(Recipe recipe);
  std::vector<std::string> recipe_ids() const;
  /// Throws NotFoundError naming the recipe id.
  std::shared_ptr<const Recipe> recipe(const std::string& id) const;

  std::shared_ptr<Session> create_session(const std::string& recipe_id,
                                          std::optional<SessionOptions> options = std::nullopt);
  /// Throws NotFoundError.
  std::shared_ptr<Session> find(const std::string& session_id) const;
  std::size_t session_count() const;

  const ServiceConfig& config() const { return config_; }
  const TemplateRegistry& templates() const { return templates_; }
  const ServiceBackends& backends() const { return backends_; }

 private:
  ServiceConfig config_;
  ServiceBackends backends_;
  TemplateRegistry templates_;
  std::shared_ptr<ReferenceCache> cache_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const Recipe>> recipes_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

/// 22 URL-safe random characters.
std::string new_session_id();

/// HTTP status used for an error of the given kind.
int http_status_for(const Error& e);

/// HTTP/1.1 JSON front end for a SessionManager.
class HttpServer {
 public:
  explicit HttpServer(SessionManager& manager);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace taskguide
