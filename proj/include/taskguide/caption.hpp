#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace taskguide {

enum class CaptionSource { Replay, LiveBackend };

std::string_view to_string(CaptionSource s);

struct CaptionEvent {
  std::string session_id;
  std::uint64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  std::string text;
  CaptionSource source = CaptionSource::Replay;
  std::optional<std::size_t> ground_truth_step;

  bool operator==(const CaptionEvent&) const = default;
};

void to_json(nlohmann::json& j, const CaptionEvent& e);

/// One caption every `frame_stride` frames of a `frame_rate_fps` stream.
struct CadencePolicy {
  double frame_rate_fps = 30.0;
  std::uint64_t frame_stride = 8;

  double period_ms() const { return static_cast<double>(frame_stride) / frame_rate_fps * 1000.0; }
  std::int64_t timestamp_ms(std::uint64_t frame_index) const;
  /// Throws ConfigError on a non-positive rate or zero stride.
  void validate() const;
};

enum class Pacing { RealTime, AsFastAsPossible };

/// One line of a caption JSONL file: `{frame_index, text, step?}` plus the
/// optional `enhanced` / `fallback` fields written by the enhance command.
struct CaptionRecord {
  std::uint64_t frame_index = 0;
  std::string text;
  std::optional<std::size_t> step;
  std::optional<std::string> enhanced;
  bool fallback = false;
};

/// Parses one JSONL line. Throws ParseError mentioning `line_number`.
CaptionRecord parse_caption_record(std::string_view line, std::size_t line_number);
std::string format_caption_record(const CaptionRecord& record);

/// Reads every record of a caption file, skipping blank lines.
/// Throws IoError when unreadable and ParseError (with line number) on bad records.
std::vector<CaptionRecord> read_caption_file(const std::filesystem::path& path);

/// Replays a caption file as CaptionEvents, subsampled by the cadence policy.
/// Records are read lazily; in RealTime mode `next()` sleeps until the
/// event's offset from the first emitted frame has elapsed.
class ReplayStream {
 public:
  ReplayStream(const std::filesystem::path& path, CadencePolicy policy,
               Pacing pacing = Pacing::AsFastAsPossible, std::string session_id = {});

  std::optional<CaptionEvent> next();
  const CadencePolicy& policy() const { return policy_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  CadencePolicy policy_;
  Pacing pacing_;
  std::string session_id_;
  std::size_t line_number_ = 0;
  std::optional<std::uint64_t> last_read_frame_;
  std::optional<std::uint64_t> last_kept_frame_;
  std::optional<std::uint64_t> first_kept_frame_;
  std::chrono::steady_clock::time_point start_;
};

ReplayStream open_replay_stream(const std::filesystem::path& path, CadencePolicy policy,
                                Pacing pacing = Pacing::AsFastAsPossible);

/// Drains a stream into a vector (as-fast-as-possible use).
std::vector<CaptionEvent> collect(ReplayStream& stream);

/// Append-only, strictly frame-increasing caption log. One writer, any number
/// of readers; readers always see a consistent prefix.
class CaptionLog {
 public:
  /// Returns the assigned sequence number. Throws OrderingError if
  /// `event.frame_index` does not exceed the last accepted frame, and
  /// InputError on empty text.
  std::uint64_t append(CaptionEvent event);
  std::vector<CaptionEvent> since(std::uint64_t from_seq) const;
  std::size_t size() const;
  std::optional<std::uint64_t> last_frame() const;

 private:
  mutable std::shared_mutex mutex_;
  std::vector<CaptionEvent> events_;
};

}  // namespace taskguide
