#include "taskguide/caption.hpp"

#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "taskguide/error.hpp"

namespace taskguide {

using nlohmann::json;

std::string_view to_string(CaptionSource s) {
  return s == CaptionSource::Replay ? "replay" : "live";
}

void to_json(json& j, const CaptionEvent& e) {
  j = json{{"session_id", e.session_id},
           {"frame_index", e.frame_index},
           {"timestamp_ms", e.timestamp_ms},
           {"text", e.text},
           {"source", to_string(e.source)}};
  if (e.ground_truth_step) j["step"] = *e.ground_truth_step;
}

std::int64_t CadencePolicy::timestamp_ms(std::uint64_t frame_index) const {
  return std::llround(static_cast<double>(frame_index) / frame_rate_fps * 1000.0);
}

void CadencePolicy::validate() const {
  if (!(frame_rate_fps > 0.0)) throw ConfigError("frame_rate_fps must be positive");
  if (frame_stride == 0) throw ConfigError("frame_stride must be positive");
}

CaptionRecord parse_caption_record(std::string_view line, std::size_t line_number) {
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("line " + std::to_string(line_number) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw fail("record must be a JSON object");

  CaptionRecord rec;
  auto frame = j.find("frame_index");
  if (frame == j.end() || !frame->is_number_unsigned()) {
    throw fail("'frame_index' must be a non-negative integer");
  }
  rec.frame_index = frame->get<std::uint64_t>();

  auto text = j.find("text");
  if (text == j.end() || !text->is_string()) throw fail("'text' must be a string");
  rec.text = text->get<std::string>();
  if (rec.text.empty()) throw fail("'text' is empty");

  if (auto step = j.find("step"); step != j.end() && !step->is_null()) {
    if (!step->is_number_unsigned()) throw fail("'step' must be a non-negative integer");
    rec.step = step->get<std::size_t>();
  }
  if (auto enh = j.find("enhanced"); enh != j.end() && !enh->is_null()) {
    if (!enh->is_string()) throw fail("'enhanced' must be a string");
    rec.enhanced = enh->get<std::string>();
  }
  if (auto fb = j.find("fallback"); fb != j.end()) {
    if (!fb->is_boolean()) throw fail("'fallback' must be a boolean");
    rec.fallback = fb->get<bool>();
  }
  return rec;
}

std::string format_caption_record(const CaptionRecord& record) {
  json j = {{"frame_index", record.frame_index}, {"text", record.text}};
  if (record.step) j["step"] = *record.step;
  if (record.enhanced) {
    j["enhanced"] = *record.enhanced;
    j["fallback"] = record.fallback;
  }
  return j.dump();
}

std::vector<CaptionRecord> read_caption_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read caption file " + path.string());
  std::vector<CaptionRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_caption_record(line, line_number));
  }
  if (in.bad()) throw IoError("error while reading " + path.string());
  return records;
}

ReplayStream::ReplayStream(const std::filesystem::path& path, CadencePolicy policy, Pacing pacing,
                           std::string session_id)
    : in_(path), path_(path), policy_(policy), pacing_(pacing), session_id_(std::move(session_id)) {
  policy_.validate();
  if (!in_) throw IoError("cannot read caption file " + path.string());
}

std::optional<CaptionEvent> ReplayStream::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_number_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CaptionRecord rec = parse_caption_record(line, line_number_);
    if (last_read_frame_ && rec.frame_index < *last_read_frame_) {
      throw ParseError("line " + std::to_string(line_number_) + ": frame_index " +
                       std::to_string(rec.frame_index) + " goes backwards");
    }
    last_read_frame_ = rec.frame_index;
    if (last_kept_frame_ && rec.frame_index < *last_kept_frame_ + policy_.frame_stride) continue;

    if (!first_kept_frame_) {
      first_kept_frame_ = rec.frame_index;
      start_ = std::chrono::steady_clock::now();
    }
    last_kept_frame_ = rec.frame_index;

    if (pacing_ == Pacing::RealTime) {
      const double offset_ms = static_cast<double>(rec.frame_index - *first_kept_frame_) /
                               policy_.frame_rate_fps * 1000.0;
      std::this_thread::sleep_until(
          start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                       std::chrono::duration<double, std::milli>(offset_ms)));
    }

    CaptionEvent ev;
    ev.session_id = session_id_;
    ev.frame_index = rec.frame_index;
    ev.timestamp_ms = policy_.timestamp_ms(rec.frame_index);
    ev.text = std::move(rec.text);
    ev.source = CaptionSource::Replay;
    ev.ground_truth_step = rec.step;
    return ev;
  }
  if (in_.bad()) throw IoError("error while reading " + path_.string());
  return std::nullopt;
}

ReplayStream open_replay_stream(const std::filesystem::path& path, CadencePolicy policy,
                                Pacing pacing) {
  return ReplayStream(path, policy, pacing);
}

std::vector<CaptionEvent> collect(ReplayStream& stream) {
  std::vector<CaptionEvent> out;
  while (auto ev = stream.next()) out.push_back(std::move(*ev));
  return out;
}

std::uint64_t CaptionLog::append(CaptionEvent event) {
  if (event.text.empty()) throw InputError("caption text is empty");
  std::unique_lock lock(mutex_);
  if (!events_.empty() && event.frame_index <= events_.back().frame_index) {
    throw OrderingError("frame_index " + std::to_string(event.frame_index) +
                        " does not follow last accepted frame " +
                        std::to_string(events_.back().frame_index));
  }
  events_.push_back(std::move(event));
  return events_.size() - 1;
}

std::vector<CaptionEvent> CaptionLog::since(std::uint64_t from_seq) const {
  std::shared_lock lock(mutex_);
  if (from_seq >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from_seq), events_.end()};
}

std::size_t CaptionLog::size() const {
  std::shared_lock lock(mutex_);
  return events_.size();
}

std::optional<std::uint64_t> CaptionLog::last_frame() const {
  std::shared_lock lock(mutex_);
  if (events_.empty()) return std::nullopt;
  return events_.back().frame_index;
}

}  // namespace taskguide
