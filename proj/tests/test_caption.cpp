#include <doctest.h>

#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/error.hpp"

using namespace taskguide;

namespace {

std::string every_frame_file(const tg_test::TempDir& dir, std::size_t frames) {
  std::string body;
  for (std::size_t f = 0; f < frames; ++f) {
    body += R"({"frame_index":)" + std::to_string(f) + R"(,"text":"caption )" + std::to_string(f) + "\"}\n";
  }
  return dir.write("every.jsonl", body).string();
}

}  // namespace

TEST_CASE("cadence policy arithmetic") {
  CadencePolicy p;
  CHECK(p.period_ms() == doctest::Approx(266.6667).epsilon(1e-6));
  for (std::uint64_t f : {0ull, 1ull, 8ull, 29ull, 30ull, 5670ull}) {
    CHECK(std::abs(static_cast<double>(p.timestamp_ms(f)) - static_cast<double>(f) / 30.0 * 1000.0) <= 1.0);
  }
  CHECK_THROWS_AS((CadencePolicy{0.0, 8}.validate()), ConfigError);
  CHECK_THROWS_AS((CadencePolicy{30.0, 0}.validate()), ConfigError);
}

TEST_CASE("stride 8 over a caption per frame keeps frames 0, 8, 16, ...") {
  tg_test::TempDir dir;
  const auto path = every_frame_file(dir, 100);
  ReplayStream stream(path, CadencePolicy{});
  const auto events = collect(stream);
  REQUIRE(events.size() == 13);
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].frame_index == 8 * i);
    CHECK(events[i].source == CaptionSource::Replay);
  }
}

TEST_CASE("stride skips relative to the last kept frame") {
  tg_test::TempDir dir;
  const auto path = dir.write("gaps.jsonl",
                              R"({"frame_index":0,"text":"a"}
{"frame_index":5,"text":"b"}
{"frame_index":9,"text":"c"}
{"frame_index":12,"text":"d"}

{"frame_index":17,"text":"e"}
)");
  ReplayStream stream(path, CadencePolicy{30.0, 8});
  std::vector<std::uint64_t> frames;
  for (const auto& e : collect(stream)) frames.push_back(e.frame_index);
  CHECK(frames == std::vector<std::uint64_t>{0, 9, 17});
}

TEST_CASE("fixture corpus regroups to the per-step sample counts") {
  const auto records = read_caption_file(tg_test::pinwheel_captions_path());
  CHECK(records.size() == 5671);
  std::vector<std::size_t> counts(13, 0);
  for (const auto& r : records) {
    REQUIRE(r.step.has_value());
    ++counts.at(*r.step);
  }
  CHECK(counts == tg_test::kPinwheelCounts);
  for (std::size_t i = 1; i < records.size(); ++i) CHECK(records[i].frame_index > records[i - 1].frame_index);
}

TEST_CASE("replay errors") {
  tg_test::TempDir dir;
  CHECK_THROWS_AS(ReplayStream("/nonexistent.jsonl", CadencePolicy{}), IoError);

  const auto bad = dir.write("bad.jsonl", "{\"frame_index\":0,\"text\":\"a\"}\n{\"frame_index\":1}\n");
  ReplayStream s(bad, CadencePolicy{30.0, 1});
  CHECK(s.next().has_value());
  try {
    s.next();
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  const auto backwards =
      dir.write("back.jsonl", "{\"frame_index\":9,\"text\":\"a\"}\n{\"frame_index\":3,\"text\":\"b\"}\n");
  ReplayStream b(backwards, CadencePolicy{30.0, 1});
  b.next();
  CHECK_THROWS_AS(b.next(), ParseError);
}

TEST_CASE("caption record parsing") {
  const auto rec = parse_caption_record(R"({"frame_index":3,"text":"hi","step":2})", 1);
  CHECK(rec.frame_index == 3);
  CHECK(rec.text == "hi");
  CHECK(rec.step == 2u);
  CHECK_FALSE(rec.enhanced.has_value());
  CHECK(format_caption_record(rec) == R"({"frame_index":3,"step":2,"text":"hi"})");

  CaptionRecord with = rec;
  with.enhanced = "hello";
  with.fallback = true;
  const auto back = parse_caption_record(format_caption_record(with), 1);
  CHECK(back.enhanced == "hello");
  CHECK(back.fallback);

  CHECK_THROWS_AS(parse_caption_record(R"({"frame_index":"3","text":"x"})", 4), ParseError);
  CHECK_THROWS_AS(parse_caption_record(R"({"frame_index":3,"text":""})", 4), ParseError);
  CHECK_THROWS_AS(parse_caption_record(R"({"frame_index":3,"text":"x","step":-1})", 4), ParseError);
  CHECK_THROWS_AS(parse_caption_record("{", 4), ParseError);
}

TEST_CASE("real-time pacing sleeps to the frame offset") {
  tg_test::TempDir dir;
  const auto path = every_frame_file(dir, 40);
  ReplayStream stream(path, CadencePolicy{30.0, 8}, Pacing::RealTime);
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> at;
  while (stream.next()) {
    at.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  REQUIRE(at.size() == 5);
  CHECK(at.back() >= 4 * 266.0);
  for (std::size_t i = 1; i < at.size(); ++i) {
    CHECK(at[i] - at[i - 1] == doctest::Approx(266.67).epsilon(0.2));
  }
}

TEST_CASE("caption log ordering and reads") {
  CaptionLog log;
  CHECK(log.since(0).empty());
  CHECK_FALSE(log.last_frame().has_value());
  CaptionEvent e;
  e.text = "a";
  e.frame_index = 16;
  CHECK(log.append(e) == 0);
  e.frame_index = 8;
  CHECK_THROWS_AS(log.append(e), OrderingError);
  e.frame_index = 16;
  CHECK_THROWS_AS(log.append(e), OrderingError);
  e.frame_index = 24;
  CHECK(log.append(e) == 1);
  e.frame_index = 32;
  e.text.clear();
  CHECK_THROWS_AS(log.append(e), InputError);
  CHECK(log.size() == 2);
  CHECK(log.since(0).size() == 2);
  CHECK(log.since(2).empty());
  CHECK(log.since(1).front().frame_index == 24);
  CHECK(log.last_frame() == 24u);
}

TEST_CASE("caption log readers see consistent prefixes during appends") {
  CaptionLog log;
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (std::uint64_t f = 0; f < 2000; ++f) {
      CaptionEvent e;
      e.frame_index = f;
      e.text = "t";
      log.append(e);
    }
    done = true;
  });
  bool consistent = true;
  while (!done) {
    const auto snapshot = log.since(0);
    for (std::size_t i = 0; i < snapshot.size(); ++i) consistent = consistent && snapshot[i].frame_index == i;
  }
  writer.join();
  CHECK(consistent);
  CHECK(log.size() == 2000);
}

TEST_CASE("caption events serialize their optional label") {
  CaptionEvent e;
  e.session_id = "s";
  e.frame_index = 8;
  e.timestamp_ms = 267;
  e.text = "x";
  nlohmann::json j = e;
  CHECK_FALSE(j.contains("step"));
  e.ground_truth_step = 3;
  j = e;
  CHECK(j["step"] == 3);
  CHECK(j["source"] == "replay");
}
