#include <doctest.h>

#include <mutex>

#include "support.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/enhancer.hpp"
#include "taskguide/error.hpp"
#include "taskguide/mock_backends.hpp"

using namespace taskguide;

namespace {

EnhancementContext pinwheel_context(std::size_t w = kDefaultEnhanceWindow,
                                    Granularity g = Granularity::Medium) {
  EnhancementContext ctx;
  ctx.recipe = &tg_test::pinwheel();
  ctx.templates = &tg_test::bundled_templates();
  ctx.context_granularity = g;
  ctx.window_size = w;
  return ctx;
}

CaptionEvent caption(std::string text, std::uint64_t frame = 0) {
  CaptionEvent e;
  e.text = std::move(text);
  e.frame_index = frame;
  return e;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

class RecordingChat final : public ChatBackend {
 public:
  const std::string& id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override {
    std::lock_guard lock(mutex_);
    prompts.push_back(request.prompt);
    return {"rewritten " + request.prompt, {}, 0.0};
  }
  std::vector<std::string> prompts;

 private:
  std::string id_ = "recording";
  std::mutex mutex_;
};

const RetryPolicy kNoRetry{0, std::chrono::milliseconds(0), std::chrono::milliseconds(0)};

}  // namespace

TEST_CASE("templates render placeholders and reject unknown ones") {
  CHECK(render_template("a {x} b {y}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2");
  CHECK(render_template("no placeholders", {}) == "no placeholders");
  CHECK_THROWS_AS(render_template("{missing}", {}), ConfigError);
  TemplateRegistry reg;
  reg.add("t", "x");
  CHECK(reg.contains("t"));
  CHECK_THROWS_AS(reg.get("u"), ConfigError);
  CHECK_THROWS_AS(TemplateRegistry::load_directory("/nonexistent/templates"), IoError);
  const auto ids = tg_test::bundled_templates().ids();
  CHECK(std::find(ids.begin(), ids.end(), "enhance.v1") != ids.end());
  CHECK(std::find(ids.begin(), ids.end(), "dialog.v1") != ids.end());
}

TEST_CASE("enhancement prompt is deterministic") {
  auto ctx = pinwheel_context();
  ctx.recent_raw = {"a", "b", "c"};
  const auto raw = caption("I spread butter");
  CHECK(build_enhancement_prompt(ctx, raw) == build_enhancement_prompt(ctx, raw));
  CHECK(make_enhancement_request(ctx, raw).prompt == "I spread butter");
  CHECK(make_enhancement_request(ctx, raw).temperature == 0.0);
}

TEST_CASE("window slots follow the configured size") {
  SUBCASE("W=1 has exactly one slot") {
    auto ctx = pinwheel_context(1);
    ctx.recent_raw = {"older", "newest"};
    const auto prompt = build_enhancement_prompt(ctx, caption("now"));
    CHECK(occurrences(prompt, "- t-") == 1);
    CHECK(prompt.find("- t-1: newest") != std::string::npos);
    CHECK(prompt.find("older") == std::string::npos);
  }
  SUBCASE("missing history renders placeholders") {
    auto ctx = pinwheel_context(3);
    ctx.recent_raw = {"only"};
    const auto prompt = build_enhancement_prompt(ctx, caption("now"));
    CHECK(prompt.find("- t-3: (none)\n- t-2: (none)\n- t-1: only") != std::string::npos);
  }
}

TEST_CASE("context granularity selects the step texts") {
  const auto short_prompt = build_enhancement_prompt(pinwheel_context(5, Granularity::Short), caption("x"));
  CHECK(short_prompt.find("Step 3: spread butter\n") != std::string::npos);
  const auto medium_prompt = build_enhancement_prompt(pinwheel_context(), caption("x"));
  CHECK(medium_prompt.find("Step 3: Evenly spread butter on the tortilla") != std::string::npos);
}

TEST_CASE("context validation") {
  auto ctx = pinwheel_context();
  ctx.template_id = "enhance.v9";
  CHECK_THROWS_AS(build_enhancement_prompt(ctx, caption("x")), ConfigError);
  ctx = pinwheel_context(0);
  CHECK_THROWS_AS(ctx.validate(), ConfigError);
  ctx = pinwheel_context();
  ctx.recipe = nullptr;
  CHECK_THROWS_AS(ctx.validate(), ConfigError);
  CHECK_THROWS_AS(build_enhancement_prompt(pinwheel_context(), caption("")), InputError);
}

TEST_CASE("normalize_rewrite collapses whitespace") {
  CHECK(normalize_rewrite("  a\n b\t\tc  ") == "a b c");
  CHECK(normalize_rewrite("\n\n").empty());
}

TEST_CASE("enhance_caption success and fallback") {
  const auto ctx = pinwheel_context();
  EchoChat echo;
  const auto ok = enhance_caption(ctx, caption("I spread butter"), echo, 7);
  CHECK_FALSE(ok.fallback);
  CHECK(ok.enhanced_text == "I spread butter");
  CHECK(ok.source_seq == 7);
  CHECK(ok.attempts == 1);
  CHECK(ok.prompt_fingerprint.size() == 16);

  FailingChat failing;
  const RetryPolicy retry{2, std::chrono::milliseconds(1), std::chrono::milliseconds(2)};
  const auto bad = enhance_caption(ctx, caption("I spread butter"), failing, 0, retry);
  CHECK(bad.fallback);
  CHECK(bad.enhanced_text == "I spread butter");
  CHECK(bad.attempts == 3);
  CHECK(failing.calls() == 3);
}

TEST_CASE("rule mock answers with the nearest step text") {
  const auto ctx = pinwheel_context();
  RuleChat rule;
  const auto out = enhance_caption(ctx, caption("I spread the butter on the tortilla"), rule);
  CHECK_FALSE(out.fallback);
  CHECK(out.enhanced_text == "Evenly spread butter on the tortilla");
}

TEST_CASE("retry backoff doubles up to the cap") {
  RetryPolicy p;
  CHECK(p.backoff(0) == std::chrono::milliseconds(100));
  CHECK(p.backoff(1) == std::chrono::milliseconds(200));
  CHECK(p.backoff(10) == std::chrono::milliseconds(2000));
}

TEST_CASE("batch_enhance with one request in flight keeps input order") {
  std::vector<CaptionEvent> events;
  for (int i = 0; i < 20; ++i) events.push_back(caption("c" + std::to_string(i), 8 * i));
  RecordingChat rec;
  const auto out = batch_enhance(pinwheel_context(), events, rec, 1);
  REQUIRE(out.size() == events.size());
  REQUIRE(rec.prompts.size() == events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(rec.prompts[i] == events[i].text);
    CHECK(out[i].source_seq == i);
    CHECK(out[i].enhanced_text == "rewritten " + events[i].text);
  }
}

TEST_CASE("batch_enhance output order is independent of concurrency") {
  std::vector<CaptionEvent> events;
  for (int i = 0; i < 64; ++i) events.push_back(caption("caption number " + std::to_string(i), i));
  EchoChat echo;
  const auto serial = batch_enhance(pinwheel_context(), events, echo, 1);
  const auto parallel = batch_enhance(pinwheel_context(), events, echo, 8);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].enhanced_text == parallel[i].enhanced_text);
    CHECK(serial[i].prompt_fingerprint == parallel[i].prompt_fingerprint);
  }
}

TEST_CASE("seeded failure fraction marks exactly the failing captions") {
  std::vector<CaptionEvent> events;
  for (int i = 0; i < 100; ++i) events.push_back(caption("frame caption " + std::to_string(i), i));
  FailingChat failing(FailingChatOptions{std::nullopt, 0.1, 42});
  const auto ctx = pinwheel_context();
  const auto out = batch_enhance(ctx, events, failing, 4, kNoRetry);
  REQUIRE(out.size() == 100);
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    EnhancementContext item = ctx;
    const std::size_t from = i > ctx.window_size ? i - ctx.window_size : 0;
    for (std::size_t j = from; j < i; ++j) item.recent_raw.push_back(events[j].text);
    CHECK(out[i].fallback == failing.should_fail(make_enhancement_request(item, events[i])));
    if (out[i].fallback) {
      ++fallbacks;
      CHECK(out[i].enhanced_text == events[i].text);
    }
  }
  CHECK(fallbacks > 0);
  CHECK(fallbacks < 30);
}

TEST_CASE("batch_enhance edge cases") {
  EchoChat echo;
  CHECK(batch_enhance(pinwheel_context(), std::span<const CaptionEvent>{}, echo, 4).empty());
  std::vector<CaptionEvent> one{caption("x")};
  CHECK_THROWS_AS(batch_enhance(pinwheel_context(), one, echo, 0), InputError);
}

TEST_CASE("caption window keeps the newest entries") {
  CaptionWindow w(2);
  w.push("a");
  w.push("b");
  w.push("c");
  CHECK(w.snapshot() == std::vector<std::string>{"b", "c"});
}
