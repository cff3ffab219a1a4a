#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/recipe.hpp"
#include "taskguide/templates.hpp"

namespace taskguide {

inline constexpr const char* kDefaultEnhanceTemplate = "enhance.v1";
inline constexpr std::size_t kDefaultEnhanceWindow = 5;

struct EnhancementContext {
  const Recipe* recipe = nullptr;
  const TemplateRegistry* templates = nullptr;
  Granularity context_granularity = Granularity::Medium;
  std::string template_id = kDefaultEnhanceTemplate;
  /// Number of prior-caption slots rendered into the prompt (W).
  std::size_t window_size = kDefaultEnhanceWindow;
  /// Up to `window_size` earlier raw captions, oldest first.
  std::vector<std::string> recent_raw;

  /// Throws ConfigError on a missing recipe/registry, W == 0 or unknown template.
  void validate() const;
};

/// Keeps the last W raw captions for building successive contexts.
class CaptionWindow {
 public:
  explicit CaptionWindow(std::size_t size) : size_(size == 0 ? 1 : size) {}
  void push(std::string text);
  std::vector<std::string> snapshot() const { return {items_.begin(), items_.end()}; }

 private:
  std::size_t size_;
  std::deque<std::string> items_;
};

struct RetryPolicy {
  int retries = 2;
  std::chrono::milliseconds initial_backoff{100};
  std::chrono::milliseconds max_backoff{2000};

  std::chrono::milliseconds backoff(int attempt) const;
};

struct EnhancedCaption {
  std::uint64_t source_seq = 0;
  std::string raw_text;
  std::string enhanced_text;
  std::string prompt_fingerprint;
  std::string backend_id;
  double latency_ms = 0.0;
  bool fallback = false;
  int attempts = 0;
};

nlohmann::json to_json(const EnhancedCaption& c);

/// Steps as `Step N: text` lines (N = index + 1) at granularity `g`.
std::string format_step_list(const Recipe& recipe, Granularity g);

/// Rendered prompt for rewriting `raw`. Byte-identical for identical inputs.
/// Throws ConfigError (unknown template) or InputError (empty caption).
std::string build_enhancement_prompt(const EnhancementContext& ctx, const CaptionEvent& raw);

/// Chat request for one caption: the rendered prompt is the system message
/// and the raw caption is the user message.
ChatRequest make_enhancement_request(const EnhancementContext& ctx, const CaptionEvent& raw);

/// Collapses the reply to one trimmed line.
std::string normalize_rewrite(std::string_view reply);

/// Never throws on backend failure: after `retry.retries` retries it returns
/// the raw text with `fallback` set.
EnhancedCaption enhance_caption(const EnhancementContext& ctx, const CaptionEvent& raw,
                                ChatBackend& backend, std::uint64_t source_seq = 0,
                                const RetryPolicy& retry = {});

/// Enhances `events` with at most `max_in_flight` concurrent requests. Item i
/// uses the W events before it as its window. Output order equals input order.
std::vector<EnhancedCaption> batch_enhance(const EnhancementContext& ctx,
                                           std::span<const CaptionEvent> events,
                                           ChatBackend& backend, std::size_t max_in_flight,
                                           const RetryPolicy& retry = {});

}  // namespace taskguide
