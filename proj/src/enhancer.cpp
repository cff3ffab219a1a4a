#include "taskguide/enhancer.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include <nlohmann/json.hpp>

#include "taskguide/error.hpp"
#include "taskguide/hashing.hpp"

namespace taskguide {

void EnhancementContext::validate() const {
  if (recipe == nullptr) throw ConfigError("enhancement context has no recipe");
  if (templates == nullptr) throw ConfigError("enhancement context has no template registry");
  if (window_size == 0) throw ConfigError("enhancement window must hold at least one caption");
  templates->get(template_id);
}

void CaptionWindow::push(std::string text) {
  items_.push_back(std::move(text));
  while (items_.size() > size_) items_.pop_front();
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  auto delay = initial_backoff;
  for (int i = 0; i < attempt && delay < max_backoff; ++i) delay *= 2;
  return std::min(delay, max_backoff);
}

nlohmann::json to_json(const EnhancedCaption& c) {
  return nlohmann::json{{"source_seq", c.source_seq},
                        {"raw_text", c.raw_text},
                        {"enhanced_text", c.enhanced_text},
                        {"prompt_fingerprint", c.prompt_fingerprint},
                        {"backend_id", c.backend_id},
                        {"latency_ms", c.latency_ms},
                        {"fallback", c.fallback}};
}

std::string format_step_list(const Recipe& recipe, Granularity g) {
  std::string out;
  for (const Step& s : recipe.steps) {
    if (!out.empty()) out.push_back('\n');
    out += "Step " + std::to_string(s.index + 1) + ": " + s.reference(g);
  }
  return out;
}

namespace {

std::string format_window(const EnhancementContext& ctx) {
  const std::size_t w = ctx.window_size;
  const std::size_t have = std::min(ctx.recent_raw.size(), w);
  // Only the newest W captions count.
  const auto first = ctx.recent_raw.end() - static_cast<std::ptrdiff_t>(have);
  std::string out;
  for (std::size_t slot = 0; slot < w; ++slot) {
    const std::size_t back = w - slot;  // t-W ... t-1
    if (!out.empty()) out.push_back('\n');
    out += "- t-" + std::to_string(back) + ": ";
    if (back <= have) {
      out += *(first + static_cast<std::ptrdiff_t>(have - back));
    } else {
      out += "(none)";
    }
  }
  return out;
}

}  // namespace

std::string build_enhancement_prompt(const EnhancementContext& ctx, const CaptionEvent& raw) {
  ctx.validate();
  if (raw.text.empty()) throw InputError("cannot enhance an empty caption");
  const std::map<std::string, std::string> values = {
      {"recipe_title", ctx.recipe->title},
      {"recipe_steps", format_step_list(*ctx.recipe, ctx.context_granularity)},
      {"recent_captions", format_window(ctx)},
      {"raw_caption", raw.text}};
  return render_template(ctx.templates->get(ctx.template_id), values);
}

ChatRequest make_enhancement_request(const EnhancementContext& ctx, const CaptionEvent& raw) {
  ChatRequest req;
  req.system = build_enhancement_prompt(ctx, raw);
  req.prompt = raw.text;
  req.temperature = 0.0;
  req.max_tokens = 96;
  return req;
}

std::string normalize_rewrite(std::string_view reply) {
  std::string out;
  bool pending_space = false;
  for (char c : reply) {
    if (c == '\n' || c == '\r' || c == '\t' || c == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

EnhancedCaption enhance_caption(const EnhancementContext& ctx, const CaptionEvent& raw,
                                ChatBackend& backend, std::uint64_t source_seq,
                                const RetryPolicy& retry) {
  const ChatRequest req = make_enhancement_request(ctx, raw);
  EnhancedCaption out;
  out.source_seq = source_seq;
  out.raw_text = raw.text;
  out.backend_id = backend.id();
  out.prompt_fingerprint = fingerprint_hex(req.system + '\x1f' + req.prompt);

  const auto start = std::chrono::steady_clock::now();
  for (int attempt = 0; attempt <= retry.retries; ++attempt) {
    ++out.attempts;
    try {
      const ChatResponse resp = backend.complete(req);
      std::string text = normalize_rewrite(resp.text);
      if (text.empty()) throw ProtocolError(backend.id() + ": empty rewrite");
      out.enhanced_text = std::move(text);
      out.fallback = false;
      break;
    } catch (const BackendError&) {
      if (attempt == retry.retries) {
        out.enhanced_text = raw.text;
        out.fallback = true;
        break;
      }
      std::this_thread::sleep_for(retry.backoff(attempt));
    } catch (const Error&) {
      // Not transient (e.g. the backend cannot handle this input); no retry.
      out.enhanced_text = raw.text;
      out.fallback = true;
      break;
    }
  }
  out.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<EnhancedCaption> batch_enhance(const EnhancementContext& ctx,
                                           std::span<const CaptionEvent> events,
                                           ChatBackend& backend, std::size_t max_in_flight,
                                           const RetryPolicy& retry) {
  if (max_in_flight == 0) throw InputError("batch_enhance: max_in_flight must be at least 1");
  ctx.validate();
  std::vector<EnhancedCaption> out(events.size());
  if (events.empty()) return out;

  auto context_for = [&](std::size_t i) {
    EnhancementContext item = ctx;
    item.recent_raw.clear();
    const std::size_t from = i > ctx.window_size ? i - ctx.window_size : 0;
    for (std::size_t j = from; j < i; ++j) item.recent_raw.push_back(events[j].text);
    return item;
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < events.size(); i = next++) {
      try {
        out[i] = enhance_caption(context_for(i), events[i], backend, i, retry);
      } catch (const std::exception&) {
        out[i].source_seq = i;
        out[i].raw_text = events[i].text;
        out[i].enhanced_text = events[i].text;
        out[i].backend_id = backend.id();
        out[i].fallback = true;
      }
    }
  };
  const std::size_t threads = std::min(max_in_flight, events.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

}  // namespace taskguide
