#include "taskguide/estimator.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "taskguide/error.hpp"
#include "taskguide/hashing.hpp"

namespace taskguide {

void SmoothingConfig::validate() const {
  if (window_size == 0) throw ConfigError("smoothing window_size must be at least 1");
  if (!(forward_bias >= 0.0)) throw ConfigError("forward_bias must be non-negative");
}

StepEstimate initial_estimate(std::size_t step_count) {
  StepEstimate e;
  e.smoothed_scores = StepScoreVector::Zero(static_cast<Eigen::Index>(step_count));
  return e;
}

double margin_confidence(const StepScoreVector& scores, double slope) {
  if (scores.size() == 0) return 0.0;
  if (scores.size() == 1) return 1.0;
  double top1 = -std::numeric_limits<double>::infinity();
  double top2 = top1;
  for (double s : scores) {
    if (s > top1) {
      top2 = top1;
      top1 = s;
    } else if (s > top2) {
      top2 = s;
    }
  }
  const double margin = top1 - top2;
  return 2.0 / (1.0 + std::exp(-slope * margin)) - 1.0;
}

nlohmann::json to_json(const StepEstimate& e) {
  return nlohmann::json{
      {"step_index", e.step_index},
      {"confidence", e.confidence},
      {"smoothed_scores", std::vector<double>(e.smoothed_scores.begin(), e.smoothed_scores.end())},
      {"as_of_seq", e.as_of_seq}};
}

StepSmoother::StepSmoother(SmoothingConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void StepSmoother::reset() {
  window_.clear();
  previous_step_.reset();
}

StepEstimate StepSmoother::update(const StepScoreVector& scores, std::int64_t seq) {
  if (scores.size() == 0) throw ShapeError("update_estimate: empty score vector");
  if (!window_.empty() && window_.front().size() != scores.size()) {
    throw ShapeError("update_estimate: score vector length " + std::to_string(scores.size()) +
                     " differs from " + std::to_string(window_.front().size()));
  }
  window_.push_back(scores);
  while (window_.size() > cfg_.window_size) window_.pop_front();

  // Oldest first, so the reduction order only depends on the window contents.
  StepScoreVector smoothed = StepScoreVector::Zero(scores.size());
  for (const auto& v : window_) smoothed += v;
  smoothed /= static_cast<double>(window_.size());

  if (cfg_.forward_bias > 0.0 && previous_step_) {
    for (Eigen::Index i = static_cast<Eigen::Index>(*previous_step_) + 1; i < smoothed.size(); ++i) {
      smoothed(i) += cfg_.forward_bias;
    }
  }

  StepEstimate est;
  est.step_index = static_cast<std::size_t>(argmax_lowest(smoothed));
  est.confidence = margin_confidence(smoothed);
  est.smoothed_scores = std::move(smoothed);
  est.as_of_seq = seq;
  previous_step_ = est.step_index;
  return est;
}

EmbeddingMatrix<double> embed_references(const Recipe& recipe, Granularity g, EmbedBackend& backend) {
  std::vector<std::string> refs;
  refs.reserve(recipe.size());
  for (const Step& s : recipe.steps) refs.push_back(s.reference(g));
  if (refs.empty()) throw DomainError("recipe '" + recipe.id + "' has no steps");
  const auto vectors = embed_batch(backend, refs);
  return stack_rows<double>(vectors);
}

std::shared_ptr<const EmbeddingMatrix<double>> ReferenceCache::get(const Recipe& recipe,
                                                                   Granularity g,
                                                                   EmbedBackend& backend) {
  std::string content;
  for (const Step& s : recipe.steps) {
    content += s.reference(g);
    content.push_back('\n');
  }
  Key key{recipe.id, fingerprint_hex(content), g, backend.id()};
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  auto matrix = std::make_shared<const EmbeddingMatrix<double>>(embed_references(recipe, g, backend));
  std::lock_guard lock(mutex_);
  return entries_.emplace(std::move(key), std::move(matrix)).first->second;
}

std::size_t ReferenceCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ReferenceCache::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

Classification classify_caption(std::string_view text, const Recipe& recipe, Granularity g,
                                 EmbedBackend& backend, ReferenceCache* cache) {
  const std::string caption(text);
  const auto caption_vec = embed_batch(backend, std::span<const std::string>(&caption, 1));
  Classification out;
  if (cache != nullptr) {
    out.scores = score_steps(caption_vec.front(), *cache->get(recipe, g, backend));
  } else {
    out.scores = score_steps(caption_vec.front(), embed_references(recipe, g, backend));
  }
  out.step_index = static_cast<std::size_t>(argmax_lowest(out.scores));
  return out;
}

StateEstimator::StateEstimator(std::shared_ptr<const Recipe> recipe, Granularity g,
                               EmbedBackend& backend, SmoothingConfig smoothing,
                               std::shared_ptr<ReferenceCache> cache)
    : recipe_(std::move(recipe)),
      granularity_(g),
      backend_(&backend),
      cache_(cache ? std::move(cache) : std::make_shared<ReferenceCache>()),
      smoother_(smoothing) {}

StepEstimate StateEstimator::observe(std::string_view text, std::int64_t seq) {
  const Classification c = classify_caption(text, *recipe_, granularity_, *backend_, cache_.get());
  return smoother_.update(c.scores, seq);
}

}  // namespace taskguide
