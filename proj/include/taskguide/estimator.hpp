#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include <nlohmann/json_fwd.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/recipe.hpp"
#include "taskguide/similarity.hpp"

namespace taskguide {

struct SmoothingConfig {
  std::size_t window_size = 15;
  double forward_bias = 0.0;

  void validate() const;
};

/// Slope of the logistic that maps the top-1/top-2 margin to confidence.
inline constexpr double kConfidenceSlope = 10.0;

struct StepEstimate {
  std::size_t step_index = 0;
  double confidence = 0.0;
  StepScoreVector smoothed_scores;
  /// Caption sequence number the estimate reflects; -1 before any caption.
  std::int64_t as_of_seq = -1;
};

/// Estimate of a session that has seen no captions.
StepEstimate initial_estimate(std::size_t step_count);

/// 2 * logistic(slope * (top1 - top2)) - 1, so a zero margin gives 0 and
/// the result stays in [0, 1). A single-entry vector has confidence 1.
double margin_confidence(const StepScoreVector& scores, double slope = kConfidenceSlope);

/// Canonical JSON for an estimate; byte-stable for equal inputs.
nlohmann::json to_json(const StepEstimate& e);

/// Sliding-window mean over raw step-score vectors, with an optional bias
/// toward steps after the previously estimated one.
class StepSmoother {
 public:
  explicit StepSmoother(SmoothingConfig cfg = {});

  /// Throws ShapeError if `scores` differs in length from earlier updates.
  StepEstimate update(const StepScoreVector& scores, std::int64_t seq);

  const SmoothingConfig& config() const { return cfg_; }
  std::optional<std::size_t> previous_step() const { return previous_step_; }
  void reset();

 private:
  SmoothingConfig cfg_;
  std::deque<StepScoreVector> window_;
  std::optional<std::size_t> previous_step_;
};

inline StepEstimate update_estimate(StepSmoother& state, const StepScoreVector& scores,
                                    std::int64_t seq) {
  return state.update(scores, seq);
}

/// Reference embeddings per (recipe, granularity, embedder). Thread-safe.
class ReferenceCache {
 public:
  /// Rows are the recipe's step references at `g`, in step order.
  std::shared_ptr<const EmbeddingMatrix<double>> get(const Recipe& recipe, Granularity g,
                                                     EmbedBackend& backend);
  std::size_t size() const;
  void clear();

 private:
  using Key = std::tuple<std::string, std::string, Granularity, std::string>;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_ptr<const EmbeddingMatrix<double>>> entries_;
};

/// Embeds all step references without caching.
EmbeddingMatrix<double> embed_references(const Recipe& recipe, Granularity g, EmbedBackend& backend);

struct Classification {
  std::size_t step_index = 0;
  StepScoreVector scores;
};

/// Scores `text` against every step reference at `g` and returns the
/// lowest-index argmax. Backend errors propagate. `cache` may be null.
Classification classify_caption(std::string_view text, const Recipe& recipe, Granularity g,
                                 EmbedBackend& backend, ReferenceCache* cache = nullptr);

/// Per-session pipeline: classify each caption, then smooth.
class StateEstimator {
 public:
  StateEstimator(std::shared_ptr<const Recipe> recipe, Granularity g, EmbedBackend& backend,
                 SmoothingConfig smoothing, std::shared_ptr<ReferenceCache> cache = nullptr);

  StepEstimate observe(std::string_view text, std::int64_t seq);
  const Recipe& recipe() const { return *recipe_; }

 private:
  std::shared_ptr<const Recipe> recipe_;
  Granularity granularity_;
  EmbedBackend* backend_;
  std::shared_ptr<ReferenceCache> cache_;
  StepSmoother smoother_;
};

}  // namespace taskguide
