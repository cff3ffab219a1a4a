#pragma once

// Brute-force reference computations. They deliberately avoid Eigen and the
// library's aggregation helpers: plain loops over std::vector<double>.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "taskguide/eval.hpp"
#include "taskguide/mock_backends.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const Vec& a, const Vec& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

inline Vec to_vec(const taskguide::EmbeddingVector& v) { return Vec(v.data(), v.data() + v.size()); }

inline Vec embed(const std::string& text) { return to_vec(taskguide::trigram_embedding(text)); }

inline double mean(const Vec& xs) {
  long double s = 0.0L;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : static_cast<double>(s / static_cast<long double>(xs.size()));
}

inline std::size_t argmax(const Vec& xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

struct StepMeans {
  std::vector<std::size_t> counts;
  Vec means;  // NaN for empty steps
  double overall = 0.0;
};

/// Similarity of every caption to its labeled step's reference, grouped by
/// step, over the test embedder.
inline StepMeans similarity(const taskguide::LabeledCorpus& corpus, const taskguide::Recipe& recipe,
                            taskguide::Granularity g, taskguide::Pipeline pipeline) {
  std::vector<Vec> refs;
  for (const auto& s : recipe.steps) refs.push_back(embed(s.reference(g)));
  std::vector<Vec> per(recipe.size());
  Vec all;
  for (std::size_t i = 0; i < corpus.events.size(); ++i) {
    const auto& e = corpus.events[i];
    const std::string& text = pipeline == taskguide::Pipeline::Raw ? e.text : *e.enhanced;
    const double c = cosine(embed(text), refs[e.step]);
    per[e.step].push_back(c);
    all.push_back(c);
  }
  StepMeans out;
  for (const auto& v : per) {
    out.counts.push_back(v.size());
    out.means.push_back(v.empty() ? std::nan("") : mean(v));
  }
  out.overall = mean(all);
  return out;
}

/// Sliding-window mean of score vectors, then lowest-index argmax.
inline std::vector<std::size_t> smoothed_argmax(const std::vector<Vec>& scores, std::size_t window) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    const std::size_t from = t + 1 >= window ? t + 1 - window : 0;
    Vec acc(scores[t].size(), 0.0);
    for (std::size_t k = from; k <= t; ++k) {
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += scores[k][j];
    }
    for (double& a : acc) a /= static_cast<double>(t - from + 1);
    out.push_back(argmax(acc));
  }
  return out;
}

inline std::vector<Vec> caption_scores(const taskguide::LabeledCorpus& corpus, const taskguide::Recipe& recipe,
                                       taskguide::Granularity g) {
  std::vector<Vec> refs;
  for (const auto& s : recipe.steps) refs.push_back(embed(s.reference(g)));
  std::vector<Vec> out;
  for (const auto& e : corpus.events) {
    const Vec c = embed(e.text);
    Vec row;
    for (const auto& r : refs) row.push_back(cosine(c, r));
    out.push_back(std::move(row));
  }
  return out;
}

inline std::size_t correct_count(const taskguide::LabeledCorpus& corpus, const std::vector<std::size_t>& predicted) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) n += predicted[i] == corpus.events[i].step ? 1 : 0;
  return n;
}

}  // namespace oracle
