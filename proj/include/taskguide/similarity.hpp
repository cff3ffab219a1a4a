#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "taskguide/error.hpp"

namespace taskguide {

template <typename Scalar>
using Embedding = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One embedding per row.
template <typename Scalar>
using EmbeddingMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using EmbeddingVector = Embedding<double>;
using StepScoreVector = Eigen::VectorXd;

/// dot(a, b) / (|a| |b|), clamped to [-1, 1].
/// Throws ShapeError on dimension mismatch and DomainError on a zero vector.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (!(na > Scalar(0)) || !(nb > Scalar(0))) {
    throw DomainError("cosine_similarity: zero-norm vector");
  }
  const Scalar c = a.dot(b) / (na * nb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

/// Returns `v / |v|`. Throws DomainError on a zero vector.
template <typename Derived>
Embedding<typename Derived::Scalar> normalized_embedding(const Eigen::MatrixBase<Derived>& v) {
  const auto n = v.norm();
  if (!(n > 0)) throw DomainError("cannot normalize a zero-norm vector");
  return v / n;
}

/// Stacks equally sized vectors as rows. Throws ShapeError on mismatch,
/// DomainError on an empty list.
template <typename Scalar>
EmbeddingMatrix<Scalar> stack_rows(std::span<const Embedding<Scalar>> rows) {
  if (rows.empty()) throw DomainError("cannot stack an empty embedding list");
  const Eigen::Index dim = rows.front().size();
  EmbeddingMatrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw ShapeError("embedding dimensions differ within a batch");
    out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return out;
}

/// Cosine similarity of `caption` against every row of `steps`.
template <typename DerivedC, typename DerivedS>
Embedding<typename DerivedC::Scalar> score_steps(const Eigen::MatrixBase<DerivedC>& caption,
                                                 const Eigen::MatrixBase<DerivedS>& steps) {
  using Scalar = typename DerivedC::Scalar;
  if (steps.rows() == 0) throw DomainError("score_steps: empty step list");
  if (steps.cols() != caption.size()) {
    throw ShapeError("score_steps: caption dimension " + std::to_string(caption.size()) +
                     " does not match step dimension " + std::to_string(steps.cols()));
  }
  const Scalar caption_norm = caption.norm();
  if (!(caption_norm > Scalar(0))) throw DomainError("score_steps: zero-norm caption");
  const Embedding<Scalar> row_norms = steps.rowwise().norm();
  if ((row_norms.array() <= Scalar(0)).any()) throw DomainError("score_steps: zero-norm step");
  Embedding<Scalar> scores = (steps * caption).cwiseQuotient(row_norms) / caption_norm;
  return scores.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

template <typename Scalar>
Embedding<Scalar> score_steps(const Embedding<Scalar>& caption,
                              std::span<const Embedding<Scalar>> steps) {
  return score_steps(caption, stack_rows<Scalar>(steps));
}

/// Index of the maximum entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::MatrixBase<Derived>& v) {
  if (v.size() == 0) throw DomainError("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// Pairwise (cascade) summation; fixed reduction order for a given length.
double pairwise_sum(std::span<const double> values);

inline double pairwise_mean(std::span<const double> values) {
  return values.empty() ? 0.0 : pairwise_sum(values) / static_cast<double>(values.size());
}

}  // namespace taskguide
