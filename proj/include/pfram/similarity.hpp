#pragma once

// Image-level similarity primitives.
//
// Cosines are computed as an exact-product double accumulation of float
// inputs, scaled by the precomputed inverse norms. A float*float product is
// exact in double, so fused and unfused multiply-add give the same bits, and
// the only thing that fixes the result is the summation order (ascending
// feature index). The batched kernel in sim_matrix.hpp keeps that order and
// therefore agrees with these functions bit for bit.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pfram/error.hpp"
#include "pfram/types.hpp"

namespace pfram {

namespace detail {

inline double exact_dot(std::span<const float> a, std::span<const float> b) noexcept {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return acc;
}

// The product of inverse norms is formed first so that cos(x, y) and
// cos(y, x) are the same double.
inline double scaled_cosine(double dot, double inv_a, double inv_b) noexcept {
  return std::clamp(dot * (inv_a * inv_b), -1.0, 1.0);
}

// Mean of per-row maxima summed in ascending order, so the result does not
// depend on the order of the rows.
inline double mean_of_best(std::vector<double>& best) {
  std::sort(best.begin(), best.end());
  double sum = 0.0;
  for (double v : best) sum += v;
  return sum / static_cast<double>(best.size());
}

}  // namespace detail

// Mean over anchor rows of the best cosine against any reference row.
// Anchor rows drive the mean, so the function is not symmetric and the two
// row counts may differ.
inline double pair_similarity(const RepMatrix& anchor, const RepMatrix& reference) {
  if (anchor.dim() != reference.dim())
    throw InputError("dimension mismatch between '" + anchor.image().str() + "' (" +
                     std::to_string(anchor.dim()) + ") and '" +
                     reference.image().str() + "' (" +
                     std::to_string(reference.dim()) + ")");
  const auto inv_a = anchor.inverse_norms();
  const auto inv_r = reference.inverse_norms();
  std::vector<double> best(anchor.rows(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < anchor.rows(); ++i) {
    for (std::size_t j = 0; j < reference.rows(); ++j) {
      const double dot = detail::exact_dot(anchor.row(i), reference.row(j));
      best[i] = std::max(best[i], detail::scaled_cosine(dot, inv_a[i], inv_r[j]));
    }
  }
  return detail::mean_of_best(best);
}

// Number of objects both images contain.
inline std::size_t gt_object_similarity(const ObjectVector& a, const ObjectVector& b) {
  if (!same_vocabulary(a, b))
    throw InputError("object vectors of '" + a.image().str() + "' and '" +
                     b.image().str() + "' use different vocabularies");
  auto pa = a.present();
  auto pb = b.present();
  std::size_t shared = 0;
  for (std::size_t i = 0, j = 0; i < pa.size() && j < pb.size();) {
    if (pa[i] < pb[j]) {
      ++i;
    } else if (pb[j] < pa[i]) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  return shared;
}

// Cosine of two description embeddings; 0 when either is the zero vector
// (callers see that through EmbeddingVector::is_zero()).
inline double gt_description_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw InputError("embedding dimension mismatch between '" + a.image().str() +
                     "' (" + std::to_string(a.dim()) + ") and '" + b.image().str() +
                     "' (" + std::to_string(b.dim()) + ")");
  return detail::scaled_cosine(detail::exact_dot(a.values(), b.values()),
                               a.inverse_norm(), b.inverse_norm());
}

}  // namespace pfram
