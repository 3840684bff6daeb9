#pragma once

// Anchor-by-reference similarity matrices and per-anchor rankings.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "pfram/detail/gram_kernel.hpp"
#include "pfram/error.hpp"
#include "pfram/parallel.hpp"
#include "pfram/similarity.hpp"
#include "pfram/types.hpp"

namespace pfram {

enum class SourceKind : std::uint32_t {
  representation = 0,
  object_overlap = 1,
  description_cosine = 2,
};

inline std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::representation: return "representation";
    case SourceKind::object_overlap: return "object_overlap";
    case SourceKind::description_cosine: return "description_cosine";
  }
  return "unknown";
}

inline constexpr double kExcludedDiagonal = -std::numeric_limits<double>::infinity();

// n x n similarities, row = anchor, column = reference. The diagonal is
// excluded and holds kExcludedDiagonal.
class SimilarityMatrix {
 public:
  SimilarityMatrix(std::vector<ImageId> ids, std::vector<double> values, SourceKind kind)
      : ids_(std::move(ids)), values_(std::move(values)), kind_(kind) {
    const std::size_t n = ids_.size();
    if (n < 2) throw InputError("a similarity matrix needs at least 2 images");
    if (values_.size() != n * n)
      throw InputError("similarity matrix has " + std::to_string(values_.size()) +
                       " values, expected " + std::to_string(n * n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double& v = values_[i * n + j];
        if (i == j) {
          v = kExcludedDiagonal;
        } else if (!std::isfinite(v)) {
          throw InputError("non-finite similarity between '" + ids_[i].str() +
                           "' and '" + ids_[j].str() + "'");
        }
      }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::span<const ImageId> ids() const noexcept { return ids_; }
  SourceKind kind() const noexcept { return kind_; }
  double at(std::size_t anchor, std::size_t reference) const noexcept {
    return values_[anchor * ids_.size() + reference];
  }
  std::span<const double> row(std::size_t anchor) const noexcept {
    return std::span<const double>(values_).subspan(anchor * ids_.size(), ids_.size());
  }
  std::span<const double> values() const noexcept { return values_; }

  // Images with at least one zero-norm row (or a zero embedding); their
  // cosines against that row are defined as 0.
  std::size_t zero_norm_images() const noexcept { return zero_norm_images_; }
  void set_zero_norm_images(std::size_t count) noexcept { zero_norm_images_ = count; }

  friend bool operator==(const SimilarityMatrix& a, const SimilarityMatrix& b) {
    if (a.kind_ != b.kind_ || a.ids_ != b.ids_) return false;
    // Bitwise, so -inf == -inf and the comparison is exact.
    return std::equal(a.values_.begin(), a.values_.end(), b.values_.begin(),
                      b.values_.end(), [](double x, double y) {
                        return std::bit_cast<std::uint64_t>(x) ==
                               std::bit_cast<std::uint64_t>(y);
                      });
  }

 private:
  std::vector<ImageId> ids_;
  std::vector<double> values_;
  SourceKind kind_;
  std::size_t zero_norm_images_ = 0;
};

struct BuildOptions {
  unsigned threads = 1;
};

namespace detail {

template <typename System>
auto resolve_images(const System& system, std::span<const ImageId> images) {
  using Item = std::remove_cvref_t<decltype(*system.find(images[0]))>;
  if (images.size() < 2) throw InputError("at least 2 images are required");
  std::vector<const Item*> items;
  items.reserve(images.size());
  std::unordered_map<ImageId, int> seen;
  for (const auto& id : images) {
    const Item* item = system.find(id);
    if (!item) throw InputError("image '" + id.str() + "' is missing from the system");
    if (!seen.emplace(id, 0).second)
      throw InputError("image '" + id.str() + "' is listed twice");
    items.push_back(item);
  }
  return items;
}

}  // namespace detail

// Representation system: entry (a, b) = pair_similarity(a, b). Each unordered
// pair's dot products are computed once and read row-wise for (a, b) and
// column-wise for (b, a).
inline SimilarityMatrix build_similarity_matrix(const RepresentationSet& system,
                                                std::span<const ImageId> images,
                                                BuildOptions options = {}) {
  const auto items = detail::resolve_images(system, images);
  const std::size_t n = items.size();
  const unsigned threads = std::max(1u, options.threads);

  std::vector<detail::PackedRows> packed(n);
  parallel_for(n, threads, [&](std::size_t i) { packed[i] = detail::PackedRows(*items[i]); });

  std::vector<double> values(n * n, 0.0);
  parallel_for(n, threads, [&](std::size_t a) {
    const RepMatrix& anchor = *items[a];
    const auto inv_a = anchor.inverse_norms();
    std::vector<double> gram;
    std::vector<double> best;
    for (std::size_t b = a + 1; b < n; ++b) {
      const RepMatrix& ref = *items[b];
      const auto inv_b = ref.inverse_norms();
      const std::size_t ld = packed[b].padded_rows();
      gram.resize(packed[a].padded_rows() * ld);
      detail::gram(packed[a], packed[b], gram);

      best.assign(anchor.rows(), -std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < anchor.rows(); ++i)
        for (std::size_t j = 0; j < ref.rows(); ++j)
          best[i] = std::max(best[i], detail::scaled_cosine(gram[i * ld + j], inv_a[i], inv_b[j]));
      values[a * n + b] = detail::mean_of_best(best);

      best.assign(ref.rows(), -std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < anchor.rows(); ++i)
        for (std::size_t j = 0; j < ref.rows(); ++j)
          best[j] = std::max(best[j], detail::scaled_cosine(gram[i * ld + j], inv_b[j], inv_a[i]));
      values[b * n + a] = detail::mean_of_best(best);
    }
  });

  std::vector<ImageId> ids(images.begin(), images.end());
  SimilarityMatrix out(std::move(ids), std::move(values), SourceKind::representation);
  out.set_zero_norm_images(static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [](const RepMatrix* m) { return m->zero_rows() > 0; })));
  return out;
}

// Object-annotation system: entry (a, b) = number of shared objects.
inline SimilarityMatrix build_similarity_matrix(const ObjectCollection& system,
                                                std::span<const ImageId> images,
                                                BuildOptions options = {}) {
  const auto items = detail::resolve_images(system, images);
  const std::size_t n = items.size();
  std::vector<double> values(n * n, 0.0);
  parallel_for(n, std::max(1u, options.threads), [&](std::size_t a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto shared = static_cast<double>(gt_object_similarity(*items[a], *items[b]));
      values[a * n + b] = shared;
      values[b * n + a] = shared;
    }
  });
  return SimilarityMatrix(std::vector<ImageId>(images.begin(), images.end()),
                          std::move(values), SourceKind::object_overlap);
}

// Description-embedding system: entry (a, b) = cosine of the embeddings.
inline SimilarityMatrix build_similarity_matrix(const EmbeddingCollection& system,
                                                std::span<const ImageId> images,
                                                BuildOptions options = {}) {
  const auto items = detail::resolve_images(system, images);
  const std::size_t n = items.size();
  std::vector<double> values(n * n, 0.0);
  parallel_for(n, std::max(1u, options.threads), [&](std::size_t a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double c = gt_description_similarity(*items[a], *items[b]);
      values[a * n + b] = c;
      values[b * n + a] = c;
    }
  });
  SimilarityMatrix out(std::vector<ImageId>(images.begin(), images.end()),
                       std::move(values), SourceKind::description_cosine);
  out.set_zero_norm_images(static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [](const EmbeddingVector* e) { return e->is_zero(); })));
  return out;
}

// References of one anchor ordered by descending similarity; equal
// similarities are ordered by ascending image index.
struct Ranking {
  std::size_t anchor = 0;
  std::vector<std::uint32_t> order;
};

namespace detail {

struct RankBefore {
  std::span<const double> row;
  bool operator()(std::uint32_t x, std::uint32_t y) const noexcept {
    if (row[x] != row[y]) return row[x] > row[y];
    return x < y;
  }
};

inline std::vector<std::uint32_t> candidates(std::size_t n, std::size_t anchor) {
  std::vector<std::uint32_t> out;
  out.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != anchor) out.push_back(static_cast<std::uint32_t>(j));
  return out;
}

}  // namespace detail

inline Ranking rank_references(const SimilarityMatrix& matrix, std::size_t anchor) {
  if (anchor >= matrix.size())
    throw InputError("anchor index " + std::to_string(anchor) + " out of range");
  Ranking r{anchor, detail::candidates(matrix.size(), anchor)};
  std::sort(r.order.begin(), r.order.end(), detail::RankBefore{matrix.row(anchor)});
  return r;
}

// First `k` entries of rank_references(matrix, anchor). The ordering is a
// strict total order, so a partial sort yields exactly the same prefix.
inline Ranking top_references(const SimilarityMatrix& matrix, std::size_t anchor,
                              std::size_t k) {
  if (anchor >= matrix.size())
    throw InputError("anchor index " + std::to_string(anchor) + " out of range");
  Ranking r{anchor, detail::candidates(matrix.size(), anchor)};
  k = std::min(k, r.order.size());
  std::partial_sort(r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(k),
                    r.order.end(), detail::RankBefore{matrix.row(anchor)});
  r.order.resize(k);
  return r;
}

}  // namespace pfram
