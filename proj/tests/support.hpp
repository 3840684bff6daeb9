#pragma once

// Shared fixtures and brute-force oracles for the test suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pfram/rng.hpp"
#include "pfram/sim_matrix.hpp"
#include "pfram/types.hpp"

namespace testing_support {

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("pfram_test_" + std::to_string(rd()) + "_" + std::to_string(++counter));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> random_floats(pfram::Xoshiro256StarStar& rng, std::size_t count) {
  std::vector<float> out(count);
  for (auto& v : out) v = static_cast<float>(rng.normal());
  return out;
}

inline pfram::RepMatrix random_rep(pfram::Xoshiro256StarStar& rng, const std::string& id,
                                   std::size_t rows, std::size_t dim) {
  return pfram::RepMatrix(pfram::ImageId(id), rows, dim, random_floats(rng, rows * dim));
}

inline std::vector<pfram::ImageId> make_ids(std::size_t n, const std::string& prefix = "img") {
  std::vector<pfram::ImageId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.emplace_back(prefix + std::to_string(i));
  return ids;
}

// Random set whose images have row counts in [1, max_rows].
inline pfram::RepresentationSet random_set(std::uint64_t seed, std::size_t n, std::size_t max_rows,
                                           std::size_t dim, const std::string& model = "m",
                                           int layer = 0) {
  pfram::Xoshiro256StarStar rng(seed);
  std::vector<pfram::RepMatrix> entries;
  for (std::size_t i = 0; i < n; ++i)
    entries.push_back(random_rep(rng, "img" + std::to_string(i), 1 + rng.below(max_rows), dim));
  return pfram::RepresentationSet(model, layer, std::move(entries));
}

// Textbook evaluation, one cosine at a time: norms from sums of squares,
// dot in ascending feature order, best reference per anchor row, mean of the
// row maxima taken in ascending order.
inline double naive_pair_similarity(const pfram::RepMatrix& a, const pfram::RepMatrix& b) {
  std::vector<double> maxima;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t k = 0; k < a.dim(); ++k) {
        const double x = a.row(i)[k];
        const double y = b.row(j)[k];
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
      const double ia = na > 0.0 ? 1.0 / std::sqrt(na) : 0.0;
      const double ib = nb > 0.0 ? 1.0 / std::sqrt(nb) : 0.0;
      best = std::max(best, std::clamp(dot * (ia * ib), -1.0, 1.0));
    }
    maxima.push_back(best);
  }
  std::sort(maxima.begin(), maxima.end());
  double total = 0.0;
  for (double m : maxima) total += m;
  return total / static_cast<double>(a.rows());
}

// Algorithm formulas evaluated directly: DCG over the ranked prefix, IDCG
// over the descending-sorted gains of the same candidate list.
inline std::optional<double> naive_ndcg(const std::vector<double>& gains,
                                        const std::vector<std::uint32_t>& ranking, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t j = 1; j <= k; ++j) dcg += gains[ranking[j - 1]] / std::log2(j + 1.0);
  std::vector<double> ideal;
  for (auto r : ranking) ideal.push_back(gains[r]);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t j = 1; j <= k; ++j) idcg += ideal[j - 1] / std::log2(j + 1.0);
  if (idcg <= 0.0) return std::nullopt;
  return dcg / idcg;
}

inline double brute_knn(const std::vector<std::uint32_t>& g, const std::vector<std::uint32_t>& f,
                        std::size_t k) {
  std::set<std::uint32_t> a(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(k));
  std::set<std::uint32_t> b(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(k));
  std::size_t shared = 0;
  for (auto x : a) shared += b.count(x);
  return static_cast<double>(shared) / static_cast<double>(k);
}

inline std::vector<std::uint32_t> random_permutation(pfram::Xoshiro256StarStar& rng,
                                                     std::size_t n) {
  std::vector<std::uint32_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
  pfram::partial_shuffle(std::span<std::uint32_t>(p), n, rng);
  return p;
}

// Random symmetric matrix with a -inf diagonal.
inline pfram::SimilarityMatrix random_matrix(pfram::Xoshiro256StarStar& rng, std::size_t n,
                                             bool integer_gains = false) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      v[i * n + j] = v[j * n + i] =
          integer_gains ? static_cast<double>(rng.below(6)) : rng.uniform() * 2.0 - 1.0;
  return pfram::SimilarityMatrix(make_ids(n), std::move(v),
                                 integer_gains ? pfram::SourceKind::object_overlap
                                               : pfram::SourceKind::representation);
}

}  // namespace testing_support
