#pragma once

// System-level agreement between a candidate and a ground-truth similarity
// matrix: NDCG@k and mutual k-NN per anchor, their mean over anchors, and
// aggregation of per-layer scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfram/error.hpp"
#include "pfram/parallel.hpp"
#include "pfram/sim_matrix.hpp"

namespace pfram {

enum class Metric { ndcg, mutual_knn };

inline std::string_view to_string(Metric m) {
  return m == Metric::ndcg ? "ndcg" : "knn";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "ndcg") return Metric::ndcg;
  if (name == "knn" || name == "mutual_knn") return Metric::mutual_knn;
  throw InputError("unknown metric '" + std::string(name) + "' (expected ndcg or knn)");
}

struct MetricKind {
  Metric kind = Metric::ndcg;
  std::size_t k = 100;
};

// Ground-truth gains of one anchor, indexed by image index. The anchor's own
// slot is never read.
struct RelevanceList {
  std::size_t anchor = 0;
  std::vector<double> gains;
};

inline RelevanceList relevance_list(const SimilarityMatrix& ground_truth, std::size_t anchor) {
  if (anchor >= ground_truth.size())
    throw InputError("anchor index " + std::to_string(anchor) + " out of range");
  const auto row = ground_truth.row(anchor);
  RelevanceList rel{anchor, std::vector<double>(row.begin(), row.end())};
  rel.gains[anchor] = 0.0;
  return rel;
}

struct NdcgOptions {
  // Accept negative gains (possible with description cosines) and compute the
  // raw DCG / IDCG ratio.
  bool allow_negative_gains = false;
};

namespace detail {

// 1 / log2(position + 1) for positions 1..count.
inline std::span<const double> discounts(std::size_t count) {
  thread_local std::vector<double> table;
  while (table.size() < count) {
    const double position = static_cast<double>(table.size() + 1);
    table.push_back(1.0 / std::log2(position + 1.0));
  }
  return std::span<const double>(table).first(count);
}

}  // namespace detail

// NDCG@k of `ranking` (item indices, best first) under `gains` (by item
// index). The ideal ordering is taken over the items that appear in the
// ranking. Returns nullopt when the ideal DCG is not positive: the anchor
// carries no ranking signal.
inline std::optional<double> ndcg_at_k(std::span<const double> gains,
                                       std::span<const std::uint32_t> ranking, std::size_t k,
                                       NdcgOptions options = {}) {
  if (k == 0 || k > ranking.size())
    throw InputError("k must be in [1, " + std::to_string(ranking.size()) + "], got " +
                     std::to_string(k));
  std::vector<double> ideal;
  ideal.reserve(ranking.size());
  for (std::uint32_t item : ranking) {
    if (item >= gains.size())
      throw InputError("ranked item " + std::to_string(item) + " has no gain");
    const double g = gains[item];
    if (!std::isfinite(g)) throw InputError("gains must be finite");
    if (g < 0.0 && !options.allow_negative_gains)
      throw InputError(
          "negative gain encountered; NDCG with negative relevance needs "
          "--allow-negative-gains");
    ideal.push_back(g);
  }
  std::partial_sort(ideal.begin(), ideal.begin() + static_cast<std::ptrdiff_t>(k), ideal.end(),
                    std::greater<>());
  const auto discount = detail::discounts(k);
  double dcg = 0.0;
  double idcg = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    dcg += gains[ranking[j]] * discount[j];
    idcg += ideal[j] * discount[j];
  }
  if (!(idcg > 0.0)) return std::nullopt;
  return dcg / idcg;
}

inline std::optional<double> ndcg_at_k(const RelevanceList& rel, const Ranking& ranking_f,
                                       std::size_t k, NdcgOptions options = {}) {
  if (rel.anchor != ranking_f.anchor)
    throw InputError("relevance list and ranking belong to different anchors");
  return ndcg_at_k(rel.gains, ranking_f.order, k, options);
}

// |top-k(g) intersect top-k(f)| / k.
inline double mutual_knn(std::span<const std::uint32_t> ranking_g,
                         std::span<const std::uint32_t> ranking_f, std::size_t k) {
  const std::size_t limit = std::min(ranking_g.size(), ranking_f.size());
  if (k == 0 || k > limit)
    throw InputError("k must be in [1, " + std::to_string(limit) + "], got " +
                     std::to_string(k));
  std::vector<std::uint32_t> g(ranking_g.begin(), ranking_g.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::uint32_t> f(ranking_f.begin(), ranking_f.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(g.begin(), g.end());
  std::sort(f.begin(), f.end());
  std::size_t shared = 0;
  for (std::size_t i = 0, j = 0; i < k && j < k;) {
    if (g[i] < f[j]) {
      ++i;
    } else if (f[j] < g[i]) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(k);
}

inline double mutual_knn(const Ranking& ranking_g, const Ranking& ranking_f, std::size_t k) {
  if (ranking_g.anchor != ranking_f.anchor)
    throw InputError("rankings belong to different anchors");
  return mutual_knn(ranking_g.order, ranking_f.order, k);
}

struct PframOptions {
  bool allow_negative_gains = false;
  unsigned threads = 1;
};

struct PframResult {
  double score = 0.0;
  // Standard error of the per-anchor scores (sample standard deviation over
  // sqrt of the number of scored anchors); 0 with a single scored anchor.
  double standard_error = 0.0;
  std::size_t scored_anchors = 0;
  std::size_t skipped_anchors = 0;
  // One entry per anchor; nullopt for skipped anchors.
  std::vector<std::optional<double>> per_anchor;
};

// Mean over anchors of the chosen agreement metric between the candidate
// system (sim_f) and the ground truth (sim_g).
inline PframResult pfram(const SimilarityMatrix& sim_f, const SimilarityMatrix& sim_g,
                         MetricKind metric, PframOptions options = {}) {
  if (!std::ranges::equal(sim_f.ids(), sim_g.ids()))
    throw InputError("candidate and ground-truth matrices cover different image lists");
  const std::size_t n = sim_f.size();
  if (metric.k == 0 || metric.k > n - 1)
    throw InputError("k must be in [1, " + std::to_string(n - 1) + "], got " +
                     std::to_string(metric.k));

  if (metric.kind == Metric::ndcg && !options.allow_negative_gains) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && sim_g.at(i, j) < 0.0)
          throw InputError(
              "ground truth has negative similarities (e.g. '" + sim_g.ids()[i].str() +
              "' vs '" + sim_g.ids()[j].str() +
              "'); NDCG with negative gains needs --allow-negative-gains");
  }

  PframResult result;
  result.per_anchor.resize(n);
  const NdcgOptions ndcg_options{options.allow_negative_gains};
  parallel_for(n, std::max(1u, options.threads), [&](std::size_t a) {
    if (metric.kind == Metric::ndcg) {
      const Ranking f = top_references(sim_f, a, metric.k);
      // The ideal order needs every candidate's gain, not only f's top-k.
      const RelevanceList rel = relevance_list(sim_g, a);
      const auto cand = detail::candidates(n, a);
      std::vector<std::uint32_t> ranking(f.order);
      ranking.reserve(cand.size());
      std::vector<char> used(n, 0);
      for (auto idx : f.order) used[idx] = 1;
      for (auto idx : cand)
        if (!used[idx]) ranking.push_back(idx);
      result.per_anchor[a] = ndcg_at_k(rel.gains, ranking, metric.k, ndcg_options);
    } else {
      const Ranking f = top_references(sim_f, a, metric.k);
      const Ranking g = top_references(sim_g, a, metric.k);
      result.per_anchor[a] = mutual_knn(g.order, f.order, metric.k);
    }
  });

  // Fixed ascending-anchor reduction order.
  double sum = 0.0;
  for (const auto& v : result.per_anchor) {
    if (v) {
      sum += *v;
      ++result.scored_anchors;
    } else {
      ++result.skipped_anchors;
    }
  }
  if (result.scored_anchors == 0)
    throw InputError("no anchor has a positive ideal DCG; every anchor shares nothing "
                     "with its references under the ground truth");
  result.score = sum / static_cast<double>(result.scored_anchors);
  if (result.scored_anchors > 1) {
    double ss = 0.0;
    for (const auto& v : result.per_anchor)
      if (v) ss += (*v - result.score) * (*v - result.score);
    const double sd = std::sqrt(ss / static_cast<double>(result.scored_anchors - 1));
    result.standard_error = sd / std::sqrt(static_cast<double>(result.scored_anchors));
  }
  return result;
}

// Per-layer scores for one model; `layer_set` is the set S aggregated over.
struct LayerScores {
  std::string model;
  std::map<int, double> per_layer;
  std::vector<int> layer_set;
};

struct PframAggregate {
  std::optional<double> input;
  double mean = 0.0;
  double max = 0.0;
};

// 0, stride, 2*stride, ... up to and including last_layer.
inline std::vector<int> stride_layer_set(int last_layer, int stride = 4) {
  if (stride < 1) throw InputError("layer stride must be >= 1");
  if (last_layer < 0) throw InputError("last LLM layer must be >= 0");
  std::vector<int> out;
  for (int l = 0; l <= last_layer; l += stride) out.push_back(l);
  return out;
}

// Layers of `available` that belong to the stride set: nonnegative multiples
// of the stride. Negative (visual-encoder) layers are never part of S.
inline std::vector<int> select_layer_set(std::span<const int> available, int stride = 4) {
  if (stride < 1) throw InputError("layer stride must be >= 1");
  std::vector<int> out;
  for (int l : available)
    if (l >= 0 && l % stride == 0) out.push_back(l);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// input = score of layer 0, mean and max over the layer set. An empty
// layer_set means every nonnegative layer present.
inline PframAggregate aggregate_layers(const LayerScores& scores) {
  std::vector<int> layers;
  if (scores.layer_set.empty()) {
    for (const auto& [l, _] : scores.per_layer)
      if (l >= 0) layers.push_back(l);
  } else {
    for (int l : scores.layer_set) {
      if (l < 0) continue;
      if (!scores.per_layer.contains(l))
        throw InputError("layer " + std::to_string(l) + " of the layer set has no score");
      layers.push_back(l);
    }
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  }
  if (layers.empty())
    throw InputError("no nonnegative layer scores to aggregate for model '" +
                     scores.model + "'");
  PframAggregate agg;
  if (auto it = scores.per_layer.find(0); it != scores.per_layer.end()) agg.input = it->second;
  double sum = 0.0;
  agg.max = -std::numeric_limits<double>::infinity();
  for (int l : layers) {
    const double v = scores.per_layer.at(l);
    sum += v;
    agg.max = std::max(agg.max, v);
  }
  agg.mean = sum / static_cast<double>(layers.size());
  return agg;
}

}  // namespace pfram
