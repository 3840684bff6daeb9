#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "pfram/error.hpp"
#include "pfram/rng.hpp"

namespace pfram {

struct Correlation {
  double r = 0.0;
  double p = 1.0;  // two-sided
  std::size_t n = 0;
};

// Student-t cumulative distribution function.
inline double t_cdf(double t, int df) {
  if (df < 1) throw InputError("degrees of freedom must be >= 1");
  if (std::isnan(t)) throw InputError("t must not be NaN");
  if (t == std::numeric_limits<double>::infinity()) return 1.0;
  if (t == -std::numeric_limits<double>::infinity()) return 0.0;
  const boost::math::students_t dist(static_cast<double>(df));
  return boost::math::cdf(dist, t);
}

namespace detail {

inline void check_sample(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw InputError("paired sample lengths differ (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  if (x.size() < 3) throw InputError("correlation needs at least 3 paired values");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw InputError("paired sample contains non-finite values");
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double product_moment(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw InputError("correlation is undefined: a variable has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

// Two-sided p-value of r for n pairs under the t distribution with n-2 df.
inline double correlation_p_value(double r, std::size_t n) {
  if (n < 3) throw InputError("correlation needs at least 3 paired values");
  const double ar = std::fabs(r);
  if (ar >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = ar * std::sqrt(df) / std::sqrt(1.0 - ar * ar);
  return std::clamp(2.0 * t_cdf(-t, static_cast<int>(n - 2)), 0.0, 1.0);
}

inline Correlation pearson_r(std::span<const double> x, std::span<const double> y) {
  detail::check_sample(x, y);
  const double r = detail::product_moment(x, y);
  return {r, correlation_p_value(r, x.size()), x.size()};
}

// Pearson's r with a dichotomous x coded {0, 1}.
inline Correlation point_biserial(std::span<const double> x, std::span<const double> y) {
  detail::check_sample(x, y);
  std::size_t ones = 0;
  for (double v : x) {
    if (v != 0.0 && v != 1.0) throw InputError("point-biserial x must be coded 0/1");
    if (v == 1.0) ++ones;
  }
  if (ones == 0 || ones == x.size())
    throw InputError("point-biserial needs both classes present");
  return pearson_r(x, y);
}

inline bool is_binary(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

// Seeded permutation test of |r|: fraction of y-shuffles (plus the observed
// arrangement) with |r_perm| >= |r_obs|.
inline double permutation_p_value(std::span<const double> x, std::span<const double> y,
                                  std::size_t permutations, std::uint64_t seed) {
  detail::check_sample(x, y);
  if (permutations == 0) throw InputError("permutation count must be positive");
  const double observed = std::fabs(detail::product_moment(x, y));
  std::vector<double> shuffled(y.begin(), y.end());
  Xoshiro256StarStar rng(seed);
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    partial_shuffle(std::span<double>(shuffled), shuffled.size(), rng);
    if (std::fabs(detail::product_moment(x, shuffled)) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
}

}  // namespace pfram
