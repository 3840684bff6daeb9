#pragma once

// Blocked A * B^T for two per-image representation matrices.
//
// Rows are converted to double once and packed into panels of kPanel rows
// stored feature-major, so that one feature of kPanel consecutive rows is a
// contiguous run of doubles. The micro-kernel vectorises across rows, never
// across features: every output dot product is accumulated strictly in
// ascending feature order, one exact product at a time. Blocking over the
// feature axis round-trips partial sums through memory, which is lossless.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <span>
#include <vector>

#include "pfram/types.hpp"

namespace pfram::detail {

#if defined(__AVX512F__)
inline constexpr std::size_t kLanes = 8;
inline constexpr std::size_t kMicroRows = 8;
#elif defined(__AVX__)
inline constexpr std::size_t kLanes = 4;
inline constexpr std::size_t kMicroRows = 4;
#else
inline constexpr std::size_t kLanes = 2;
inline constexpr std::size_t kMicroRows = 4;
#endif

inline constexpr std::size_t kPanel = 2 * kLanes;
inline constexpr std::size_t kFeatureBlock = 256;

static_assert(kPanel % kMicroRows == 0);

typedef double lane_vec __attribute__((vector_size(kLanes * sizeof(double))));

class PackedRows {
 public:
  PackedRows() = default;

  explicit PackedRows(const RepMatrix& m)
      : rows_(m.rows()),
        dim_(m.dim()),
        padded_rows_((m.rows() + kPanel - 1) / kPanel * kPanel),
        data_(padded_rows_ * m.dim(), 0.0) {
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto src = m.row(r);
      double* panel = data_.data() + (r / kPanel) * kPanel * dim_;
      const std::size_t lane = r % kPanel;
      for (std::size_t k = 0; k < dim_; ++k)
        panel[k * kPanel + lane] = static_cast<double>(src[k]);
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t padded_rows() const noexcept { return padded_rows_; }
  std::size_t dim() const noexcept { return dim_; }
  const double* panel(std::size_t p) const noexcept {
    return data_.data() + p * kPanel * dim_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::size_t padded_rows_ = 0;
  std::vector<double> data_;
};

// c[r][0..kPanel) (+)= sum_{k in [k0,k1)} a_rows[r][k] * b_panel[k][..]
// for kMicroRows consecutive anchor rows starting at lane `a_lane` of a panel.
inline void micro_kernel(const double* a_panel, std::size_t a_lane, const double* b_panel,
                         std::size_t k0, std::size_t k1, double* c, std::size_t ldc,
                         bool accumulate) noexcept {
  lane_vec acc[kMicroRows][2];
  if (accumulate) {
    for (std::size_t r = 0; r < kMicroRows; ++r) {
      std::memcpy(&acc[r][0], c + r * ldc, sizeof(lane_vec));
      std::memcpy(&acc[r][1], c + r * ldc + kLanes, sizeof(lane_vec));
    }
  } else {
    for (std::size_t r = 0; r < kMicroRows; ++r) {
      acc[r][0] = lane_vec{};
      acc[r][1] = lane_vec{};
    }
  }
  const double* a = a_panel + k0 * kPanel + a_lane;
  const double* b = b_panel + k0 * kPanel;
  for (std::size_t k = k0; k < k1; ++k, a += kPanel, b += kPanel) {
    lane_vec b0, b1;
    std::memcpy(&b0, b, sizeof(lane_vec));
    std::memcpy(&b1, b + kLanes, sizeof(lane_vec));
    for (std::size_t r = 0; r < kMicroRows; ++r) {
      const double av = a[r];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < kMicroRows; ++r) {
    std::memcpy(c + r * ldc, &acc[r][0], sizeof(lane_vec));
    std::memcpy(c + r * ldc + kLanes, &acc[r][1], sizeof(lane_vec));
  }
}

// out is a.padded_rows() x b.padded_rows(), row-major; padding rows hold 0.
inline void gram(const PackedRows& a, const PackedRows& b, std::span<double> out) noexcept {
  const std::size_t dim = a.dim();
  const std::size_t ldc = b.padded_rows();
  const std::size_t a_panels = a.padded_rows() / kPanel;
  const std::size_t b_panels = b.padded_rows() / kPanel;
  for (std::size_t k0 = 0; k0 < dim; k0 += kFeatureBlock) {
    const std::size_t k1 = std::min(dim, k0 + kFeatureBlock);
    const bool accumulate = k0 != 0;
    for (std::size_t bp = 0; bp < b_panels; ++bp) {
      const double* b_panel = b.panel(bp);
      for (std::size_t ap = 0; ap < a_panels; ++ap) {
        const double* a_panel = a.panel(ap);
        for (std::size_t lane = 0; lane < kPanel; lane += kMicroRows) {
          const std::size_t row = ap * kPanel + lane;
          micro_kernel(a_panel, lane, b_panel, k0, k1,
                       out.data() + row * ldc + bp * kPanel, ldc, accumulate);
        }
      }
    }
  }
}

}  // namespace pfram::detail
