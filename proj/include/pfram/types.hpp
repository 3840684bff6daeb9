#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfram/error.hpp"

namespace pfram {

class ImageId {
 public:
  explicit ImageId(std::string value) : value_(std::move(value)) {
    if (value_.empty()) throw InputError("image id must be nonempty");
  }

  const std::string& str() const noexcept { return value_; }

  friend auto operator<=>(const ImageId&, const ImageId&) = default;
  friend bool operator==(const ImageId&, const ImageId&) = default;

 private:
  std::string value_;
};

}  // namespace pfram

template <>
struct std::hash<pfram::ImageId> {
  std::size_t operator()(const pfram::ImageId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};

namespace pfram {

namespace detail {

// Sum of squares accumulated in double; float products are exact in double.
inline double inverse_norm(std::span<const float> row) noexcept {
  double sum = 0.0;
  for (float v : row) sum += static_cast<double>(v) * static_cast<double>(v);
  return sum > 0.0 ? 1.0 / std::sqrt(sum) : 0.0;
}

inline bool all_finite(std::span<const float> values) noexcept {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

}  // namespace detail

// Per-image representation: `rows` vectors of width `dim`, row-major.
// Inverse row norms are computed once here; a zero row gets inverse norm 0,
// which makes every cosine against it 0.
class RepMatrix {
 public:
  RepMatrix(ImageId image, std::size_t rows, std::size_t dim,
            std::vector<float> values)
      : image_(std::move(image)), rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ == 0 || dim_ == 0)
      throw InputError("representation of '" + image_.str() +
                       "' must have at least one row and one column");
    if (values_.size() != rows_ * dim_)
      throw InputError("representation of '" + image_.str() +
                       "' has " + std::to_string(values_.size()) +
                       " values, expected " + std::to_string(rows_ * dim_));
    if (!detail::all_finite(values_))
      throw InputError("representation of '" + image_.str() +
                       "' contains non-finite values");
    inv_norms_.resize(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      inv_norms_[r] = detail::inverse_norm(row(r));
      if (inv_norms_[r] == 0.0) ++zero_rows_;
    }
  }

  const ImageId& image() const noexcept { return image_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t r) const noexcept {
    return std::span<const float>(values_).subspan(r * dim_, dim_);
  }
  std::span<const double> inverse_norms() const noexcept { return inv_norms_; }
  std::size_t zero_rows() const noexcept { return zero_rows_; }

  friend bool operator==(const RepMatrix& a, const RepMatrix& b) {
    return a.image_ == b.image_ && a.rows_ == b.rows_ && a.dim_ == b.dim_ &&
           a.values_ == b.values_;
  }

 private:
  ImageId image_;
  std::size_t rows_;
  std::size_t dim_;
  std::vector<float> values_;
  std::vector<double> inv_norms_;
  std::size_t zero_rows_ = 0;
};

// One representation system F = (model, layer) over a set of images.
// Layer 0 is the LLM input, negative layers are visual-encoder outputs.
class RepresentationSet {
 public:
  RepresentationSet(std::string model, int layer, std::vector<RepMatrix> entries)
      : model_(std::move(model)), layer_(layer), entries_(std::move(entries)) {
    if (entries_.empty()) throw InputError("representation set is empty");
    const std::size_t dim = entries_.front().dim();
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.dim() != dim)
        throw InputError("image '" + e.image().str() + "' has dimension " +
                         std::to_string(e.dim()) + ", expected " +
                         std::to_string(dim));
      if (!index_.emplace(e.image(), i).second)
        throw InputError("duplicate image id '" + e.image().str() + "'");
    }
  }

  const std::string& model() const noexcept { return model_; }
  int layer() const noexcept { return layer_; }
  std::size_t dim() const noexcept { return entries_.front().dim(); }
  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const RepMatrix> entries() const noexcept { return entries_; }

  const RepMatrix* find(const ImageId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  std::vector<ImageId> ids() const {
    std::vector<ImageId> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.image());
    return out;
  }

 private:
  std::string model_;
  int layer_;
  std::vector<RepMatrix> entries_;
  std::unordered_map<ImageId, std::size_t> index_;
};

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw InputError("vocabulary must contain at least one label");
    for (std::uint32_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw InputError("vocabulary labels must be nonempty");
      if (!index_.emplace(labels_[i], i).second)
        throw InputError("duplicate vocabulary label '" + labels_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::string& label(std::uint32_t index) const { return labels_.at(index); }
  std::span<const std::string> labels() const noexcept { return labels_; }

  std::optional<std::uint32_t> find(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::uint32_t index_of(std::string_view label) const {
    auto idx = find(label);
    if (!idx) throw InputError("label '" + std::string(label) + "' is not in the vocabulary");
    return *idx;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.labels_ == b.labels_;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Object annotation of one image as a set of vocabulary indices.
class ObjectVector {
 public:
  ObjectVector(ImageId image, std::shared_ptr<const Vocabulary> vocabulary,
               std::vector<std::uint32_t> present)
      : image_(std::move(image)), vocabulary_(std::move(vocabulary)),
        present_(std::move(present)) {
    if (!vocabulary_) throw InputError("object vector requires a vocabulary");
    std::sort(present_.begin(), present_.end());
    present_.erase(std::unique(present_.begin(), present_.end()), present_.end());
    if (!present_.empty() && present_.back() >= vocabulary_->size())
      throw InputError("object index " + std::to_string(present_.back()) +
                       " out of vocabulary range for '" + image_.str() + "'");
  }

  const ImageId& image() const noexcept { return image_; }
  const Vocabulary& vocabulary() const noexcept { return *vocabulary_; }
  const std::shared_ptr<const Vocabulary>& vocabulary_ptr() const noexcept {
    return vocabulary_;
  }
  // Sorted, unique.
  std::span<const std::uint32_t> present() const noexcept { return present_; }
  std::size_t count() const noexcept { return present_.size(); }
  bool contains(std::uint32_t label) const {
    return std::binary_search(present_.begin(), present_.end(), label);
  }

 private:
  ImageId image_;
  std::shared_ptr<const Vocabulary> vocabulary_;
  std::vector<std::uint32_t> present_;
};

inline bool same_vocabulary(const ObjectVector& a, const ObjectVector& b) {
  return a.vocabulary_ptr() == b.vocabulary_ptr() || a.vocabulary() == b.vocabulary();
}

// Description embedding of one image.
class EmbeddingVector {
 public:
  EmbeddingVector(ImageId image, std::vector<float> values)
      : image_(std::move(image)), values_(std::move(values)) {
    if (values_.empty())
      throw InputError("embedding of '" + image_.str() + "' is empty");
    if (!detail::all_finite(values_))
      throw InputError("embedding of '" + image_.str() + "' contains non-finite values");
    inv_norm_ = detail::inverse_norm(values_);
  }

  const ImageId& image() const noexcept { return image_; }
  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  double inverse_norm() const noexcept { return inv_norm_; }
  bool is_zero() const noexcept { return inv_norm_ == 0.0; }

 private:
  ImageId image_;
  std::vector<float> values_;
  double inv_norm_ = 0.0;
};

namespace detail {

template <typename Item>
std::unordered_map<ImageId, std::size_t> index_items(std::span<const Item> items) {
  std::unordered_map<ImageId, std::size_t> index;
  index.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!index.emplace(items[i].image(), i).second)
      throw InputError("duplicate image id '" + items[i].image().str() + "'");
  return index;
}

}  // namespace detail

// Ground-truth system built from object annotations.
class ObjectCollection {
 public:
  ObjectCollection(std::shared_ptr<const Vocabulary> vocabulary,
                   std::vector<ObjectVector> items)
      : vocabulary_(std::move(vocabulary)), items_(std::move(items)) {
    if (!vocabulary_) throw InputError("object collection requires a vocabulary");
    for (const auto& item : items_)
      if (!(item.vocabulary() == *vocabulary_))
        throw InputError("object vector for '" + item.image().str() +
                         "' uses a different vocabulary");
    index_ = detail::index_items<ObjectVector>(items_);
  }

  const Vocabulary& vocabulary() const noexcept { return *vocabulary_; }
  const std::shared_ptr<const Vocabulary>& vocabulary_ptr() const noexcept {
    return vocabulary_;
  }
  std::size_t size() const noexcept { return items_.size(); }
  std::span<const ObjectVector> items() const noexcept { return items_; }

  const ObjectVector* find(const ImageId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  std::vector<ImageId> ids() const {
    std::vector<ImageId> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.image());
    return out;
  }

 private:
  std::shared_ptr<const Vocabulary> vocabulary_;
  std::vector<ObjectVector> items_;
  std::unordered_map<ImageId, std::size_t> index_;
};

// Ground-truth system built from description embeddings.
class EmbeddingCollection {
 public:
  explicit EmbeddingCollection(std::vector<EmbeddingVector> items)
      : items_(std::move(items)) {
    if (items_.empty()) throw InputError("embedding collection is empty");
    const std::size_t dim = items_.front().dim();
    for (const auto& item : items_)
      if (item.dim() != dim)
        throw InputError("embedding of '" + item.image().str() + "' has dimension " +
                         std::to_string(item.dim()) + ", expected " + std::to_string(dim));
    index_ = detail::index_items<EmbeddingVector>(items_);
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t dim() const noexcept { return items_.front().dim(); }
  std::span<const EmbeddingVector> items() const noexcept { return items_; }

  const EmbeddingVector* find(const ImageId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  std::vector<ImageId> ids() const {
    std::vector<ImageId> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.image());
    return out;
  }

 private:
  std::vector<EmbeddingVector> items_;
  std::unordered_map<ImageId, std::size_t> index_;
};

}  // namespace pfram
