#pragma once

// Interchange formats.
//
// PFRM representation file, all integers little-endian:
//   "PFRM" | u32 version = 1 | u32 image_count >= 1
//   per image: u16 id_len | id (UTF-8) | u32 N | u32 d | N*d f32 (row-major)
// Description embeddings use the same layout with N = 1.
//
// PFSM similarity-matrix cache file:
//   "PFSM" | u32 version = 1 | u64 content_key | u32 source_kind | u32 n
//   n x (u16 id_len | id) | n*n f64 row-major (diagonal stored as -inf)

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pfram/error.hpp"
#include "pfram/sim_matrix.hpp"
#include "pfram/types.hpp"

namespace pfram::io {

inline constexpr std::string_view kRepMagic = "PFRM";
inline constexpr std::string_view kMatrixMagic = "PFSM";
inline constexpr std::uint32_t kFormatVersion = 1;

// 64-bit FNV-1a; used to key cache files by input content.
class ContentHash {
 public:
  void update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update_u64(std::uint64_t v) noexcept {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    update(std::string_view(buf, 8));
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline bool valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      extra = 1;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      extra = 2;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    static constexpr std::uint32_t min_cp[] = {0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[extra] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
    i += extra + 1;
  }
  return true;
}

class ByteWriter {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32_array(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    } else {
      for (float v : values) f32(v);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void set_context(std::optional<std::string> image) { image_ = std::move(image); }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_, image_); }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

  std::vector<float> f32_array(std::size_t count, const char* what) {
    if (count > remaining() / 4) fail(std::string("truncated ") + what);
    std::vector<float> out(count);
    const char* src = data_.data() + pos_;
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), src, count * 4);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i * 4 + b])) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
      }
    }
    pos_ += count * 4;
    return out;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) fail(std::string("truncated ") + what);
  }
  std::uint64_t get(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::optional<std::string> image_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw InputError("cannot open '" + path + "'");
  const auto size = in.tellg();
  if (size < 0) throw InputError("cannot read '" + path + "'");
  std::string out(static_cast<std::size_t>(size), '\0');
  in.seekg(0);
  if (!in.read(out.data(), size)) throw InputError("failed reading '" + path + "'");
  return out;
}

// Writes through a temporary file and renames it into place.
inline void write_file(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

namespace detail {

inline void write_id(ByteWriter& w, const ImageId& id) {
  if (id.str().size() > 0xffff)
    throw InputError("image id '" + id.str().substr(0, 32) + "...' is longer than 65535 bytes");
  w.u16(static_cast<std::uint16_t>(id.str().size()));
  w.bytes(id.str());
}

inline std::string read_id(ByteReader& r) {
  const std::uint16_t len = r.u16("image id length");
  if (len == 0) r.fail("empty image id");
  std::string id(r.bytes(len, "image id"));
  if (!valid_utf8(id)) r.fail("image id is not valid UTF-8");
  return id;
}

inline void read_magic(ByteReader& r, std::string_view magic) {
  if (r.remaining() < magic.size()) r.fail("truncated magic");
  if (r.bytes(magic.size(), "magic") != magic)
    throw FormatError("bad magic (expected \"" + std::string(magic) + "\")", 0);
  const std::uint64_t at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion)
    throw FormatError("unsupported version " + std::to_string(version), at);
}

}  // namespace detail

// Raw PFRM records, before they are assembled into a RepresentationSet.
inline std::vector<RepMatrix> decode_rep_records(std::string_view bytes,
                                                 std::optional<std::size_t> expected_dim = {}) {
  ByteReader r(bytes);
  detail::read_magic(r, kRepMagic);
  const std::uint64_t count_at = r.offset();
  const std::uint32_t count = r.u32("image count");
  if (count == 0) throw FormatError("image count must be >= 1", count_at);
  std::vector<RepMatrix> entries;
  std::set<std::string> seen;
  std::optional<std::size_t> dim = expected_dim;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context(std::nullopt);
    const std::uint64_t record_at = r.offset();
    std::string id = detail::read_id(r);
    r.set_context(id);
    if (!seen.insert(id).second) throw FormatError("duplicate image id", record_at, id);
    const std::uint32_t rows = r.u32("row count");
    const std::uint64_t dim_at = r.offset();
    const std::uint32_t d = r.u32("dimension");
    if (rows == 0) throw FormatError("row count must be >= 1", dim_at - 4, id);
    if (d == 0) throw FormatError("dimension must be >= 1", dim_at, id);
    if (dim && *dim != d)
      throw FormatError("dimension " + std::to_string(d) + " does not match expected " +
                            std::to_string(*dim),
                        dim_at, id);
    dim = d;
    const std::uint64_t data_at = r.offset();
    const std::uint64_t values = static_cast<std::uint64_t>(rows) * d;
    if (values > r.remaining() / 4) r.fail("truncated vector data");
    std::vector<float> data = r.f32_array(static_cast<std::size_t>(values), "vector data");
    if (!pfram::detail::all_finite(data))
      throw FormatError("non-finite value in vector data", data_at, id);
    entries.emplace_back(ImageId(std::move(id)), rows, d, std::move(data));
  }
  r.set_context(std::nullopt);
  if (r.remaining() != 0) r.fail("trailing bytes after last record");
  return entries;
}

// Image ids of a PFRM file in record order, without decoding the vectors.
inline std::vector<ImageId> scan_rep_ids(std::string_view bytes) {
  ByteReader r(bytes);
  detail::read_magic(r, kRepMagic);
  const std::uint64_t count_at = r.offset();
  const std::uint32_t count = r.u32("image count");
  if (count == 0) throw FormatError("image count must be >= 1", count_at);
  std::vector<ImageId> ids;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context(std::nullopt);
    std::string id = detail::read_id(r);
    r.set_context(id);
    const std::uint64_t values = static_cast<std::uint64_t>(r.u32("row count")) * r.u32("dimension");
    if (values > r.remaining() / 4) r.fail("truncated vector data");
    r.bytes(static_cast<std::size_t>(values) * 4, "vector data");
    ids.emplace_back(std::move(id));
  }
  r.set_context(std::nullopt);
  if (r.remaining() != 0) r.fail("trailing bytes after last record");
  return ids;
}

inline std::string encode_repset(std::span<const RepMatrix> entries) {
  if (entries.empty()) throw InputError("cannot encode an empty representation set");
  if (entries.size() > 0xffffffffULL) throw InputError("too many images for one PFRM file");
  ByteWriter w;
  w.bytes(kRepMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::write_id(w, e.image());
    w.u32(static_cast<std::uint32_t>(e.rows()));
    w.u32(static_cast<std::uint32_t>(e.dim()));
    w.f32_array(e.values());
  }
  return w.take();
}

inline std::string encode_repset(const RepresentationSet& set) {
  return encode_repset(set.entries());
}

inline RepresentationSet decode_repset(std::string_view bytes, std::string model = "", int layer = 0,
                                       std::optional<std::size_t> expected_dim = {}) {
  return RepresentationSet(std::move(model), layer, decode_rep_records(bytes, expected_dim));
}

inline void save_repset(const RepresentationSet& set, const std::string& path) {
  write_file(path, encode_repset(set));
}

inline RepresentationSet load_repset(const std::string& path, std::string model = "",
                                     int layer = 0, std::optional<std::size_t> expected_dim = {}) {
  const std::string bytes = read_file(path);
  try {
    return decode_repset(bytes, std::move(model), layer, expected_dim);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset(), e.image());
  }
}

inline EmbeddingCollection load_embeddings(const std::string& path) {
  const std::string bytes = read_file(path);
  std::vector<RepMatrix> records;
  try {
    records = decode_rep_records(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset(), e.image());
  }
  std::vector<EmbeddingVector> items;
  items.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.rows() != 1)
      throw InputError(path + ": description embedding of '" + rec.image().str() + "' has " +
                       std::to_string(rec.rows()) + " rows, expected 1");
    items.emplace_back(rec.image(), std::vector<float>(rec.values().begin(), rec.values().end()));
  }
  return EmbeddingCollection(std::move(items));
}

struct ManifestLayer {
  int index = 0;
  std::string path;  // resolved against the manifest directory on load
};

struct Manifest {
  std::string model;
  std::size_t dim = 0;
  std::vector<ManifestLayer> layers;
  std::optional<std::string> condition_tag;
  std::optional<std::uint64_t> seed;
};

inline Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               const std::string& source = "manifest") {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(source + ": invalid JSON: " + e.what());
  }
  try {
    Manifest m;
    m.model = j.at("model").get<std::string>();
    m.dim = j.at("dim").get<std::size_t>();
    if (m.model.empty()) throw InputError(source + ": model must be nonempty");
    if (m.dim == 0) throw InputError(source + ": dim must be >= 1");
    std::set<int> seen;
    for (const auto& layer : j.at("layers")) {
      ManifestLayer l{layer.at("index").get<int>(), layer.at("path").get<std::string>()};
      if (!seen.insert(l.index).second)
        throw InputError(source + ": duplicate layer index " + std::to_string(l.index));
      std::filesystem::path p(l.path);
      if (p.is_relative()) p = base_dir / p;
      l.path = p.string();
      m.layers.push_back(std::move(l));
    }
    if (m.layers.empty()) throw InputError(source + ": manifest lists no layers");
    if (j.contains("condition_tag") && !j["condition_tag"].is_null())
      m.condition_tag = j["condition_tag"].get<std::string>();
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw InputError(source + ": " + e.what());
  }
}

inline Manifest load_manifest(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path();
  Manifest m = parse_manifest(read_file(path), dir, path);
  for (const auto& l : m.layers)
    if (!std::filesystem::exists(l.path))
      throw InputError(path + ": layer " + std::to_string(l.index) + " file '" + l.path +
                       "' does not exist");
  return m;
}

inline std::string format_manifest(const Manifest& m) {
  nlohmann::ordered_json j;
  j["model"] = m.model;
  j["dim"] = m.dim;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : m.layers) j["layers"].push_back({{"index", l.index}, {"path", l.path}});
  if (m.condition_tag) j["condition_tag"] = *m.condition_tag;
  if (m.seed) j["seed"] = *m.seed;
  return j.dump(2) + "\n";
}

// One label per line; blank lines are ignored.
inline std::shared_ptr<const Vocabulary> load_vocabulary(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> labels;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return std::make_shared<const Vocabulary>(std::move(labels));
}

// {"image_id": ["label", ...], ...} in file order. Without an explicit
// vocabulary the vocabulary is the sorted union of all labels.
inline ObjectCollection parse_objects(std::string_view text,
                                      std::shared_ptr<const Vocabulary> vocabulary = nullptr,
                                      const std::string& source = "objects") {
  using nlohmann::ordered_json;
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw InputError(source + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw InputError(source + ": expected an object mapping image id to labels");
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  std::set<std::string> all;
  try {
    for (const auto& [id, labels] : j.items()) {
      if (!labels.is_array())
        throw InputError(source + ": labels of '" + id + "' must be an array");
      auto names = labels.get<std::vector<std::string>>();
      all.insert(names.begin(), names.end());
      raw.emplace_back(id, std::move(names));
    }
  } catch (const ordered_json::exception& e) {
    throw InputError(source + ": " + e.what());
  }
  if (!vocabulary) {
    if (all.empty()) throw InputError(source + ": no labels found");
    vocabulary = std::make_shared<const Vocabulary>(std::vector<std::string>(all.begin(), all.end()));
  }
  std::vector<ObjectVector> items;
  items.reserve(raw.size());
  for (auto& [id, names] : raw) {
    std::vector<std::uint32_t> present;
    for (const auto& name : names) {
      auto idx = vocabulary->find(name);
      if (!idx)
        throw InputError(source + ": label '" + name + "' of '" + id + "' is not in the vocabulary");
      present.push_back(*idx);
    }
    items.emplace_back(ImageId(id), vocabulary, std::move(present));
  }
  return ObjectCollection(vocabulary, std::move(items));
}

inline ObjectCollection load_objects(const std::string& path,
                                     std::shared_ptr<const Vocabulary> vocabulary = nullptr) {
  return parse_objects(read_file(path), std::move(vocabulary), path);
}

inline std::string format_objects(const ObjectCollection& objects) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& item : objects.items()) {
    auto arr = nlohmann::ordered_json::array();
    for (auto l : item.present()) arr.push_back(objects.vocabulary().label(l));
    j[item.image().str()] = std::move(arr);
  }
  return j.dump(2) + "\n";
}

struct CachedMatrix {
  std::uint64_t key = 0;
  SimilarityMatrix matrix;
};

inline std::string encode_matrix(const SimilarityMatrix& m, std::uint64_t key) {
  ByteWriter w;
  w.bytes(kMatrixMagic);
  w.u32(kFormatVersion);
  w.u64(key);
  w.u32(static_cast<std::uint32_t>(m.kind()));
  w.u32(static_cast<std::uint32_t>(m.size()));
  for (const auto& id : m.ids()) detail::write_id(w, id);
  for (double v : m.values()) w.f64(v);
  return w.take();
}

inline CachedMatrix decode_matrix(std::string_view bytes) {
  ByteReader r(bytes);
  detail::read_magic(r, kMatrixMagic);
  const std::uint64_t key = r.u64("content key");
  const std::uint64_t kind_at = r.offset();
  const std::uint32_t kind = r.u32("source kind");
  if (kind > static_cast<std::uint32_t>(SourceKind::description_cosine))
    throw FormatError("unknown source kind " + std::to_string(kind), kind_at);
  const std::uint64_t n_at = r.offset();
  const std::uint32_t n = r.u32("image count");
  if (n < 2) throw FormatError("image count must be >= 2", n_at);
  std::vector<ImageId> ids;
  ids.reserve(std::min<std::size_t>(n, r.remaining() / 3));
  for (std::uint32_t i = 0; i < n; ++i) ids.emplace_back(detail::read_id(r));
  const std::uint64_t values_at = r.offset();
  const std::uint64_t count = static_cast<std::uint64_t>(n) * n;
  if (count > r.remaining() / 8) r.fail("truncated matrix values");
  std::vector<double> values(static_cast<std::size_t>(count));
  for (auto& v : values) v = r.f64("matrix values");
  if (r.remaining() != 0) r.fail("trailing bytes after matrix values");
  try {
    return {key, SimilarityMatrix(std::move(ids), std::move(values), static_cast<SourceKind>(kind))};
  } catch (const FormatError&) {
    throw;
  } catch (const InputError& e) {
    throw FormatError(e.what(), values_at);
  }
}

inline void save_matrix(const SimilarityMatrix& m, std::uint64_t key, const std::string& path) {
  write_file(path, encode_matrix(m, key));
}

inline CachedMatrix load_matrix(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_matrix(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset(), e.image());
  }
}

}  // namespace pfram::io
