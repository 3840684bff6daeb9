#pragma once

// Synthetic datasets and model dumps written to disk, shared by the CLI
// tests and the acceptance binary.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pfram/io.hpp"
#include "pfram/rng.hpp"
#include "support.hpp"

namespace testing_support {

// Annotated images with between min_objects and max_objects labels each.
inline pfram::ObjectCollection synthetic_objects(std::uint64_t seed, std::size_t images,
                                                 std::size_t labels, std::size_t min_objects,
                                                 std::size_t max_objects) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < labels; ++i) names.push_back("label" + std::to_string(i));
  auto vocab = std::make_shared<const pfram::Vocabulary>(std::move(names));
  pfram::Xoshiro256StarStar rng(seed);
  std::vector<pfram::ObjectVector> items;
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<std::uint32_t> all(labels);
    for (std::uint32_t l = 0; l < labels; ++l) all[l] = l;
    const std::size_t count = min_objects + rng.below(max_objects - min_objects + 1);
    pfram::partial_shuffle(std::span<std::uint32_t>(all), count, rng);
    all.resize(count);
    items.emplace_back(pfram::ImageId("image" + std::to_string(i)), vocab, all);
  }
  return pfram::ObjectCollection(vocab, std::move(items));
}

// One row per annotated object: the label's one-hot direction plus
// Gaussian noise of scale sigma in every coordinate.
inline pfram::RepresentationSet noisy_object_reps(const pfram::ObjectCollection& objects,
                                                  double sigma, std::uint64_t seed,
                                                  const std::string& model = "synthetic",
                                                  int layer = 0) {
  const std::size_t d = objects.vocabulary().size();
  pfram::Xoshiro256StarStar rng(seed);
  std::vector<pfram::RepMatrix> entries;
  for (const auto& item : objects.items()) {
    const std::size_t n = std::max<std::size_t>(item.count(), 1);
    std::vector<float> v(n * d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) v[r * d + c] = static_cast<float>(sigma * rng.normal());
      if (r < item.count()) v[r * d + item.present()[r]] += 1.0f;
    }
    entries.emplace_back(item.image(), n, d, std::move(v));
  }
  return pfram::RepresentationSet(model, layer, std::move(entries));
}

struct ModelDump {
  std::string manifest;
};

// Writes one PFRM file per layer and a manifest next to them.
inline ModelDump write_model(const std::filesystem::path& dir, const std::string& model,
                             const std::vector<pfram::RepresentationSet>& layers,
                             std::optional<std::string> condition_tag = std::nullopt) {
  std::filesystem::create_directories(dir);
  pfram::io::Manifest m;
  m.model = model;
  m.dim = layers.front().dim();
  m.condition_tag = std::move(condition_tag);
  for (const auto& set : layers) {
    const std::string file = model + "_layer" + std::to_string(set.layer()) + ".pfrm";
    pfram::io::save_repset(set, (dir / file).string());
    m.layers.push_back({set.layer(), file});
  }
  const std::string path = (dir / (model + ".manifest.json")).string();
  pfram::io::write_file(path, pfram::io::format_manifest(m));
  return {path};
}

inline std::string write_objects(const std::filesystem::path& path, const pfram::ObjectCollection& c) {
  pfram::io::write_file(path.string(), pfram::io::format_objects(c));
  return path.string();
}

}  // namespace testing_support
