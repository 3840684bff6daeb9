#pragma once

// Command implementations behind the pfram executable. Each command takes a
// plain options struct so it can be driven from tests as well as the CLI.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pfram/csv.hpp"
#include "pfram/error.hpp"
#include "pfram/io.hpp"
#include "pfram/metrics.hpp"
#include "pfram/parallel.hpp"
#include "pfram/pope.hpp"
#include "pfram/report.hpp"
#include "pfram/sim_matrix.hpp"
#include "pfram/stats.hpp"

namespace pfram::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kInternalError = 3 };

struct ComputeOptions {
  std::string manifest;
  std::string gt;
  std::string gt_kind = "objects";
  std::optional<std::string> vocabulary;
  // Object annotations used for class-count filtering when the ground truth
  // is description embeddings.
  std::optional<std::string> objects;
  Metric metric = Metric::ndcg;
  std::vector<std::size_t> k_list{100};
  std::size_t min_classes = 5;
  std::optional<std::size_t> sample_count;
  std::vector<std::uint64_t> seeds;
  unsigned threads = 0;
  std::optional<std::string> cache_dir;
  bool allow_negative_gains = false;
  int layer_stride = 4;
  std::string out;
  std::optional<std::string> curve;
};

struct CorrelateOptions {
  std::vector<std::string> reports;
  std::string accuracies;
  std::vector<std::string> variables{"input", "mean", "max"};
  std::optional<std::size_t> k;
  std::optional<std::string> out;
};

struct PopeGenerateOptions {
  std::string objects;
  std::optional<std::string> vocabulary;
  std::size_t min_classes = 5;
  std::size_t sample_count = 500;
  std::uint64_t seed = 0;
  std::size_t pairs_per_image = 3;
  std::vector<pope::Strategy> strategies{pope::Strategy::random, pope::Strategy::popular,
                                         pope::Strategy::adversarial};
  std::string template_text{pope::kDefaultTemplate};
  std::string out;
};

struct PopeScoreOptions {
  std::string questions;
  std::string answers;
  std::optional<std::string> objects;
  std::optional<std::string> vocabulary;
  std::optional<std::string> out;
};

namespace detail {

inline std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 10) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

// Hard error unless both id lists cover the same set.
inline void require_aligned(std::span<const ImageId> expected, std::span<const ImageId> actual,
                            const std::string& expected_name, const std::string& actual_name) {
  std::set<std::string> a, b;
  for (const auto& id : expected) a.insert(id.str());
  for (const auto& id : actual) b.insert(id.str());
  if (a == b) return;
  std::vector<std::string> only_a, only_b;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_a));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_b));
  std::string msg = "image sets of " + expected_name + " and " + actual_name + " differ;";
  if (!only_a.empty()) msg += " only in " + expected_name + ": " + join_ids(only_a) + ";";
  if (!only_b.empty()) msg += " only in " + actual_name + ": " + join_ids(only_b) + ";";
  msg.pop_back();
  throw InputError(msg);
}

inline SimilarityMatrix submatrix(const SimilarityMatrix& m, std::span<const std::size_t> keep) {
  const std::size_t n = m.size();
  const std::size_t s = keep.size();
  std::vector<ImageId> ids;
  ids.reserve(s);
  std::vector<double> values(s * s, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    ids.push_back(m.ids()[keep[i]]);
    const auto row = m.row(keep[i]);
    for (std::size_t j = 0; j < s; ++j)
      if (i != j) values[i * s + j] = row[keep[j]];
  }
  (void)n;
  return SimilarityMatrix(std::move(ids), std::move(values), m.kind());
}

inline std::uint64_t matrix_key(std::string_view file_bytes, std::span<const ImageId> ids,
                                SourceKind kind) {
  io::ContentHash h;
  h.update(file_bytes);
  h.update_u64(static_cast<std::uint64_t>(kind));
  h.update_u64(ids.size());
  for (const auto& id : ids) {
    h.update_u64(id.str().size());
    h.update(id.str());
  }
  return h.digest();
}

inline std::string ids_digest(std::span<const ImageId> ids) {
  io::ContentHash h;
  for (const auto& id : ids) {
    h.update_u64(id.str().size());
    h.update(id.str());
  }
  return io::hex64(h.digest());
}

inline std::string cache_name(const std::string& model, int layer) {
  std::string safe;
  for (char c : model)
    safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return safe + "_L" + std::to_string(layer) + ".pfsm";
}

inline double pooled_standard_error(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1)) /
         std::sqrt(static_cast<double>(values.size()));
}

inline std::string default_curve_path(const std::string& out) {
  std::filesystem::path p(out);
  if (p.extension() == ".json") return p.replace_extension(".csv").string();
  return out + ".csv";
}

}  // namespace detail

// Candidate-system matrix for one manifest layer over `images`, read from
// or written to the cache directory when one is given.
inline SimilarityMatrix layer_matrix(const io::Manifest& manifest, const io::ManifestLayer& layer,
                                     std::span<const ImageId> gt_ids,
                                     std::span<const ImageId> images, unsigned threads,
                                     const std::optional<std::string>& cache_dir,
                                     std::ostream& log, bool* cache_hit = nullptr) {
  std::string bytes = io::read_file(layer.path);
  std::vector<ImageId> file_ids;
  try {
    file_ids = io::scan_rep_ids(bytes);
  } catch (const FormatError& e) {
    throw FormatError(layer.path + ": " + e.what(), e.offset(), e.image());
  }
  detail::require_aligned(gt_ids, file_ids, "the ground truth",
                          "layer " + std::to_string(layer.index));
  const std::uint64_t key = detail::matrix_key(bytes, images, SourceKind::representation);
  std::optional<std::string> cache_path;
  if (cache_dir) {
    std::filesystem::create_directories(*cache_dir);
    cache_path = (std::filesystem::path(*cache_dir) / detail::cache_name(manifest.model, layer.index)).string();
    if (std::filesystem::exists(*cache_path)) {
      try {
        auto cached = io::load_matrix(*cache_path);
        if (cached.key == key && std::ranges::equal(cached.matrix.ids(), images)) {
          if (cache_hit) *cache_hit = true;
          return std::move(cached.matrix);
        }
        log << "cache: stale entry " << *cache_path << ", recomputing\n";
      } catch (const InputError& e) {
        log << "cache: unreadable entry " << *cache_path << " (" << e.what() << "), recomputing\n";
      }
    }
  }
  if (cache_hit) *cache_hit = false;
  RepresentationSet set = [&] {
    try {
      return io::decode_repset(bytes, manifest.model, layer.index, manifest.dim);
    } catch (const FormatError& e) {
      throw FormatError(layer.path + ": " + e.what(), e.offset(), e.image());
    }
  }();
  std::string().swap(bytes);
  SimilarityMatrix m = build_similarity_matrix(set, images, BuildOptions{threads});
  if (m.zero_norm_images() > 0)
    log << "warning: layer " << layer.index << ": " << m.zero_norm_images()
        << " image(s) have zero-norm rows; their cosines are 0\n";
  if (cache_path) io::save_matrix(m, key, *cache_path);
  return m;
}

inline PframReport cmd_compute(const ComputeOptions& opt, std::ostream& log) {
  if (opt.gt_kind != "objects" && opt.gt_kind != "descriptions")
    throw InputError("--gt-kind must be objects or descriptions, got '" + opt.gt_kind + "'");
  if (opt.k_list.empty()) throw InputError("at least one --k is required");
  if (opt.layer_stride < 1) throw InputError("--layer-stride must be >= 1");
  const unsigned threads = resolve_threads(opt.threads);

  const io::Manifest manifest = io::load_manifest(opt.manifest);
  std::shared_ptr<const Vocabulary> vocabulary;
  if (opt.vocabulary) vocabulary = io::load_vocabulary(*opt.vocabulary);

  std::optional<ObjectCollection> gt_objects;
  std::optional<EmbeddingCollection> gt_descriptions;
  std::optional<ObjectCollection> annotations;
  std::vector<ImageId> gt_ids;
  if (opt.gt_kind == "objects") {
    gt_objects = io::load_objects(opt.gt, vocabulary);
    gt_ids = gt_objects->ids();
    annotations = gt_objects;
  } else {
    gt_descriptions = io::load_embeddings(opt.gt);
    gt_ids = gt_descriptions->ids();
    if (opt.objects) {
      annotations = io::load_objects(*opt.objects, vocabulary);
      detail::require_aligned(gt_ids, annotations->ids(), "the ground truth", "the annotations");
    }
  }

  // Candidate images in ground-truth order.
  std::vector<ImageId> candidates;
  if (annotations) {
    std::set<ImageId> keep;
    for (const auto& id : pope::filter_min_classes(*annotations, opt.min_classes)) keep.insert(id);
    for (const auto& id : gt_ids)
      if (keep.contains(id)) candidates.push_back(id);
  } else {
    candidates = gt_ids;
  }
  if (candidates.size() < 2)
    throw InputError("only " + std::to_string(candidates.size()) +
                     " image(s) pass the class-count filter; at least 2 are required");

  std::map<ImageId, std::size_t> position;
  for (std::size_t i = 0; i < candidates.size(); ++i) position.emplace(candidates[i], i);

  // Per run: candidate indices in ascending order.
  std::vector<std::vector<std::size_t>> run_members;
  std::vector<std::optional<std::uint64_t>> run_seeds;
  if (opt.seeds.empty() && !opt.sample_count) {
    std::vector<std::size_t> all(candidates.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    run_members.push_back(std::move(all));
    run_seeds.emplace_back();
  } else {
    const auto seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{0} : opt.seeds;
    const std::size_t count = opt.sample_count.value_or(candidates.size());
    for (auto seed : seeds) {
      std::vector<std::size_t> members;
      for (const auto& id : pope::sample_images(candidates, count, seed))
        members.push_back(position.at(id));
      std::sort(members.begin(), members.end());
      run_members.push_back(std::move(members));
      run_seeds.emplace_back(seed);
    }
  }
  std::vector<std::size_t> union_idx;
  {
    std::set<std::size_t> u;
    for (const auto& m : run_members) u.insert(m.begin(), m.end());
    union_idx.assign(u.begin(), u.end());
  }
  std::vector<ImageId> union_ids;
  for (auto i : union_idx) union_ids.push_back(candidates[i]);
  std::map<std::size_t, std::size_t> union_pos;
  for (std::size_t i = 0; i < union_idx.size(); ++i) union_pos.emplace(union_idx[i], i);
  if (union_ids.size() < 2) throw InputError("at least 2 images are required per run");
  for (const auto& m : run_members) {
    if (m.size() < 2) throw InputError("--sample-count must be >= 2");
    for (auto k : opt.k_list)
      if (k == 0 || k > m.size() - 1)
        throw InputError("k = " + std::to_string(k) + " is outside [1, " +
                         std::to_string(m.size() - 1) + "] for " + std::to_string(m.size()) +
                         " images");
  }
  std::vector<std::vector<std::size_t>> run_local;
  for (const auto& m : run_members) {
    std::vector<std::size_t> local;
    for (auto i : m) local.push_back(union_pos.at(i));
    run_local.push_back(std::move(local));
  }

  const BuildOptions build{threads};
  const SimilarityMatrix gt_full = gt_objects ? build_similarity_matrix(*gt_objects, union_ids, build)
                                              : build_similarity_matrix(*gt_descriptions, union_ids, build);
  std::vector<SimilarityMatrix> gt_runs;
  for (const auto& local : run_local) gt_runs.push_back(detail::submatrix(gt_full, local));

  PframReport report;
  report.model = manifest.model;
  report.condition_tag = manifest.condition_tag;
  report.gt_kind = opt.gt_kind;
  report.gt_source = std::filesystem::path(opt.gt).filename().string();
  report.metric = opt.metric;
  report.k_list = opt.k_list;
  report.allow_negative_gains = opt.allow_negative_gains;
  report.candidate_images = candidates.size();
  if (annotations) report.min_classes = opt.min_classes;
  report.sample_count = opt.sample_count;
  for (const auto& s : run_seeds)
    if (s) report.seeds.push_back(*s);
  report.layer_stride = opt.layer_stride;

  std::vector<io::ManifestLayer> layers = manifest.layers;
  std::sort(layers.begin(), layers.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  for (const auto& l : layers) report.layers.push_back(l.index);
  report.layer_set = select_layer_set(report.layers, opt.layer_stride);

  report.runs.resize(run_members.size());
  for (std::size_t r = 0; r < run_members.size(); ++r) {
    report.runs[r].seed = run_seeds[r];
    report.runs[r].n_images = run_members[r].size();
    std::vector<ImageId> ids;
    for (auto i : run_members[r]) ids.push_back(candidates[i]);
    report.runs[r].images_digest = detail::ids_digest(ids);
  }

  // pooled[(layer, k)] = scored per-anchor values of every run.
  std::map<std::pair<int, std::size_t>, std::vector<double>> pooled;
  const PframOptions popt{opt.allow_negative_gains, threads};
  for (const auto& layer : layers) {
    const SimilarityMatrix f_full =
        layer_matrix(manifest, layer, gt_ids, union_ids, threads, opt.cache_dir, log);
    for (std::size_t r = 0; r < run_local.size(); ++r) {
      const SimilarityMatrix f = detail::submatrix(f_full, run_local[r]);
      report.runs[r].zero_norm_images = std::max(report.runs[r].zero_norm_images, f_full.zero_norm_images());
      for (auto k : opt.k_list) {
        const PframResult res = pfram(f, gt_runs[r], MetricKind{opt.metric, k}, popt);
        report.runs[r].scores.push_back({layer.index, k, res.score, res.standard_error,
                                         res.scored_anchors, res.skipped_anchors});
        auto& pool = pooled[{layer.index, k}];
        for (const auto& v : res.per_anchor)
          if (v) pool.push_back(*v);
      }
    }
  }

  for (auto& run : report.runs) {
    if (report.layer_set.empty()) break;
    for (auto k : opt.k_list) {
      LayerScores ls{manifest.model, {}, report.layer_set};
      for (const auto& s : run.scores)
        if (s.k == k) ls.per_layer[s.layer] = s.score;
      const PframAggregate agg = aggregate_layers(ls);
      run.aggregates.push_back({k, agg.input, agg.mean, agg.max});
    }
  }

  for (int l : report.layers) {
    for (auto k : opt.k_list) {
      std::vector<double> scores;
      for (const auto& run : report.runs)
        for (const auto& s : run.scores)
          if (s.layer == l && s.k == k) scores.push_back(s.score);
      report.summary.push_back({l, k, spread_of(scores),
                                detail::pooled_standard_error(pooled[{l, k}])});
    }
  }
  if (!report.layer_set.empty()) {
    for (std::size_t ki = 0; ki < opt.k_list.size(); ++ki) {
      std::vector<double> input, mean, max;
      for (const auto& run : report.runs) {
        const auto& a = run.aggregates[ki];
        if (a.input) input.push_back(*a.input);
        mean.push_back(a.mean);
        max.push_back(a.max);
      }
      AggregateSummary s;
      s.k = opt.k_list[ki];
      if (!input.empty()) s.input = spread_of(input);
      s.mean = spread_of(mean);
      s.max = spread_of(max);
      report.aggregates.push_back(s);
    }
  } else {
    log << "warning: no manifest layer belongs to the stride-" << opt.layer_stride
        << " layer set; aggregates omitted\n";
  }

  if (!opt.out.empty()) {
    io::write_file(opt.out, format_report(report));
    io::write_file(opt.curve.value_or(detail::default_curve_path(opt.out)), format_curve_csv(report));
  }
  return report;
}

namespace detail {

struct ModelRow {
  double accuracy = 0.0;
  std::map<std::string, double> attributes;
};

inline double parse_double(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v))
    throw InputError(where + ": '" + text + "' is not a finite number");
  return v;
}

inline std::map<std::string, ModelRow> read_accuracies(const std::string& path) {
  const auto rows = csv::read_table(path, {});
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "model" || header[1] != "accuracy")
    throw InputError(path + ": header must start with model,accuracy");
  std::map<std::string, ModelRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = path + " row " + std::to_string(i + 1);
    ModelRow row;
    row.accuracy = parse_double(r[1], where);
    for (std::size_t c = 2; c < r.size(); ++c) row.attributes[header[c]] = parse_double(r[c], where);
    if (!out.emplace(r[0], std::move(row)).second)
      throw InputError(path + ": model '" + r[0] + "' is listed twice");
  }
  return out;
}

inline std::string model_key(const PframReport& r) {
  return r.condition_tag ? r.model + ":" + *r.condition_tag : r.model;
}

}  // namespace detail

inline CorrelationTable cmd_correlate(const CorrelateOptions& opt, std::ostream& log) {
  if (opt.reports.size() < 3)
    throw InputError("correlation needs at least 3 model reports, got " +
                     std::to_string(opt.reports.size()));
  if (opt.variables.empty()) throw InputError("at least one variable is required");
  const auto accuracies = detail::read_accuracies(opt.accuracies);

  std::vector<PframReport> reports;
  for (const auto& path : opt.reports) reports.push_back(parse_report(io::read_file(path), path));

  // group -> model key -> report index, k
  struct Member {
    std::size_t report;
    std::size_t k_index;
  };
  std::map<std::string, std::map<std::string, Member>> groups;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    for (std::size_t ki = 0; ki < r.k_list.size(); ++ki) {
      if (opt.k && r.k_list[ki] != *opt.k) continue;
      const std::string group = r.gt_kind + "/" + std::string(to_string(r.metric)) + "/k=" +
                                std::to_string(r.k_list[ki]);
      if (!groups[group].emplace(detail::model_key(r), Member{i, ki}).second)
        throw InputError("two reports for model '" + detail::model_key(r) + "' in group " + group);
    }
  }
  if (groups.empty()) throw InputError("no report matches the requested k");

  CorrelationTable table;
  std::set<std::string> all_models;
  for (const auto& [group, members] : groups) {
    if (members.size() < 3)
      throw InputError("group " + group + " has " + std::to_string(members.size()) +
                       " model(s); at least 3 are required");
    std::vector<double> y;
    std::vector<const detail::ModelRow*> rows;
    std::vector<const Member*> ms;
    for (const auto& [key, m] : members) {
      auto it = accuracies.find(key);
      if (it == accuracies.end()) it = accuracies.find(reports[m.report].model);
      if (it == accuracies.end())
        throw InputError(opt.accuracies + ": no accuracy for model '" + key + "'");
      y.push_back(it->second.accuracy);
      rows.push_back(&it->second);
      ms.push_back(&m);
      all_models.insert(key);
    }
    for (const auto& var : opt.variables) {
      std::vector<double> x;
      for (std::size_t i = 0; i < ms.size(); ++i) {
        const auto& rep = reports[ms[i]->report];
        const std::size_t k = rep.k_list[ms[i]->k_index];
        std::optional<double> value;
        const AggregateSummary* agg = nullptr;
        for (const auto& a : rep.aggregates)
          if (a.k == k) agg = &a;
        if (var == "input" || var == "mean" || var == "max") {
          if (!agg)
            throw InputError("report for '" + detail::model_key(rep) + "' has no layer aggregates");
          if (var == "input") {
            if (!agg->input)
              throw InputError("report for '" + detail::model_key(rep) + "' has no layer-0 score");
            value = agg->input->mean;
          } else {
            value = var == "mean" ? agg->mean.mean : agg->max.mean;
          }
        } else if (auto at = rows[i]->attributes.find(var); at != rows[i]->attributes.end()) {
          value = at->second;
        } else {
          throw InputError("unknown variable '" + var +
                           "' (use input, mean, max or a column of the accuracy file)");
        }
        x.push_back(*value);
      }
      CorrelationCell cell;
      cell.group = group;
      cell.variable = var;
      Correlation c;
      try {
        if (is_binary(x)) {
          cell.method = "point_biserial";
          c = point_biserial(x, y);
        } else {
          cell.method = "pearson";
          c = pearson_r(x, y);
        }
      } catch (const InputError& e) {
        throw InputError(group + ", variable '" + var + "': " + e.what());
      }
      cell.r = c.r;
      cell.p = c.p;
      cell.n = c.n;
      cell.significant = c.p <= 0.05;
      table.cells.push_back(cell);
    }
  }
  table.models.assign(all_models.begin(), all_models.end());
  table.n_models = table.models.size();

  for (const auto& c : table.cells)
    log << c.group << "  " << c.variable << "  " << c.method << "  r=" << format_number(c.r)
        << "  p=" << format_number(c.p) << (c.significant ? "  *" : "") << "\n";
  if (opt.out) io::write_file(*opt.out, format_correlation_table(table));
  return table;
}

inline pope::AnnotatedDataset load_dataset(const std::string& objects,
                                           const std::optional<std::string>& vocabulary) {
  std::shared_ptr<const Vocabulary> vocab;
  if (vocabulary) vocab = io::load_vocabulary(*vocabulary);
  return pope::AnnotatedDataset(io::load_objects(objects, vocab));
}

inline pope::QuestionSet cmd_pope_generate(const PopeGenerateOptions& opt, std::ostream& log) {
  const auto dataset = load_dataset(opt.objects, opt.vocabulary);
  const auto eligible = pope::filter_min_classes(dataset, opt.min_classes);
  const auto images = pope::sample_images(eligible, opt.sample_count, opt.seed);
  pope::QuestionOptions qopt;
  qopt.pairs_per_image = opt.pairs_per_image;
  qopt.strategies = opt.strategies;
  qopt.template_text = opt.template_text;
  qopt.seed = opt.seed;
  auto set = pope::generate_questions(dataset, images, qopt);
  for (const auto& [strategy, id] : set.skipped)
    log << "warning: skipped image '" << id.str() << "' for strategy " << pope::to_string(strategy)
        << " (not enough candidate labels)\n";
  if (!opt.out.empty()) io::write_file(opt.out, pope::format_questions(set, &dataset));
  return set;
}

inline pope::ScoreResult cmd_pope_score(const PopeScoreOptions& opt, std::ostream& out,
                                        std::ostream& log) {
  std::optional<pope::AnnotatedDataset> dataset;
  if (opt.objects) dataset = load_dataset(*opt.objects, opt.vocabulary);
  const auto questions = pope::read_questions(opt.questions, dataset ? &*dataset : nullptr);
  std::size_t ignored = 0;
  const auto answers = pope::read_answers(opt.answers, *questions.vocabulary, &ignored);
  if (ignored) log << "warning: " << ignored << " answer(s) name labels no question uses\n";
  const auto result = pope::score_answers(questions.questions, answers);

  nlohmann::ordered_json j;
  auto tally = [](const pope::Tally& t) {
    return nlohmann::ordered_json{{"accuracy", t.accuracy()},
                                  {"correct", t.correct},
                                  {"total", t.total},
                                  {"invalid", t.invalid}};
  };
  j["overall"] = tally(result.overall);
  j["per_strategy"] = nlohmann::ordered_json::object();
  for (const auto& [s, t] : result.per_strategy) j["per_strategy"][std::string(pope::to_string(s))] = tally(t);
  const std::string text = j.dump(2) + "\n";
  if (opt.out) io::write_file(*opt.out, text);
  out << text;
  return result;
}

inline void cmd_cache_inspect(const std::vector<std::string>& files, std::ostream& out) {
  for (const auto& path : files) {
    const auto cached = io::load_matrix(path);
    const auto& m = cached.matrix;
    out << path << "\n  key: " << io::hex64(cached.key) << "\n  kind: " << to_string(m.kind())
        << "\n  images: " << m.size() << "\n  first ids:";
    for (std::size_t i = 0; i < m.size() && i < 5; ++i) out << " " << m.ids()[i].str();
    out << "\n";
  }
}

// Parses argv and dispatches. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-free representation alignment metric toolkit", "pfram"};
  app.require_subcommand(1);

  ComputeOptions compute;
  std::string metric_name = "ndcg";
  auto* c = app.add_subcommand("compute", "score a model's layers against a ground truth");
  c->add_option("--manifest", compute.manifest, "layer manifest JSON")->required();
  c->add_option("--gt", compute.gt, "ground truth: objects JSON or description PFRM")->required();
  c->add_option("--gt-kind", compute.gt_kind)->check(CLI::IsMember({"objects", "descriptions"}));
  c->add_option("--vocabulary", compute.vocabulary, "label vocabulary, one per line");
  c->add_option("--objects", compute.objects, "annotations for class-count filtering");
  c->add_option("--metric", metric_name)->check(CLI::IsMember({"ndcg", "knn"}));
  c->add_option("--k", compute.k_list, "neighbourhood size (repeatable)")->take_all();
  c->add_option("--min-classes", compute.min_classes);
  c->add_option("--sample-count", compute.sample_count, "images per run (default: all)");
  c->add_option("--seed", compute.seeds, "sampling seed (repeatable)")->take_all();
  c->add_option("--threads", compute.threads, "worker threads (default PFRAM_THREADS or all cores)");
  c->add_option("--cache-dir", compute.cache_dir);
  c->add_flag("--allow-negative-gains", compute.allow_negative_gains);
  c->add_option("--layer-stride", compute.layer_stride);
  c->add_option("--out", compute.out, "report JSON")->required();
  c->add_option("--curve", compute.curve, "curve CSV (default: report path with .csv)");

  CorrelateOptions correlate;
  auto* r = app.add_subcommand("correlate", "correlate report scores with benchmark accuracy");
  r->add_option("--reports", correlate.reports)->required()->take_all();
  r->add_option("--accuracies", correlate.accuracies, "CSV: model,accuracy[,attribute...]")->required();
  r->add_option("--variables", correlate.variables)->take_all();
  r->add_option("--k", correlate.k);
  r->add_option("--out", correlate.out);

  auto* p = app.add_subcommand("pope", "object-presence question harness");
  p->require_subcommand(1);
  PopeGenerateOptions gen;
  std::vector<std::string> strategy_names;
  auto* g = p->add_subcommand("generate", "sample images and write questions");
  g->add_option("--objects", gen.objects)->required();
  g->add_option("--vocabulary", gen.vocabulary);
  g->add_option("--min-classes", gen.min_classes);
  g->add_option("--sample-count", gen.sample_count);
  g->add_option("--seed", gen.seed);
  g->add_option("--pairs", gen.pairs_per_image, "yes/no pairs per image and strategy");
  g->add_option("--strategy", strategy_names)
      ->take_all()
      ->check(CLI::IsMember({"random", "popular", "adversarial"}));
  g->add_option("--template", gen.template_text, "question template; {} is the label");
  g->add_option("--out", gen.out)->required();
  PopeScoreOptions score;
  auto* s = p->add_subcommand("score", "score an answer sheet");
  s->add_option("--questions", score.questions)->required();
  s->add_option("--answers", score.answers)->required();
  s->add_option("--objects", score.objects, "annotations to check questions against");
  s->add_option("--vocabulary", score.vocabulary);
  s->add_option("--out", score.out);

  auto* cache = app.add_subcommand("cache", "similarity-matrix cache tools");
  cache->require_subcommand(1);
  std::vector<std::string> cache_files;
  auto* inspect = cache->add_subcommand("inspect", "describe cache files");
  inspect->add_option("files", cache_files)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << "\n";
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (c->parsed()) {
      compute.metric = parse_metric(metric_name);
      const auto report = cmd_compute(compute, err);
      for (const auto& a : report.aggregates) {
        out << report.model << " k=" << a.k;
        if (a.input) out << " input=" << format_number(a.input->mean);
        out << " mean=" << format_number(a.mean.mean) << " max=" << format_number(a.max.mean) << "\n";
      }
    } else if (r->parsed()) {
      cmd_correlate(correlate, out);
    } else if (g->parsed()) {
      if (!strategy_names.empty()) {
        gen.strategies.clear();
        for (const auto& n : strategy_names) gen.strategies.push_back(pope::parse_strategy(n));
      }
      const auto set = cmd_pope_generate(gen, err);
      out << set.questions.size() << " questions written to " << gen.out << "\n";
    } else if (s->parsed()) {
      cmd_pope_score(score, out, err);
    } else if (inspect->parsed()) {
      cmd_cache_inspect(cache_files, out);
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kOk;
}

}  // namespace pfram::cli
