#pragma once

// PframReport: per-layer scores, layer aggregates, run statistics and
// correlation cells, with a lossless JSON form. Serialising a parsed report
// reproduces the input bytes (doubles use shortest round-trip formatting,
// keys keep a fixed order).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfram/error.hpp"
#include "pfram/metrics.hpp"

namespace pfram {

inline constexpr std::string_view kReportFormat = "pfram-report";
inline constexpr std::string_view kCorrelationFormat = "pfram-correlation";
inline constexpr int kReportVersion = 1;

struct LayerScore {
  int layer = 0;
  std::size_t k = 0;
  double score = 0.0;
  double standard_error = 0.0;
  std::size_t scored_anchors = 0;
  std::size_t skipped_anchors = 0;
};

struct AggregateScore {
  std::size_t k = 0;
  std::optional<double> input;
  double mean = 0.0;
  double max = 0.0;
};

struct RunResult {
  std::optional<std::uint64_t> seed;
  std::size_t n_images = 0;
  std::string images_digest;  // hex content hash of the ordered image list
  std::size_t zero_norm_images = 0;
  std::vector<LayerScore> scores;
  std::vector<AggregateScore> aggregates;
};

struct Spread {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation across runs
};

struct LayerSummary {
  int layer = 0;
  std::size_t k = 0;
  Spread score;
  // Across-anchor standard error with the anchors of all runs pooled.
  double standard_error = 0.0;
};

struct AggregateSummary {
  std::size_t k = 0;
  std::optional<Spread> input;
  Spread mean;
  Spread max;
};

struct CorrelationCell {
  std::string group;     // e.g. "objects/knn/k=100"
  std::string variable;  // "input", "mean", "max" or an attribute column
  std::string method;    // "pearson" or "point_biserial"
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  bool significant = false;  // p <= 0.05
};

struct PframReport {
  std::string model;
  std::optional<std::string> condition_tag;
  std::string gt_kind;  // "objects" or "descriptions"
  std::string gt_source;
  Metric metric = Metric::ndcg;
  std::vector<std::size_t> k_list;
  bool allow_negative_gains = false;
  std::size_t candidate_images = 0;
  std::optional<std::size_t> min_classes;
  std::optional<std::size_t> sample_count;
  std::vector<std::uint64_t> seeds;
  int layer_stride = 4;
  std::vector<int> layers;
  std::vector<int> layer_set;
  std::vector<RunResult> runs;
  std::vector<LayerSummary> summary;
  std::vector<AggregateSummary> aggregates;
  std::vector<CorrelationCell> correlations;
};

inline Spread spread_of(const std::vector<double>& values) {
  Spread s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

inline ojson spread_json(const Spread& s) { return ojson{{"mean", s.mean}, {"std", s.std}}; }

inline Spread spread_from(const ojson& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

inline ojson cell_json(const CorrelationCell& c) {
  return ojson{{"group", c.group},   {"variable", c.variable}, {"method", c.method},
               {"r", c.r},           {"p", c.p},               {"n", c.n},
               {"significant", c.significant}};
}

inline CorrelationCell cell_from(const ojson& j) {
  CorrelationCell c;
  c.group = j.at("group").get<std::string>();
  c.variable = j.at("variable").get<std::string>();
  c.method = j.at("method").get<std::string>();
  if (c.method != "pearson" && c.method != "point_biserial")
    throw InputError("unknown correlation method '" + c.method + "'");
  c.r = j.at("r").get<double>();
  c.p = j.at("p").get<double>();
  c.n = j.at("n").get<std::size_t>();
  c.significant = j.at("significant").get<bool>();
  if (!(c.r >= -1.0 && c.r <= 1.0) || !(c.p >= 0.0 && c.p <= 1.0))
    throw InputError("correlation cell out of range");
  return c;
}

inline void require_unit(double v, const char* what) {
  if (!std::isfinite(v)) throw InputError(std::string(what) + " must be finite");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const PframReport& r) {
  using detail::ojson;
  ojson j;
  j["format"] = kReportFormat;
  j["version"] = kReportVersion;
  j["model"] = r.model;
  j["condition_tag"] = r.condition_tag ? ojson(*r.condition_tag) : ojson(nullptr);
  j["ground_truth"] = ojson{{"kind", r.gt_kind}, {"source", r.gt_source}};
  j["metric"] = ojson{{"kind", std::string(to_string(r.metric))},
                      {"k", r.k_list},
                      {"allow_negative_gains", r.allow_negative_gains}};
  j["dataset"] = ojson{
      {"candidate_images", r.candidate_images},
      {"min_classes", r.min_classes ? ojson(*r.min_classes) : ojson(nullptr)},
      {"sample_count", r.sample_count ? ojson(*r.sample_count) : ojson(nullptr)},
      {"seeds", r.seeds}};
  j["layer_stride"] = r.layer_stride;
  j["layers"] = r.layers;
  j["layer_set"] = r.layer_set;
  j["runs"] = ojson::array();
  for (const auto& run : r.runs) {
    ojson rj;
    rj["seed"] = run.seed ? ojson(*run.seed) : ojson(nullptr);
    rj["n_images"] = run.n_images;
    rj["images_digest"] = run.images_digest;
    rj["zero_norm_images"] = run.zero_norm_images;
    rj["scores"] = ojson::array();
    for (const auto& s : run.scores)
      rj["scores"].push_back(ojson{{"layer", s.layer},
                                   {"k", s.k},
                                   {"score", s.score},
                                   {"stderr", s.standard_error},
                                   {"scored_anchors", s.scored_anchors},
                                   {"skipped_anchors", s.skipped_anchors}});
    rj["aggregates"] = ojson::array();
    for (const auto& a : run.aggregates)
      rj["aggregates"].push_back(ojson{{"k", a.k},
                                       {"input", detail::optional_json(a.input)},
                                       {"mean", a.mean},
                                       {"max", a.max}});
    j["runs"].push_back(std::move(rj));
  }
  j["summary"] = ojson::array();
  for (const auto& s : r.summary)
    j["summary"].push_back(ojson{{"layer", s.layer},
                                 {"k", s.k},
                                 {"score", detail::spread_json(s.score)},
                                 {"stderr", s.standard_error}});
  j["aggregates"] = ojson::array();
  for (const auto& a : r.aggregates)
    j["aggregates"].push_back(
        ojson{{"k", a.k},
              {"input", a.input ? detail::spread_json(*a.input) : ojson(nullptr)},
              {"mean", detail::spread_json(a.mean)},
              {"max", detail::spread_json(a.max)}});
  j["correlations"] = ojson::array();
  for (const auto& c : r.correlations) j["correlations"].push_back(detail::cell_json(c));
  return j;
}

// Parses and validates; any structural problem is an InputError.
inline PframReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("format").get<std::string>() != kReportFormat)
      throw InputError("not a pfram report");
    if (j.at("version").get<int>() != kReportVersion)
      throw InputError("unsupported report version");
    PframReport r;
    r.model = j.at("model").get<std::string>();
    if (!j.at("condition_tag").is_null()) r.condition_tag = j["condition_tag"].get<std::string>();
    r.gt_kind = j.at("ground_truth").at("kind").get<std::string>();
    if (r.gt_kind != "objects" && r.gt_kind != "descriptions")
      throw InputError("unknown ground-truth kind '" + r.gt_kind + "'");
    r.gt_source = j.at("ground_truth").at("source").get<std::string>();
    const auto& m = j.at("metric");
    r.metric = parse_metric(m.at("kind").get<std::string>());
    r.k_list = m.at("k").get<std::vector<std::size_t>>();
    if (r.k_list.empty()) throw InputError("metric.k must be nonempty");
    for (auto k : r.k_list)
      if (k == 0) throw InputError("metric.k entries must be >= 1");
    r.allow_negative_gains = m.at("allow_negative_gains").get<bool>();
    const auto& d = j.at("dataset");
    r.candidate_images = d.at("candidate_images").get<std::size_t>();
    if (!d.at("min_classes").is_null()) r.min_classes = d["min_classes"].get<std::size_t>();
    if (!d.at("sample_count").is_null()) r.sample_count = d["sample_count"].get<std::size_t>();
    r.seeds = d.at("seeds").get<std::vector<std::uint64_t>>();
    r.layer_stride = j.at("layer_stride").get<int>();
    r.layers = j.at("layers").get<std::vector<int>>();
    r.layer_set = j.at("layer_set").get<std::vector<int>>();
    for (const auto& rj : j.at("runs")) {
      RunResult run;
      if (!rj.at("seed").is_null()) run.seed = rj["seed"].get<std::uint64_t>();
      run.n_images = rj.at("n_images").get<std::size_t>();
      run.images_digest = rj.at("images_digest").get<std::string>();
      run.zero_norm_images = rj.at("zero_norm_images").get<std::size_t>();
      for (const auto& s : rj.at("scores")) {
        LayerScore ls{s.at("layer").get<int>(),           s.at("k").get<std::size_t>(),
                      s.at("score").get<double>(),        s.at("stderr").get<double>(),
                      s.at("scored_anchors").get<std::size_t>(),
                      s.at("skipped_anchors").get<std::size_t>()};
        detail::require_unit(ls.score, "score");
        run.scores.push_back(ls);
      }
      for (const auto& a : rj.at("aggregates")) {
        AggregateScore as;
        as.k = a.at("k").get<std::size_t>();
        if (!a.at("input").is_null()) as.input = a["input"].get<double>();
        as.mean = a.at("mean").get<double>();
        as.max = a.at("max").get<double>();
        run.aggregates.push_back(as);
      }
      r.runs.push_back(std::move(run));
    }
    if (r.runs.empty()) throw InputError("report has no runs");
    for (const auto& s : j.at("summary"))
      r.summary.push_back({s.at("layer").get<int>(), s.at("k").get<std::size_t>(),
                           detail::spread_from(s.at("score")), s.at("stderr").get<double>()});
    for (const auto& a : j.at("aggregates")) {
      AggregateSummary as;
      as.k = a.at("k").get<std::size_t>();
      if (!a.at("input").is_null()) as.input = detail::spread_from(a["input"]);
      as.mean = detail::spread_from(a.at("mean"));
      as.max = detail::spread_from(a.at("max"));
      r.aggregates.push_back(as);
    }
    for (const auto& c : j.at("correlations")) r.correlations.push_back(detail::cell_from(c));
    return r;
  } catch (const nlohmann::ordered_json::exception& e) {
    throw InputError(std::string("malformed report: ") + e.what());
  }
}

inline std::string format_report(const PframReport& r) { return to_json(r).dump(2) + "\n"; }

inline PframReport parse_report(std::string_view text, const std::string& source = "report") {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::ordered_json::exception& e) {
    throw InputError(source + ": invalid JSON: " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

// Throws InputError describing the first violation.
inline void validate_report(std::string_view text) { (void)parse_report(text); }

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, end);
}

// layer,k,score,stderr; one row per (layer, k) of the summary.
inline std::string format_curve_csv(const PframReport& r) {
  std::string out = "layer,k,score,stderr\n";
  for (const auto& s : r.summary)
    out += std::to_string(s.layer) + "," + std::to_string(s.k) + "," +
           format_number(s.score.mean) + "," + format_number(s.standard_error) + "\n";
  return out;
}

struct CorrelationTable {
  std::size_t n_models = 0;
  std::vector<std::string> models;
  std::vector<CorrelationCell> cells;
};

inline std::string format_correlation_table(const CorrelationTable& t) {
  using detail::ojson;
  ojson j;
  j["format"] = kCorrelationFormat;
  j["version"] = kReportVersion;
  j["n_models"] = t.n_models;
  j["models"] = t.models;
  j["cells"] = ojson::array();
  for (const auto& c : t.cells) j["cells"].push_back(detail::cell_json(c));
  return j.dump(2) + "\n";
}

inline CorrelationTable parse_correlation_table(std::string_view text) {
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    if (j.at("format").get<std::string>() != kCorrelationFormat)
      throw InputError("not a pfram correlation table");
    CorrelationTable t;
    t.n_models = j.at("n_models").get<std::size_t>();
    t.models = j.at("models").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) t.cells.push_back(detail::cell_from(c));
    return t;
  } catch (const nlohmann::ordered_json::exception& e) {
    throw InputError(std::string("malformed correlation table: ") + e.what());
  }
}

}  // namespace pfram
