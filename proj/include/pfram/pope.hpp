#pragma once

// Object-presence yes/no question harness: dataset filtering and sampling,
// balanced question generation with random / popular / adversarial negatives,
// and answer scoring.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pfram/csv.hpp"
#include "pfram/error.hpp"
#include "pfram/rng.hpp"
#include "pfram/types.hpp"

namespace pfram::pope {

inline constexpr std::string_view kDefaultTemplate = "Is there a {} in the image?";

enum class Strategy : std::uint8_t { random = 0, popular = 1, adversarial = 2 };
enum class Answer : std::uint8_t { yes, no, invalid };

inline constexpr Strategy kAllStrategies[] = {Strategy::random, Strategy::popular,
                                              Strategy::adversarial};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::popular: return "popular";
    case Strategy::adversarial: return "adversarial";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy v : kAllStrategies)
    if (to_string(v) == s) return v;
  throw InputError("unknown negative-sampling strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(Answer a) {
  switch (a) {
    case Answer::yes: return "yes";
    case Answer::no: return "no";
    case Answer::invalid: return "invalid";
  }
  return "invalid";
}

// Leading alphabetic token, case-insensitive: "yes" or "no", otherwise invalid.
inline Answer normalize_answer(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  std::string token;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i])))
    token += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
  if (token == "yes") return Answer::yes;
  if (token == "no") return Answer::no;
  return Answer::invalid;
}

class AnnotatedDataset {
 public:
  explicit AnnotatedDataset(ObjectCollection annotations)
      : annotations_(std::move(annotations)) {
    const std::size_t m = annotations_.vocabulary().size();
    frequency_.assign(m, 0);
    cooccurrence_.assign(m * m, 0);
    for (const auto& item : annotations_.items()) {
      const auto present = item.present();
      for (std::uint32_t a : present) {
        ++frequency_[a];
        for (std::uint32_t b : present) ++cooccurrence_[a * m + b];
      }
    }
  }

  const ObjectCollection& annotations() const noexcept { return annotations_; }
  const Vocabulary& vocabulary() const noexcept { return annotations_.vocabulary(); }
  const std::shared_ptr<const Vocabulary>& vocabulary_ptr() const noexcept {
    return annotations_.vocabulary_ptr();
  }
  // Number of images containing each label.
  std::span<const std::size_t> object_frequency() const noexcept { return frequency_; }
  // Number of images containing both labels; the diagonal is the frequency.
  std::size_t cooccurrence(std::uint32_t a, std::uint32_t b) const {
    return cooccurrence_.at(a * vocabulary().size() + b);
  }

 private:
  ObjectCollection annotations_;
  std::vector<std::size_t> frequency_;
  std::vector<std::size_t> cooccurrence_;
};

// Images with at least `min_classes` distinct objects, in dataset order.
inline std::vector<ImageId> filter_min_classes(const ObjectCollection& annotations,
                                               std::size_t min_classes) {
  std::vector<ImageId> out;
  for (const auto& item : annotations.items())
    if (item.count() >= min_classes) out.push_back(item.image());
  return out;
}

inline std::vector<ImageId> filter_min_classes(const AnnotatedDataset& dataset,
                                               std::size_t min_classes) {
  return filter_min_classes(dataset.annotations(), min_classes);
}

// Uniform sample without replacement, in selection order.
inline std::vector<ImageId> sample_images(std::span<const ImageId> ids, std::size_t count,
                                          std::uint64_t seed) {
  if (count > ids.size())
    throw InputError("cannot sample " + std::to_string(count) + " images from " +
                     std::to_string(ids.size()));
  std::vector<ImageId> pool(ids.begin(), ids.end());
  Xoshiro256StarStar rng(seed);
  partial_shuffle(std::span<ImageId>(pool), count, rng);
  pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end());
  return pool;
}

struct Question {
  ImageId image;
  std::uint32_t label = 0;
  Answer expected = Answer::no;
  Strategy strategy = Strategy::random;
  std::string template_text;
};

struct QuestionOptions {
  std::size_t pairs_per_image = 3;
  std::vector<Strategy> strategies{Strategy::random, Strategy::popular, Strategy::adversarial};
  std::string template_text{kDefaultTemplate};
  std::uint64_t seed = 0;
};

struct QuestionSet {
  std::shared_ptr<const Vocabulary> vocabulary;
  std::vector<Question> questions;
  // (strategy, image) pairs dropped for lack of present or absent candidates.
  std::vector<std::pair<Strategy, ImageId>> skipped;
};

inline std::string render_prompt(const Question& q, const Vocabulary& vocab) {
  std::string text = q.template_text;
  if (auto pos = text.find("{}"); pos != std::string::npos)
    text.replace(pos, 2, vocab.label(q.label));
  return text;
}

namespace detail {

// Indices ordered by descending score, ties by ascending label index.
inline void order_by_score(std::vector<std::uint32_t>& labels,
                           const std::vector<std::size_t>& score) {
  std::sort(labels.begin(), labels.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
}

}  // namespace detail

// For each strategy and image: `pairs_per_image` yes-questions on uniformly
// sampled present objects and as many no-questions on absent objects chosen
// by the strategy. Each strategy draws from its own seeded stream.
inline QuestionSet generate_questions(const AnnotatedDataset& dataset,
                                      std::span<const ImageId> images,
                                      const QuestionOptions& options) {
  if (options.pairs_per_image == 0) throw InputError("pairs per image must be >= 1");
  if (options.strategies.empty()) throw InputError("at least one strategy is required");
  const std::size_t m = dataset.vocabulary().size();
  const std::size_t pairs = options.pairs_per_image;

  QuestionSet out;
  out.vocabulary = dataset.vocabulary_ptr();
  std::vector<std::size_t> score(m);

  for (Strategy strategy : options.strategies) {
    Xoshiro256StarStar rng(derive_seed(options.seed, static_cast<std::uint64_t>(strategy) + 1));
    for (const ImageId& id : images) {
      const ObjectVector* item = dataset.annotations().find(id);
      if (!item) throw InputError("image '" + id.str() + "' has no annotation");
      std::vector<std::uint32_t> present(item->present().begin(), item->present().end());
      std::vector<std::uint32_t> absent;
      absent.reserve(m - present.size());
      for (std::uint32_t l = 0; l < m; ++l)
        if (!item->contains(l)) absent.push_back(l);
      if (present.size() < pairs || absent.size() < pairs) {
        out.skipped.emplace_back(strategy, id);
        continue;
      }

      partial_shuffle(std::span<std::uint32_t>(present), pairs, rng);
      switch (strategy) {
        case Strategy::random:
          partial_shuffle(std::span<std::uint32_t>(absent), pairs, rng);
          break;
        case Strategy::popular:
          for (std::uint32_t l = 0; l < m; ++l) score[l] = dataset.object_frequency()[l];
          detail::order_by_score(absent, score);
          break;
        case Strategy::adversarial:
          for (std::uint32_t l : absent) {
            std::size_t s = 0;
            for (std::uint32_t p : item->present()) s += dataset.cooccurrence(p, l);
            score[l] = s;
          }
          detail::order_by_score(absent, score);
          break;
      }
      for (std::size_t i = 0; i < pairs; ++i)
        out.questions.push_back({id, present[i], Answer::yes, strategy, options.template_text});
      for (std::size_t i = 0; i < pairs; ++i)
        out.questions.push_back({id, absent[i], Answer::no, strategy, options.template_text});
    }
  }
  return out;
}

// expected == yes iff the label is annotated on the image.
inline void check_question(const Question& q, const AnnotatedDataset& dataset) {
  const ObjectVector* item = dataset.annotations().find(q.image);
  if (!item) throw InputError("question refers to unannotated image '" + q.image.str() + "'");
  const bool present = item->contains(q.label);
  if (q.expected == Answer::invalid || present != (q.expected == Answer::yes))
    throw InputError("question on '" + q.image.str() + "' / '" +
                     dataset.vocabulary().label(q.label) +
                     "' has an expected answer inconsistent with the annotations");
}

inline const csv::Row& question_header() {
  static const csv::Row header{"image_id", "label", "strategy", "expected", "template"};
  return header;
}

inline const csv::Row& answer_header() {
  static const csv::Row header{"image_id", "label", "answer"};
  return header;
}

inline std::string format_questions(const QuestionSet& set, const AnnotatedDataset* dataset = nullptr) {
  std::string text = csv::format_row(question_header());
  for (const auto& q : set.questions) {
    if (dataset) check_question(q, *dataset);
    text += csv::format_row({q.image.str(), set.vocabulary->label(q.label),
                             std::string(to_string(q.strategy)),
                             std::string(to_string(q.expected)), q.template_text});
  }
  return text;
}

inline void write_questions(const std::string& path, const QuestionSet& set,
                            const AnnotatedDataset* dataset = nullptr) {
  const std::string text = format_questions(set, dataset);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("failed writing '" + path + "'");
}

// Reads a question file. Labels resolve against the dataset vocabulary when a
// dataset is given (and every row is checked against the annotations);
// otherwise against the sorted set of labels found in the file.
inline QuestionSet read_questions(const std::string& path,
                                  const AnnotatedDataset* dataset = nullptr) {
  const auto rows = csv::read_table(path, question_header());
  QuestionSet set;
  if (dataset) {
    set.vocabulary = dataset->vocabulary_ptr();
  } else {
    std::set<std::string> labels;
    for (std::size_t i = 1; i < rows.size(); ++i) labels.insert(rows[i][1]);
    if (labels.empty()) throw InputError(path + ": no questions");
    set.vocabulary = std::make_shared<const Vocabulary>(
        std::vector<std::string>(labels.begin(), labels.end()));
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    Question q{ImageId(r[0]), set.vocabulary->index_of(r[1]), Answer::invalid,
               parse_strategy(r[2]), r[4]};
    if (r[3] == "yes") {
      q.expected = Answer::yes;
    } else if (r[3] == "no") {
      q.expected = Answer::no;
    } else {
      throw InputError(path + ": row " + std::to_string(i + 1) +
                       " has expected answer '" + r[3] + "' (must be yes or no)");
    }
    if (dataset) check_question(q, *dataset);
    set.questions.push_back(std::move(q));
  }
  return set;
}

class AnswerSheet {
 public:
  // A repeated (image, label) must carry the same normalized answer.
  void add(const ImageId& image, std::uint32_t label, Answer answer) {
    auto [it, inserted] = answers_.emplace(std::make_pair(image, label), answer);
    if (!inserted && it->second != answer)
      throw InputError("conflicting answers for image '" + image.str() + "' label #" +
                       std::to_string(label));
  }

  Answer find(const ImageId& image, std::uint32_t label) const {
    auto it = answers_.find(std::make_pair(image, label));
    return it == answers_.end() ? Answer::invalid : it->second;
  }

  std::size_t size() const noexcept { return answers_.size(); }

 private:
  std::map<std::pair<ImageId, std::uint32_t>, Answer> answers_;
};

// Answers whose label is outside `vocabulary` cannot match any question and
// are counted in `ignored`.
inline AnswerSheet read_answers(const std::string& path, const Vocabulary& vocabulary,
                                std::size_t* ignored = nullptr) {
  const auto rows = csv::read_table(path, answer_header());
  AnswerSheet sheet;
  std::size_t dropped = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto label = vocabulary.find(rows[i][1]);
    if (!label) {
      ++dropped;
      continue;
    }
    sheet.add(ImageId(rows[i][0]), *label, normalize_answer(rows[i][2]));
  }
  if (ignored) *ignored = dropped;
  return sheet;
}

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t invalid = 0;
  double accuracy() const noexcept {
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
};

struct ScoreResult {
  Tally overall;
  std::map<Strategy, Tally> per_strategy;
  double accuracy() const noexcept { return overall.accuracy(); }
};

// Fraction of questions answered with the expected yes/no; missing or
// unparseable answers count as wrong.
inline ScoreResult score_answers(std::span<const Question> questions, const AnswerSheet& answers) {
  ScoreResult result;
  for (const auto& q : questions) {
    const Answer a = answers.find(q.image, q.label);
    Tally& s = result.per_strategy[q.strategy];
    for (Tally* t : {&result.overall, &s}) {
      ++t->total;
      if (a == Answer::invalid) ++t->invalid;
      if (a == q.expected) ++t->correct;
    }
  }
  return result;
}

}  // namespace pfram::pope
