#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <memory>

#include "pfram/parallel.hpp"
#include "pfram/sim_matrix.hpp"
#include "pfram/similarity.hpp"
#include "support.hpp"

using namespace pfram;
using testing_support::make_ids;
using testing_support::naive_pair_similarity;
using testing_support::random_set;

namespace {

SimilarityMatrix from_rows(std::size_t n, std::vector<double> v) {
  return SimilarityMatrix(make_ids(n), std::move(v), SourceKind::representation);
}

}  // namespace

TEST(SimilarityMatrixTest, ValidatesConstruction) {
  EXPECT_THROW(from_rows(1, {0.0}), InputError);
  EXPECT_THROW(from_rows(2, {0.0, 1.0, 1.0}), InputError);
  EXPECT_THROW(from_rows(2, {0.0, NAN, 1.0, 0.0}), InputError);
  auto m = from_rows(2, {123.0, 0.5, 0.25, 9.0});
  EXPECT_EQ(m.at(0, 0), kExcludedDiagonal);
  EXPECT_EQ(m.at(1, 1), kExcludedDiagonal);
  EXPECT_EQ(m.at(0, 1), 0.5);
  EXPECT_EQ(m.at(1, 0), 0.25);
}

TEST(BuildMatrixTest, IdenticalRepresentationsGiveOnes) {
  std::vector<RepMatrix> e;
  for (int i = 0; i < 3; ++i) e.emplace_back(ImageId("i" + std::to_string(i)), 2, 3,
                                             std::vector<float>{1, 2, 3, -1, 0, 4});
  RepresentationSet set("m", 0, e);
  auto m = build_similarity_matrix(set, set.ids());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) EXPECT_NEAR(m.at(i, j), 1.0, 1e-12);
}

TEST(BuildMatrixTest, ObjectOverlapExample) {
  auto v = std::make_shared<const Vocabulary>(std::vector<std::string>{"l0", "l1", "l2", "l3", "l4"});
  ObjectCollection c(v, {ObjectVector(ImageId("a"), v, {1, 2}), ObjectVector(ImageId("b"), v, {2, 3}),
                         ObjectVector(ImageId("c"), v, {4})});
  auto m = build_similarity_matrix(c, c.ids());
  EXPECT_EQ(m.kind(), SourceKind::object_overlap);
  EXPECT_EQ(m.at(0, 1), 1.0);
  EXPECT_EQ(m.at(0, 2), 0.0);
  EXPECT_EQ(m.at(1, 0), 1.0);
  EXPECT_EQ(m.at(1, 2), 0.0);
  EXPECT_EQ(m.at(2, 0), 0.0);
  EXPECT_EQ(m.at(2, 1), 0.0);
}

TEST(BuildMatrixTest, ObjectOverlapIsSymmetric) {
  Xoshiro256StarStar rng(21);
  auto v = std::make_shared<const Vocabulary>(std::vector<std::string>{"a", "b", "c", "d", "e", "f"});
  std::vector<ObjectVector> items;
  for (int i = 0; i < 30; ++i) {
    std::vector<std::uint32_t> p;
    for (std::uint32_t l = 0; l < 6; ++l)
      if (rng.below(2)) p.push_back(l);
    items.emplace_back(ImageId("x" + std::to_string(i)), v, p);
  }
  ObjectCollection c(v, items);
  auto m = build_similarity_matrix(c, c.ids(), {3});
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 30; ++j) EXPECT_EQ(m.at(i, j), m.at(j, i));
}

TEST(BuildMatrixTest, Seed7OracleBitExact) {
  std::vector<RepMatrix> fixed;
  Xoshiro256StarStar rng(7);
  for (int i = 0; i < 8; ++i) fixed.push_back(testing_support::random_rep(rng, "r" + std::to_string(i), 4, 16));
  RepresentationSet s("m", 0, fixed);
  auto m = build_similarity_matrix(s, s.ids());
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b)
      if (a != b) EXPECT_EQ(m.at(a, b), naive_pair_similarity(fixed[a], fixed[b]));
}

TEST(BuildMatrixTest, OracleBitExactOnRandomShapes) {
  // Covers dims around the kernel's lane widths and feature-block size, and
  // row counts around the panel height.
  const std::size_t dims[] = {1, 3, 7, 8, 9, 15, 16, 17, 31, 255, 256, 257, 600};
  for (std::size_t t = 0; t < std::size(dims); ++t) {
    auto set = random_set(100 + t, 6, 19, dims[t]);
    auto m = build_similarity_matrix(set, set.ids(), {2});
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b)
        if (a != b) {
          const double want = naive_pair_similarity(set.entries()[a], set.entries()[b]);
          ASSERT_EQ(m.at(a, b), want) << "d=" << dims[t] << " a=" << a << " b=" << b;
          ASSERT_EQ(m.at(a, b), pair_similarity(set.entries()[a], set.entries()[b]));
        }
  }
}

TEST(BuildMatrixTest, ZeroRowsCountedAndScoredZero) {
  std::vector<RepMatrix> e{RepMatrix(ImageId("z"), 1, 2, {0, 0}),
                           RepMatrix(ImageId("a"), 1, 2, {1, 0}),
                           RepMatrix(ImageId("b"), 1, 2, {1, 1})};
  RepresentationSet set("m", 0, e);
  auto m = build_similarity_matrix(set, set.ids());
  EXPECT_EQ(m.zero_norm_images(), 1u);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(1, 0), 0.0);
}

TEST(BuildMatrixTest, WorkerCountDoesNotChangeBits) {
  auto set = random_set(31, 40, 9, 48);
  auto one = build_similarity_matrix(set, set.ids(), {1});
  for (unsigned t : {2u, 3u, 8u}) EXPECT_TRUE(one == build_similarity_matrix(set, set.ids(), {t}));
}

TEST(BuildMatrixTest, SubsetAndOrderFollowImageList) {
  auto set = random_set(32, 6, 3, 8);
  std::vector<ImageId> ids{ImageId("img4"), ImageId("img1"), ImageId("img2")};
  auto m = build_similarity_matrix(set, ids);
  EXPECT_EQ(m.ids()[0], ImageId("img4"));
  EXPECT_EQ(m.at(0, 1), pair_similarity(*set.find(ids[0]), *set.find(ids[1])));
}

TEST(BuildMatrixTest, MissingAndDuplicateImagesRejected) {
  auto set = random_set(33, 4, 2, 4);
  std::vector<ImageId> missing{ImageId("img0"), ImageId("nope")};
  try {
    build_similarity_matrix(set, missing);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
  std::vector<ImageId> dup{ImageId("img0"), ImageId("img0")};
  EXPECT_THROW(build_similarity_matrix(set, dup), InputError);
  std::vector<ImageId> one{ImageId("img0")};
  EXPECT_THROW(build_similarity_matrix(set, one), InputError);
}

TEST(BuildMatrixTest, DescriptionCosines) {
  EmbeddingCollection c({EmbeddingVector(ImageId("a"), {1, 0}), EmbeddingVector(ImageId("b"), {0, 1}),
                         EmbeddingVector(ImageId("c"), {-1, 0})});
  auto m = build_similarity_matrix(c, c.ids());
  EXPECT_EQ(m.kind(), SourceKind::description_cosine);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(0, 2), -1.0);
}

TEST(RankingTest, TiesBrokenByIndex) {
  auto m = from_rows(4, {0, 0.9, 0.5, 0.5, 0.1, 0, 0.2, 0.3, 0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(rank_references(m, 0).order, (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(rank_references(m, 1).order, (std::vector<std::uint32_t>{3, 2, 0}));
  EXPECT_EQ(rank_references(m, 2).order, (std::vector<std::uint32_t>{0, 1, 3}));
}

TEST(RankingTest, StrictlyDecreasingRowIsIdentity) {
  auto m = from_rows(4, {0, 0.9, 0.8, 0.1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(rank_references(m, 0).order, (std::vector<std::uint32_t>{1, 2, 3}));
}

TEST(RankingTest, TopReferencesIsPrefixOfFullRanking) {
  Xoshiro256StarStar rng(41);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(40);
    auto m = testing_support::random_matrix(rng, n, t % 2 == 0);
    const std::size_t anchor = rng.below(n);
    const std::size_t k = 1 + rng.below(n - 1);
    auto full = rank_references(m, anchor);
    auto top = top_references(m, anchor, k);
    ASSERT_EQ(top.order.size(), k);
    EXPECT_TRUE(std::equal(top.order.begin(), top.order.end(), full.order.begin()));
  }
}

TEST(RankingTest, ArgsortInvariantUnderIncreasingTransforms) {
  Xoshiro256StarStar rng(42);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + rng.below(30);
    auto m = testing_support::random_matrix(rng, n, t % 3 == 0);
    std::vector<double> v(m.values().begin(), m.values().end());
    const double scale = 0.1 + rng.uniform() * 5.0;
    for (auto& x : v)
      if (std::isfinite(x)) x = std::exp(scale * x) + 3.0;
    SimilarityMatrix mt(make_ids(n), v, m.kind());
    for (std::size_t a = 0; a < n; ++a)
      EXPECT_EQ(rank_references(m, a).order, rank_references(mt, a).order);
  }
}

TEST(ParallelTest, ResolveThreadsPrefersExplicitThenEnv) {
  EXPECT_EQ(resolve_threads(3), 3u);
  ::setenv("PFRAM_THREADS", "5", 1);
  EXPECT_EQ(resolve_threads(0), 5u);
  ::setenv("PFRAM_THREADS", "x", 1);
  EXPECT_THROW(resolve_threads(0), InputError);
  ::unsetenv("PFRAM_THREADS");
  EXPECT_GE(resolve_threads(0), 1u);
}

TEST(ParallelTest, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, 4, [](std::size_t i) {
                 if (i == 57) throw InputError("boom");
               }),
               InputError);
}
