#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pfram/io.hpp"
#include "support.hpp"

using namespace pfram;
using testing_support::TempDir;

namespace {

std::string bytes(std::initializer_list<int> v) {
  std::string s;
  for (int b : v) s.push_back(static_cast<char>(b));
  return s;
}

// "PFRM", version 1, one image "a" with N=1, d=2 and values {1.0, 2.0}.
const std::string kTinyPfrm =
    "PFRM" + bytes({1, 0, 0, 0, 1, 0, 0, 0, 1, 0}) + "a" +
    bytes({1, 0, 0, 0, 2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40});

void write_text(const std::string& path, std::string_view text) {
  std::ofstream(path, std::ios::binary) << text;
}

template <typename F>
FormatError format_error(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e;
  }
  ADD_FAILURE() << "expected FormatError";
  return FormatError("none", 0);
}

}  // namespace

TEST(PfrmTest, EncodesHandAssembledLayout) {
  std::vector<RepMatrix> e{RepMatrix(ImageId("a"), 1, 2, {1.0f, 2.0f})};
  EXPECT_EQ(io::encode_repset(e), kTinyPfrm);
  auto back = io::decode_repset(kTinyPfrm, "m", 3);
  EXPECT_EQ(back.layer(), 3);
  EXPECT_EQ(back.entries()[0].values()[1], 2.0f);
}

TEST(PfrmTest, RoundTripPreservesBits) {
  auto set = testing_support::random_set(51, 20, 7, 13);
  const std::string enc = io::encode_repset(set);
  auto back = io::decode_repset(enc, "m", 0);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.entries()[i].image(), set.entries()[i].image());
    ASSERT_EQ(back.entries()[i].rows(), set.entries()[i].rows());
    EXPECT_EQ(std::memcmp(back.entries()[i].values().data(), set.entries()[i].values().data(),
                          set.entries()[i].values().size() * 4),
              0);
  }
  EXPECT_EQ(io::encode_repset(back), enc);
  EXPECT_EQ(io::scan_rep_ids(enc), set.ids());
}

TEST(PfrmTest, FileRoundTrip) {
  TempDir dir;
  auto set = testing_support::random_set(52, 5, 3, 4);
  io::save_repset(set, dir.file("x.pfrm"));
  EXPECT_FALSE(std::filesystem::exists(dir.file("x.pfrm.tmp")));
  EXPECT_EQ(io::encode_repset(io::load_repset(dir.file("x.pfrm"))), io::encode_repset(set));
}

TEST(PfrmTest, EveryTruncationIsAFormatError) {
  for (std::size_t len = 0; len < kTinyPfrm.size(); ++len) {
    auto e = format_error([&] { io::decode_repset(kTinyPfrm.substr(0, len)); });
    EXPECT_LE(e.offset(), len) << len;
    EXPECT_THROW(io::scan_rep_ids(kTinyPfrm.substr(0, len)), FormatError) << len;
  }
}

TEST(PfrmTest, StructuredErrors) {
  std::string bad = kTinyPfrm;
  bad[0] = 'X';
  EXPECT_EQ(format_error([&] { io::decode_repset(bad); }).offset(), 0u);

  bad = kTinyPfrm;
  bad[4] = 2;
  EXPECT_EQ(format_error([&] { io::decode_repset(bad); }).offset(), 4u);

  bad = kTinyPfrm;
  bad[8] = 0;
  EXPECT_EQ(format_error([&] { io::decode_repset(bad); }).offset(), 8u);

  // Non-finite value in the second float.
  bad = kTinyPfrm;
  bad.replace(bad.size() - 4, 4, bytes({0, 0, 0xc0, 0x7f}));
  auto e = format_error([&] { io::decode_repset(bad); });
  ASSERT_TRUE(e.image().has_value());
  EXPECT_EQ(*e.image(), "a");
  EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);

  EXPECT_THROW(io::decode_repset(kTinyPfrm + "z"), FormatError);
}

TEST(PfrmTest, DimensionMismatchNamesImage) {
  std::vector<RepMatrix> e{RepMatrix(ImageId("first"), 1, 2, {1, 2}),
                           RepMatrix(ImageId("second"), 1, 3, {1, 2, 3})};
  auto e1 = format_error([&] { io::decode_repset(io::encode_repset(e)); });
  ASSERT_TRUE(e1.image().has_value());
  EXPECT_EQ(*e1.image(), "second");
  auto e2 = format_error([&] { io::decode_repset(io::encode_repset(e), "m", 0, 3); });
  EXPECT_EQ(*e2.image(), "first");
}

TEST(PfrmTest, DuplicateIdsAndEmptyIdsRejected) {
  std::vector<RepMatrix> e{RepMatrix(ImageId("a"), 1, 1, {1}), RepMatrix(ImageId("a"), 1, 1, {2})};
  EXPECT_THROW(io::decode_repset(io::encode_repset(e)), FormatError);
  std::string empty_id = "PFRM" + bytes({1, 0, 0, 0, 1, 0, 0, 0, 0, 0});
  EXPECT_THROW(io::decode_repset(empty_id), FormatError);
}

TEST(PfrmTest, ZeroImageCountRejected) {
  const std::string zero = "PFRM" + bytes({1, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(format_error([&] { io::decode_repset(zero); }).offset(), 8u);
  EXPECT_THROW(io::encode_repset(std::vector<RepMatrix>{}), InputError);
}

TEST(EmbeddingFileTest, RequiresSingleRow) {
  TempDir dir;
  write_text(dir.file("ok.pfrm"), kTinyPfrm);
  auto c = io::load_embeddings(dir.file("ok.pfrm"));
  EXPECT_EQ(c.size(), 1u);
  std::vector<RepMatrix> two{RepMatrix(ImageId("a"), 2, 1, {1, 2})};
  write_text(dir.file("bad.pfrm"), io::encode_repset(two));
  EXPECT_THROW(io::load_embeddings(dir.file("bad.pfrm")), InputError);
}

TEST(ManifestTest, ParsesAndResolvesPaths) {
  TempDir dir;
  write_text(dir.file("l0.pfrm"), kTinyPfrm);
  write_text(dir.file("m.json"),
             R"({"model": "toy", "dim": 2, "condition_tag": "noise=0.1", "seed": 4,
                 "layers": [{"index": 0, "path": "l0.pfrm"}]})");
  auto m = io::load_manifest(dir.file("m.json"));
  EXPECT_EQ(m.model, "toy");
  EXPECT_EQ(m.dim, 2u);
  EXPECT_EQ(*m.condition_tag, "noise=0.1");
  EXPECT_EQ(*m.seed, 4u);
  EXPECT_EQ(std::filesystem::path(m.layers[0].path), dir.path() / "l0.pfrm");
  auto again = io::parse_manifest(io::format_manifest(m), "/");
  EXPECT_EQ(again.layers[0].path, m.layers[0].path);
}

TEST(ManifestTest, Errors) {
  TempDir dir;
  EXPECT_THROW(io::parse_manifest("{", "."), InputError);
  EXPECT_THROW(io::parse_manifest(R"({"model": "m", "dim": 2, "layers": []})", "."), InputError);
  EXPECT_THROW(io::parse_manifest(R"({"model": "m", "dim": 0, "layers": [{"index": 0, "path": "x"}]})", "."),
               InputError);
  EXPECT_THROW(io::parse_manifest(R"({"model": "m", "dim": 2, "layers": [{"index": 0, "path": "x"},
                                                                         {"index": 0, "path": "y"}]})",
                                  "."),
               InputError);
  EXPECT_THROW(io::parse_manifest(R"({"dim": 2, "layers": [{"index": 0, "path": "x"}]})", "."), InputError);
  write_text(dir.file("m.json"), R"({"model": "m", "dim": 2, "layers": [{"index": 0, "path": "gone.pfrm"}]})");
  EXPECT_THROW(io::load_manifest(dir.file("m.json")), InputError);
}

TEST(ObjectsTest, ParseWithAndWithoutVocabulary) {
  auto c = io::parse_objects(R"({"b": ["dog", "cat"], "a": ["tree"], "c": []})");
  EXPECT_EQ(c.vocabulary().label(0), "cat");
  EXPECT_EQ(c.ids()[0], ImageId("b"));
  EXPECT_EQ(c.items()[0].count(), 2u);
  EXPECT_EQ(c.items()[2].count(), 0u);
  auto v = std::make_shared<const Vocabulary>(std::vector<std::string>{"tree", "cat"});
  EXPECT_THROW(io::parse_objects(R"({"x": ["dog"]})", v), InputError);
  EXPECT_THROW(io::parse_objects(R"({"x": "dog"})"), InputError);
  EXPECT_THROW(io::parse_objects(R"(["x"])"), InputError);
  auto back = io::parse_objects(io::format_objects(c), c.vocabulary_ptr());
  EXPECT_EQ(io::format_objects(back), io::format_objects(c));
}

TEST(VocabularyFileTest, OneLabelPerLine) {
  TempDir dir;
  write_text(dir.file("v.txt"), "cat\r\ndog\n\ntraffic light\n");
  auto v = io::load_vocabulary(dir.file("v.txt"));
  EXPECT_EQ(v->size(), 3u);
  EXPECT_EQ(v->label(2), "traffic light");
}

TEST(MatrixCacheTest, RoundTripAndCorruption) {
  TempDir dir;
  auto set = testing_support::random_set(53, 7, 3, 5);
  auto m = build_similarity_matrix(set, set.ids());
  io::save_matrix(m, 0xabcdef, dir.file("c.pfsm"));
  auto back = io::load_matrix(dir.file("c.pfsm"));
  EXPECT_EQ(back.key, 0xabcdefu);
  EXPECT_TRUE(back.matrix == m);
  const std::string enc = io::encode_matrix(m, 1);
  EXPECT_THROW(io::decode_matrix(enc.substr(0, enc.size() - 1)), FormatError);
  std::string kind = enc;
  kind[16] = 9;
  EXPECT_THROW(io::decode_matrix(kind), FormatError);
}
