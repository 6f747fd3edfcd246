#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "corpus_prune/corpus_io.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::TempDir;

namespace {

cp::Document doc(std::string id, std::string text, std::optional<std::string> subset = {}) {
  cp::Document d;
  d.id = std::move(id);
  d.text = std::move(text);
  d.subset = std::move(subset);
  return d;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::vector<cp::Document> random_docs(std::uint64_t seed, std::size_t n) {
  cp::Rng rng(seed);
  std::vector<cp::Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    cp::Document d;
    d.id = "id-" + std::to_string(i) + "-" + std::to_string(rng.uniform_below(1000));
    const auto len = rng.uniform_below(80);
    for (std::uint64_t j = 0; j < len; ++j) {
      static const std::vector<std::string> pieces{"a", "b", " ", "c", "\n", "\t", "\"", "\\", "é", "漢字", "x", "{", "}"};
      d.text += pieces[rng.uniform_below(pieces.size())];
    }
    if (rng.uniform_below(2)) d.subset = "s" + std::to_string(rng.uniform_below(3));
    if (rng.uniform_below(4) == 0) d.extra["meta"] = {{"k", static_cast<int>(i)}};
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace

TEST(Document, ParsesAndPreservesUnknownKeys) {
  const auto d = cp::parse_document(R"({"id":"a","zeta":1,"text":"hello","subset":"Pile-CC","alpha":[1,2]})");
  EXPECT_EQ(d.id, "a");
  EXPECT_EQ(d.text, "hello");
  EXPECT_EQ(d.subset, "Pile-CC");
  EXPECT_EQ(d.byte_len(), 5u);
  EXPECT_EQ(cp::serialize_document(d), R"({"id":"a","text":"hello","subset":"Pile-CC","zeta":1,"alpha":[1,2]})");
}

TEST(Document, RejectsBadRecords) {
  EXPECT_THROW(cp::parse_document("{\"id\":\"a\"}"), cp::Error);
  EXPECT_THROW(cp::parse_document("{\"text\":\"x\"}"), cp::Error);
  EXPECT_THROW(cp::parse_document("{\"id\":\"\",\"text\":\"x\"}"), cp::Error);
  EXPECT_THROW(cp::parse_document("{\"id\":3,\"text\":\"x\"}"), cp::Error);
  EXPECT_THROW(cp::parse_document("[1]"), cp::Error);
  EXPECT_THROW(cp::parse_document("not json"), cp::Error);
}

TEST(ReadDocuments, PreservesShardThenLineOrder) {
  TempDir dir;
  write_text(dir / "a.jsonl", "{\"id\":\"1\",\"text\":\"x\"}\n{\"id\":\"2\",\"text\":\"y\"}\n{\"id\":\"3\",\"text\":\"z\"}\n");
  write_text(dir / "b.jsonl", "{\"id\":\"4\",\"text\":\"u\"}\n{\"id\":\"5\",\"text\":\"v\"}");
  cp::ShardManifest m;
  m.root = dir.path();
  m.shards = {{"a.jsonl", 3}, {"b.jsonl", 2}};
  const auto docs = cp::read_documents(m);
  ASSERT_EQ(docs.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(docs[i].id, std::to_string(i + 1));
}

TEST(ReadDocuments, EmptyManifestYieldsNothing) {
  cp::ShardManifest m;
  EXPECT_TRUE(cp::read_documents(m).empty());
}

TEST(ReadDocuments, DuplicateIdIsNamed) {
  TempDir dir;
  write_text(dir / "a.jsonl", "{\"id\":\"a\",\"text\":\"hello\"}\n{\"id\":\"a\",\"text\":\"hello\"}\n");
  cp::ShardManifest m;
  m.root = dir.path();
  m.shards = {{"a.jsonl", 2}};
  try {
    cp::read_documents(m);
    FAIL() << "expected duplicate-id error";
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::validation);
    EXPECT_NE(std::string(e.what()).find("\"a\""), std::string::npos);
  }
}

TEST(ReadDocuments, MalformedLineReportsPathAndLine) {
  TempDir dir;
  write_text(dir / "bad.jsonl", "{\"id\":\"a\",\"text\":\"ok\"}\n{\"id\":\"b\",\"text\":\n");
  cp::ShardManifest m;
  m.root = dir.path();
  m.shards = {{"bad.jsonl", 2}};
  try {
    cp::read_documents(m);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(ReadDocuments, MissingShardNamesPath) {
  TempDir dir;
  cp::ShardManifest m;
  m.root = dir.path();
  m.shards = {{"nope.jsonl", 1}};
  try {
    cp::read_documents(m);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find("nope.jsonl"), std::string::npos);
  }
}

TEST(ReadDocuments, CountMismatchIsReported) {
  TempDir dir;
  write_text(dir / "a.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n");
  cp::ShardManifest m;
  m.root = dir.path();
  m.shards = {{"a.jsonl", 2}};
  EXPECT_THROW(cp::read_documents(m), cp::Error);
}

TEST(Manifest, RejectsDuplicatePathsAndBadTotals) {
  TempDir dir;
  write_text(dir / "m.json", R"({"format_version":1,"shards":[{"path":"a","count":1},{"path":"a","count":2}]})");
  EXPECT_THROW(cp::load_manifest(dir / "m.json"), cp::Error);
  write_text(dir / "m2.json", R"({"format_version":1,"total_docs":5,"shards":[{"path":"a","count":1}]})");
  EXPECT_THROW(cp::load_manifest(dir / "m2.json"), cp::Error);
  write_text(dir / "m3.json", R"({"format_version":9,"shards":[]})");
  EXPECT_THROW(cp::load_manifest(dir / "m3.json"), cp::Error);
}

TEST(WriteShards, SplitsIntoShardSizedFiles) {
  TempDir dir;
  std::vector<cp::Document> docs;
  for (int i = 0; i < 5; ++i) docs.push_back(doc("d" + std::to_string(i), "t"));
  const auto m = cp::write_shards(docs, dir.path(), 2);
  ASSERT_EQ(m.shards.size(), 3u);
  EXPECT_EQ(m.shards[0].count, 2u);
  EXPECT_EQ(m.shards[1].count, 2u);
  EXPECT_EQ(m.shards[2].count, 1u);
  EXPECT_EQ(m.total_docs(), 5u);
  const auto loaded = cp::load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.shards, m.shards);
}

TEST(WriteShards, EmptyInputWritesEmptyManifest) {
  TempDir dir;
  const auto m = cp::write_shards(std::vector<cp::Document>{}, dir.path(), 3);
  EXPECT_EQ(m.total_docs(), 0u);
  EXPECT_TRUE(m.shards.empty());
  EXPECT_TRUE(cp::read_documents(cp::load_manifest(dir / "manifest.json")).empty());
}

TEST(WriteShards, ZeroShardSizeIsArgumentError) {
  TempDir dir;
  try {
    cp::write_shards(std::vector<cp::Document>{}, dir.path(), 0);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::invalid_argument);
  }
}

// Round trip of 1000 random documents, plain and zstd, compared element-wise
// against the generated input.
TEST(WriteShards, RoundTripPlainAndCompressed) {
  const auto docs = random_docs(11, 1000);
  for (bool compress : {false, true}) {
    TempDir dir;
    cp::ShardOptions opt;
    opt.compress = compress;
    cp::write_shards(docs, dir.path(), 137, opt);
    const auto back = cp::read_documents(cp::load_manifest(dir / "manifest.json"));
    ASSERT_EQ(back.size(), docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      ASSERT_EQ(back[i].id, docs[i].id);
      ASSERT_EQ(back[i].text, docs[i].text);
      ASSERT_EQ(back[i], docs[i]);
    }
    if (compress) EXPECT_TRUE(cp::is_zstd_path(dir / "shard-00000.jsonl.zst"));
  }
}

TEST(LineIo, LargeCompressedStreamSurvives) {
  TempDir dir;
  const auto p = dir / "big.jsonl.zst";
  {
    cp::LineWriter w(p, 1);
    for (int i = 0; i < 200000; ++i) w.write_line("line " + std::to_string(i) + std::string(i % 50, 'x'));
  }
  cp::LineReader r(p);
  int i = 0;
  while (auto line = r.next()) {
    ASSERT_EQ(*line, "line " + std::to_string(i) + std::string(i % 50, 'x'));
    ++i;
  }
  EXPECT_EQ(i, 200000);
}

TEST(LineIo, TruncatedZstdIsAnError) {
  TempDir dir;
  const auto p = dir / "t.jsonl.zst";
  {
    cp::LineWriter w(p);
    for (int i = 0; i < 1000; ++i) w.write_line("some text " + std::to_string(i));
  }
  auto bytes = cp::read_file(p);
  cp::write_file(p, bytes.substr(0, bytes.size() / 2));
  cp::LineReader r(p);
  EXPECT_THROW({ while (r.next()) {} }, cp::Error);
}

TEST(SplitDataset, FullScaleCounts) {
  std::vector<std::string> ids;
  ids.reserve(1010500);
  for (int i = 0; i < 1010500; ++i) ids.push_back(std::to_string(i));
  const auto s = cp::split_dataset(ids, {1000000, 500, 10000, 1});
  EXPECT_EQ(s.train.size(), 1000000u);
  EXPECT_EQ(s.val.size(), 500u);
  EXPECT_EQ(s.test.size(), 10000u);
}

TEST(SplitDataset, ExhaustiveTrainIsPermutation) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("x" + std::to_string(i));
  const auto s = cp::split_dataset(ids, {10, 0, 0, 5});
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
  auto sorted = s.train;
  std::sort(sorted.begin(), sorted.end());
  auto expected = ids;
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(sorted, expected);
}

TEST(SplitDataset, DeterministicPerSeedAndDisjoint) {
  std::vector<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.push_back("id" + std::to_string(i));
  const cp::SplitSpec spec{700, 100, 150, 99};
  const auto a = cp::split_dataset(ids, spec);
  const auto b = cp::split_dataset(ids, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 950u);
  auto spec2 = spec;
  spec2.seed = 100;
  EXPECT_NE(cp::split_dataset(ids, spec2).train, a.train);
}

TEST(SplitDataset, ShortfallIsReported) {
  try {
    cp::split_dataset({"a", "b"}, {2, 1, 0, 0});
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("short by 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cp::split_dataset({"a", "a"}, {1, 0, 0, 0}), cp::Error);
}
