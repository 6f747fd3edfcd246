#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>

#include "corpus_prune/embedding.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::TempDir;

namespace {

std::vector<cp::Document> make_docs(std::size_t n) {
  std::vector<cp::Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    cp::Document d;
    d.id = "doc" + std::to_string(i);
    d.text = "text number " + std::to_string(i);
    docs.push_back(d);
  }
  return docs;
}

// Deterministic raw vectors keyed by id; never unit norm.
class FakeProvider : public cp::EmbeddingProvider {
 public:
  explicit FakeProvider(std::uint32_t dim, std::size_t max_chars = 2048) : dim_(dim), max_chars_(max_chars) {}
  std::uint32_t dim() const override { return dim_; }
  std::size_t max_input_chars() const override { return max_chars_; }
  std::vector<std::vector<float>> embed(std::span<const cp::EmbedRequest> batch) const override {
    std::vector<std::vector<float>> out;
    for (const auto& r : batch) {
      seen_texts.push_back(std::string(r.text));
      std::vector<float> v(dim_);
      for (std::uint32_t j = 0; j < dim_; ++j) v[j] = static_cast<float>(r.id.size() + j + 1);
      out.push_back(v);
    }
    ++calls;
    return out;
  }
  mutable std::vector<std::string> seen_texts;
  mutable int calls = 0;

 private:
  std::uint32_t dim_;
  std::size_t max_chars_;
};

}  // namespace

TEST(Normalize, ThreeFourFive) {
  const std::vector<float> v{3.0f, 4.0f};
  const auto n = cp::normalize(v);
  EXPECT_NEAR(n[0], 0.6f, 1e-7);
  EXPECT_NEAR(n[1], 0.8f, 1e-7);
}

TEST(Normalize, UnitVectorUnchanged) {
  const std::vector<float> v{1.0f, 0.0f};
  EXPECT_EQ(cp::normalize(v), v);
}

TEST(Normalize, DegenerateInputsFail) {
  EXPECT_THROW(cp::normalize(std::vector<float>{0.0f, 0.0f}), cp::Error);
  EXPECT_THROW(cp::normalize(std::vector<float>{}), cp::Error);
  EXPECT_THROW(cp::normalize(std::vector<float>{1.0f, NAN}), cp::Error);
  EXPECT_THROW(cp::normalize(std::vector<float>{INFINITY, 1.0f}), cp::Error);
}

TEST(Normalize, UnitNormAndIdempotentOnRandomVectors) {
  cp::Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto dim = 1 + rng.uniform_below(64);
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>((rng.uniform01() - 0.5) * std::pow(10.0, rng.uniform_below(8) - 4.0));
    if (cp::norm64(v) == 0.0) continue;
    const auto once = cp::normalize(v);
    EXPECT_NEAR(cp::norm64(once), 1.0, 1e-6);
    const auto twice = cp::normalize(once);
    for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(twice[i], once[i], 1e-6);
  }
}

TEST(TruncateChars, CutsOnCodePointBoundaries) {
  EXPECT_EQ(cp::truncate_chars("hello", 3), "hel");
  EXPECT_EQ(cp::truncate_chars("hello", 10), "hello");
  EXPECT_EQ(cp::truncate_chars("é漢字x", 2), "é漢");
  EXPECT_EQ(cp::truncate_chars("abc", 0), "");
}

TEST(EmbedCorpus, KeepsOrderAndCardinality) {
  const auto docs = make_docs(5);
  FakeProvider provider(4);
  cp::VectorSource src(docs);
  cp::EmbedOptions opt;
  opt.batch_size = 2;
  const auto store = cp::embed_corpus(src, provider, opt);
  ASSERT_EQ(store.count(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(store.ids()[i], docs[i].id);
  EXPECT_EQ(provider.calls, 3);
  store.validate();
}

TEST(EmbedCorpus, EmptyStream) {
  const std::vector<cp::Document> docs;
  FakeProvider provider(8);
  cp::VectorSource src(docs);
  const auto store = cp::embed_corpus(src, provider);
  EXPECT_EQ(store.count(), 0u);
  EXPECT_EQ(store.dim(), 8u);
}

TEST(EmbedCorpus, TruncatesLongDocuments) {
  std::vector<cp::Document> docs = make_docs(1);
  docs[0].text = std::string(5000, 'a');
  FakeProvider provider(2, 2048);
  cp::VectorSource src(docs);
  cp::embed_corpus(src, provider);
  ASSERT_EQ(provider.seen_texts.size(), 1u);
  EXPECT_EQ(provider.seen_texts[0].size(), 2048u);
}

// File-backed provider rows must equal an independent double-precision
// normalization of the fixture vectors.
TEST(EmbedCorpus, PrecomputedRowsEqualNormalizedFixture) {
  TempDir dir;
  const auto docs = make_docs(20);
  cp::Rng rng(77);
  std::vector<std::vector<float>> raw;
  {
    cp::LineWriter w(dir / "emb.jsonl");
    for (const auto& d : docs) {
      std::vector<float> v(6);
      for (auto& x : v) x = static_cast<float>(rng.normal() * 3.0);
      raw.push_back(v);
      w.write_line(cp::Json{{"id", d.id}, {"embedding", v}}.dump());
    }
  }
  cp::PrecomputedProvider provider(dir / "emb.jsonl");
  EXPECT_EQ(provider.dim(), 6u);
  cp::VectorSource src(docs);
  cp::EmbedOptions opt;
  opt.batch_size = 3;
  opt.max_in_flight = 4;
  const auto store = cp::embed_corpus(src, provider, opt);
  ASSERT_EQ(store.count(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    long double n2 = 0;
    for (float x : raw[i]) n2 += static_cast<long double>(x) * x;
    const long double n = std::sqrt(n2);
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_NEAR(store.row(i)[j], static_cast<double>(raw[i][j] / n), 1e-7);
  }
}

TEST(EmbedCorpus, PrecomputedMissingIdFailsWithBatchId) {
  TempDir dir;
  cp::write_file(dir / "emb.jsonl", "{\"id\":\"doc0\",\"embedding\":[1,2]}\n");
  cp::PrecomputedProvider provider(dir / "emb.jsonl");
  const auto docs = make_docs(3);
  cp::VectorSource src(docs);
  cp::EmbedOptions opt;
  opt.batch_size = 2;
  opt.initial_backoff = std::chrono::milliseconds(0);
  try {
    cp::embed_corpus(src, provider, opt);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::provider);
    EXPECT_NE(std::string(e.what()).find("\"doc0\""), std::string::npos) << e.what();
  }
}

namespace {

// Runs an httplib server on an ephemeral port for the lifetime of the object.
class MockEmbedServer {
 public:
  template <class Handler>
  explicit MockEmbedServer(Handler h) {
    server_.Post("/embed", h);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEmbedServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(HttpProvider, RetriesTransientFailures) {
  std::atomic<int> calls{0};
  MockEmbedServer server([&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    const auto body = cp::Json::parse(req.body);
    cp::Json out;
    out["dim"] = 3;
    out["embeddings"] = cp::Json::array();
    for (const auto& t : body["texts"])
      out["embeddings"].push_back({static_cast<double>(t.get<std::string>().size()), 1.0, 0.0});
    res.set_content(out.dump(), "application/json");
  });
  cp::HttpEmbeddingProvider provider(server.url());
  const auto docs = make_docs(4);
  cp::VectorSource src(docs);
  cp::EmbedOptions opt;
  opt.batch_size = 10;
  opt.initial_backoff = std::chrono::milliseconds(1);
  const auto store = cp::embed_corpus(src, provider, opt);
  EXPECT_EQ(store.count(), 4u);
  EXPECT_EQ(store.dim(), 3u);
  EXPECT_EQ(calls.load(), 3);
}

TEST(HttpProvider, GivesUpAfterThreeAttempts) {
  std::atomic<int> calls{0};
  MockEmbedServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  cp::HttpEmbeddingProvider provider(server.url());
  const auto docs = make_docs(3);
  cp::VectorSource src(docs);
  cp::EmbedOptions opt;
  opt.batch_size = 2;
  opt.initial_backoff = std::chrono::milliseconds(1);
  try {
    cp::embed_corpus(src, provider, opt);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("\"doc0\""), std::string::npos) << e.what();
  }
  EXPECT_EQ(calls.load(), 3);
}

TEST(HttpProvider, DimensionMismatchIsReported) {
  MockEmbedServer server([&](const httplib::Request& req, httplib::Response& res) {
    const auto n = cp::Json::parse(req.body)["texts"].size();
    cp::Json out;
    out["embeddings"] = cp::Json::array();
    for (std::size_t i = 0; i < n; ++i) out["embeddings"].push_back({1.0, 2.0});
    res.set_content(out.dump(), "application/json");
  });
  cp::HttpEmbeddingProvider provider(server.url(), 3);
  const auto docs = make_docs(2);
  cp::VectorSource src(docs);
  try {
    cp::embed_corpus(src, provider);
    FAIL();
  } catch (const cp::Error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("expected 3"), std::string::npos) << what;
    EXPECT_NE(what.find("received 2"), std::string::npos) << what;
  }
}

TEST(Store, EmptyStoreRoundTripKeepsHeader) {
  TempDir dir;
  cp::EmbeddingStore store(1024);
  cp::save_store(store, dir / "s.embs");
  const auto back = cp::load_store(dir / "s.embs");
  EXPECT_EQ(back.dim(), 1024u);
  EXPECT_EQ(back.count(), 0u);
  EXPECT_EQ(cp::read_file(dir / "s.embs").size(), 28u);
}

TEST(Store, RandomStoreRoundTripIsBitExact) {
  TempDir dir;
  cp::Rng rng(123);
  const auto store = test_support::random_store(rng, 100, 16);
  cp::save_store(store, dir / "s.embs");
  const auto back = cp::load_store(dir / "s.embs");
  ASSERT_EQ(back.count(), 100u);
  EXPECT_EQ(std::memcmp(back.data().data(), store.data().data(), store.data().size() * 4), 0);
  EXPECT_EQ(back.ids(), store.ids());
  EXPECT_EQ(cp::encode_store(back), cp::read_file(dir / "s.embs"));
}

TEST(Store, HeaderLayoutIsLittleEndian) {
  cp::EmbeddingStore store(2);
  store.append("a", std::vector<float>{1.0f, 0.0f});
  const auto bytes = cp::encode_store(store);
  EXPECT_EQ(bytes.substr(0, 4), "EMBS");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);   // version
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);   // dim
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1);  // count
  // body: 1.0f = 0x3f800000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[28 + 3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[28 + 2]), 0x80);
  // footer: u32 length 1, then "a"
  EXPECT_EQ(static_cast<unsigned char>(bytes[36]), 1);
  EXPECT_EQ(bytes[40], 'a');
  EXPECT_EQ(bytes.size(), 41u);
}

TEST(Store, CorruptionIsDetected) {
  TempDir dir;
  cp::Rng rng(1);
  const auto bytes = cp::encode_store(test_support::random_store(rng, 4, 3));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    cp::decode_store(bad_magic, "s");
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }

  try {
    cp::decode_store(bytes.substr(0, 40), "s");
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }

  // Drop the last id from the index.
  EXPECT_THROW(cp::decode_store(bytes.substr(0, bytes.size() - 7), "s"), cp::Error);
  EXPECT_THROW(cp::decode_store(bytes + "zz", "s"), cp::Error);

  auto bad_id = bytes;
  bad_id.back() = static_cast<char>(bad_id.back() ^ 1);
  try {
    cp::decode_store(bad_id, "s");
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(Store, ValidateRejectsNonUnitRows) {
  cp::EmbeddingStore store(2);
  store.append("a", std::vector<float>{1.0f, 1.0f});
  EXPECT_THROW(store.validate(), cp::Error);
}
