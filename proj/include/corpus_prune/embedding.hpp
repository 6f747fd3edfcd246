#pragma once

// Document embeddings: providers, unit-sphere normalization and the binary
// embedding store.
//
// Store layout (all integers and floats little-endian):
//   magic "EMBS" | format_version u32 | dim u32 | count u64 | id_checksum u64
//   count * dim f32, row-major
//   count * (u32 byte length, UTF-8 id bytes)
// id_checksum is FNV-1a 64 over the ids, each followed by a 0x00 byte.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <future>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "httplib.h"

#include "corpus_prune/bytes.hpp"
#include "corpus_prune/document.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/hash.hpp"
#include "corpus_prune/line_io.hpp"
#include "corpus_prune/log.hpp"

namespace corpus_prune {

inline constexpr std::uint32_t kStoreFormatVersion = 1;
inline constexpr float kUnitNormTolerance = 1e-4f;

inline double dot64(std::span<const float> a, std::span<const float> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

inline double norm64(std::span<const float> v) noexcept { return std::sqrt(dot64(v, v)); }

inline void normalize_into(std::span<const float> v, std::span<float> out) {
  if (v.empty()) throw Error(ErrorKind::invalid_argument, "cannot normalize an empty vector");
  for (float x : v)
    if (!std::isfinite(x))
      throw Error(ErrorKind::invalid_argument, "cannot normalize a vector with non-finite components");
  const double n = norm64(v);
  if (n == 0.0) throw Error(ErrorKind::invalid_argument, "cannot normalize the zero vector");
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(v[i]) / n);
}

inline std::vector<float> normalize(std::span<const float> v) {
  std::vector<float> out(v.size());
  normalize_into(v, out);
  return out;
}

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::uint32_t dim) : dim_(dim) {
    if (dim == 0) throw Error(ErrorKind::invalid_argument, "embedding dim must be positive");
  }

  // Appends an already-normalized row.
  void append(std::string id, std::span<const float> row) {
    if (row.size() != dim_)
      throw Error(ErrorKind::invalid_argument, "row has dim " + std::to_string(row.size()) +
                                                   ", store expects " + std::to_string(dim_));
    rows_.insert(rows_.end(), row.begin(), row.end());
    ids_.push_back(std::move(id));
  }

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return ids_.size(); }
  std::span<const float> row(std::size_t i) const noexcept {
    return {rows_.data() + i * dim_, dim_};
  }
  std::span<const float> data() const noexcept { return rows_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  // Checks unit norms and id uniqueness.
  void validate() const {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < count(); ++i) {
      if (!seen.insert(ids_[i]).second)
        throw Error(ErrorKind::validation, "embedding store repeats id \"" + ids_[i] + "\"");
      if (std::abs(norm64(row(i)) - 1.0) > kUnitNormTolerance)
        throw Error(ErrorKind::validation, "row " + std::to_string(i) + " is not unit norm");
    }
  }

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    if (a.dim_ != b.dim_ || a.ids_ != b.ids_ || a.rows_.size() != b.rows_.size()) return false;
    return std::memcmp(a.rows_.data(), b.rows_.data(), a.rows_.size() * sizeof(float)) == 0;
  }

 private:
  std::uint32_t dim_ = 0;
  std::vector<float> rows_;
  std::vector<std::string> ids_;
};

inline std::string encode_store(const EmbeddingStore& store) {
  std::string out;
  out.reserve(32 + store.data().size() * 4);
  out.append("EMBS");
  bytes::put_le<std::uint32_t>(out, kStoreFormatVersion);
  bytes::put_le<std::uint32_t>(out, store.dim());
  bytes::put_le<std::uint64_t>(out, store.count());
  bytes::put_le<std::uint64_t>(out, id_checksum(store.ids()));
  for (float f : store.data()) bytes::put_f32(out, f);
  for (const auto& id : store.ids()) {
    bytes::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.append(id);
  }
  return out;
}

inline EmbeddingStore decode_store(std::string_view data, const std::string& source) {
  bytes::Reader r(data, source);
  if (r.remaining() < 4 || r.take(4) != "EMBS") r.fail("bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kStoreFormatVersion) r.fail("unsupported format_version " + std::to_string(version));
  const auto dim = r.le<std::uint32_t>();
  const auto count = r.le<std::uint64_t>();
  const auto checksum = r.le<std::uint64_t>();
  if (dim == 0) r.fail("dim is zero");
  const std::uint64_t floats = count * dim;
  if (count != 0 && floats / count != dim) r.fail("header overflow");
  if (r.remaining() / 4 < floats) r.fail("truncated data");
  std::vector<float> rows(floats);
  for (auto& f : rows) f = r.f32();
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (r.remaining() == 0) r.fail("id index has " + std::to_string(i) + " entries, expected " + std::to_string(count));
    const auto len = r.le<std::uint32_t>();
    ids.emplace_back(r.take(len));
  }
  if (r.remaining() != 0) r.fail("id index has trailing bytes");
  if (id_checksum(ids) != checksum) r.fail("id checksum mismatch");
  EmbeddingStore store(dim);
  for (std::uint64_t i = 0; i < count; ++i)
    store.append(std::move(ids[i]), std::span<const float>(rows.data() + i * dim, dim));
  return store;
}

inline void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  write_file(path, encode_store(store));
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
  return decode_store(read_file(path), path.string());
}

// Prefix of at most max_chars Unicode code points, cut on a UTF-8 boundary.
inline std::string_view truncate_chars(std::string_view text, std::size_t max_chars) noexcept {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xc0) != 0x80) {
      if (chars == max_chars) return text.substr(0, i);
      ++chars;
    }
  }
  return text;
}

struct EmbedRequest {
  std::string_view id;
  std::string_view text;  // already truncated
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  // 0 when the dimension is only known after the first response.
  virtual std::uint32_t dim() const = 0;
  virtual std::size_t max_input_chars() const = 0;

  // One raw (not necessarily normalized) vector per request, in order.
  // Must be safe to call from several threads at once.
  virtual std::vector<std::vector<float>> embed(std::span<const EmbedRequest> batch) const = 0;
};

// Serves precomputed raw vectors from a JSONL file of
// {"id": "...", "embedding": [f, f, ...]} records, looked up by document id.
class PrecomputedProvider final : public EmbeddingProvider {
 public:
  explicit PrecomputedProvider(const std::filesystem::path& path,
                               std::size_t max_input_chars = 2048)
      : max_chars_(max_input_chars) {
    LineReader reader(path);
    std::uint64_t line_no = 0;
    while (auto line = reader.next()) {
      ++line_no;
      if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const Json j = Json::parse(*line);
        auto vec = j.at("embedding").get<std::vector<float>>();
        if (dim_ == 0) dim_ = static_cast<std::uint32_t>(vec.size());
        if (vec.size() != dim_) throw Error(ErrorKind::parse, "inconsistent embedding dim");
        vectors_.emplace(j.at("id").get<std::string>(), std::move(vec));
      } catch (const std::exception& e) {
        throw Error(ErrorKind::parse,
                    path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (dim_ == 0) throw Error(ErrorKind::parse, path.string() + ": no embeddings");
  }

  std::uint32_t dim() const override { return dim_; }
  std::size_t max_input_chars() const override { return max_chars_; }

  std::vector<std::vector<float>> embed(std::span<const EmbedRequest> batch) const override {
    std::vector<std::vector<float>> out;
    out.reserve(batch.size());
    for (const auto& req : batch) {
      auto it = vectors_.find(std::string(req.id));
      if (it == vectors_.end())
        throw Error(ErrorKind::provider, "no precomputed embedding for id \"" + std::string(req.id) + "\"");
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::size_t max_chars_;
  std::uint32_t dim_ = 0;
  std::unordered_map<std::string, std::vector<float>> vectors_;
};

// POST {base}/embed {"texts": [...]} -> {"embeddings": [[...], ...], "dim": N}.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string base_url, std::uint32_t dim = 0,
                        std::size_t max_input_chars = 2048,
                        std::chrono::seconds timeout = std::chrono::seconds(120))
      : base_url_(std::move(base_url)), dim_(dim), max_chars_(max_input_chars), timeout_(timeout) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (base_url_.ends_with("/embed")) base_url_.resize(base_url_.size() - 6);
  }

  std::uint32_t dim() const override { return dim_; }
  std::size_t max_input_chars() const override { return max_chars_; }

  std::vector<std::vector<float>> embed(std::span<const EmbedRequest> batch) const override {
    Json body;
    body["texts"] = Json::array();
    for (const auto& req : batch) body["texts"].push_back(req.text);
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    auto res = client.Post("/embed", body.dump(), "application/json");
    if (!res)
      throw Error(ErrorKind::provider, "embedding request to " + base_url_ + " failed: " +
                                           httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error(ErrorKind::provider, "embedding endpoint returned HTTP " + std::to_string(res->status));
    try {
      const Json j = Json::parse(res->body);
      auto vecs = j.at("embeddings").get<std::vector<std::vector<float>>>();
      if (vecs.size() != batch.size())
        throw Error(ErrorKind::provider, "embedding endpoint returned " + std::to_string(vecs.size()) +
                                             " vectors for " + std::to_string(batch.size()) + " texts");
      return vecs;
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::provider, std::string("malformed embedding response: ") + e.what());
    }
  }

 private:
  std::string base_url_;
  std::uint32_t dim_;
  std::size_t max_chars_;
  std::chrono::seconds timeout_;
};

struct EmbedOptions {
  std::size_t batch_size = 64;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::size_t max_in_flight = 1;
};

namespace detail {

struct PendingBatch {
  std::shared_ptr<std::vector<Document>> docs;
  std::future<std::vector<std::vector<float>>> result;
};

inline std::vector<std::vector<float>> embed_with_retry(const EmbeddingProvider& provider,
                                                        const std::vector<Document>& docs,
                                                        const EmbedOptions& opt) {
  std::vector<EmbedRequest> reqs;
  reqs.reserve(docs.size());
  for (const auto& d : docs)
    reqs.push_back({d.id, truncate_chars(d.text, provider.max_input_chars())});
  auto delay = opt.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= opt.max_attempts; ++attempt) {
    try {
      return provider.embed(reqs);
    } catch (const std::exception& e) {
      last_error = e.what();
      if (attempt < opt.max_attempts) {
        log::warn("embedding batch failed, retrying",
                  {{"first_id", docs.front().id}, {"attempt", attempt}, {"error", last_error}});
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
  }
  throw Error(ErrorKind::provider, "embedding batch starting at id \"" + docs.front().id +
                                       "\" failed after " + std::to_string(opt.max_attempts) +
                                       " attempts: " + last_error);
}

}  // namespace detail

// Source is anything with next() -> std::optional<Document>, e.g.
// DocumentReader. Rows are appended in input order regardless of which
// batch finishes first.
template <class Source>
EmbeddingStore embed_corpus(Source& source, const EmbeddingProvider& provider,
                            const EmbedOptions& opt = {}) {
  if (opt.batch_size == 0) throw Error(ErrorKind::invalid_argument, "batch_size must be >= 1");
  if (opt.max_attempts < 1) throw Error(ErrorKind::invalid_argument, "max_attempts must be >= 1");
  std::uint32_t dim = provider.dim();
  std::optional<EmbeddingStore> store;
  if (dim != 0) store.emplace(dim);
  std::deque<detail::PendingBatch> in_flight;
  const std::size_t max_in_flight = std::max<std::size_t>(1, opt.max_in_flight);

  auto drain_front = [&] {
    auto batch = std::move(in_flight.front());
    in_flight.pop_front();
    auto vecs = batch.result.get();
    auto& docs = *batch.docs;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      if (dim == 0) {
        dim = static_cast<std::uint32_t>(vecs[i].size());
        store.emplace(dim);
      }
      if (vecs[i].size() != dim)
        throw Error(ErrorKind::provider, "embedding dimension mismatch for id \"" + docs[i].id +
                                             "\": expected " + std::to_string(dim) + ", received " +
                                             std::to_string(vecs[i].size()));
      std::vector<float> unit;
      try {
        unit = normalize(vecs[i]);
      } catch (const Error& e) {
        throw Error(ErrorKind::provider, "embedding for id \"" + docs[i].id + "\": " + e.what());
      }
      store->append(std::move(docs[i].id), unit);
    }
  };

  auto launch = [&](std::vector<Document> docs) {
    detail::PendingBatch pb;
    pb.docs = std::make_shared<std::vector<Document>>(std::move(docs));
    if (max_in_flight == 1) {
      std::promise<std::vector<std::vector<float>>> p;
      try {
        p.set_value(detail::embed_with_retry(provider, *pb.docs, opt));
      } catch (...) {
        p.set_exception(std::current_exception());
      }
      pb.result = p.get_future();
    } else {
      pb.result = std::async(std::launch::async, [&provider, &opt, docs = pb.docs] {
        return detail::embed_with_retry(provider, *docs, opt);
      });
    }
    in_flight.push_back(std::move(pb));
    if (in_flight.size() >= max_in_flight) drain_front();
  };

  std::vector<Document> batch;
  while (auto doc = source.next()) {
    batch.push_back(std::move(*doc));
    if (batch.size() == opt.batch_size) launch(std::exchange(batch, {}));
  }
  if (!batch.empty()) launch(std::move(batch));
  while (!in_flight.empty()) drain_front();
  // An empty corpus against a provider of unknown dim still needs a valid header.
  if (!store) store.emplace(dim == 0 ? 1 : dim);
  return std::move(*store);
}

// Adapter so plain containers can feed embed_corpus.
class VectorSource {
 public:
  explicit VectorSource(const std::vector<Document>& docs) : docs_(docs) {}
  std::optional<Document> next() {
    if (pos_ == docs_.size()) return std::nullopt;
    return docs_[pos_++];
  }

 private:
  const std::vector<Document>& docs_;
  std::size_t pos_ = 0;
};

}  // namespace corpus_prune
