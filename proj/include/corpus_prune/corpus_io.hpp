#pragma once

// Sharded JSONL corpora: manifest handling, streaming reads, sharded
// writes and seeded train/val/test splitting.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "corpus_prune/document.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/line_io.hpp"
#include "corpus_prune/rng.hpp"

namespace corpus_prune {

inline constexpr std::uint32_t kManifestFormatVersion = 1;

struct ShardEntry {
  std::string path;  // relative to the manifest directory unless absolute
  std::uint64_t count = 0;

  friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

struct ShardManifest {
  std::uint32_t format_version = kManifestFormatVersion;
  std::vector<ShardEntry> shards;
  // Directory relative shard paths resolve against. Not serialized.
  std::filesystem::path root;

  std::uint64_t total_docs() const noexcept {
    std::uint64_t n = 0;
    for (const auto& s : shards) n += s.count;
    return n;
  }

  std::filesystem::path resolve(const ShardEntry& s) const {
    std::filesystem::path p(s.path);
    return p.is_absolute() ? p : root / p;
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& s : shards)
      if (!seen.insert(s.path).second)
        throw Error(ErrorKind::validation, "manifest lists shard twice: " + s.path);
  }
};

inline Json manifest_to_json(const ShardManifest& m) {
  Json j;
  j["format_version"] = m.format_version;
  j["total_docs"] = m.total_docs();
  j["shards"] = Json::array();
  for (const auto& s : m.shards) j["shards"].push_back({{"path", s.path}, {"count", s.count}});
  return j;
}

inline void save_manifest(const ShardManifest& m, const std::filesystem::path& path) {
  m.validate();
  write_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline ShardManifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  ShardManifest m;
  m.root = path.parent_path();
  try {
    const Json j = Json::parse(text);
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kManifestFormatVersion)
      throw Error(ErrorKind::parse, path.string() + ": unsupported manifest format_version " +
                                        std::to_string(m.format_version));
    for (const auto& s : j.at("shards"))
      m.shards.push_back({s.at("path").get<std::string>(), s.at("count").get<std::uint64_t>()});
    if (j.contains("total_docs") && j["total_docs"].get<std::uint64_t>() != m.total_docs())
      throw Error(ErrorKind::validation,
                  path.string() + ": total_docs does not equal the sum of shard counts");
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": malformed manifest: " + e.what());
  }
  m.validate();
  return m;
}

// Streams documents in shard order, then line order. Enforces id
// uniqueness across the whole manifest and the per-shard counts.
class DocumentReader {
 public:
  explicit DocumentReader(ShardManifest manifest) : manifest_(std::move(manifest)) {
    manifest_.validate();
  }

  std::optional<Document> next() {
    while (true) {
      if (!reader_) {
        if (shard_ >= manifest_.shards.size()) return std::nullopt;
        const auto path = manifest_.resolve(manifest_.shards[shard_]);
        if (!std::filesystem::exists(path))
          throw Error(ErrorKind::io, "shard file not found: " + path.string());
        reader_.emplace(path);
        line_no_ = 0;
        in_shard_ = 0;
      }
      auto line = reader_->next();
      if (!line) {
        const auto expected = manifest_.shards[shard_].count;
        if (in_shard_ != expected)
          throw Error(ErrorKind::validation,
                      reader_->path().string() + ": manifest says " + std::to_string(expected) +
                          " documents, shard has " + std::to_string(in_shard_));
        reader_.reset();
        ++shard_;
        continue;
      }
      ++line_no_;
      if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
      Document doc;
      try {
        doc = parse_document(*line);
      } catch (const Error& e) {
        throw Error(ErrorKind::parse, reader_->path().string() + ":" +
                                          std::to_string(line_no_) + ": " + e.what());
      }
      if (!ids_.insert(doc.id).second)
        throw Error(ErrorKind::validation, "duplicate document id \"" + doc.id + "\" at " +
                                               reader_->path().string() + ":" +
                                               std::to_string(line_no_));
      ++in_shard_;
      return doc;
    }
  }

 private:
  ShardManifest manifest_;
  std::size_t shard_ = 0;
  std::optional<LineReader> reader_;
  std::uint64_t line_no_ = 0;
  std::uint64_t in_shard_ = 0;
  std::unordered_set<std::string> ids_;
};

inline std::vector<Document> read_documents(const ShardManifest& manifest) {
  DocumentReader reader(manifest);
  std::vector<Document> out;
  while (auto doc = reader.next()) out.push_back(std::move(*doc));
  return out;
}

struct ShardOptions {
  std::string prefix = "shard";
  bool compress = false;
  int zstd_level = 3;
  std::string manifest_name = "manifest.json";
};

// Writes documents into dir/<prefix>-NNNNN.jsonl[.zst] plus a manifest whose
// shard paths are relative to dir.
class ShardWriter {
 public:
  ShardWriter(std::filesystem::path dir, std::uint64_t shard_size, ShardOptions options = {})
      : dir_(std::move(dir)), shard_size_(shard_size), options_(std::move(options)) {
    if (shard_size_ == 0) throw Error(ErrorKind::invalid_argument, "shard_size must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create directory " + dir_.string() + ": " + ec.message());
    manifest_.root = dir_;
  }

  void add(const Document& doc) {
    if (!writer_) open_next();
    writer_->write_line(serialize_document(doc));
    ++manifest_.shards.back().count;
    if (manifest_.shards.back().count == shard_size_) {
      writer_->close();
      writer_.reset();
    }
  }

  ShardManifest finish() {
    if (writer_) {
      writer_->close();
      writer_.reset();
    }
    save_manifest(manifest_, dir_ / options_.manifest_name);
    return manifest_;
  }

 private:
  void open_next() {
    char name[64];
    std::snprintf(name, sizeof name, "-%05zu.jsonl", manifest_.shards.size());
    std::string file = options_.prefix + name;
    if (options_.compress) file += ".zst";
    manifest_.shards.push_back({file, 0});
    writer_.emplace(dir_ / file, options_.zstd_level);
  }

  std::filesystem::path dir_;
  std::uint64_t shard_size_;
  ShardOptions options_;
  ShardManifest manifest_;
  std::optional<LineWriter> writer_;
};

template <class Range>
ShardManifest write_shards(const Range& docs, const std::filesystem::path& dir,
                           std::uint64_t shard_size, ShardOptions options = {}) {
  ShardWriter writer(dir, shard_size, std::move(options));
  for (const Document& d : docs) writer.add(d);
  return writer.finish();
}

struct SplitSpec {
  std::uint64_t train_count = 0;
  std::uint64_t val_count = 0;
  std::uint64_t test_count = 0;
  std::uint64_t seed = 0;

  std::uint64_t total() const noexcept { return train_count + val_count + test_count; }
};

struct Splits {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Fisher-Yates permutation of all ids with Rng(seed), then consecutive
// train/val/test slices. Ids past the requested counts are dropped.
inline Splits split_dataset(std::vector<std::string> ids, const SplitSpec& spec) {
  if (spec.total() > ids.size())
    throw Error(ErrorKind::invalid_argument,
                "split needs " + std::to_string(spec.total()) + " documents but only " +
                    std::to_string(ids.size()) + " are available (short by " +
                    std::to_string(spec.total() - ids.size()) + ")");
  {
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second)
        throw Error(ErrorKind::invalid_argument, "split input repeats id \"" + id + "\"");
  }
  Rng rng(spec.seed);
  shuffle(std::span<std::string>(ids), rng);
  Splits out;
  auto it = ids.begin();
  auto take = [&](std::vector<std::string>& dst, std::uint64_t n) {
    dst.assign(std::make_move_iterator(it), std::make_move_iterator(it + static_cast<std::ptrdiff_t>(n)));
    it += static_cast<std::ptrdiff_t>(n);
  };
  take(out.train, spec.train_count);
  take(out.val, spec.val_count);
  take(out.test, spec.test_count);
  return out;
}

}  // namespace corpus_prune
