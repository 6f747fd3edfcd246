#pragma once

// Deterministic synthetic corpus with matching precomputed embeddings.
// Documents come from a handful of topical subsets; each subset has its
// own word pool and a direction in embedding space, so clusters exist and
// are recoverable.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "corpus_prune/corpus_io.hpp"
#include "corpus_prune/document.hpp"
#include "corpus_prune/line_io.hpp"
#include "corpus_prune/rng.hpp"

namespace corpus_prune::fixture {

struct FixtureOptions {
  std::size_t docs = 10000;
  std::size_t subsets = 10;
  std::uint32_t dim = 32;
  std::uint64_t seed = 2023;
  std::uint64_t shard_size = 2500;
  double noise = 0.25;
};

struct FixturePaths {
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
};

inline std::string make_word(Rng& rng, std::size_t len) {
  static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w.push_back(kLetters[rng.uniform_below(26)]);
  return w;
}

inline FixturePaths write_fixture(const std::filesystem::path& dir, const FixtureOptions& opt = {}) {
  Rng rng(opt.seed);
  std::vector<std::vector<std::string>> pools(opt.subsets);
  std::vector<std::vector<double>> centers(opt.subsets, std::vector<double>(opt.dim));
  for (std::size_t s = 0; s < opt.subsets; ++s) {
    for (int w = 0; w < 200; ++w) pools[s].push_back(make_word(rng, 3 + rng.uniform_below(6)));
    double n2 = 0.0;
    for (auto& x : centers[s]) {
      x = rng.normal();
      n2 += x * x;
    }
    for (auto& x : centers[s]) x /= std::sqrt(n2);
  }
  std::vector<std::string> shared;
  for (int w = 0; w < 50; ++w) shared.push_back(make_word(rng, 2 + rng.uniform_below(4)));

  std::vector<Document> docs;
  docs.reserve(opt.docs);
  std::filesystem::create_directories(dir);
  const auto emb_path = dir / "embeddings.jsonl";
  LineWriter emb(emb_path);
  for (std::size_t i = 0; i < opt.docs; ++i) {
    const std::size_t s = rng.uniform_below(opt.subsets);
    Document d;
    char id[32];
    std::snprintf(id, sizeof id, "doc-%06zu", i);
    d.id = id;
    d.subset = "subset-" + std::to_string(s);
    const std::size_t len = 5 + rng.uniform_below(200);
    for (std::size_t t = 0; t < len; ++t) {
      if (t) d.text.push_back(rng.uniform_below(10) == 0 ? '\n' : ' ');
      d.text += rng.uniform_below(4) == 0 ? shared[rng.uniform_below(shared.size())]
                                          : pools[s][rng.uniform_below(pools[s].size())];
    }
    const double scale = 0.5 + 2.5 * rng.uniform01();
    Json vec = Json::array();
    for (std::uint32_t j = 0; j < opt.dim; ++j)
      vec.push_back(static_cast<float>(scale * (centers[s][j] + opt.noise * rng.normal() / std::sqrt(opt.dim))));
    emb.write_line(Json{{"id", d.id}, {"embedding", vec}}.dump());
    docs.push_back(std::move(d));
  }
  emb.close();
  write_shards(docs, dir / "corpus", opt.shard_size);
  return {dir / "corpus" / "manifest.json", emb_path};
}

}  // namespace corpus_prune::fixture
