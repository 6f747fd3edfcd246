#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "corpus_prune/hash.hpp"
#include "corpus_prune/rng.hpp"

namespace cp = corpus_prune;

// Reference outputs computed with an independent Python transcription of
// splitmix64 seeding + xoshiro256**.
TEST(Rng, MatchesReferenceStream) {
  cp::Rng a(0);
  EXPECT_EQ(a.next(), 0x99ec5f36cb75f2b4ULL);
  EXPECT_EQ(a.next(), 0xbf6e1f784956452aULL);
  EXPECT_EQ(a.next(), 0x1a5f849d4933e6e0ULL);
  cp::Rng b(42);
  EXPECT_EQ(b.next(), 0x15780b2e0c2ec716ULL);
  EXPECT_EQ(b.next(), 0x6104d9866d113a7eULL);
}

TEST(Rng, BoundedAndShuffleMatchReference) {
  cp::Rng rng(7);
  std::vector<std::uint64_t> draws;
  for (int i = 0; i < 10; ++i) draws.push_back(rng.uniform_below(10));
  EXPECT_EQ(draws, (std::vector<std::uint64_t>{7, 2, 8, 9, 9, 8, 0, 1, 4, 1}));

  std::vector<int> items(10);
  std::iota(items.begin(), items.end(), 0);
  cp::Rng rng2(7);
  cp::shuffle(std::span<int>(items), rng2);
  EXPECT_EQ(items, (std::vector<int>{1, 8, 3, 0, 4, 5, 9, 6, 2, 7}));
}

TEST(Rng, UniformBelowStaysInRangeAndCoversIt) {
  cp::Rng rng(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.uniform_below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, Uniform01IsHalfOpen) {
  cp::Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, PartialShuffleKeepsPermutation) {
  std::vector<int> items(50);
  std::iota(items.begin(), items.end(), 0);
  cp::Rng rng(9);
  cp::partial_shuffle(std::span<int>(items), 10, rng);
  auto sorted = items;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Hash, IdChecksumMatchesReference) {
  const std::vector<std::string> ids{"a", "b"};
  EXPECT_EQ(cp::id_checksum(ids), 0xab40d7820d408076ULL);
  EXPECT_EQ(cp::id_checksum(std::vector<std::string>{}), cp::kFnvOffset);
}

TEST(Hash, Sha256KnownVector) {
  EXPECT_EQ(cp::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
