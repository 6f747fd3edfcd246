#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "corpus_prune/clustering.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::TempDir;

namespace {

cp::EmbeddingStore store_from(const std::vector<std::vector<float>>& rows) {
  cp::EmbeddingStore s(static_cast<std::uint32_t>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) s.append("r" + std::to_string(i), rows[i]);
  return s;
}

cp::Centroids centroids_from(const std::vector<std::vector<float>>& rows) {
  cp::Centroids c(static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), c.row(i).begin());
    c.counts[i] = 1;
  }
  return c;
}

void expect_unit_centroids(const cp::Centroids& c) {
  for (std::uint32_t j = 0; j < c.k; ++j) EXPECT_NEAR(cp::norm64(c.row(j)), 1.0, 1e-4);
}

}  // namespace

TEST(CosineDistance, Examples) {
  const std::vector<float> x{1, 0}, y{0, 1}, z{-1, 0};
  EXPECT_FLOAT_EQ(cp::cosine_distance(x, x), 0.0f);
  EXPECT_FLOAT_EQ(cp::cosine_distance(x, y), 1.0f);
  EXPECT_FLOAT_EQ(cp::cosine_distance(x, z), 2.0f);
  EXPECT_THROW(cp::cosine_distance(x, std::vector<float>{1, 0, 0}), cp::Error);
}

TEST(CosineDistance, ClampedToRange) {
  // Slightly over-unit vectors would give a negative 1 - dot.
  const std::vector<float> a{1.0001f, 0}, b{-1.0001f, 0};
  EXPECT_EQ(cp::cosine_distance(a, a), 0.0f);
  EXPECT_EQ(cp::cosine_distance(a, b), 2.0f);
}

TEST(KMeansPP, SingleCenterIsFirstUniformDraw) {
  cp::Rng data_rng(4);
  const auto store = test_support::random_store(data_rng, 30, 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = cp::kmeanspp_init(cp::view(store), 1, seed);
    cp::Rng oracle(seed);
    const auto pick = oracle.uniform_below(30);
    ASSERT_TRUE(std::equal(c.row(0).begin(), c.row(0).end(), store.row(pick).begin()));
    EXPECT_EQ(c.counts[0], 1u);
  }
}

TEST(KMeansPP, KEqualsNChoosesEveryRowOnce) {
  cp::Rng data_rng(8);
  const auto store = test_support::random_store(data_rng, 12, 4);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = cp::kmeanspp_init(cp::view(store), 12, seed);
    std::set<std::size_t> chosen;
    for (std::uint32_t j = 0; j < 12; ++j)
      for (std::size_t i = 0; i < 12; ++i)
        if (std::equal(c.row(j).begin(), c.row(j).end(), store.row(i).begin())) chosen.insert(i);
    EXPECT_EQ(chosen.size(), 12u);
  }
}

TEST(KMeansPP, TooFewDistinctRowsFails) {
  const auto store = store_from({{1, 0}, {1, 0}, {0, 1}, {1, 0}});
  EXPECT_NO_THROW(cp::kmeanspp_init(cp::view(store), 2, 1));
  EXPECT_THROW(cp::kmeanspp_init(cp::view(store), 3, 1), cp::Error);
  EXPECT_THROW(cp::kmeanspp_init(cp::view(store), 5, 1), cp::Error);
}

TEST(KMeansPP, DeterministicForSeed) {
  cp::Rng data_rng(2);
  const auto store = test_support::random_store(data_rng, 200, 8);
  EXPECT_EQ(cp::kmeanspp_init(cp::view(store), 10, 5), cp::kmeanspp_init(cp::view(store), 10, 5));
}

// Monte Carlo over 1000 seeds: two tight antipodal blobs must get one
// center each in at least 99% of runs.
TEST(KMeansPP, AntipodalBlobsGetOneCenterEach) {
  cp::Rng rng(32);
  cp::EmbeddingStore store(6);
  std::vector<int> labels;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 50; ++i) {
      std::vector<float> v(6);
      for (auto& x : v) x = static_cast<float>(0.02 * rng.normal());
      v[0] += b == 0 ? 1.0f : -1.0f;
      store.append("p" + std::to_string(labels.size()), cp::normalize(v));
      labels.push_back(b);
    }
  int good = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto c = cp::kmeanspp_init(cp::view(store), 2, seed);
    const bool first_pos = c.row(0)[0] > 0, second_pos = c.row(1)[0] > 0;
    good += first_pos != second_pos;
  }
  EXPECT_GE(good, 990);
}

TEST(UpdateRule, HandComputedSingleStep) {
  auto c = centroids_from({{1.0f, 0.0f}});
  cp::update_centroid(c, 0, std::vector<float>{0.0f, 1.0f});
  EXPECT_EQ(c.counts[0], 2u);
  EXPECT_NEAR(c.row(0)[0], 0.70711f, 1e-5);
  EXPECT_NEAR(c.row(0)[1], 0.70711f, 1e-5);
}

TEST(UpdateRule, ThirdPointUsesOneThird) {
  auto c = centroids_from({{1.0f, 0.0f}});
  c.counts[0] = 2;
  cp::update_centroid(c, 0, std::vector<float>{0.0f, 1.0f});
  // (2/3, 1/3) normalized
  const double n = std::sqrt(4.0 / 9 + 1.0 / 9);
  EXPECT_NEAR(c.row(0)[0], (2.0 / 3) / n, 1e-6);
  EXPECT_NEAR(c.row(0)[1], (1.0 / 3) / n, 1e-6);
  EXPECT_EQ(c.counts[0], 3u);
}

TEST(MiniBatchFit, IdenticalRowsAreAFixedPoint) {
  const std::vector<float> v = cp::normalize(std::vector<float>{0.3f, -0.5f, 0.8f});
  std::vector<std::vector<float>> rows(10, v);
  const auto store = store_from(rows);
  cp::FitOptions opt;
  opt.k = 1;
  opt.batch_size = 4;
  opt.total_steps = 1;
  const auto c = cp::minibatch_fit(store, opt);
  for (int j = 0; j < 3; ++j) EXPECT_FLOAT_EQ(c.row(0)[j], v[j]);
  EXPECT_EQ(c.counts[0], 5u);
}

TEST(MiniBatchFit, RecoversWellSeparatedBlobs) {
  const auto blobs = test_support::make_blobs(5, 4, 50, 8, 0.05);
  cp::FitOptions opt;
  opt.k = 4;
  opt.batch_size = 32;
  opt.total_steps = 50;
  opt.seed = 3;
  const auto c = cp::minibatch_fit(blobs.store, opt);
  expect_unit_centroids(c);
  const auto a = cp::assign_all(blobs.store, c);
  std::vector<int> pred;
  for (const auto& x : a) pred.push_back(static_cast<int>(x.cluster));
  EXPECT_GE(test_support::adjusted_rand_index(pred, blobs.labels), 0.95);
}

TEST(MiniBatchFit, ErrorsAndClamping) {
  cp::Rng rng(1);
  const auto store = test_support::random_store(rng, 10, 3);
  cp::FitOptions opt;
  opt.k = 11;
  EXPECT_THROW(cp::minibatch_fit(store, opt), cp::Error);
  opt.k = 2;
  opt.batch_size = 0;
  EXPECT_THROW(cp::minibatch_fit(store, opt), cp::Error);
  opt.batch_size = 100;
  std::ostringstream log_capture;
  cp::log::set_sink(log_capture);
  cp::FitReport report;
  const auto c = cp::minibatch_fit(store, opt, &report);
  cp::log::set_sink(std::cerr);
  EXPECT_TRUE(report.batch_clamped);
  EXPECT_EQ(report.batch_size, 10u);
  EXPECT_EQ(report.total_steps, 4u);  // ceil(4 * 10 / 10)
  EXPECT_NE(log_capture.str().find("clamping"), std::string::npos);
  EXPECT_EQ(c.steps_taken, 4u);
}

TEST(MiniBatchFit, DefaultStepsAreFourEpochs) {
  EXPECT_EQ(cp::default_total_steps(100000, 16384), 25u);
  EXPECT_EQ(cp::default_total_steps(16384, 16384), 4u);
  EXPECT_EQ(cp::default_total_steps(10, 3), 14u);
}

TEST(MiniBatchFit, BitIdenticalForSameSeed) {
  cp::Rng rng(21);
  const auto store = test_support::random_store(rng, 400, 12);
  cp::FitOptions opt;
  opt.k = 6;
  opt.batch_size = 64;
  opt.total_steps = 30;
  opt.seed = 77;
  const auto a = cp::minibatch_fit(store, opt);
  cp::thread_limit() = 3;
  const auto b = cp::minibatch_fit(store, opt);
  cp::thread_limit() = 0;
  EXPECT_EQ(a, b);
  EXPECT_EQ(cp::assign_all(store, a), cp::assign_all(store, b));
  opt.seed = 78;
  EXPECT_FALSE(a == cp::minibatch_fit(store, opt));
}

// Sum of counts equals k plus processed points minus what repairs reset.
TEST(MiniBatchFit, CountConservation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cp::Rng rng(seed);
    const auto store = test_support::random_store(rng, 150, 4);
    cp::FitOptions opt;
    opt.k = 12;
    opt.batch_size = 8;
    opt.total_steps = 60;
    opt.seed = seed;
    opt.stale_steps = 3;  // force repairs
    cp::FitReport report;
    const auto c = cp::minibatch_fit(store, opt, &report);
    EXPECT_EQ(c.total_count(), opt.k + report.points_processed - report.count_removed);
    EXPECT_EQ(report.points_processed, 8u * 60u);
    expect_unit_centroids(c);
  }
}

TEST(Repair, NoStaleCentroidsIsNoOp) {
  auto c = centroids_from({{1, 0}, {0, 1}});
  c.counts = {5, 7};
  const auto before = c;
  cp::StaleTracker tracker(2);
  tracker.last_active = {10, 10};
  const std::vector<float> batch{1, 0, 0, 1};
  const std::vector<std::uint32_t> clusters{0, 1};
  const auto r = cp::repair_empty_clusters(c, {batch, 2}, clusters, tracker, 12, 50);
  EXPECT_TRUE(r.reseeded.empty());
  EXPECT_EQ(c, before);
}

TEST(Repair, StaleCentroidTakesTheUniqueOutlier) {
  auto c = centroids_from({{1, 0}, {0, 1}});
  c.counts = {40, 9};
  cp::StaleTracker tracker(2);
  tracker.last_active = {60, 10};  // centroid 1 idle for 50 steps at step 60
  const float s = std::sqrt(0.5f);
  // Points near centroid 0 plus one far from it.
  const std::vector<float> batch{1, 0, 0.99f, 0.141067f, -s, s};
  const std::vector<std::uint32_t> clusters{0, 0, 0};
  const auto r = cp::repair_empty_clusters(c, {batch, 2}, clusters, tracker, 60, 50);
  ASSERT_EQ(r.reseeded, std::vector<std::uint32_t>{1});
  EXPECT_EQ(c.counts[1], 1u);
  EXPECT_EQ(r.count_removed, 8u);
  EXPECT_FLOAT_EQ(c.row(1)[0], -s);
  EXPECT_FLOAT_EQ(c.row(1)[1], s);
  EXPECT_EQ(tracker.last_active[1], 60u);
  EXPECT_EQ(c.counts[0], 40u);
}

TEST(Repair, NeverFiresWhenEveryCentroidStaysActive) {
  const auto blobs = test_support::make_blobs(9, 3, 100, 6, 0.05);
  cp::FitOptions opt;
  opt.k = 3;
  opt.batch_size = 60;
  opt.total_steps = 200;
  opt.stale_steps = 5;
  cp::FitReport report;
  cp::minibatch_fit(blobs.store, opt, &report);
  EXPECT_EQ(report.repairs, 0u);
}

TEST(AssignAll, ExactMatchAndTieBreak) {
  const float s = std::sqrt(0.5f);
  const auto c = centroids_from({{0, 1}, {1, 0}, {-1, 0}, {s, s}, {0, -1}});
  const auto store = store_from({{s, s}, {1, 0}});
  const auto a = cp::assign_all(store, c);
  EXPECT_EQ(a[0].cluster, 3u);
  EXPECT_NEAR(a[0].distance, 0.0f, 1e-6);
  // (1,0) is exact for centroid 1.
  EXPECT_EQ(a[1].cluster, 1u);

  // Point equidistant from centroids 1 and 4.
  const auto c2 = centroids_from({{-1, 0}, {s, s}, {-s, s}, {0, -1}, {s, -s}});
  const auto p = store_from({{1, 0}});
  EXPECT_EQ(cp::assign_all(p, c2)[0].cluster, 1u);
}

TEST(AssignAll, MatchesExhaustiveOracle) {
  cp::Rng rng(100);
  const auto store = test_support::random_store(rng, 500, 10);
  cp::Centroids c(8, 10);
  for (std::uint32_t j = 0; j < 8; ++j) {
    const auto v = test_support::random_unit(rng, 10);
    std::copy(v.begin(), v.end(), c.row(j).begin());
  }
  const auto a = cp::assign_all(store, c);
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto o = test_support::oracle_nearest(store.row(i), c);
    ASSERT_EQ(a[i].cluster, o.cluster);
    ASSERT_NEAR(a[i].distance, o.distance, 1e-5);
    EXPECT_EQ(a[i].doc_id, store.ids()[i]);
  }
}

TEST(AssignAll, DimMismatch) {
  cp::Rng rng(1);
  const auto store = test_support::random_store(rng, 5, 3);
  cp::Centroids c(2, 4);
  EXPECT_THROW(cp::assign_all(store, c), cp::Error);
}

TEST(CentroidsFile, RoundTripAndCorruption) {
  TempDir dir;
  cp::Rng rng(4);
  const auto store = test_support::random_store(rng, 50, 5);
  cp::FitOptions opt;
  opt.k = 4;
  opt.batch_size = 10;
  opt.seed = 9;
  const auto c = cp::minibatch_fit(store, opt);
  cp::save_centroids(c, dir / "c.bin");
  EXPECT_EQ(cp::load_centroids(dir / "c.bin"), c);
  auto bytes = cp::read_file(dir / "c.bin");
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 8 + 8 + 4 * 8 + 4 * 5 * 4);
  bytes[1] = 'X';
  EXPECT_THROW(cp::decode_centroids(bytes, "c"), cp::Error);
  EXPECT_THROW(cp::decode_centroids(cp::read_file(dir / "c.bin").substr(0, 60), "c"), cp::Error);
}

TEST(AssignmentsFile, SixDecimalsAndRoundTrip) {
  TempDir dir;
  const std::vector<cp::Assignment> a{{"x\"y", 3, 0.1234567f}, {"z", 0, 0.0f}};
  EXPECT_EQ(cp::assignment_line(a[0]), R"({"id":"x\"y","cluster":3,"distance":0.123457})");
  cp::save_assignments(a, dir / "a.jsonl");
  const auto back = cp::load_assignments(dir / "a.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].doc_id, "x\"y");
  EXPECT_EQ(back[0].cluster, 3u);
  EXPECT_NEAR(back[0].distance, 0.123457f, 1e-7);
  EXPECT_EQ(cp::read_file(dir / "a.jsonl"),
            "{\"id\":\"x\\\"y\",\"cluster\":3,\"distance\":0.123457}\n{\"id\":\"z\",\"cluster\":0,\"distance\":0.000000}\n");
}
