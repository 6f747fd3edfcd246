#include <gtest/gtest.h>

#include <set>

#include "corpus_prune/filter.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::TempDir;

namespace {

cp::DecisionView view_dropping(std::uint32_t k, const std::set<std::uint32_t>& dropped) {
  cp::DecisionView v;
  for (std::uint32_t c = 0; c < k; ++c) {
    cp::ClusterDecision d;
    d.cluster_id = c;
    d.annotator = "a";
    if (dropped.contains(c)) {
      d.verdict = cp::Verdict::drop;
      d.reason = cp::Reason::other;
    }
    v[c] = d;
  }
  return v;
}

std::vector<cp::Assignment> random_assignments(cp::Rng& rng, std::size_t n, std::uint32_t k) {
  std::vector<cp::Assignment> a;
  for (std::size_t i = 0; i < n; ++i)
    a.push_back({"doc-" + std::to_string(i), static_cast<std::uint32_t>(rng.uniform_below(k)),
                 static_cast<float>(rng.uniform01())});
  return a;
}

}  // namespace

TEST(ApplyDecisions, DropsThirtyEightOfTwoHundredTwenty) {
  std::vector<cp::Assignment> a;
  for (std::uint32_t c = 0; c < 220; ++c)
    for (int j = 0; j < 3; ++j) a.push_back({std::to_string(c) + "/" + std::to_string(j), c, 0.1f});
  std::set<std::uint32_t> dropped;
  for (std::uint32_t c = 0; c < 220 && dropped.size() < 38; c += 5) dropped.insert(c);
  ASSERT_EQ(dropped.size(), 38u);
  const auto kept = cp::apply_decisions(a, view_dropping(220, dropped));
  EXPECT_EQ(kept.size(), 182u * 3);
  std::set<std::uint32_t> clusters;
  for (const auto& x : kept) clusters.insert(x.cluster);
  EXPECT_EQ(clusters.size(), 182u);
  for (auto c : dropped) EXPECT_FALSE(clusters.contains(c));
}

TEST(ApplyDecisions, AllKeepIsIdentityAndAllDropIsEmpty) {
  cp::Rng rng(1);
  const auto a = random_assignments(rng, 200, 6);
  const auto kept = cp::apply_decisions(a, view_dropping(6, {}));
  ASSERT_EQ(kept.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(kept[i].doc_id, a[i].doc_id);
  EXPECT_TRUE(cp::apply_decisions(a, view_dropping(6, {0, 1, 2, 3, 4, 5})).empty());
}

TEST(ApplyDecisions, StrictModeListsUndecidedClusters) {
  const std::vector<cp::Assignment> a{{"a", 0, 0.f}, {"b", 3, 0.f}, {"c", 5, 0.f}};
  cp::DecisionView v = view_dropping(1, {});
  try {
    cp::apply_decisions(a, v);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::validation);
    EXPECT_NE(std::string(e.what()).find("3, 5"), std::string::npos);
  }
  EXPECT_EQ(cp::apply_decisions(a, v, false).size(), 3u);
}

TEST(Quotas, Examples) {
  EXPECT_EQ(cp::allocate_quotas(std::vector<std::uint64_t>{600, 400}, 100),
            (std::vector<std::uint64_t>{60, 40}));
  EXPECT_EQ(cp::allocate_quotas(std::vector<std::uint64_t>{7, 5, 3}, 10),
            (std::vector<std::uint64_t>{5, 3, 2}));
  EXPECT_EQ(cp::allocate_quotas(std::vector<std::uint64_t>{1, 1, 1}, 2), (std::vector<std::uint64_t>{1, 1, 0}));
  EXPECT_EQ(cp::allocate_quotas(std::vector<std::uint64_t>{4, 0, 6}, 10), (std::vector<std::uint64_t>{4, 0, 6}));
}

TEST(Quotas, ShortfallIsAnError) {
  try {
    cp::allocate_quotas(std::vector<std::uint64_t>{3, 4}, 8);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("short by 1"), std::string::npos);
  }
}

TEST(Quotas, HugeTargetsDoNotOverflow) {
  const std::vector<std::uint64_t> sizes{UINT64_MAX / 2, UINT64_MAX / 4};
  const auto q = cp::allocate_quotas(sizes, UINT64_MAX / 2);
  EXPECT_EQ(q[0] + q[1], UINT64_MAX / 2);
  EXPECT_LE(q[0], sizes[0]);
  EXPECT_LE(q[1], sizes[1]);
}

TEST(Quotas, MatchesBruteForceOnRandomProfiles) {
  cp::Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = 1 + rng.uniform_below(10);
    std::vector<std::uint64_t> sizes(n);
    std::uint64_t total = 0;
    for (auto& s : sizes) total += (s = rng.uniform_below(50));
    if (total == 0) continue;
    const auto target = 1 + rng.uniform_below(total);
    const auto q = cp::allocate_quotas(sizes, target);
    EXPECT_EQ(q, test_support::brute_force_quotas(sizes, target)) << "trial " << trial;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LE(q[i], sizes[i]);
      sum += q[i];
    }
    EXPECT_EQ(sum, target);
  }
}

TEST(Subsample, RandomModeProperties) {
  cp::Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = random_assignments(rng, 500, 1 + static_cast<std::uint32_t>(rng.uniform_below(12)));
    cp::FilterPlan plan;
    plan.target_total = 1 + rng.uniform_below(a.size());
    plan.seed = trial;
    const auto ids = cp::subsample(a, plan);
    EXPECT_EQ(ids.size(), plan.target_total);
    std::set<std::string> unique(ids.begin(), ids.end());
    EXPECT_EQ(unique.size(), ids.size());
    std::map<std::uint32_t, std::uint64_t> sizes, got;
    std::map<std::string, std::uint32_t> cluster_of;
    for (const auto& x : a) {
      ++sizes[x.cluster];
      cluster_of[x.doc_id] = x.cluster;
    }
    for (const auto& id : ids) {
      ASSERT_TRUE(cluster_of.contains(id));
      ++got[cluster_of[id]];
    }
    std::vector<std::uint64_t> sv, gv;
    for (const auto& [c, s] : sizes) {
      sv.push_back(s);
      gv.push_back(got[c]);
    }
    EXPECT_EQ(gv, cp::allocate_quotas(sv, plan.target_total));
    EXPECT_EQ(cp::subsample(a, plan), ids);
  }
}

TEST(Subsample, SeedChangesSelection) {
  cp::Rng rng(8);
  const auto a = random_assignments(rng, 1000, 4);
  cp::FilterPlan p1, p2;
  p1.target_total = p2.target_total = 100;
  p1.seed = 1;
  p2.seed = 2;
  EXPECT_NE(cp::subsample(a, p1), cp::subsample(a, p2));
}

TEST(Subsample, TopLTakesTheClosestPerCluster) {
  cp::Rng rng(6);
  const auto a = random_assignments(rng, 400, 5);
  cp::FilterPlan plan;
  plan.mode = cp::FilterMode::top_l_closest;
  plan.l = 7;
  const auto ids = cp::subsample(a, plan);
  std::set<std::string> chosen(ids.begin(), ids.end());
  EXPECT_EQ(chosen.size(), 35u);
  for (std::uint32_t c = 0; c < 5; ++c) {
    float worst_in = 0.f, best_out = 2.f;
    for (const auto& x : a) {
      if (x.cluster != c) continue;
      if (chosen.contains(x.doc_id))
        worst_in = std::max(worst_in, x.distance);
      else
        best_out = std::min(best_out, x.distance);
    }
    EXPECT_LE(worst_in, best_out);
  }
  plan.l.reset();
  EXPECT_THROW(cp::subsample(a, plan), cp::Error);
}

TEST(Stats, SmallExample) {
  std::vector<cp::Document> docs(2);
  docs[0].id = "1";
  docs[0].text = "a b a";
  docs[0].subset = "x";
  docs[1].id = "2";
  docs[1].text = "c";
  const auto s = cp::compute_stats(docs);
  EXPECT_EQ(s.doc_count, 2u);
  EXPECT_EQ(s.vocab_size, 3u);
  EXPECT_EQ(s.token_count, 4u);
  EXPECT_EQ(s.median_doc_len, 1u);
  EXPECT_EQ(s.max_doc_len, 3u);
  EXPECT_EQ(s.uncompressed_bytes, 6u);
  EXPECT_EQ(s.per_subset_counts, (std::map<std::string, std::uint64_t>{{"x", 1}}));
}

TEST(Stats, EmptyCorpus) {
  const auto s = cp::compute_stats(std::vector<cp::Document>{});
  EXPECT_EQ(s, cp::CorpusStats{});
}

TEST(Stats, MatchesNaiveReference) {
  cp::Rng rng(12);
  const std::string alphabet = "ab \t\n\r\v\f";
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<cp::Document> docs;
    std::vector<std::string> texts;
    const auto n = rng.uniform_below(30);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string t;
      const auto len = rng.uniform_below(40);
      for (std::uint64_t j = 0; j < len; ++j) t += alphabet[rng.uniform_below(alphabet.size())];
      cp::Document d;
      d.id = std::to_string(i);
      d.text = t;
      docs.push_back(d);
      texts.push_back(t);
    }
    const auto s = cp::compute_stats(docs);
    const auto ref = test_support::naive_stats(texts);
    EXPECT_EQ(s.vocab_size, ref.vocab);
    EXPECT_EQ(s.median_doc_len, ref.median);
    EXPECT_EQ(s.max_doc_len, ref.max);
    EXPECT_EQ(s.token_count, ref.tokens);
  }
}

namespace {

struct ExportFixture {
  TempDir dir;
  cp::ShardManifest manifest;
  std::vector<std::string> ids;

  explicit ExportFixture(std::size_t n = 200) {
    std::vector<cp::Document> docs;
    for (std::size_t i = 0; i < n; ++i) {
      cp::Document d;
      d.id = "d" + std::to_string(i);
      d.text = "text " + std::to_string(i % 17) + " end";
      d.subset = i % 2 ? "odd" : "even";
      docs.push_back(d);
      ids.push_back(d.id);
    }
    manifest = cp::write_shards(docs, dir / "src", 64);
  }
};

std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = cp::read_file(e.path());
  return out;
}

}  // namespace

TEST(Export, WritesSplitsStatsAndProvenance) {
  ExportFixture fx;
  const std::vector<std::string> selected(fx.ids.begin(), fx.ids.begin() + 100);
  cp::SplitSpec split{80, 5, 15, 11};
  cp::FilterPlan plan;
  plan.target_total = 100;
  cp::ProvenanceInputs in;
  in.manifest = fx.dir / "src" / "manifest.json";
  const auto out = fx.dir / "out";
  const auto r = cp::export_dataset(selected, fx.manifest, split, out, plan, in, {.shard_size = 30});
  EXPECT_EQ(r.train.total_docs(), 80u);
  EXPECT_EQ(r.val.total_docs(), 5u);
  EXPECT_EQ(r.test.total_docs(), 15u);
  EXPECT_EQ(r.train.shards.size(), 3u);

  std::set<std::string> seen;
  for (const char* name : {"train", "val", "test"}) {
    const auto m = cp::load_manifest(out / name / "manifest.json");
    for (const auto& d : cp::read_documents(m)) EXPECT_TRUE(seen.insert(d.id).second);
  }
  EXPECT_EQ(seen, std::set<std::string>(selected.begin(), selected.end()));

  const auto stats = cp::Json::parse(cp::read_file(out / "stats.json"));
  EXPECT_EQ(stats["overall"]["doc_count"], 100);
  EXPECT_EQ(stats["train"]["doc_count"], 80);
  EXPECT_EQ(stats["overall"]["per_subset_counts"]["odd"], 50);

  const auto prov = cp::Json::parse(cp::read_file(out / "provenance.json"));
  EXPECT_EQ(prov["selected_count"], 100);
  EXPECT_EQ(prov["split"]["seed"], 11);
  EXPECT_EQ(prov["inputs"]["manifest"]["sha256"], cp::sha256_file(*in.manifest));
  EXPECT_EQ(prov["inputs"]["manifest"]["file"], "manifest.json");
}

TEST(Export, IsByteIdenticalAcrossRuns) {
  ExportFixture fx;
  cp::SplitSpec split{150, 20, 30, 4};
  cp::FilterPlan plan;
  for (const char* sub : {"a", "b"})
    cp::export_dataset(fx.ids, fx.manifest, split, fx.dir / sub, plan, {}, {.shard_size = 64, .compress = true});
  EXPECT_EQ(read_tree(fx.dir / "a"), read_tree(fx.dir / "b"));
}

TEST(Export, TrainOnlySplit) {
  ExportFixture fx(10);
  cp::SplitSpec split{10, 0, 0, 0};
  const auto r = cp::export_dataset(fx.ids, fx.manifest, split, fx.dir / "out", {});
  EXPECT_EQ(r.train.total_docs(), 10u);
  EXPECT_EQ(r.val.total_docs(), 0u);
  EXPECT_TRUE(std::filesystem::exists(fx.dir / "out" / "val" / "manifest.json"));
}

TEST(Export, UnknownSelectedIdIsAnError) {
  ExportFixture fx(10);
  const std::vector<std::string> selected{"d1", "nope"};
  try {
    cp::export_dataset(selected, fx.manifest, {2, 0, 0, 0}, fx.dir / "out", {});
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.kind(), cp::ErrorKind::not_found);
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

TEST(Export, ShortSelectionFailsTheSplit) {
  ExportFixture fx(10);
  EXPECT_THROW(cp::export_dataset(fx.ids, fx.manifest, {10, 1, 0, 0}, fx.dir / "out", {}), cp::Error);
}
