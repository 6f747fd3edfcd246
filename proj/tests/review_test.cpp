#include <gtest/gtest.h>

#include <algorithm>
#include <thread>

#include "corpus_prune/review.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::LiveService;
using test_support::TempDir;

namespace {

cp::DocumentIndex docs_for(const std::vector<cp::Assignment>& a, std::size_t text_len = 10) {
  std::vector<cp::Document> docs;
  for (const auto& x : a) {
    cp::Document d;
    d.id = x.doc_id;
    d.text = std::string(text_len, 'x') + x.doc_id;
    docs.push_back(d);
  }
  return cp::DocumentIndex(std::move(docs));
}

cp::ClusterDecision decision(std::uint32_t c, cp::Verdict v, cp::Reason r, std::int64_t t = 1700000000) {
  cp::ClusterDecision d;
  d.cluster_id = c;
  d.verdict = v;
  d.reason = r;
  d.annotator = "annotator-1";
  d.timestamp = cp::Timestamp(std::chrono::seconds(t));
  return d;
}

std::vector<std::string> ids_of(const std::vector<cp::Exemplar>& xs) {
  std::vector<std::string> out;
  for (const auto& x : xs) out.push_back(x.doc_id);
  return out;
}

}  // namespace

TEST(Exemplars, SmallClusterIsClampedWithoutOverlap) {
  const std::vector<cp::Assignment> a{{"a", 0, 0.3f}, {"b", 0, 0.1f}, {"c", 0, 0.2f}, {"z", 1, 0.5f}};
  const cp::ClusterIndex index(a);
  const auto e = cp::exemplars(a, index, docs_for(a), 0, 5);
  EXPECT_EQ(e.size, 3u);
  EXPECT_EQ(ids_of(e.closest), (std::vector<std::string>{"b", "c", "a"}));
  EXPECT_TRUE(e.farthest.empty());
}

TEST(Exemplars, ExtremesWithM1) {
  const std::vector<cp::Assignment> a{{"a", 2, 0.2f}, {"b", 2, 0.9f}, {"c", 2, 0.1f}};
  const cp::ClusterIndex index(a);
  const auto e = cp::exemplars(a, index, docs_for(a), 2, 1);
  EXPECT_EQ(ids_of(e.closest), std::vector<std::string>{"c"});
  EXPECT_EQ(ids_of(e.farthest), std::vector<std::string>{"b"});
  EXPECT_FLOAT_EQ(e.closest[0].distance, 0.1f);
  EXPECT_FLOAT_EQ(e.farthest[0].distance, 0.9f);
}

TEST(Exemplars, UnknownClusterIsNotFound) {
  const std::vector<cp::Assignment> a{{"a", 0, 0.2f}};
  const cp::ClusterIndex index(a, 3);
  for (std::uint32_t c : {1u, 7u}) {
    try {
      cp::exemplars(a, index, docs_for(a), c, 5);
      FAIL();
    } catch (const cp::Error& e) {
      EXPECT_EQ(e.kind(), cp::ErrorKind::not_found);
    }
  }
}

TEST(Exemplars, ExcerptIsTruncated) {
  const std::vector<cp::Assignment> a{{"a", 0, 0.2f}};
  const cp::ClusterIndex index(a);
  const auto e = cp::exemplars(a, index, docs_for(a, 5000), 0, 5, 2000);
  EXPECT_EQ(e.closest[0].excerpt.size(), 2000u);
}

// Head and tail of a full sort, for a random cluster of 1000 members.
TEST(Exemplars, MatchesFullSortOracle) {
  cp::Rng rng(17);
  std::vector<cp::Assignment> a;
  for (int i = 0; i < 3000; ++i)
    a.push_back({"d" + std::to_string(i), static_cast<std::uint32_t>(rng.uniform_below(3)),
                 static_cast<float>(rng.uniform_below(200)) / 100.0f});  // many ties
  const cp::ClusterIndex index(a);
  const auto docs = docs_for(a);
  for (std::uint32_t c = 0; c < 3; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].cluster == c) members.push_back(i);
    std::sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
      return a[x].distance != a[y].distance ? a[x].distance < a[y].distance : x < y;
    });
    const auto e = cp::exemplars(a, index, docs, c, 5);
    ASSERT_EQ(e.closest.size(), 5u);
    ASSERT_EQ(e.farthest.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(e.closest[j].doc_id, a[members[j]].doc_id);
      EXPECT_EQ(e.farthest[j].doc_id, a[members[members.size() - 1 - j]].doc_id);
    }
    EXPECT_LE(e.closest.back().distance, e.farthest.back().distance);
  }
}

TEST(Decision, Invariants) {
  EXPECT_NO_THROW(decision(1, cp::Verdict::keep, cp::Reason::not_applicable).validate());
  EXPECT_NO_THROW(decision(1, cp::Verdict::drop, cp::Reason::pornography).validate());
  EXPECT_THROW(decision(1, cp::Verdict::drop, cp::Reason::not_applicable).validate(), cp::Error);
  EXPECT_THROW(decision(1, cp::Verdict::keep, cp::Reason::other).validate(), cp::Error);
  auto d = decision(1, cp::Verdict::keep, cp::Reason::not_applicable);
  d.annotator.clear();
  EXPECT_THROW(d.validate(), cp::Error);
}

TEST(Decision, ReasonNamesCoverTheCategories) {
  for (auto name : {"near_duplicates", "pornography", "navigation_bars", "product_specifications",
                    "named_entity_lists", "other", "not_applicable"})
    EXPECT_EQ(cp::to_string(cp::parse_reason(name)), name);
  EXPECT_THROW(cp::parse_reason("spam"), cp::Error);
}

TEST(Decision, TimestampRoundTrip) {
  const cp::Timestamp t(std::chrono::seconds(1700000123));
  EXPECT_EQ(cp::format_timestamp(t), "2023-11-14T22:15:23Z");
  EXPECT_EQ(cp::parse_timestamp("2023-11-14T22:15:23Z"), t);
  EXPECT_THROW(cp::parse_timestamp("2023-11-14 22:15:23"), cp::Error);
  EXPECT_THROW(cp::parse_timestamp("2023-13-14T22:15:23Z"), cp::Error);
}

TEST(DecisionLog, LatestDecisionWinsAndHistoryIsKept) {
  TempDir dir;
  const auto path = dir / "decisions.jsonl";
  cp::record_decision(decision(7, cp::Verdict::keep, cp::Reason::not_applicable, 1), path);
  cp::record_decision(decision(7, cp::Verdict::drop, cp::Reason::navigation_bars, 2), path);
  const auto history = cp::DecisionLog::replay(path);
  ASSERT_EQ(history.size(), 2u);
  const auto view = cp::current_view(history);
  EXPECT_EQ(view.at(7).verdict, cp::Verdict::drop);
  EXPECT_EQ(view.at(7).reason, cp::Reason::navigation_bars);
}

TEST(DecisionLog, RejectsInvalidDecisionWithoutWriting) {
  TempDir dir;
  const auto path = dir / "d.jsonl";
  cp::DecisionLog log(path);
  EXPECT_THROW(log.record(decision(1, cp::Verdict::drop, cp::Reason::not_applicable)), cp::Error);
  EXPECT_TRUE(log.history().empty());
  EXPECT_EQ(cp::read_file(path), "");
}

TEST(DecisionLog, SurvivesRestartAndReplayMatches) {
  TempDir dir;
  const auto path = dir / "d.jsonl";
  std::vector<cp::ClusterDecision> written;
  {
    cp::DecisionLog log(path);
    for (std::uint32_t c = 0; c < 10; ++c) {
      auto d = c % 3 == 0 ? decision(c, cp::Verdict::drop, cp::Reason::near_duplicates, c)
                          : decision(c, cp::Verdict::keep, cp::Reason::not_applicable, c);
      if (c == 4) d.note = "looks fine \"quoted\"";
      log.record(d);
      written.push_back(d);
    }
  }
  cp::DecisionLog reopened(path);
  EXPECT_EQ(reopened.history(), written);
  EXPECT_EQ(reopened.current(), cp::current_view(written));
  const auto line = cp::read_file(path).substr(0, cp::read_file(path).find('\n'));
  EXPECT_EQ(line, R"({"cluster_id":0,"verdict":"drop","reason":"near_duplicates","note":null,"annotator":"annotator-1","timestamp":"1970-01-01T00:00:00Z"})");
}

TEST(DecisionLog, ConcurrentWritersLoseNothing) {
  TempDir dir;
  const auto path = dir / "d.jsonl";
  cp::DecisionLog a(path), b(path);
  auto writer = [](cp::DecisionLog& log, std::uint32_t base) {
    for (std::uint32_t i = 0; i < 100; ++i)
      log.record(decision(base + i, cp::Verdict::keep, cp::Reason::not_applicable));
  };
  std::thread t1(writer, std::ref(a), 0), t2(writer, std::ref(b), 1000), t3(writer, std::ref(a), 2000);
  t1.join();
  t2.join();
  t3.join();
  EXPECT_EQ(cp::DecisionLog::replay(path).size(), 300u);
  // Each handle absorbs the other's lines on its next append.
  a.record(decision(5000, cp::Verdict::keep, cp::Reason::not_applicable));
  EXPECT_EQ(a.history().size(), 301u);
  EXPECT_EQ(a.history(), cp::DecisionLog::replay(path));
}

TEST(Progress, EmptyLog) {
  const auto p = cp::review_progress({}, 220);
  EXPECT_EQ(p.undecided, 220u);
  EXPECT_EQ(p.decided, 0u);
}

TEST(Progress, ThirtyEightOfTwoHundredTwenty) {
  std::vector<cp::ClusterDecision> h;
  for (std::uint32_t c = 0; c < 220; ++c)
    h.push_back(c < 38 ? decision(c, cp::Verdict::drop, static_cast<cp::Reason>(c % 5))
                       : decision(c, cp::Verdict::keep, cp::Reason::not_applicable));
  const auto p = cp::review_progress(cp::current_view(h), 220);
  EXPECT_EQ(p.decided, 220u);
  EXPECT_EQ(p.dropped, 38u);
  EXPECT_EQ(p.kept, 182u);
  EXPECT_EQ(p.undecided, 0u);
  std::uint32_t total = 0;
  for (const auto& [r, n] : p.drops_by_reason) total += n;
  EXPECT_EQ(total, 38u);
}

// Tallies must come from the latest decision per cluster only.
TEST(Progress, SupersededEntriesMatchLatestPerClusterOracle) {
  cp::Rng rng(3);
  std::vector<cp::ClusterDecision> h;
  for (int i = 0; i < 400; ++i) {
    const auto c = static_cast<std::uint32_t>(rng.uniform_below(60));
    if (rng.uniform_below(2))
      h.push_back(decision(c, cp::Verdict::drop, static_cast<cp::Reason>(rng.uniform_below(6)), i));
    else
      h.push_back(decision(c, cp::Verdict::keep, cp::Reason::not_applicable, i));
  }
  std::map<std::uint32_t, std::size_t> latest;
  for (std::size_t i = 0; i < h.size(); ++i) latest[h[i].cluster_id] = i;
  std::uint32_t drops = 0, keeps = 0;
  std::map<std::string, std::uint32_t> reasons;
  for (const auto& [c, i] : latest) {
    if (c >= 50) continue;
    if (h[i].verdict == cp::Verdict::drop) {
      ++drops;
      ++reasons[std::string(cp::to_string(h[i].reason))];
    } else {
      ++keeps;
    }
  }
  const auto p = cp::review_progress(cp::current_view(h), 50);
  EXPECT_EQ(p.dropped, drops);
  EXPECT_EQ(p.kept, keeps);
  EXPECT_EQ(p.decided, drops + keeps);
  EXPECT_EQ(p.undecided, 50 - drops - keeps);
  EXPECT_EQ(p.drops_by_reason, reasons);
}

TEST(ReviewService, HttpApi) {
  TempDir dir;
  std::vector<cp::Assignment> a;
  for (int i = 0; i < 30; ++i)
    a.push_back({"doc/" + std::to_string(i), static_cast<std::uint32_t>(i % 3), 0.01f * static_cast<float>(i)});
  cp::ReviewServiceOptions opt;
  opt.k = 4;  // cluster 3 is empty
  opt.clock = [] { return cp::Timestamp(std::chrono::seconds(1700000000)); };
  LiveService live(a, docs_for(a), dir / "d.jsonl", opt);
  auto cli = live.client();

  auto res = cli.Get("/api/clusters");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  auto clusters = cp::Json::parse(res->body);
  ASSERT_EQ(clusters.size(), 4u);
  EXPECT_EQ(clusters[0]["size"], 10);
  EXPECT_EQ(clusters[3]["size"], 0);
  EXPECT_EQ(clusters[1]["decided"], false);
  EXPECT_NEAR(clusters[0]["mean_distance"].get<double>(), 0.135, 1e-6);

  res = cli.Get("/api/clusters/1/exemplars");
  ASSERT_EQ(res->status, 200);
  auto ex = cp::Json::parse(res->body);
  EXPECT_EQ(ex["closest"].size(), 5u);
  EXPECT_EQ(ex["farthest"].size(), 5u);
  EXPECT_EQ(ex["closest"][0]["doc_id"], "doc/1");
  EXPECT_EQ(ex["farthest"][0]["doc_id"], "doc/28");

  res = cli.Get("/api/clusters/1/exemplars?m=2");
  EXPECT_EQ(cp::Json::parse(res->body)["closest"].size(), 2u);
  EXPECT_EQ(cli.Get("/api/clusters/1/exemplars?m=abc")->status, 400);
  EXPECT_EQ(cli.Get("/api/clusters/9/exemplars")->status, 404);

  res = cli.Get("/api/docs/doc/4");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(cp::Json::parse(res->body)["id"], "doc/4");
  EXPECT_EQ(cli.Get("/api/docs/missing")->status, 404);

  res = cli.Post("/api/clusters/2/decision", R"({"verdict":"drop","annotator":"me"})", "application/json");
  EXPECT_EQ(res->status, 422);
  res = cli.Post("/api/clusters/2/decision", R"({"verdict":"maybe","annotator":"me"})", "application/json");
  EXPECT_EQ(res->status, 422);
  res = cli.Post("/api/clusters/2/decision", "not json", "application/json");
  EXPECT_EQ(res->status, 400);
  res = cli.Post("/api/clusters/9/decision", R"({"verdict":"keep","annotator":"me"})", "application/json");
  EXPECT_EQ(res->status, 404);
  res = cli.Post("/api/clusters/2/decision",
                 R"({"verdict":"drop","reason":"product_specifications","note":"laptop specs","annotator":"me"})",
                 "application/json");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(cp::Json::parse(res->body)["timestamp"], "2023-11-14T22:13:20Z");
  res = cli.Post("/api/clusters/0/decision", R"({"verdict":"keep","annotator":"me"})", "application/json");
  ASSERT_EQ(res->status, 200);

  clusters = cp::Json::parse(cli.Get("/api/clusters")->body);
  EXPECT_EQ(clusters[2]["decided"], true);
  EXPECT_EQ(clusters[2]["verdict"], "drop");
  EXPECT_EQ(clusters[0]["verdict"], "keep");

  const auto progress = cp::Json::parse(cli.Get("/api/progress")->body);
  EXPECT_EQ(progress["decided"], 2);
  EXPECT_EQ(progress["undecided"], 2);
  EXPECT_EQ(progress["dropped"], 1);
  EXPECT_EQ(progress["drops_by_reason"]["product_specifications"], 1);

  EXPECT_EQ(cp::DecisionLog::replay(dir / "d.jsonl").size(), 2u);
}
