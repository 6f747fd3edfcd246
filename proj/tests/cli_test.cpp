#include <gtest/gtest.h>

#include <sstream>

#include "corpus_prune/cli.hpp"
#include "fixture.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
using test_support::TempDir;

namespace {

struct RunResult {
  int code = 0;
  std::string out;
  std::vector<cp::Json> logs;  // JSON log lines

  const cp::Json* find(std::string_view msg) const {
    for (const auto& l : logs)
      if (l.value("msg", "") == msg) return &l;
    return nullptr;
  }
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "--log-json");
  std::ostringstream out, log;
  cp::log::set_sink(log);
  RunResult r;
  r.code = cp::cli::run(args, out);
  cp::log::set_sink(std::cerr);
  cp::log::set_json(false);
  cp::thread_limit() = 0;
  r.out = out.str();
  std::istringstream lines(log.str());
  for (std::string line; std::getline(lines, line);) r.logs.push_back(cp::Json::parse(line));
  return r;
}

std::string write_store(const TempDir& dir, std::size_t n, std::uint32_t dim) {
  cp::Rng rng(21);
  const auto path = (dir / "store.embs").string();
  cp::save_store(test_support::random_store(rng, n, dim, "d"), path);
  return path;
}

}  // namespace

TEST(Cli, UnknownStageIsUsageError) {
  const auto r = run({"compress-everything"});
  EXPECT_EQ(r.code, 2);
  ASSERT_FALSE(r.logs.empty());
  EXPECT_EQ(r.logs[0]["level"], "error");
}

TEST(Cli, MissingStageIsUsageError) { EXPECT_EQ(run({}).code, 2); }

TEST(Cli, MissingInputFileIsUsageError) {
  TempDir dir;
  const auto r = run({"cluster", "--store", (dir / "nope.embs").string(), "--out-centroids",
                      (dir / "c").string(), "--out-assignments", (dir / "a").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "c"));
  const auto* e = r.find("stage failed");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ((*e)["fields"]["exit_code"], 2);
}

TEST(Cli, VersionListsFormatVersions) {
  const auto r = run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("corpus-prune 0.1.0"), std::string::npos);
  EXPECT_NE(r.out.find("embedding store format_version 1"), std::string::npos);
  EXPECT_NE(r.out.find("decision log format_version 1"), std::string::npos);
}

TEST(Cli, ClusterDefaultsAreEchoed) {
  TempDir dir;
  const auto store = write_store(dir, 400, 8);
  const auto r = run({"cluster", "--store", store, "--out-centroids", (dir / "c.bin").string(),
                      "--out-assignments", (dir / "a.tsv").string()});
  ASSERT_EQ(r.code, 0);
  const auto* cfg = r.find("effective configuration");
  ASSERT_NE(cfg, nullptr);
  EXPECT_EQ((*cfg)["fields"]["config"]["k"], 220);
  EXPECT_EQ((*cfg)["fields"]["config"]["batch_size"], 16384);
  EXPECT_NE(r.find("input digests"), nullptr);
  EXPECT_EQ(cp::load_centroids(dir / "c.bin").k, 220u);
  EXPECT_EQ(cp::load_assignments(dir / "a.tsv").size(), 400u);
}

TEST(Cli, ConfigFileSetsOptionsAndFlagsWin) {
  TempDir dir;
  const auto store = write_store(dir, 100, 8);
  cp::write_file(dir / "cfg.toml", "threads = 2\n[cluster]\nk = 3\nseed = 9\nbatch-size = 50\n");
  const auto r = run({"--config", (dir / "cfg.toml").string(), "cluster", "--store", store, "--seed", "4",
                      "--out-centroids", (dir / "c.bin").string(), "--out-assignments",
                      (dir / "a.tsv").string()});
  ASSERT_EQ(r.code, 0);
  const auto& c = (*r.find("effective configuration"))["fields"]["config"];
  EXPECT_EQ(c["k"], 3);
  EXPECT_EQ(c["seed"], 4);
  EXPECT_EQ(c["batch_size"], 50);
  EXPECT_EQ(c["threads"], 2);
}

TEST(Cli, DecideRejectsDropWithoutReason) {
  TempDir dir;
  const auto log = (dir / "d.jsonl").string();
  EXPECT_EQ(run({"decide", "--decisions", log, "--cluster", "1", "--verdict", "drop", "--annotator", "x"}).code,
            2);
  EXPECT_EQ(run({"decide", "--decisions", log, "--cluster", "1", "--verdict", "maybe", "--annotator", "x"}).code,
            2);
  EXPECT_EQ(run({"decide", "--decisions", log, "--cluster", "1", "--verdict", "drop", "--reason", "pornography",
                 "--annotator", "x"})
                .code,
            0);
  EXPECT_EQ(cp::DecisionLog::replay(log).size(), 1u);
}

// shard -> embed -> cluster -> exemplars -> decide -> filter -> stats
TEST(Cli, FullPipelineOnFixture) {
  TempDir dir;
  cp::fixture::FixtureOptions fo;
  fo.docs = 800;
  fo.subsets = 4;
  fo.dim = 16;
  fo.shard_size = 300;
  const auto fx = cp::fixture::write_fixture(dir / "fx", fo);
  const auto p = [&](const char* name) { return (dir / name).string(); };

  auto r = run({"stats", "--manifest", fx.manifest.string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(cp::Json::parse(r.out)["doc_count"], 800);

  r = run({"embed", "--manifest", fx.manifest.string(), "--precomputed", fx.embeddings.string(),
           "--batch-size", "100", "--out", p("store.embs")});
  ASSERT_EQ(r.code, 0);
  const auto store = cp::load_store(p("store.embs"));
  EXPECT_EQ(store.count(), 800u);
  EXPECT_NO_THROW(store.validate());

  r = run({"cluster", "--store", p("store.embs"), "--k", "4", "--batch-size", "64", "--seed", "3",
           "--out-centroids", p("c.bin"), "--out-assignments", p("a.tsv")});
  ASSERT_EQ(r.code, 0);

  r = run({"exemplars", "--assignments", p("a.tsv"), "--manifest", fx.manifest.string(), "--cluster", "0",
           "--m", "2"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(cp::Json::parse(r.out)["closest"].size(), 2u);

  // Undecided clusters block a strict filter at run time.
  r = run({"decide", "--decisions", p("d.jsonl"), "--cluster", "3", "--verdict", "drop", "--reason",
           "near_duplicates", "--annotator", "t"});
  ASSERT_EQ(r.code, 0);
  r = run({"filter", "--assignments", p("a.tsv"), "--decisions", p("d.jsonl"), "--manifest",
           fx.manifest.string(), "--target", "10", "--split", "8,1,1", "--out", p("out0")});
  EXPECT_EQ(r.code, 1);

  for (const char* c : {"0", "1", "2"})
    ASSERT_EQ(run({"decide", "--decisions", p("d.jsonl"), "--cluster", c, "--verdict", "keep", "--annotator",
                   "t"})
                  .code,
              0);
  std::uint64_t kept = 0;
  for (const auto& a : cp::load_assignments(p("a.tsv"))) kept += a.cluster != 3;
  const auto target = kept / 2;
  r = run({"filter", "--assignments", p("a.tsv"), "--decisions", p("d.jsonl"), "--manifest",
           fx.manifest.string(), "--centroids", p("c.bin"), "--target", std::to_string(target), "--split",
           std::to_string(target - 20) + ",10,10", "--seed", "5", "--shard-size", "100", "--out", p("out")});
  ASSERT_EQ(r.code, 0);
  const auto prov = cp::Json::parse(cp::read_file(p("out") + "/provenance.json"));
  EXPECT_EQ(prov["selected_count"], target);
  EXPECT_EQ(prov["seeds"]["cluster"], 3);
  EXPECT_EQ(prov["inputs"]["decisions"]["sha256"], cp::sha256_file(p("d.jsonl")));
  EXPECT_EQ(cp::load_manifest(p("out") + "/train/manifest.json").total_docs(), target - 20);

  const auto assignments = cp::load_assignments(p("a.tsv"));
  std::map<std::string, std::uint32_t> cluster_of;
  for (const auto& a : assignments) cluster_of[a.doc_id] = a.cluster;
  for (const char* s : {"train", "val", "test"})
    for (const auto& d : cp::read_documents(cp::load_manifest(p("out") + "/" + s + "/manifest.json")))
      EXPECT_NE(cluster_of.at(d.id), 3u);

  r = run({"stats", "--manifest", p("out") + "/val/manifest.json", "--out", p("val_stats.json")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(cp::Json::parse(cp::read_file(p("val_stats.json")))["doc_count"], 10);
}
