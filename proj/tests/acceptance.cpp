// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "corpus_prune/cli.hpp"
#include "fixture.hpp"
#include "test_support.hpp"

namespace cp = corpus_prune;
namespace ts = test_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct CliRun {
  int code = 0;
  std::string out;
  std::vector<cp::Json> logs;

  const cp::Json* find(std::string_view msg) const {
    for (const auto& l : logs)
      if (l.value("msg", "") == msg) return &l;
    return nullptr;
  }
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "--log-json");
  std::ostringstream out, log;
  cp::log::set_sink(log);
  CliRun r;
  r.code = cp::cli::run(args, out);
  cp::log::set_sink(std::cerr);
  cp::log::set_json(false);
  cp::thread_limit() = 0;
  r.out = out.str();
  std::istringstream lines(log.str());
  for (std::string line; std::getline(lines, line);) r.logs.push_back(cp::Json::parse(line));
  return r;
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = cp::read_file(e.path());
  return out;
}

cp::ClusterDecision make_decision(std::uint32_t c, bool drop, std::int64_t t) {
  cp::ClusterDecision d;
  d.cluster_id = c;
  d.verdict = drop ? cp::Verdict::drop : cp::Verdict::keep;
  d.reason = drop ? static_cast<cp::Reason>(c % 6) : cp::Reason::not_applicable;
  d.annotator = "acceptance";
  d.timestamp = cp::Timestamp(std::chrono::seconds(t));
  return d;
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  cp::Rng rng(101);
  std::size_t stores = 0, points = 0, mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const auto n = 50 + rng.uniform_below(451);
    const auto dim = static_cast<std::uint32_t>(2 + rng.uniform_below(31));
    const auto k = static_cast<std::uint32_t>(1 + rng.uniform_below(8));
    auto store = ts::random_store(rng, n, dim);
    cp::Centroids c;
    if (trial % 2 == 0) {
      cp::FitOptions opt;
      opt.k = k;
      opt.batch_size = 64;
      opt.total_steps = 20;
      opt.seed = static_cast<std::uint64_t>(trial);
      c = cp::minibatch_fit(store, opt);
    } else {
      // Duplicate centroid rows and points sitting on centroids force ties.
      c.k = k;
      c.dim = dim;
      c.counts.assign(k, 1);
      for (std::uint32_t j = 0; j < k; ++j) {
        const auto v = j > 0 && j % 3 == 0 ? std::vector<float>(c.row(j - 1).begin(), c.row(j - 1).end())
                                           : ts::random_unit(rng, dim);
        c.vectors.insert(c.vectors.end(), v.begin(), v.end());
      }
      cp::EmbeddingStore with_ties(dim);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = store.row(i);
        if (i % 7 == 0) {
          const auto row = c.row(static_cast<std::uint32_t>(i % k));
          with_ties.append(store.ids()[i], std::vector<float>(row.begin(), row.end()));
        } else {
          with_ties.append(store.ids()[i], std::vector<float>(r.begin(), r.end()));
        }
      }
      store = std::move(with_ties);
    }
    const auto got = cp::assign_all(store, c);
    for (std::size_t i = 0; i < n; ++i) {
      const auto want = ts::oracle_nearest(store.row(i), c);
      const double err = std::abs(static_cast<double>(got[i].distance) - want.distance);
      worst = std::max(worst, err);
      if (got[i].cluster != want.cluster || err > 1e-5) ++mismatches;
    }
    ++stores;
    points += n;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && stores >= 20 && secs < 10.0,
          fmt("%zu stores, %zu points, %zu mismatches, max |d-d*|=%.2e, %.2fs", stores, points, mismatches, worst,
              secs)};
}

Outcome blob_recovery() {
  const auto t0 = Clock::now();
  int good = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto blobs = ts::make_blobs(seed, 4, 50, 8, 0.1);
    cp::FitOptions opt;
    opt.k = 4;
    opt.batch_size = 32;
    opt.total_steps = 50;
    opt.seed = seed;
    const auto a = cp::assign_all(blobs.store, cp::minibatch_fit(blobs.store, opt));
    std::vector<int> pred;
    for (const auto& x : a) pred.push_back(static_cast<int>(x.cluster));
    const double ari = ts::adjusted_rand_index(pred, blobs.labels);
    worst = std::min(worst, ari);
    good += ari >= 0.95;
  }
  const double secs = seconds_since(t0);
  return {good >= 95 && secs < 30.0, fmt("ARI>=0.95 on %d/100 seeds, min ARI %.4f, %.2fs", good, worst, secs)};
}

Outcome full_batch_monotonicity() {
  int stores_ok = 0;
  const int stores = 10;
  double worst_rise = 0.0, first_total = 0.0, last_total = 0.0;
  for (std::uint64_t seed = 0; seed < stores; ++seed) {
    const auto blobs = ts::make_blobs(seed, 5, 60, 16, 0.3);
    const auto& store = blobs.store;
    cp::FitOptions opt;
    opt.k = 5;
    opt.batch_size = store.count();
    opt.total_steps = 20;
    opt.seed = seed;
    cp::MiniBatchKMeans km(cp::view(store), opt);
    double prev = cp::mean_distance(cp::assign_all(store, km.centroids()));
    first_total += prev;
    bool ok = true;
    for (int it = 0; it < 20; ++it) {
      km.step();
      const double cur = cp::mean_distance(cp::assign_all(store, km.centroids()));
      worst_rise = std::max(worst_rise, cur - prev);
      if (cur > prev + 1e-7) ok = false;
      prev = cur;
    }
    last_total += prev;
    stores_ok += ok;
  }
  return {stores_ok == stores,
          fmt("%d/%d stores of 300 points non-increasing over 20 iterations, largest rise %.3e, "
              "mean distance %.4f -> %.4f",
              stores_ok, stores, worst_rise, first_total / stores, last_total / stores)};
}

Outcome default_parameters() {
  ts::TempDir dir;
  std::vector<std::string> failures;

  cp::Rng rng(5);
  cp::save_store(ts::random_store(rng, 300, 8), dir / "s.embs");
  auto r = cli({"cluster", "--store", (dir / "s.embs").string(), "--out-centroids", (dir / "c.bin").string(),
                "--out-assignments", (dir / "a.tsv").string()});
  const auto* cfg = r.find("effective configuration");
  if (r.code != 0 || !cfg) failures.push_back("cluster run failed");
  else if ((*cfg)["fields"]["config"]["k"] != 220 || (*cfg)["fields"]["config"]["batch_size"] != 16384)
    failures.push_back("cluster defaults not echoed");

  // Scaled split: 10,000/5/100 out of 12,000 documents in 10 clusters, one dropped.
  std::vector<cp::Document> docs;
  std::vector<cp::Assignment> assignments;
  for (std::size_t i = 0; i < 12000; ++i) {
    cp::Document d;
    d.id = "doc-" + std::to_string(i);
    d.text = "token" + std::to_string(i % 97) + " shared words here";
    docs.push_back(d);
    assignments.push_back({d.id, static_cast<std::uint32_t>(i % 10), static_cast<float>(i % 13) / 13.0f});
  }
  cp::write_shards(docs, dir / "corpus", 5000);
  cp::save_assignments(assignments, dir / "assign.tsv");
  {
    cp::DecisionLog log(dir / "d.jsonl");
    for (std::uint32_t c = 0; c < 10; ++c) log.record(make_decision(c, c == 9, 1700000000 + c));
  }
  const auto base = std::vector<std::string>{
      "filter", "--assignments", (dir / "assign.tsv").string(), "--decisions", (dir / "d.jsonl").string(),
      "--manifest", (dir / "corpus" / "manifest.json").string()};

  auto args = base;
  args.insert(args.end(), {"--out", (dir / "defaults").string()});
  r = cli(args);
  cfg = r.find("effective configuration");
  if (!cfg || (*cfg)["fields"]["config"]["split"] != cp::Json({1000000, 500, 10000}) ||
      (*cfg)["fields"]["config"]["target"] != 1010500)
    failures.push_back("filter split/target defaults not echoed");

  args = base;
  args.insert(args.end(), {"--target", "10105", "--split", "10000,5,100", "--seed", "3", "--shard-size", "4000",
                           "--out", (dir / "out").string()});
  r = cli(args);
  if (r.code != 0) {
    failures.push_back("scaled filter run failed");
  } else {
    std::set<std::string> seen;
    std::size_t overlap = 0, from_dropped = 0;
    std::map<std::string, std::uint64_t> counts;
    for (const char* s : {"train", "val", "test"}) {
      const auto m = cp::load_manifest(dir / "out" / s / "manifest.json");
      for (const auto& d : cp::read_documents(m)) {
        ++counts[s];
        overlap += !seen.insert(d.id).second;
        from_dropped += std::stoul(d.id.substr(4)) % 10 == 9;
      }
    }
    if (counts["train"] != 10000 || counts["val"] != 5 || counts["test"] != 100)
      failures.push_back(fmt("split counts %llu/%llu/%llu", (unsigned long long)counts["train"],
                             (unsigned long long)counts["val"], (unsigned long long)counts["test"]));
    if (overlap || from_dropped) failures.push_back("splits overlap or contain dropped documents");
    const auto stats = cp::Json::parse(cp::read_file(dir / "out" / "stats.json"));
    if (stats["train"]["doc_count"] != 10000 || stats["val"]["doc_count"] != 5 || stats["test"]["doc_count"] != 100)
      failures.push_back("stats split counts");
  }
  std::string detail = "cluster echoes k=220 batch_size=16384; filter split 10000/5/100 exact";
  if (!failures.empty()) {
    detail.clear();
    for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
  }
  return {failures.empty(), detail};
}

Outcome exemplar_correctness() {
  cp::Rng rng(55);
  std::vector<cp::Assignment> a;
  std::vector<cp::Document> docs;
  for (std::uint32_t c = 0; c < 50; ++c) {
    const auto size = c < 5 ? 1 + rng.uniform_below(10) : 1 + rng.uniform_below(400);
    for (std::uint64_t i = 0; i < size; ++i) {
      cp::Document d;
      d.id = "c" + std::to_string(c) + "-" + std::to_string(i);
      d.text = "body of " + d.id;
      docs.push_back(d);
      a.push_back({d.id, c, static_cast<float>(rng.uniform_below(500)) / 250.0f});
    }
  }
  cp::shuffle(std::span<cp::Assignment>(a), rng);
  const cp::ClusterIndex index(a);
  const cp::DocumentIndex docs_index(docs);
  std::size_t bad = 0;
  for (std::uint32_t c = 0; c < 50; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].cluster == c) members.push_back(i);
    std::sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
      return a[x].distance != a[y].distance ? a[x].distance < a[y].distance : x < y;
    });
    const auto e = cp::exemplars(a, index, docs_index, c, 5);
    const std::size_t n_close = std::min<std::size_t>(5, members.size());
    const std::size_t n_far = std::min<std::size_t>(5, members.size() - n_close);
    bool ok = e.closest.size() == n_close && e.farthest.size() == n_far;
    for (std::size_t j = 0; ok && j < n_close; ++j) ok = e.closest[j].doc_id == a[members[j]].doc_id;
    for (std::size_t j = 0; ok && j < n_far; ++j)
      ok = e.farthest[j].doc_id == a[members[members.size() - 1 - j]].doc_id;
    bad += !ok;
  }
  const bool defaults = cp::kDefaultExemplarCount == 5 && cp::ReviewServiceOptions{}.default_m == 5 &&
                        cp::cli::PipelineConfig{}.m == 5;
  return {bad == 0 && defaults,
          fmt("%zu/50 clusters match full sort; default m=%zu closest + %zu farthest", 50 - bad,
              cp::kDefaultExemplarCount, cp::kDefaultExemplarCount)};
}

Outcome decision_flow() {
  ts::TempDir dir;
  std::vector<cp::Assignment> a;
  std::vector<cp::Document> docs;
  for (std::uint32_t c = 0; c < 220; ++c)
    for (int i = 0; i < 4; ++i) {
      cp::Document d;
      d.id = std::to_string(c) + ":" + std::to_string(i);
      d.text = "text";
      docs.push_back(d);
      a.push_back({d.id, c, 0.1f * static_cast<float>(i)});
    }
  std::set<std::uint32_t> dropped;
  cp::Rng rng(220);
  while (dropped.size() < 38) dropped.insert(static_cast<std::uint32_t>(rng.uniform_below(220)));

  std::size_t http_errors = 0;
  cp::Json progress;
  {
    ts::LiveService live(a, cp::DocumentIndex(docs), dir / "decisions.jsonl");
    auto client = live.client();
    // A reviewer first keeps everything, then revisits and drops 38 clusters.
    for (std::uint32_t c = 0; c < 220; ++c) {
      auto res = client.Post("/api/clusters/" + std::to_string(c) + "/decision",
                             R"({"verdict":"keep","annotator":"reviewer"})", "application/json");
      http_errors += !res || res->status != 200;
    }
    for (auto c : dropped) {
      const cp::Json body{{"verdict", "drop"}, {"reason", cp::to_string(static_cast<cp::Reason>(c % 6))},
                          {"annotator", "reviewer"}};
      auto res = client.Post("/api/clusters/" + std::to_string(c) + "/decision", body.dump(), "application/json");
      http_errors += !res || res->status != 200;
    }
    auto res = client.Get("/api/progress");
    if (res && res->status == 200) progress = cp::Json::parse(res->body);
  }
  const auto view = cp::current_view(cp::DecisionLog::replay(dir / "decisions.jsonl"));
  const auto kept = cp::apply_decisions(a, view);
  std::set<std::uint32_t> clusters;
  bool leaked = false;
  for (const auto& x : kept) {
    clusters.insert(x.cluster);
    leaked |= dropped.contains(x.cluster);
  }
  const bool ok = http_errors == 0 && clusters.size() == 182 && kept.size() == 182 * 4 && !leaked &&
                  progress.value("dropped", 0) == 38 && progress.value("kept", 0) == 182;
  return {ok, fmt("%zu clusters kept (%zu members) after 38 drops over HTTP, %zu request errors", clusters.size(),
                  kept.size(), http_errors)};
}

Outcome quota_arithmetic() {
  cp::Rng rng(200);
  std::size_t bad = 0, profiles = 0;
  while (profiles < 200) {
    const auto n = 1 + rng.uniform_below(12);
    std::vector<std::uint64_t> sizes(n);
    std::uint64_t total = 0;
    for (auto& s : sizes) total += (s = rng.uniform_below(1000));
    if (total == 0) continue;
    ++profiles;
    const auto target = 1 + rng.uniform_below(total);
    const auto q = cp::allocate_quotas(sizes, target);
    std::uint64_t sum = 0;
    for (auto x : q) sum += x;
    bad += sum != target || q != ts::brute_force_quotas(sizes, target);
  }
  return {bad == 0, fmt("%zu/200 profiles sum to target and match brute force", 200 - bad)};
}

Outcome determinism() {
  const auto t0 = Clock::now();
  ts::TempDir dir;
  const auto fx = cp::fixture::write_fixture(dir / "fixture");
  {
    // Shared review outcome: drop every sixth cluster.
    cp::DecisionLog log(dir / "decisions.jsonl");
    for (std::uint32_t c = 0; c < cp::kDefaultK; ++c) log.record(make_decision(c, c % 6 == 0, 1700000000));
  }
  auto pipeline = [&](const std::string& name) -> std::string {
    const auto p = [&](const char* f) { return (dir / name / f).string(); };
    std::filesystem::create_directories(dir / name);
    auto r = cli({"embed", "--manifest", fx.manifest.string(), "--precomputed", fx.embeddings.string(), "--out",
                  p("store.embs")});
    if (r.code) return "embed exit " + std::to_string(r.code);
    r = cli({"cluster", "--store", p("store.embs"), "--seed", "7", "--out-centroids", p("centroids.bin"),
             "--out-assignments", p("assignments.tsv")});
    if (r.code) return "cluster exit " + std::to_string(r.code);
    r = cli({"filter", "--assignments", p("assignments.tsv"), "--decisions", (dir / "decisions.jsonl").string(),
             "--manifest", fx.manifest.string(), "--centroids", p("centroids.bin"), "--target", "5000", "--split",
             "4800,100,100", "--seed", "11", "--shard-size", "1000", "--compress", "--out", p("export")});
    if (r.code) return "filter exit " + std::to_string(r.code);
    return {};
  };
  for (const char* run : {"run1", "run2"})
    if (auto err = pipeline(run); !err.empty()) return {false, std::string(run) + ": " + err};
  const auto a = read_tree(dir / "run1"), b = read_tree(dir / "run2");
  std::size_t differing = 0;
  for (const auto& [path, bytes] : a) differing += !b.contains(path) || b.at(path) != bytes;
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  const bool has_outputs = a.contains("export/stats.json") && a.contains("export/provenance.json") &&
                           a.contains("export/train/train-00000.jsonl.zst");
  const double secs = seconds_since(t0);
  return {differing == 0 && has_outputs && secs < 300.0,
          fmt("%zu files compared over 10k-document fixture, %zu differ, %.1fs for two runs", a.size(), differing,
              secs)};
}

Outcome round_trips() {
  ts::TempDir dir;
  cp::Rng rng(9);
  std::vector<std::string> failures;

  for (int t = 0; t < 10; ++t) {
    const auto dim = static_cast<std::uint32_t>(1 + rng.uniform_below(64));
    const auto store = ts::random_store(rng, rng.uniform_below(300), dim, "id-" + std::to_string(t) + "-");
    cp::save_store(store, dir / "s.embs");
    const auto back = cp::load_store(dir / "s.embs");
    if (!(back == store) || std::memcmp(back.data().data(), store.data().data(), store.data().size_bytes()) != 0 ||
        cp::encode_store(back) != cp::read_file(dir / "s.embs"))
      failures.push_back("store " + std::to_string(t));
  }

  std::vector<cp::Document> docs;
  const std::vector<std::string> pieces{"plain", "ünïcødé ✓", "tab\there", "line\nbreak", "quote \" and \\",
                                        "emoji 😀", "", "  spaced  "};
  for (std::size_t i = 0; i < 500; ++i) {
    cp::Document d;
    d.id = "doc/" + std::to_string(i);
    for (int j = 0; j < 4; ++j) d.text += pieces[rng.uniform_below(pieces.size())];
    if (i % 3) d.subset = "subset-" + std::to_string(i % 5);
    if (i % 4 == 0) d.extra["meta"] = cp::Json{{"n", i}, {"tags", {"a", "b"}}};
    docs.push_back(std::move(d));
  }
  for (bool compress : {false, true}) {
    cp::ShardOptions so;
    so.compress = compress;
    const auto out = dir / (compress ? "zst" : "plain");
    cp::write_shards(docs, out, 77, so);
    const auto back = cp::read_documents(cp::load_manifest(out / "manifest.json"));
    bool same = back.size() == docs.size();
    for (std::size_t i = 0; same && i < docs.size(); ++i)
      same = back[i] == docs[i] && cp::serialize_document(back[i]) == cp::serialize_document(docs[i]);
    if (!same) failures.push_back(compress ? "zstd shards" : "plain shards");
  }

  std::map<std::uint32_t, cp::ClusterDecision> expected;
  {
    cp::DecisionLog log(dir / "d.jsonl");
    for (int i = 0; i < 500; ++i) {
      auto d = make_decision(static_cast<std::uint32_t>(rng.uniform_below(80)), rng.uniform_below(3) == 0, i);
      if (i % 5 == 0) d.note = "note " + std::to_string(i);
      log.record(d);
      expected[d.cluster_id] = d;
    }
  }
  if (cp::current_view(cp::DecisionLog::replay(dir / "d.jsonl")) != expected) failures.push_back("decision log");

  std::string detail = "store bit-exact x10, shards text-exact (plain, zstd), decision-log replay matches";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

Outcome stats_oracle() {
  cp::Rng rng(100);
  const std::string alphabet = "abcd \t\n\r\v\f";
  std::size_t bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<cp::Document> docs;
    std::vector<std::string> texts;
    const auto n = rng.uniform_below(60);
    for (std::uint64_t i = 0; i < n; ++i) {
      cp::Document d;
      d.id = std::to_string(i);
      const auto len = rng.uniform_below(80);
      for (std::uint64_t j = 0; j < len; ++j) d.text += alphabet[rng.uniform_below(alphabet.size())];
      texts.push_back(d.text);
      docs.push_back(std::move(d));
    }
    const auto s = cp::compute_stats(docs);
    const auto ref = ts::naive_stats(texts);
    bad += s.vocab_size != ref.vocab || s.median_doc_len != ref.median || s.max_doc_len != ref.max;
  }
  return {bad == 0, fmt("%zu/100 mini-corpora match the naive reference", 100 - bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"clustering-oracle-equivalence", oracle_equivalence},
      {"blob-recovery", blob_recovery},
      {"full-batch-monotonicity", full_batch_monotonicity},
      {"default-parameters", default_parameters},
      {"exemplar-correctness", exemplar_correctness},
      {"decision-flow", decision_flow},
      {"quota-arithmetic", quota_arithmetic},
      {"pipeline-determinism", determinism},
      {"round-trips", round_trips},
      {"stats-oracle", stats_oracle},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
