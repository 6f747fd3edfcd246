#pragma once

// The corpus-prune command line: one subcommand per pipeline stage.
//
// Options can also come from a TOML file given with --config. Top-level
// keys set global options, and a [stage] table sets that stage's options,
// e.g.
//
//     threads = 4
//     [cluster]
//     k = 220
//     seed = 7
//     batch-size = 4096
//
// Command-line flags always win over the file. Exit codes: 0 success,
// 2 usage or configuration error (nothing was run), 1 runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "corpus_prune/clustering.hpp"
#include "corpus_prune/corpus_io.hpp"
#include "corpus_prune/embedding.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/filter.hpp"
#include "corpus_prune/hash.hpp"
#include "corpus_prune/log.hpp"
#include "corpus_prune/parallel.hpp"
#include "corpus_prune/review.hpp"

namespace corpus_prune::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct PipelineConfig {
  // paths
  std::string manifest;
  std::string store;
  std::string centroids;
  std::string assignments;
  std::string decisions;
  std::string out;
  std::vector<std::string> inputs;

  // embed
  std::string provider_url;
  std::string precomputed;
  std::size_t embed_batch_size = 64;
  std::size_t max_input_chars = 2048;
  std::size_t max_in_flight = 1;
  std::uint32_t dim = 0;
  int retry_attempts = 3;
  std::uint64_t retry_backoff_ms = 200;

  // cluster
  std::uint32_t k = kDefaultK;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::size_t init_sample = 0;
  std::uint64_t stale_steps = kDefaultStaleSteps;
  std::string out_centroids;
  std::string out_assignments;

  // review
  std::uint32_t cluster = 0;
  std::size_t m = kDefaultExemplarCount;
  std::size_t excerpt_chars = kDefaultExcerptChars;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string verdict;
  std::string reason;
  std::string note;
  std::string annotator;

  // filter / export
  std::string mode = "random";
  std::uint64_t target = 1010500;
  std::uint64_t l = 0;
  std::vector<std::uint64_t> split{1000000, 500, 10000};
  std::optional<std::uint64_t> split_seed;
  bool lenient = false;
  std::uint64_t shard_size = 100000;
  bool compress = false;

  // global
  bool log_json = false;
  std::size_t threads = 0;
};

namespace detail {

inline void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorKind::invalid_argument, std::string("missing --") + what);
  if (!std::filesystem::exists(path))
    throw Error(ErrorKind::invalid_argument, std::string("--") + what + " does not exist: " + path);
}

inline Json digests(std::initializer_list<std::pair<const char*, std::string>> files) {
  Json j = Json::object();
  for (const auto& [name, path] : files)
    if (!path.empty() && std::filesystem::is_regular_file(path)) j[name] = sha256_file(path);
  return j;
}

// The manifest digest covers the shard bytes as well as the manifest file.
inline std::string manifest_digest(const std::string& path) {
  const auto m = load_manifest(path);
  Sha256 h;
  h.update(read_file(path));
  for (const auto& s : m.shards) h.update(sha256_file(m.resolve(s)));
  return h.hex_digest();
}

}  // namespace detail

// Builds and runs the CLI. Pass argv-style arguments without the program
// name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout) {
  PipelineConfig cfg;
  CLI::App app{"corpus-prune: embed, cluster, review and prune text corpora"};
  app.set_config("--config", "", "TOML configuration file");
  app.add_flag("--log-json", cfg.log_json, "Emit JSON-lines logs and diagnostics");
  app.add_option("--threads", cfg.threads, "Worker thread cap (0 = all cores)");
  bool show_version = false;
  app.add_flag("--version", show_version, "Print version and file format versions");
  app.require_subcommand(0, 1);

  auto* shard = app.add_subcommand("shard", "Pack JSONL files into a sharded corpus with manifest");
  shard->add_option("--input", cfg.inputs, "Input JSONL or JSONL.zst files")->required();
  shard->add_option("--out", cfg.out, "Output directory")->required();
  shard->add_option("--shard-size", cfg.shard_size, "Documents per shard");
  shard->add_flag("--compress", cfg.compress, "Write .jsonl.zst shards");

  auto* embed = app.add_subcommand("embed", "Embed every document into a store");
  embed->add_option("--manifest", cfg.manifest)->required();
  auto* provider_opt = embed->add_option("--provider", cfg.provider_url, "Embedding endpoint base URL");
  auto* pre_opt = embed->add_option("--precomputed", cfg.precomputed, "JSONL of precomputed raw embeddings");
  provider_opt->excludes(pre_opt);
  embed->add_option("--batch-size", cfg.embed_batch_size);
  embed->add_option("--max-chars", cfg.max_input_chars, "Truncate texts to this many characters");
  embed->add_option("--max-in-flight", cfg.max_in_flight, "Concurrent provider requests");
  embed->add_option("--dim", cfg.dim, "Expected embedding dimension (0 = from provider)");
  embed->add_option("--retries", cfg.retry_attempts, "Attempts per batch");
  embed->add_option("--retry-backoff-ms", cfg.retry_backoff_ms);
  embed->add_option("--out", cfg.store)->required();

  auto* cluster = app.add_subcommand("cluster", "Fit spherical mini-batch k-means and assign all documents");
  cluster->add_option("--store", cfg.store)->required();
  cluster->add_option("--k", cfg.k);
  cluster->add_option("--batch-size", cfg.batch_size);
  cluster->add_option("--steps", cfg.steps, "Mini-batch steps (0 = ceil(4 n / batch))");
  cluster->add_option("--seed", cfg.seed);
  cluster->add_option("--init-sample", cfg.init_sample, "k-means++ sample size (0 = min(n, 100 k))");
  cluster->add_option("--stale-steps", cfg.stale_steps);
  cluster->add_option("--out-centroids", cfg.out_centroids)->required();
  cluster->add_option("--out-assignments", cfg.out_assignments)->required();

  auto* exemplar = app.add_subcommand("exemplars", "Print the closest and farthest members of a cluster");
  exemplar->add_option("--assignments", cfg.assignments)->required();
  exemplar->add_option("--manifest", cfg.manifest)->required();
  exemplar->add_option("--cluster", cfg.cluster)->required();
  exemplar->add_option("--m", cfg.m);
  exemplar->add_option("--excerpt-chars", cfg.excerpt_chars);

  auto* serve = app.add_subcommand("serve-review", "Serve the cluster review HTTP API");
  serve->add_option("--assignments", cfg.assignments)->required();
  serve->add_option("--manifest", cfg.manifest)->required();
  serve->add_option("--decisions", cfg.decisions)->required();
  serve->add_option("--host", cfg.host);
  serve->add_option("--port", cfg.port);
  serve->add_option("--k", cfg.k, "Number of clusters (default: from assignments)");
  serve->add_option("--m", cfg.m);
  serve->add_option("--excerpt-chars", cfg.excerpt_chars);
  serve->add_option("--static-dir", cfg.static_dir, "Directory with the review frontend");
  bool serve_k_set = false;

  auto* decide = app.add_subcommand("decide", "Append a cluster decision to the log");
  decide->add_option("--decisions", cfg.decisions)->required();
  decide->add_option("--cluster", cfg.cluster)->required();
  decide->add_option("--verdict", cfg.verdict)->required()->check(CLI::IsMember({"keep", "drop"}));
  decide->add_option("--reason", cfg.reason);
  decide->add_option("--note", cfg.note);
  decide->add_option("--annotator", cfg.annotator)->required();

  auto* filter = app.add_subcommand("filter", "Apply decisions, subsample, split and export");
  filter->add_option("--assignments", cfg.assignments)->required();
  filter->add_option("--decisions", cfg.decisions)->required();
  filter->add_option("--manifest", cfg.manifest)->required();
  filter->add_option("--mode", cfg.mode)->check(CLI::IsMember({"random", "top-l"}));
  filter->add_option("--target", cfg.target);
  filter->add_option("--l", cfg.l);
  filter->add_option("--seed", cfg.seed);
  filter->add_option("--split", cfg.split, "train,val,test counts")->delimiter(',')->expected(3);
  filter->add_option("--split-seed", cfg.split_seed, "Split seed (default: --seed)");
  filter->add_flag("--lenient", cfg.lenient, "Keep clusters without a decision");
  filter->add_option("--centroids", cfg.centroids, "Centroids file, recorded in provenance");
  filter->add_option("--shard-size", cfg.shard_size);
  filter->add_flag("--compress", cfg.compress);
  filter->add_option("--out", cfg.out)->required();

  auto* stats = app.add_subcommand("stats", "Compute corpus statistics");
  stats->add_option("--manifest", cfg.manifest)->required();
  stats->add_option("--out", cfg.out, "Output JSON (default: stdout)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    log::set_json(cfg.log_json);
    if (cfg.log_json) {
      log::error("usage error", {{"error", e.what()}, {"exit_code", kExitUsage}});
    } else {
      log::error(std::string("usage error: ") + e.what());
      *log::settings().sink << app.help();
    }
    return kExitUsage;
  }
  log::set_json(cfg.log_json);
  thread_limit() = cfg.threads;
  serve_k_set = serve->count("--k") > 0;

  if (show_version) {
    out << "corpus-prune " << kToolVersion << "\n"
        << "manifest format_version " << kManifestFormatVersion << "\n"
        << "embedding store format_version " << kStoreFormatVersion << "\n"
        << "centroids format_version " << kCentroidsFormatVersion << "\n"
        << "decision log format_version " << kDecisionLogFormatVersion << "\n";
    return kExitOk;
  }
  if (app.get_subcommands().empty()) {
    log::error("usage error: a stage subcommand is required");
    return kExitUsage;
  }
  CLI::App* stage = app.get_subcommands().front();
  const std::string stage_name = stage->get_name();

  int phase_exit = kExitUsage;
  auto fail = [&](const std::exception& e, const char* kind) {
    if (cfg.log_json)
      log::error("stage failed", {{"stage", stage_name}, {"kind", kind}, {"error", e.what()},
                                  {"exit_code", phase_exit}});
    else
      log::error(stage_name + " failed: " + e.what());
    return phase_exit;
  };

  try {
    // Validation: every check below runs before any work starts.
    Json effective;
    Json inputs;
    FilterPlan plan;
    SplitSpec split;
    if (stage_name == "shard") {
      for (const auto& p : cfg.inputs) detail::require_file(p, "input");
      if (cfg.shard_size == 0) throw Error(ErrorKind::invalid_argument, "--shard-size must be >= 1");
      effective = {{"inputs", cfg.inputs}, {"out", cfg.out}, {"shard_size", cfg.shard_size},
                   {"compress", cfg.compress}};
    } else if (stage_name == "embed") {
      detail::require_file(cfg.manifest, "manifest");
      if (cfg.provider_url.empty() && cfg.precomputed.empty())
        throw Error(ErrorKind::invalid_argument, "one of --provider or --precomputed is required");
      if (!cfg.precomputed.empty()) detail::require_file(cfg.precomputed, "precomputed");
      if (cfg.embed_batch_size == 0) throw Error(ErrorKind::invalid_argument, "--batch-size must be >= 1");
      if (cfg.max_input_chars == 0) throw Error(ErrorKind::invalid_argument, "--max-chars must be >= 1");
      if (cfg.retry_attempts < 1) throw Error(ErrorKind::invalid_argument, "--retries must be >= 1");
      effective = {{"manifest", cfg.manifest}, {"provider", cfg.provider_url},
                   {"precomputed", cfg.precomputed}, {"batch_size", cfg.embed_batch_size},
                   {"max_input_chars", cfg.max_input_chars}, {"max_in_flight", cfg.max_in_flight},
                   {"dim", cfg.dim}, {"retries", cfg.retry_attempts}, {"out", cfg.store}};
      inputs = {{"manifest", detail::manifest_digest(cfg.manifest)}};
      if (!cfg.precomputed.empty()) inputs["precomputed"] = sha256_file(cfg.precomputed);
    } else if (stage_name == "cluster") {
      detail::require_file(cfg.store, "store");
      if (cfg.k == 0) throw Error(ErrorKind::invalid_argument, "--k must be >= 1");
      if (cfg.batch_size == 0) throw Error(ErrorKind::invalid_argument, "--batch-size must be >= 1");
      effective = {{"store", cfg.store}, {"k", cfg.k}, {"batch_size", cfg.batch_size},
                   {"steps", cfg.steps}, {"seed", cfg.seed}, {"init_sample", cfg.init_sample},
                   {"stale_steps", cfg.stale_steps}, {"out_centroids", cfg.out_centroids},
                   {"out_assignments", cfg.out_assignments}};
      inputs = detail::digests({{"store", cfg.store}});
    } else if (stage_name == "exemplars") {
      detail::require_file(cfg.assignments, "assignments");
      detail::require_file(cfg.manifest, "manifest");
      if (cfg.m == 0) throw Error(ErrorKind::invalid_argument, "--m must be >= 1");
      effective = {{"assignments", cfg.assignments}, {"manifest", cfg.manifest},
                   {"cluster", cfg.cluster}, {"m", cfg.m}, {"excerpt_chars", cfg.excerpt_chars}};
      inputs = detail::digests({{"assignments", cfg.assignments}});
      inputs["manifest"] = detail::manifest_digest(cfg.manifest);
    } else if (stage_name == "serve-review") {
      detail::require_file(cfg.assignments, "assignments");
      detail::require_file(cfg.manifest, "manifest");
      if (cfg.port < 0 || cfg.port > 65535) throw Error(ErrorKind::invalid_argument, "--port out of range");
      if (cfg.m == 0) throw Error(ErrorKind::invalid_argument, "--m must be >= 1");
      if (!cfg.static_dir.empty() && !std::filesystem::is_directory(cfg.static_dir))
        throw Error(ErrorKind::invalid_argument, "--static-dir is not a directory: " + cfg.static_dir);
      effective = {{"assignments", cfg.assignments}, {"manifest", cfg.manifest},
                   {"decisions", cfg.decisions}, {"host", cfg.host}, {"port", cfg.port},
                   {"m", cfg.m}, {"excerpt_chars", cfg.excerpt_chars}};
      if (serve_k_set) effective["k"] = cfg.k;
      inputs = detail::digests({{"assignments", cfg.assignments}, {"decisions", cfg.decisions}});
      inputs["manifest"] = detail::manifest_digest(cfg.manifest);
    } else if (stage_name == "decide") {
      if (cfg.verdict == "drop" && cfg.reason.empty())
        throw Error(ErrorKind::invalid_argument, "a drop verdict needs --reason");
      effective = {{"decisions", cfg.decisions}, {"cluster", cfg.cluster}, {"verdict", cfg.verdict},
                   {"reason", cfg.reason}, {"annotator", cfg.annotator}};
    } else if (stage_name == "filter") {
      detail::require_file(cfg.assignments, "assignments");
      detail::require_file(cfg.decisions, "decisions");
      detail::require_file(cfg.manifest, "manifest");
      if (!cfg.centroids.empty()) detail::require_file(cfg.centroids, "centroids");
      if (cfg.split.size() != 3) throw Error(ErrorKind::invalid_argument, "--split needs three counts");
      if (cfg.shard_size == 0) throw Error(ErrorKind::invalid_argument, "--shard-size must be >= 1");
      plan.mode = cfg.mode == "top-l" ? FilterMode::top_l_closest : FilterMode::random_within_cluster;
      plan.target_total = cfg.target;
      if (cfg.l != 0) plan.l = cfg.l;
      plan.seed = cfg.seed;
      plan.validate();
      split = {cfg.split[0], cfg.split[1], cfg.split[2], cfg.split_seed.value_or(cfg.seed)};
      effective = {{"assignments", cfg.assignments}, {"decisions", cfg.decisions},
                   {"manifest", cfg.manifest}, {"mode", to_string(plan.mode)},
                   {"target", cfg.target}, {"l", cfg.l}, {"seed", cfg.seed},
                   {"split", cfg.split}, {"split_seed", split.seed}, {"lenient", cfg.lenient},
                   {"shard_size", cfg.shard_size}, {"compress", cfg.compress}, {"out", cfg.out}};
      inputs = detail::digests({{"assignments", cfg.assignments}, {"decisions", cfg.decisions},
                                {"centroids", cfg.centroids}});
      inputs["manifest"] = detail::manifest_digest(cfg.manifest);
    } else if (stage_name == "stats") {
      detail::require_file(cfg.manifest, "manifest");
      effective = {{"manifest", cfg.manifest}, {"out", cfg.out}};
      inputs = {{"manifest", detail::manifest_digest(cfg.manifest)}};
    }
    effective["threads"] = cfg.threads;
    log::info("effective configuration", {{"stage", stage_name}, {"config", effective}});
    if (!inputs.is_null()) log::info("input digests", {{"stage", stage_name}, {"sha256", inputs}});

    phase_exit = kExitRuntime;

    if (stage_name == "shard") {
      ShardOptions so;
      so.compress = cfg.compress;
      ShardWriter writer(cfg.out, cfg.shard_size, so);
      std::unordered_set<std::string> ids;
      for (const auto& p : cfg.inputs) {
        LineReader reader(p);
        std::uint64_t line_no = 0;
        while (auto line = reader.next()) {
          ++line_no;
          if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
          Document doc;
          try {
            doc = parse_document(*line);
          } catch (const Error& e) {
            throw Error(ErrorKind::parse, p + ":" + std::to_string(line_no) + ": " + e.what());
          }
          if (!ids.insert(doc.id).second)
            throw Error(ErrorKind::validation, "duplicate document id \"" + doc.id + "\"");
          writer.add(doc);
        }
      }
      const auto m = writer.finish();
      log::info("wrote shards", {{"shards", m.shards.size()}, {"total_docs", m.total_docs()}});
    } else if (stage_name == "embed") {
      std::unique_ptr<EmbeddingProvider> provider;
      if (!cfg.precomputed.empty())
        provider = std::make_unique<PrecomputedProvider>(cfg.precomputed, cfg.max_input_chars);
      else
        provider = std::make_unique<HttpEmbeddingProvider>(cfg.provider_url, cfg.dim, cfg.max_input_chars);
      if (cfg.dim != 0 && provider->dim() != 0 && provider->dim() != cfg.dim)
        throw Error(ErrorKind::provider, "provider dim " + std::to_string(provider->dim()) +
                                             " does not match --dim " + std::to_string(cfg.dim));
      EmbedOptions eo;
      eo.batch_size = cfg.embed_batch_size;
      eo.max_attempts = cfg.retry_attempts;
      eo.initial_backoff = std::chrono::milliseconds(cfg.retry_backoff_ms);
      eo.max_in_flight = cfg.max_in_flight;
      DocumentReader reader(load_manifest(cfg.manifest));
      const auto store = embed_corpus(reader, *provider, eo);
      save_store(store, cfg.store);
      log::info("wrote embedding store", {{"count", store.count()}, {"dim", store.dim()},
                                          {"sha256", sha256_file(cfg.store)}});
    } else if (stage_name == "cluster") {
      const auto store = load_store(cfg.store);
      store.validate();
      FitOptions fo;
      fo.k = cfg.k;
      fo.batch_size = cfg.batch_size;
      fo.total_steps = cfg.steps;
      fo.seed = cfg.seed;
      fo.init_sample_size = cfg.init_sample;
      fo.stale_steps = cfg.stale_steps;
      FitReport report;
      const auto centroids = minibatch_fit(store, fo, &report);
      const auto assignments = assign_all(store, centroids);
      save_centroids(centroids, cfg.out_centroids);
      save_assignments(assignments, cfg.out_assignments);
      log::info("clustering done",
                {{"k", centroids.k}, {"batch_size", report.batch_size}, {"steps", report.total_steps},
                 {"repairs", report.repairs}, {"mean_distance", mean_distance(assignments)},
                 {"centroids_sha256", sha256_file(cfg.out_centroids)},
                 {"assignments_sha256", sha256_file(cfg.out_assignments)}});
    } else if (stage_name == "exemplars") {
      const auto assignments = load_assignments(cfg.assignments);
      const ClusterIndex index(assignments);
      const auto docs = DocumentIndex::from_manifest(load_manifest(cfg.manifest));
      const auto set = exemplars(assignments, index, docs, cfg.cluster, cfg.m, cfg.excerpt_chars);
      out << exemplar_set_to_json(set).dump(2) << "\n";
    } else if (stage_name == "serve-review") {
      ReviewServiceOptions ro;
      if (serve_k_set) ro.k = cfg.k;
      ro.default_m = cfg.m;
      ro.excerpt_chars = cfg.excerpt_chars;
      if (!cfg.static_dir.empty()) ro.static_dir = cfg.static_dir;
      ReviewService service(load_assignments(cfg.assignments),
                            DocumentIndex::from_manifest(load_manifest(cfg.manifest)), cfg.decisions, ro);
      httplib::Server server;
      service.bind(server);
      log::info("review service listening", {{"host", cfg.host}, {"port", cfg.port}, {"k", service.k()}});
      if (!server.listen(cfg.host, cfg.port))
        throw Error(ErrorKind::io, "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
    } else if (stage_name == "decide") {
      ClusterDecision d;
      d.cluster_id = cfg.cluster;
      d.verdict = parse_verdict(cfg.verdict);
      d.reason = cfg.reason.empty() ? Reason::not_applicable : parse_reason(cfg.reason);
      if (!cfg.note.empty()) d.note = cfg.note;
      d.annotator = cfg.annotator;
      d.timestamp = now_utc();
      record_decision(d, cfg.decisions);
      log::info("decision recorded", decision_to_json(d));
    } else if (stage_name == "filter") {
      const auto assignments = load_assignments(cfg.assignments);
      const auto view = current_view(DecisionLog::replay(cfg.decisions));
      const auto kept = apply_decisions(assignments, view, !cfg.lenient);
      const auto selected = subsample(kept, plan);
      ProvenanceInputs pin;
      pin.manifest = cfg.manifest;
      pin.decisions = cfg.decisions;
      pin.assignments = cfg.assignments;
      if (!cfg.centroids.empty()) {
        pin.centroids = cfg.centroids;
        pin.cluster_seed = load_centroids(cfg.centroids).seed;
      }
      ExportOptions xo;
      xo.shard_size = cfg.shard_size;
      xo.compress = cfg.compress;
      const auto result = export_dataset(selected, load_manifest(cfg.manifest), split, cfg.out, plan, pin, xo);
      log::info("export done", {{"kept_assignments", kept.size()}, {"selected", selected.size()},
                                {"train", result.train.total_docs()}, {"val", result.val.total_docs()},
                                {"test", result.test.total_docs()}});
    } else if (stage_name == "stats") {
      DocumentReader reader(load_manifest(cfg.manifest));
      const auto s = compute_stats(reader);
      const std::string text = stats_to_json(s).dump(2) + "\n";
      if (cfg.out.empty())
        out << text;
      else
        write_file(cfg.out, text);
    }
    return kExitOk;
  } catch (const Error& e) {
    return fail(e, std::string(to_string(e.kind())).c_str());
  } catch (const std::exception& e) {
    return fail(e, "internal");
  }
}

}  // namespace corpus_prune::cli
