#pragma once

// Turning review verdicts into a dataset: cluster filtering, per-cluster
// subsampling, splitting, export and corpus statistics.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "corpus_prune/clustering.hpp"
#include "corpus_prune/corpus_io.hpp"
#include "corpus_prune/document.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/hash.hpp"
#include "corpus_prune/review.hpp"
#include "corpus_prune/rng.hpp"

namespace corpus_prune {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class FilterMode { random_within_cluster, top_l_closest };

inline std::string_view to_string(FilterMode m) {
  return m == FilterMode::random_within_cluster ? "random_within_cluster" : "top_l_closest";
}

struct FilterPlan {
  FilterMode mode = FilterMode::random_within_cluster;
  std::uint64_t target_total = 1;
  std::optional<std::uint64_t> l;
  std::uint64_t seed = 0;

  void validate() const {
    if (target_total < 1) throw Error(ErrorKind::invalid_argument, "target_total must be >= 1");
    if (mode == FilterMode::top_l_closest && (!l || *l < 1))
      throw Error(ErrorKind::invalid_argument, "top_l_closest mode needs l >= 1");
  }
};

// Keeps assignments whose cluster's current verdict is keep, in input order.
// Strict mode rejects clusters without a decision; lenient mode keeps them.
inline std::vector<Assignment> apply_decisions(std::span<const Assignment> assignments,
                                               const DecisionView& decisions, bool strict = true) {
  std::set<std::uint32_t> undecided;
  for (const auto& a : assignments)
    if (!decisions.contains(a.cluster)) undecided.insert(a.cluster);
  if (strict && !undecided.empty()) {
    std::string list;
    for (auto c : undecided) list += (list.empty() ? "" : ", ") + std::to_string(c);
    throw Error(ErrorKind::validation,
                std::to_string(undecided.size()) + " clusters have no decision: " + list);
  }
  std::vector<Assignment> kept;
  for (const auto& a : assignments) {
    auto it = decisions.find(a.cluster);
    if (it == decisions.end() || it->second.verdict == Verdict::keep) kept.push_back(a);
  }
  return kept;
}

// Largest-remainder apportionment of `target` seats over `sizes`.
// Each cluster first gets floor(target * size / total); leftover seats go to
// the largest remainders, ties to the lower index. Since target <= total,
// every quota is at most ceil(target * size / total) <= size.
inline std::vector<std::uint64_t> allocate_quotas(std::span<const std::uint64_t> sizes,
                                                  std::uint64_t target) {
  using u128 = unsigned __int128;
  const u128 total = std::accumulate(sizes.begin(), sizes.end(), u128{0});
  if (target > total)
    throw Error(ErrorKind::invalid_argument,
                "target " + std::to_string(target) + " exceeds the " +
                    std::to_string(static_cast<std::uint64_t>(total)) + " kept documents (short by " +
                    std::to_string(target - static_cast<std::uint64_t>(total)) + ")");
  std::vector<std::uint64_t> quotas(sizes.size(), 0);
  if (total == 0) return quotas;
  std::vector<u128> remainder(sizes.size());
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const u128 scaled = u128{target} * sizes[i];
    quotas[i] = static_cast<std::uint64_t>(scaled / total);
    remainder[i] = scaled % total;
    assigned += quotas[i];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < target; ++i, ++assigned) ++quotas[order[i]];
  return quotas;
}

// Selected document ids, listed in kept-assignment order.
inline std::vector<std::string> subsample(std::span<const Assignment> kept, const FilterPlan& plan) {
  plan.validate();
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < kept.size(); ++i) groups[kept[i].cluster].push_back(i);

  std::vector<std::size_t> chosen;
  if (plan.mode == FilterMode::random_within_cluster) {
    std::vector<std::uint64_t> sizes;
    for (const auto& [c, members] : groups) sizes.push_back(members.size());
    const auto quotas = allocate_quotas(sizes, plan.target_total);
    Rng rng(plan.seed);
    std::size_t g = 0;
    for (auto& [c, members] : groups) {
      const auto q = static_cast<std::size_t>(quotas[g++]);
      partial_shuffle(std::span<std::size_t>(members), q, rng);
      chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q));
    }
  } else {
    for (auto& [c, members] : groups) {
      const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(*plan.l, members.size()));
      std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end(),
                        [&](std::size_t a, std::size_t b) {
                          return kept[a].distance != kept[b].distance ? kept[a].distance < kept[b].distance
                                                                      : a < b;
                        });
      chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> ids;
  ids.reserve(chosen.size());
  for (auto i : chosen) ids.push_back(kept[i].doc_id);
  return ids;
}

// Token statistics. A token is a maximal run of bytes that are not ASCII
// whitespace (space, \t, \n, \v, \f, \r); vocab_size counts distinct tokens.
struct CorpusStats {
  std::uint64_t doc_count = 0;
  std::uint64_t vocab_size = 0;
  std::uint64_t token_count = 0;
  std::uint64_t median_doc_len = 0;  // lower median
  std::uint64_t max_doc_len = 0;
  std::uint64_t uncompressed_bytes = 0;
  std::map<std::string, std::uint64_t> per_subset_counts;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

class StatsAccumulator {
 public:
  void add(const Document& doc) {
    ++stats_.doc_count;
    stats_.uncompressed_bytes += doc.byte_len();
    if (doc.subset) ++stats_.per_subset_counts[*doc.subset];
    std::uint64_t len = 0;
    const std::string_view text = doc.text;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      const std::size_t start = i;
      while (i < text.size() && !is_space(text[i])) ++i;
      if (i > start) {
        ++len;
        vocab_.emplace(text.substr(start, i - start));
      }
    }
    stats_.token_count += len;
    lengths_.push_back(len);
  }

  CorpusStats finish() const {
    CorpusStats s = stats_;
    s.vocab_size = vocab_.size();
    if (!lengths_.empty()) {
      std::vector<std::uint64_t> l = lengths_;
      const std::size_t mid = (l.size() - 1) / 2;
      std::nth_element(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(mid), l.end());
      s.median_doc_len = l[mid];
      s.max_doc_len = *std::max_element(lengths_.begin(), lengths_.end());
    }
    return s;
  }

 private:
  static bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
  }

  CorpusStats stats_;
  std::unordered_set<std::string> vocab_;
  std::vector<std::uint64_t> lengths_;
};

template <class Source>
  requires requires(Source& s) { s.next(); }
CorpusStats compute_stats(Source& source) {
  StatsAccumulator acc;
  while (auto doc = source.next()) acc.add(*doc);
  return acc.finish();
}

inline CorpusStats compute_stats(const std::vector<Document>& docs) {
  StatsAccumulator acc;
  for (const auto& d : docs) acc.add(d);
  return acc.finish();
}

inline Json stats_to_json(const CorpusStats& s) {
  Json subsets = Json::object();
  for (const auto& [k, v] : s.per_subset_counts) subsets[k] = v;
  return {{"doc_count", s.doc_count},
          {"vocab_size", s.vocab_size},
          {"token_count", s.token_count},
          {"median_doc_len", s.median_doc_len},
          {"max_doc_len", s.max_doc_len},
          {"uncompressed_bytes", s.uncompressed_bytes},
          {"per_subset_counts", subsets}};
}

// Input files whose digests go into provenance.json. Only file names are
// recorded so the record does not depend on where the run happened.
struct ProvenanceInputs {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> decisions;
  std::optional<std::filesystem::path> centroids;
  std::optional<std::filesystem::path> assignments;
  std::optional<std::uint64_t> cluster_seed;
};

struct ExportOptions {
  std::uint64_t shard_size = 100000;
  bool compress = false;
};

struct ExportResult {
  ShardManifest train;
  ShardManifest val;
  ShardManifest test;
  Json stats;
  Json provenance;
};

inline Json file_record(const std::filesystem::path& p) {
  return {{"file", p.filename().string()}, {"sha256", sha256_file(p)}};
}

inline Json make_provenance(const FilterPlan& plan, const SplitSpec& split, std::uint64_t selected,
                            const ProvenanceInputs& in) {
  Json plan_json{{"mode", to_string(plan.mode)}, {"target_total", plan.target_total},
                 {"l", plan.l ? Json(*plan.l) : Json(nullptr)}, {"seed", plan.seed}};
  Json split_json{{"train", split.train_count}, {"val", split.val_count},
                  {"test", split.test_count}, {"seed", split.seed}};
  Json inputs = Json::object();
  if (in.manifest) inputs["manifest"] = file_record(*in.manifest);
  if (in.decisions) inputs["decisions"] = file_record(*in.decisions);
  if (in.centroids) inputs["centroids"] = file_record(*in.centroids);
  if (in.assignments) inputs["assignments"] = file_record(*in.assignments);
  Json seeds{{"filter", plan.seed}, {"split", split.seed}};
  if (in.cluster_seed) seeds["cluster"] = *in.cluster_seed;
  return {{"tool_version", kToolVersion}, {"seeds", seeds},         {"filter_plan", plan_json},
          {"split", split_json},          {"selected_count", selected}, {"inputs", inputs}};
}

// Writes out_dir/{train,val,test}/ shard sets, out_dir/stats.json and
// out_dir/provenance.json.
inline ExportResult export_dataset(std::span<const std::string> selected, const ShardManifest& source,
                                   const SplitSpec& split, const std::filesystem::path& out_dir,
                                   const FilterPlan& plan, const ProvenanceInputs& inputs = {},
                                   const ExportOptions& options = {}) {
  std::unordered_set<std::string> wanted(selected.begin(), selected.end());
  if (wanted.size() != selected.size())
    throw Error(ErrorKind::invalid_argument, "selected ids contain duplicates");
  const auto splits = split_dataset(std::vector<std::string>(selected.begin(), selected.end()), split);

  std::unordered_map<std::string, Document> docs;
  docs.reserve(wanted.size());
  DocumentReader reader(source);
  while (auto d = reader.next())
    if (wanted.contains(d->id)) docs.emplace(d->id, std::move(*d));
  for (const auto& id : selected)
    if (!docs.contains(id))
      throw Error(ErrorKind::not_found, "selected id \"" + id + "\" is not in the document source");

  ExportResult result;
  StatsAccumulator overall;
  Json stats = Json::object();
  auto write_split = [&](const char* name, const std::vector<std::string>& ids) {
    ShardOptions so;
    so.prefix = name;
    so.compress = options.compress;
    ShardWriter writer(out_dir / name, options.shard_size, so);
    StatsAccumulator acc;
    for (const auto& id : ids) {
      const auto& doc = docs.at(id);
      writer.add(doc);
      acc.add(doc);
      overall.add(doc);
    }
    stats[name] = stats_to_json(acc.finish());
    return writer.finish();
  };
  result.train = write_split("train", splits.train);
  result.val = write_split("val", splits.val);
  result.test = write_split("test", splits.test);
  Json ordered;
  ordered["definitions"] = {
      {"token", "maximal run of non-whitespace bytes (ASCII whitespace separators)"},
      {"vocab_size", "number of distinct tokens"},
      {"median_doc_len", "lower median of per-document token counts"}};
  ordered["overall"] = stats_to_json(overall.finish());
  for (const char* name : {"train", "val", "test"}) ordered[name] = stats[name];
  result.stats = ordered;
  result.provenance = make_provenance(plan, split, selected.size(), inputs);
  write_file(out_dir / "stats.json", result.stats.dump(2) + "\n");
  write_file(out_dir / "provenance.json", result.provenance.dump(2) + "\n");
  return result;
}

}  // namespace corpus_prune
