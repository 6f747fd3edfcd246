#pragma once

// Spherical mini-batch k-means.
//
// All vectors live on the unit sphere and the distance is
// 1 - dot(a, b), with dot products accumulated in double. Centroids start
// from k-means++ over a seeded sample; each step draws a batch without
// replacement, assigns it against a snapshot of the centroids, then walks
// the batch in order applying
//     counts[c] += 1;  eta = 1 / counts[c];  c = normalize((1 - eta) c + eta x).
// Centroids that receive no points for stale_steps consecutive steps are
// re-seeded from the batch point farthest from its own centroid.
//
// Centroids file layout (little-endian):
//   magic "CNTR" | format_version u32 | k u32 | dim u32 | seed u64 |
//   steps_taken u64 | k * counts u64 | k * dim f32 row-major

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "corpus_prune/bytes.hpp"
#include "corpus_prune/embedding.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/line_io.hpp"
#include "corpus_prune/log.hpp"
#include "corpus_prune/parallel.hpp"
#include "corpus_prune/rng.hpp"

namespace corpus_prune {

inline constexpr std::uint32_t kCentroidsFormatVersion = 1;
inline constexpr std::uint32_t kDefaultK = 220;
inline constexpr std::size_t kDefaultBatchSize = 16384;
inline constexpr std::uint64_t kDefaultStaleSteps = 50;

// Read-only row-major matrix.
struct MatrixView {
  std::span<const float> data;
  std::uint32_t dim = 0;

  std::size_t rows() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(std::size_t i) const noexcept { return data.subspan(i * dim, dim); }
};

inline MatrixView view(const EmbeddingStore& store) noexcept { return {store.data(), store.dim()}; }

inline double cosine_distance64(std::span<const float> a, std::span<const float> b) noexcept {
  return std::clamp(1.0 - dot64(a, b), 0.0, 2.0);
}

inline float cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::invalid_argument, "cosine_distance: dim mismatch " +
                                                 std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  return static_cast<float>(cosine_distance64(a, b));
}

struct Centroids {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<float> vectors;
  std::vector<std::uint64_t> counts;
  std::uint64_t seed = 0;
  std::uint64_t steps_taken = 0;

  Centroids() = default;
  Centroids(std::uint32_t k_, std::uint32_t dim_)
      : k(k_), dim(dim_), vectors(std::size_t{k_} * dim_), counts(k_, 0) {}

  std::span<const float> row(std::size_t c) const noexcept {
    return {vectors.data() + c * dim, dim};
  }
  std::span<float> row(std::size_t c) noexcept { return {vectors.data() + c * dim, dim}; }
  MatrixView matrix() const noexcept { return {vectors, dim}; }

  std::uint64_t total_count() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }

  friend bool operator==(const Centroids& a, const Centroids& b) {
    return a.k == b.k && a.dim == b.dim && a.counts == b.counts && a.seed == b.seed &&
           a.steps_taken == b.steps_taken && a.vectors.size() == b.vectors.size() &&
           std::memcmp(a.vectors.data(), b.vectors.data(), a.vectors.size() * sizeof(float)) == 0;
  }
};

struct Nearest {
  std::uint32_t cluster = 0;
  double distance = 0.0;
};

// Exhaustive argmin; ties go to the lowest cluster index.
inline Nearest nearest_centroid(MatrixView centroids, std::span<const float> x) noexcept {
  Nearest best{0, cosine_distance64(centroids.row(0), x)};
  const std::size_t k = centroids.rows();
  for (std::size_t c = 1; c < k; ++c) {
    const double d = cosine_distance64(centroids.row(c), x);
    if (d < best.distance) best = {static_cast<std::uint32_t>(c), d};
  }
  return best;
}

namespace detail {

// k-means++ over sample rows given by `indices` into `rows`.
inline Centroids kmeanspp(MatrixView rows, std::span<const std::size_t> indices,
                          std::uint32_t k, std::uint64_t seed) {
  const std::size_t n = indices.size();
  if (k == 0) throw Error(ErrorKind::invalid_argument, "k must be >= 1");
  if (n < k)
    throw Error(ErrorKind::invalid_argument, "k-means++ needs at least k=" + std::to_string(k) +
                                                 " rows, got " + std::to_string(n));
  Rng rng(seed);
  Centroids out(k, rows.dim);
  out.seed = seed;
  std::vector<double> weight(n);

  auto place = [&](std::uint32_t c, std::size_t pick) {
    const auto src = rows.row(indices[pick]);
    std::copy(src.begin(), src.end(), out.row(c).begin());
    out.counts[c] = 1;
  };
  auto refresh = [&](std::uint32_t c, bool first) {
    const auto center = out.row(c);
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto x = rows.row(indices[i]);
        // Rows identical to a chosen center must never be drawn again, even
        // when rounding leaves 1 - dot slightly above zero.
        const double d = std::equal(x.begin(), x.end(), center.begin()) ? 0.0
                                                                        : cosine_distance64(x, center);
        const double w = d * d;
        weight[i] = first ? w : std::min(weight[i], w);
      }
    });
  };

  place(0, static_cast<std::size_t>(rng.uniform_below(n)));
  refresh(0, true);
  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double w : weight) total += w;
    if (!(total > 0.0))
      throw Error(ErrorKind::invalid_argument, "k-means++ found only " + std::to_string(c) +
                                                   " distinct rows, fewer than k=" + std::to_string(k));
    const double target = rng.uniform01() * total;
    double acc = 0.0;
    std::size_t pick = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (weight[i] <= 0.0) continue;
      last_positive = i;
      acc += weight[i];
      if (acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;
    place(c, pick);
    refresh(c, false);
  }
  return out;
}

}  // namespace detail

// k-means++ seeding: first center uniform, each further center drawn with
// probability proportional to the squared cosine distance to the nearest
// center chosen so far.
inline Centroids kmeanspp_init(MatrixView sample, std::uint32_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(sample.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return detail::kmeanspp(sample, idx, k, seed);
}

// Tracks the last step at which each centroid received a point.
struct StaleTracker {
  std::vector<std::uint64_t> last_active;

  explicit StaleTracker(std::size_t k = 0) : last_active(k, 0) {}

  bool is_stale(std::size_t c, std::uint64_t step, std::uint64_t stale_steps) const noexcept {
    return step >= last_active[c] + stale_steps;
  }
};

struct RepairResult {
  std::vector<std::uint32_t> reseeded;
  std::uint64_t count_removed = 0;  // observations dropped by count resets
};

// Re-seeds every centroid that has been idle for stale_steps steps. Stale
// centroids, in ascending index order, take the batch points farthest from
// their own assigned centroid, one point each, farthest first. A no-op when
// nothing is stale.
inline RepairResult repair_empty_clusters(Centroids& centroids, MatrixView batch,
                                          std::span<const std::uint32_t> batch_clusters,
                                          StaleTracker& tracker, std::uint64_t step,
                                          std::uint64_t stale_steps = kDefaultStaleSteps) {
  RepairResult result;
  std::vector<std::uint32_t> stale;
  for (std::uint32_t c = 0; c < centroids.k; ++c)
    if (tracker.is_stale(c, step, stale_steps)) stale.push_back(c);
  if (stale.empty() || batch.rows() == 0) return result;

  std::vector<double> dist(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i)
    dist[i] = cosine_distance64(batch.row(i), centroids.row(batch_clusters[i]));
  std::vector<std::size_t> order(batch.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  for (std::size_t s = 0; s < stale.size() && s < order.size(); ++s) {
    const auto c = stale[s];
    const auto x = batch.row(order[s]);
    std::copy(x.begin(), x.end(), centroids.row(c).begin());
    result.count_removed += centroids.counts[c] - 1;
    centroids.counts[c] = 1;
    tracker.last_active[c] = step;
    result.reseeded.push_back(c);
  }
  return result;
}

// Applies the per-point learning-rate update for x joining cluster c.
inline void update_centroid(Centroids& centroids, std::uint32_t c, std::span<const float> x) {
  auto row = centroids.row(c);
  centroids.counts[c] += 1;
  const double eta = 1.0 / static_cast<double>(centroids.counts[c]);
  double norm_sq = 0.0;
  std::vector<double> mixed(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    mixed[j] = (1.0 - eta) * row[j] + eta * x[j];
    norm_sq += mixed[j] * mixed[j];
  }
  const double norm = std::sqrt(norm_sq);
  if (norm == 0.0) {
    // x is antipodal to the centroid at eta = 1/2; keep the new point.
    std::copy(x.begin(), x.end(), row.begin());
    return;
  }
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<float>(mixed[j] / norm);
}

struct FitOptions {
  std::uint32_t k = kDefaultK;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t total_steps = 0;  // 0: ceil(4 n / batch_size)
  std::uint64_t seed = 0;
  std::size_t init_sample_size = 0;  // 0: min(n, 100 k)
  std::uint64_t stale_steps = kDefaultStaleSteps;
};

struct FitReport {
  std::size_t batch_size = 0;  // effective, after clamping
  std::uint64_t total_steps = 0;
  std::uint64_t points_processed = 0;
  std::uint64_t repairs = 0;
  std::uint64_t count_removed = 0;
  bool batch_clamped = false;
};

inline std::uint64_t default_total_steps(std::size_t n, std::size_t batch_size) {
  return batch_size == 0 ? 0 : (4 * static_cast<std::uint64_t>(n) + batch_size - 1) / batch_size;
}

// Stepwise driver behind minibatch_fit; exposed so callers can observe the
// objective between steps.
class MiniBatchKMeans {
 public:
  MiniBatchKMeans(MatrixView data, const FitOptions& opt) : data_(data), opt_(opt), rng_(opt.seed) {
    const std::size_t n = data.rows();
    if (opt.k == 0) throw Error(ErrorKind::invalid_argument, "k must be >= 1");
    if (opt.k > n)
      throw Error(ErrorKind::invalid_argument, "k=" + std::to_string(opt.k) + " exceeds the " +
                                                   std::to_string(n) + " available rows");
    if (opt.batch_size == 0) throw Error(ErrorKind::invalid_argument, "batch_size must be >= 1");
    report_.batch_size = opt.batch_size;
    if (opt.batch_size > n) {
      report_.batch_size = n;
      report_.batch_clamped = true;
      log::warn("batch size exceeds store size; clamping",
                {{"batch_size", opt.batch_size}, {"count", n}});
    }
    report_.total_steps =
        opt.total_steps != 0 ? opt.total_steps : default_total_steps(n, report_.batch_size);

    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    std::size_t sample = opt.init_sample_size != 0 ? opt.init_sample_size
                                                   : static_cast<std::size_t>(100) * opt.k;
    sample = std::clamp<std::size_t>(sample, opt.k, n);
    partial_shuffle(std::span<std::size_t>(perm_), sample, rng_);
    centroids_ = detail::kmeanspp(data, std::span<const std::size_t>(perm_.data(), sample), opt.k,
                                  rng_.next());
    centroids_.seed = opt.seed;
    tracker_ = StaleTracker(opt.k);
    batch_rows_.reserve(report_.batch_size * data.dim);
  }

  void step() {
    const std::size_t b = report_.batch_size;
    partial_shuffle(std::span<std::size_t>(perm_), b, rng_);
    batch_clusters_.assign(b, 0);
    const MatrixView snapshot = centroids_.matrix();
    parallel_for(b, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i)
        batch_clusters_[i] = nearest_centroid(snapshot, data_.row(perm_[i])).cluster;
    }, 256);
    const std::uint64_t step_no = centroids_.steps_taken + 1;
    for (std::size_t i = 0; i < b; ++i) {
      update_centroid(centroids_, batch_clusters_[i], data_.row(perm_[i]));
      tracker_.last_active[batch_clusters_[i]] = step_no;
    }
    batch_rows_.clear();
    for (std::size_t i = 0; i < b; ++i) {
      const auto r = data_.row(perm_[i]);
      batch_rows_.insert(batch_rows_.end(), r.begin(), r.end());
    }
    const auto repair = repair_empty_clusters(centroids_, {batch_rows_, data_.dim}, batch_clusters_,
                                              tracker_, step_no, opt_.stale_steps);
    report_.repairs += repair.reseeded.size();
    report_.count_removed += repair.count_removed;
    report_.points_processed += b;
    centroids_.steps_taken = step_no;
  }

  void run() {
    while (centroids_.steps_taken < report_.total_steps) step();
  }

  const Centroids& centroids() const noexcept { return centroids_; }
  const FitReport& report() const noexcept { return report_; }

 private:
  MatrixView data_;
  FitOptions opt_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  Centroids centroids_;
  StaleTracker tracker_;
  FitReport report_;
  std::vector<std::uint32_t> batch_clusters_;
  std::vector<float> batch_rows_;
};

inline Centroids minibatch_fit(const EmbeddingStore& store, const FitOptions& opt,
                               FitReport* report = nullptr) {
  MiniBatchKMeans km(view(store), opt);
  km.run();
  if (report) *report = km.report();
  return km.centroids();
}

struct Assignment {
  std::string doc_id;
  std::uint32_t cluster = 0;
  float distance = 0.0f;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

inline std::vector<Assignment> assign_all(const EmbeddingStore& store, const Centroids& centroids) {
  if (store.dim() != centroids.dim)
    throw Error(ErrorKind::invalid_argument, "store dim " + std::to_string(store.dim()) +
                                                 " does not match centroid dim " +
                                                 std::to_string(centroids.dim));
  if (centroids.k == 0) throw Error(ErrorKind::invalid_argument, "no centroids");
  std::vector<Assignment> out(store.count());
  const MatrixView c = centroids.matrix();
  parallel_for(store.count(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto best = nearest_centroid(c, store.row(i));
      out[i] = {store.ids()[i], best.cluster, static_cast<float>(best.distance)};
    }
  }, 256);
  return out;
}

inline double mean_distance(std::span<const Assignment> assignments) {
  if (assignments.empty()) return 0.0;
  double s = 0.0;
  for (const auto& a : assignments) s += a.distance;
  return s / static_cast<double>(assignments.size());
}

inline std::string encode_centroids(const Centroids& c) {
  std::string out;
  out.append("CNTR");
  bytes::put_le<std::uint32_t>(out, kCentroidsFormatVersion);
  bytes::put_le<std::uint32_t>(out, c.k);
  bytes::put_le<std::uint32_t>(out, c.dim);
  bytes::put_le<std::uint64_t>(out, c.seed);
  bytes::put_le<std::uint64_t>(out, c.steps_taken);
  for (auto n : c.counts) bytes::put_le<std::uint64_t>(out, n);
  for (float f : c.vectors) bytes::put_f32(out, f);
  return out;
}

inline Centroids decode_centroids(std::string_view data, const std::string& source) {
  bytes::Reader r(data, source);
  if (r.remaining() < 4 || r.take(4) != "CNTR") r.fail("bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCentroidsFormatVersion) r.fail("unsupported format_version " + std::to_string(version));
  const auto k = r.le<std::uint32_t>();
  const auto dim = r.le<std::uint32_t>();
  if (k == 0 || dim == 0) r.fail("k and dim must be positive");
  Centroids c(k, dim);
  c.seed = r.le<std::uint64_t>();
  c.steps_taken = r.le<std::uint64_t>();
  if (r.remaining() != std::size_t{k} * 8 + std::size_t{k} * dim * 4) r.fail("payload size does not match header");
  for (auto& n : c.counts) n = r.le<std::uint64_t>();
  for (auto& f : c.vectors) f = r.f32();
  return c;
}

inline void save_centroids(const Centroids& c, const std::filesystem::path& path) {
  write_file(path, encode_centroids(c));
}

inline Centroids load_centroids(const std::filesystem::path& path) {
  return decode_centroids(read_file(path), path.string());
}

// {"id":"...","cluster":N,"distance":0.123456}
inline std::string assignment_line(const Assignment& a) {
  char dist[32];
  std::snprintf(dist, sizeof dist, "%.6f", static_cast<double>(a.distance));
  return "{\"id\":" + Json(a.doc_id).dump() + ",\"cluster\":" + std::to_string(a.cluster) +
         ",\"distance\":" + dist + "}";
}

inline void save_assignments(std::span<const Assignment> assignments, const std::filesystem::path& path) {
  LineWriter w(path);
  for (const auto& a : assignments) w.write_line(assignment_line(a));
  w.close();
}

inline std::vector<Assignment> load_assignments(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<Assignment> out;
  std::uint64_t line_no = 0;
  while (auto line = r.next()) {
    ++line_no;
    if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(*line);
      out.push_back({j.at("id").get<std::string>(), j.at("cluster").get<std::uint32_t>(),
                     j.at("distance").get<float>()});
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace corpus_prune
