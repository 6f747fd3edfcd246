#pragma once

// Shared helpers and independent oracles for the test suites. The oracles
// do not call into the code paths they are used to check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "corpus_prune/clustering.hpp"
#include "corpus_prune/embedding.hpp"
#include "corpus_prune/filter.hpp"
#include "corpus_prune/rng.hpp"

namespace test_support {

namespace cp = corpus_prune;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("corpus_prune_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> random_unit(cp::Rng& rng, std::uint32_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  std::vector<float> out(dim);
  for (std::uint32_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(n2));
  return out;
}

inline cp::EmbeddingStore random_store(cp::Rng& rng, std::size_t n, std::uint32_t dim,
                                       const std::string& prefix = "d") {
  cp::EmbeddingStore store(dim);
  for (std::size_t i = 0; i < n; ++i) store.append(prefix + std::to_string(i), random_unit(rng, dim));
  return store;
}

struct Blobs {
  cp::EmbeddingStore store;
  std::vector<int> labels;
};

// `blobs` spherical clusters around the first basis vectors, so centers are
// mutually orthogonal; noise is Gaussian with per-coordinate sd `spread`.
inline Blobs make_blobs(std::uint64_t seed, std::size_t blobs, std::size_t per_blob, std::uint32_t dim,
                        double spread) {
  cp::Rng rng(seed);
  Blobs out{cp::EmbeddingStore(dim), {}};
  std::vector<std::pair<std::vector<float>, int>> points;
  for (std::size_t b = 0; b < blobs; ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      std::vector<double> v(dim, 0.0);
      v[b % dim] = (b / dim) % 2 == 0 ? 1.0 : -1.0;
      double n2 = 0.0;
      for (auto& x : v) {
        x += spread * rng.normal();
        n2 += x * x;
      }
      std::vector<float> f(dim);
      for (std::uint32_t j = 0; j < dim; ++j) f[j] = static_cast<float>(v[j] / std::sqrt(n2));
      points.emplace_back(std::move(f), static_cast<int>(b));
    }
  }
  // Interleave so store order carries no label information.
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  cp::shuffle(std::span<std::size_t>(order), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.store.append("p" + std::to_string(i), points[order[i]].first);
    out.labels.push_back(points[order[i]].second);
  }
  return out;
}

inline double choose2(double n) { return n * (n - 1) / 2.0; }

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (const auto& [k, v] : joint) sum_ij += choose2(v);
  for (const auto& [k, v] : ra) sum_a += choose2(v);
  for (const auto& [k, v] : rb) sum_b += choose2(v);
  const double expected = sum_a * sum_b / choose2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

// Exhaustive nearest centroid in double precision; strict < keeps the
// lowest index on ties.
struct OracleAssignment {
  std::uint32_t cluster;
  double distance;
};

inline OracleAssignment oracle_nearest(std::span<const float> x, const cp::Centroids& c) {
  OracleAssignment best{0, 0.0};
  for (std::uint32_t j = 0; j < c.k; ++j) {
    double dot = 0.0;
    for (std::uint32_t t = 0; t < c.dim; ++t)
      dot += static_cast<double>(x[t]) * static_cast<double>(c.vectors[j * c.dim + t]);
    double d = 1.0 - dot;
    if (d < 0.0) d = 0.0;
    if (d > 2.0) d = 2.0;
    if (j == 0 || d < best.distance) best = {j, d};
  }
  return best;
}

// Brute-force largest-remainder apportionment: among all vectors with each
// entry floor(q_i) or floor(q_i)+1 summing to target, minimize
// sum |seats_i - q_i| (exact, scaled by total); ties prefer seats at lower
// indices (lexicographically larger vector).
inline std::vector<std::uint64_t> brute_force_quotas(const std::vector<std::uint64_t>& sizes,
                                                     std::uint64_t target) {
  const std::size_t n = sizes.size();
  std::uint64_t total = 0;
  for (auto s : sizes) total += s;
  std::vector<std::uint64_t> floors(n);
  std::uint64_t floor_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    floors[i] = target * sizes[i] / total;
    floor_sum += floors[i];
  }
  const std::uint64_t extra = target - floor_sum;
  std::vector<std::uint64_t> best;
  long double best_cost = -1;
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    if (static_cast<std::uint64_t>(__builtin_popcountll(mask)) != extra) continue;
    std::vector<std::uint64_t> q = floors;
    long double cost = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1ULL << i)) ++q[i];
      const long double scaled = static_cast<long double>(q[i]) * total -
                                 static_cast<long double>(target) * sizes[i];
      cost += scaled < 0 ? -scaled : scaled;
    }
    if (best_cost < 0 || cost < best_cost || (cost == best_cost && q > best)) {
      best_cost = cost;
      best = q;
    }
  }
  return best;
}

// Naive statistics: istringstream tokenization in the "C" locale, std::set
// vocabulary, full sort for the median.
struct NaiveStats {
  std::uint64_t vocab = 0;
  std::uint64_t median = 0;
  std::uint64_t max = 0;
  std::uint64_t tokens = 0;
};

inline NaiveStats naive_stats(const std::vector<std::string>& texts) {
  std::set<std::string> vocab;
  std::vector<std::uint64_t> lens;
  NaiveStats s;
  for (const auto& t : texts) {
    std::istringstream in(t);
    std::string tok;
    std::uint64_t n = 0;
    while (in >> tok) {
      vocab.insert(tok);
      ++n;
    }
    lens.push_back(n);
    s.tokens += n;
  }
  s.vocab = vocab.size();
  if (!lens.empty()) {
    std::sort(lens.begin(), lens.end());
    s.median = lens[(lens.size() - 1) / 2];
    s.max = lens.back();
  }
  return s;
}

// A ReviewService on an ephemeral loopback port, stopped on destruction.
class LiveService {
 public:
  LiveService(std::vector<cp::Assignment> a, cp::DocumentIndex docs, std::filesystem::path log,
              cp::ReviewServiceOptions opt = {})
      : service_(std::move(a), std::move(docs), std::move(log), std::move(opt)) {
    service_.bind(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveService() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  cp::ReviewService service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace test_support
