#pragma once

// Human review of clusters: exemplar selection, the append-only decision
// log and the HTTP API the annotation frontend talks to.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "httplib.h"

#include "corpus_prune/clustering.hpp"
#include "corpus_prune/corpus_io.hpp"
#include "corpus_prune/document.hpp"
#include "corpus_prune/embedding.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/log.hpp"

namespace corpus_prune {

inline constexpr std::size_t kDefaultExemplarCount = 5;
inline constexpr std::size_t kDefaultExcerptChars = 2000;
inline constexpr std::uint32_t kDecisionLogFormatVersion = 1;

// In-memory id -> document lookup over a manifest.
class DocumentIndex {
 public:
  DocumentIndex() = default;
  explicit DocumentIndex(std::vector<Document> docs) : docs_(std::move(docs)) {
    by_id_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) by_id_.emplace(docs_[i].id, i);
  }

  static DocumentIndex from_manifest(const ShardManifest& m) { return DocumentIndex(read_documents(m)); }

  const Document* find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
  }

  const Document& at(std::string_view id) const {
    if (const auto* d = find(id)) return *d;
    throw Error(ErrorKind::not_found, "unknown document id \"" + std::string(id) + "\"");
  }

  std::size_t size() const noexcept { return docs_.size(); }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Members of each cluster as positions into the assignment list.
class ClusterIndex {
 public:
  explicit ClusterIndex(std::span<const Assignment> assignments, std::uint32_t k = 0) {
    std::uint32_t max_id = 0;
    for (const auto& a : assignments) max_id = std::max(max_id, a.cluster + 1);
    members_.resize(std::max(k, max_id));
    for (std::size_t i = 0; i < assignments.size(); ++i) members_[assignments[i].cluster].push_back(i);
    mean_.assign(members_.size(), 0.0);
    for (std::size_t c = 0; c < members_.size(); ++c) {
      double s = 0.0;
      for (auto i : members_[c]) s += assignments[i].distance;
      if (!members_[c].empty()) mean_[c] = s / static_cast<double>(members_[c].size());
    }
  }

  std::uint32_t k() const noexcept { return static_cast<std::uint32_t>(members_.size()); }
  const std::vector<std::size_t>& members(std::uint32_t c) const { return members_.at(c); }
  double mean_distance(std::uint32_t c) const { return mean_.at(c); }

 private:
  std::vector<std::vector<std::size_t>> members_;
  std::vector<double> mean_;
};

struct Exemplar {
  std::string doc_id;
  float distance = 0.0f;
  std::string excerpt;

  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

struct ExemplarSet {
  std::uint32_t cluster_id = 0;
  std::size_t size = 0;
  std::vector<Exemplar> closest;   // ascending distance
  std::vector<Exemplar> farthest;  // descending distance
};

// Picks the m closest and m farthest members of one cluster. Members are
// totally ordered by (distance, position in the assignment list); a cluster
// with fewer than 2m members fills `closest` first and never repeats a
// document in `farthest`.
inline ExemplarSet exemplars(std::span<const Assignment> assignments, const ClusterIndex& index,
                             const DocumentIndex& docs, std::uint32_t cluster_id,
                             std::size_t m = kDefaultExemplarCount,
                             std::size_t excerpt_chars = kDefaultExcerptChars) {
  if (m == 0) throw Error(ErrorKind::invalid_argument, "m must be >= 1");
  if (cluster_id >= index.k() || index.members(cluster_id).empty())
    throw Error(ErrorKind::not_found, "unknown cluster " + std::to_string(cluster_id));
  std::vector<std::size_t> members = index.members(cluster_id);
  auto less = [&](std::size_t a, std::size_t b) {
    const float da = assignments[a].distance, db = assignments[b].distance;
    return da != db ? da < db : a < b;
  };
  const std::size_t n = members.size();
  const std::size_t n_close = std::min(m, n);
  const std::size_t n_far = std::min(m, n - n_close);
  std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_close),
                    members.end(), less);
  std::partial_sort(members.begin() + static_cast<std::ptrdiff_t>(n_close),
                    members.begin() + static_cast<std::ptrdiff_t>(n_close + n_far), members.end(),
                    [&](std::size_t a, std::size_t b) { return less(b, a); });

  auto make = [&](std::size_t i) {
    const auto& a = assignments[i];
    const auto& doc = docs.at(a.doc_id);
    return Exemplar{a.doc_id, a.distance, std::string(truncate_chars(doc.text, excerpt_chars))};
  };
  ExemplarSet out;
  out.cluster_id = cluster_id;
  out.size = n;
  for (std::size_t i = 0; i < n_close; ++i) out.closest.push_back(make(members[i]));
  for (std::size_t i = 0; i < n_far; ++i) out.farthest.push_back(make(members[n_close + i]));
  return out;
}

inline Json exemplar_set_to_json(const ExemplarSet& e) {
  auto list = [](const std::vector<Exemplar>& xs) {
    Json arr = Json::array();
    for (const auto& x : xs)
      arr.push_back({{"doc_id", x.doc_id}, {"distance", x.distance}, {"excerpt", x.excerpt}});
    return arr;
  };
  return {{"cluster_id", e.cluster_id}, {"size", e.size}, {"closest", list(e.closest)},
          {"farthest", list(e.farthest)}};
}

enum class Verdict { keep, drop };

// Exclusion categories observed when pruning web-scale corpora, plus
// `other` and the keep-only `not_applicable`.
enum class Reason {
  near_duplicates,
  pornography,
  navigation_bars,
  product_specifications,
  named_entity_lists,
  other,
  not_applicable,
};

inline constexpr std::array<std::string_view, 7> kReasonNames = {
    "near_duplicates", "pornography", "navigation_bars",  "product_specifications",
    "named_entity_lists", "other",     "not_applicable"};

inline std::string_view to_string(Verdict v) { return v == Verdict::keep ? "keep" : "drop"; }
inline std::string_view to_string(Reason r) { return kReasonNames[static_cast<std::size_t>(r)]; }

inline Verdict parse_verdict(std::string_view s) {
  if (s == "keep") return Verdict::keep;
  if (s == "drop") return Verdict::drop;
  throw Error(ErrorKind::validation, "verdict must be \"keep\" or \"drop\", got \"" + std::string(s) + "\"");
}

inline Reason parse_reason(std::string_view s) {
  for (std::size_t i = 0; i < kReasonNames.size(); ++i)
    if (kReasonNames[i] == s) return static_cast<Reason>(i);
  throw Error(ErrorKind::validation, "unknown reason \"" + std::string(s) + "\"");
}

using Timestamp = std::chrono::sys_seconds;

inline std::string format_timestamp(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd(day);
  const std::chrono::hh_mm_ss hms(t - day);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long long>(hms.seconds().count()));
  return buf;
}

inline Timestamp parse_timestamp(std::string_view s) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char z = 0;
  const std::string str(s);
  if (std::sscanf(str.c_str(), "%d-%u-%uT%u:%u:%u%c", &y, &mo, &d, &h, &mi, &se, &z) != 7 || z != 'Z')
    throw Error(ErrorKind::parse, "timestamp is not ISO-8601 UTC: \"" + str + "\"");
  const std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(mo), std::chrono::day(d)};
  if (!ymd.ok() || h > 23 || mi > 59 || se > 60)
    throw Error(ErrorKind::parse, "timestamp out of range: \"" + str + "\"");
  return std::chrono::sys_days(ymd) + std::chrono::hours(h) + std::chrono::minutes(mi) +
         std::chrono::seconds(se);
}

inline Timestamp now_utc() {
  return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
}

struct ClusterDecision {
  std::uint32_t cluster_id = 0;
  Verdict verdict = Verdict::keep;
  Reason reason = Reason::not_applicable;
  std::optional<std::string> note;
  std::string annotator;
  Timestamp timestamp{};

  friend bool operator==(const ClusterDecision&, const ClusterDecision&) = default;

  void validate() const {
    if (verdict == Verdict::keep && reason != Reason::not_applicable)
      throw Error(ErrorKind::validation, "a keep verdict must use reason not_applicable");
    if (verdict == Verdict::drop && reason == Reason::not_applicable)
      throw Error(ErrorKind::validation, "a drop verdict needs a reason other than not_applicable");
    if (annotator.empty()) throw Error(ErrorKind::validation, "annotator must be non-empty");
  }
};

inline Json decision_to_json(const ClusterDecision& d) {
  Json j;
  j["cluster_id"] = d.cluster_id;
  j["verdict"] = to_string(d.verdict);
  j["reason"] = to_string(d.reason);
  j["note"] = d.note ? Json(*d.note) : Json(nullptr);
  j["annotator"] = d.annotator;
  j["timestamp"] = format_timestamp(d.timestamp);
  return j;
}

inline ClusterDecision decision_from_json(const Json& j) {
  try {
    ClusterDecision d;
    d.cluster_id = j.at("cluster_id").get<std::uint32_t>();
    d.verdict = parse_verdict(j.at("verdict").get<std::string>());
    d.reason = parse_reason(j.at("reason").get<std::string>());
    if (j.contains("note") && !j["note"].is_null()) d.note = j["note"].get<std::string>();
    d.annotator = j.at("annotator").get<std::string>();
    d.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
    return d;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, std::string("malformed decision: ") + e.what());
  }
}

using DecisionView = std::map<std::uint32_t, ClusterDecision>;

// Latest decision per cluster, later entries superseding earlier ones.
inline DecisionView current_view(std::span<const ClusterDecision> history) {
  DecisionView view;
  for (const auto& d : history) view.insert_or_assign(d.cluster_id, d);
  return view;
}

// Append-only JSONL log. Appends take an exclusive flock and first absorb
// any lines other writers added, so the in-memory history always equals a
// replay of the file.
class DecisionLog {
 public:
  explicit DecisionLog(std::filesystem::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorKind::io, "cannot open decision log " + path_.string() + ": " + std::strerror(errno));
    std::lock_guard lock(mu_);
    FileLock flock_guard(fd_);
    absorb();
  }

  DecisionLog(const DecisionLog&) = delete;
  DecisionLog& operator=(const DecisionLog&) = delete;
  ~DecisionLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void record(const ClusterDecision& d) {
    d.validate();
    const std::string line = decision_to_json(d).dump() + "\n";
    std::lock_guard lock(mu_);
    FileLock flock_guard(fd_);
    absorb();
    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t rc = ::write(fd_, line.data() + written, line.size() - written);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::io, "append to " + path_.string() + " failed: " + std::strerror(errno));
      }
      written += static_cast<std::size_t>(rc);
    }
    ::fsync(fd_);
    consumed_ += line.size();
    history_.push_back(d);
  }

  std::vector<ClusterDecision> history() const {
    std::lock_guard lock(mu_);
    return history_;
  }

  DecisionView current() const {
    std::lock_guard lock(mu_);
    return current_view(history_);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

  static std::vector<ClusterDecision> replay(const std::filesystem::path& path) {
    std::vector<ClusterDecision> out;
    if (!std::filesystem::exists(path)) return out;
    LineReader r(path);
    std::uint64_t line_no = 0;
    while (auto line = r.next()) {
      ++line_no;
      if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
      out.push_back(parse_line(*line, path, line_no));
    }
    return out;
  }

 private:
  struct FileLock {
    explicit FileLock(int fd) : fd(fd) {
      while (::flock(fd, LOCK_EX) != 0)
        if (errno != EINTR) throw Error(ErrorKind::io, std::string("flock failed: ") + std::strerror(errno));
    }
    ~FileLock() { ::flock(fd, LOCK_UN); }
    int fd;
  };

  static ClusterDecision parse_line(const std::string& line, const std::filesystem::path& path,
                                    std::uint64_t line_no) {
    try {
      return decision_from_json(Json::parse(line));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }

  // Reads complete lines past consumed_. Caller holds both locks.
  void absorb() {
    const auto size = static_cast<std::uint64_t>(::lseek(fd_, 0, SEEK_END));
    if (size <= consumed_) return;
    std::string tail(size - consumed_, '\0');
    std::size_t got = 0;
    while (got < tail.size()) {
      const ssize_t rc = ::pread(fd_, tail.data() + got, tail.size() - got,
                                 static_cast<off_t>(consumed_ + got));
      if (rc < 0 && errno == EINTR) continue;
      if (rc <= 0) throw Error(ErrorKind::io, "read of " + path_.string() + " failed");
      got += static_cast<std::size_t>(rc);
    }
    std::size_t start = 0;
    while (true) {
      const auto nl = tail.find('\n', start);
      if (nl == std::string::npos) break;
      const std::string line = tail.substr(start, nl - start);
      ++lines_;
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        history_.push_back(parse_line(line, path_, lines_));
      start = nl + 1;
    }
    consumed_ += start;
  }

  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::uint64_t consumed_ = 0;
  std::uint64_t lines_ = 0;
  std::vector<ClusterDecision> history_;
};

inline void record_decision(const ClusterDecision& d, const std::filesystem::path& log_path) {
  DecisionLog(log_path).record(d);
}

struct ReviewProgress {
  std::uint32_t k = 0;
  std::uint32_t decided = 0;
  std::uint32_t undecided = 0;
  std::uint32_t kept = 0;
  std::uint32_t dropped = 0;
  std::map<std::string, std::uint32_t> drops_by_reason;
};

// Counts over clusters [0, k) using only the current decision per cluster.
inline ReviewProgress review_progress(const DecisionView& view, std::uint32_t k) {
  ReviewProgress p;
  p.k = k;
  for (const auto& [cluster, d] : view) {
    if (cluster >= k) continue;
    ++p.decided;
    if (d.verdict == Verdict::keep) {
      ++p.kept;
    } else {
      ++p.dropped;
      ++p.drops_by_reason[std::string(to_string(d.reason))];
    }
  }
  p.undecided = k - p.decided;
  return p;
}

inline Json progress_to_json(const ReviewProgress& p) {
  Json reasons = Json::object();
  for (const auto& [r, n] : p.drops_by_reason) reasons[r] = n;
  return {{"k", p.k},           {"decided", p.decided}, {"undecided", p.undecided},
          {"kept", p.kept},     {"dropped", p.dropped}, {"drops_by_reason", reasons}};
}

struct ReviewServiceOptions {
  std::uint32_t k = 0;  // 0: one past the largest assigned cluster id
  std::size_t default_m = kDefaultExemplarCount;
  std::size_t excerpt_chars = kDefaultExcerptChars;
  std::optional<std::filesystem::path> static_dir;
  std::function<Timestamp()> clock = now_utc;
};

struct HttpReply {
  int status = 200;
  Json body;
};

// Endpoint logic, independent of the HTTP transport so it can be tested
// directly; bind() wires it into an httplib::Server.
class ReviewService {
 public:
  ReviewService(std::vector<Assignment> assignments, DocumentIndex docs, std::filesystem::path log_path,
                ReviewServiceOptions options = {})
      : assignments_(std::move(assignments)),
        index_(assignments_, options.k),
        docs_(std::move(docs)),
        log_(std::move(log_path)),
        opt_(std::move(options)) {}

  std::uint32_t k() const noexcept { return index_.k(); }
  DecisionLog& decision_log() noexcept { return log_; }

  HttpReply list_clusters() const {
    const auto view = log_.current();
    Json arr = Json::array();
    for (std::uint32_t c = 0; c < index_.k(); ++c) {
      Json item{{"cluster_id", c},
                {"size", index_.members(c).size()},
                {"mean_distance", index_.mean_distance(c)},
                {"decided", view.contains(c)}};
      if (auto it = view.find(c); it != view.end()) {
        item["verdict"] = to_string(it->second.verdict);
        item["reason"] = to_string(it->second.reason);
      }
      arr.push_back(std::move(item));
    }
    return {200, arr};
  }

  HttpReply get_exemplars(std::uint32_t cluster, std::optional<std::size_t> m) const {
    return guarded([&] {
      return HttpReply{200, exemplar_set_to_json(exemplars(assignments_, index_, docs_, cluster,
                                                           m.value_or(opt_.default_m), opt_.excerpt_chars))};
    });
  }

  HttpReply get_document(std::string_view id) const {
    return guarded([&] { return HttpReply{200, document_to_json(docs_.at(id))}; });
  }

  HttpReply post_decision(std::uint32_t cluster, std::string_view body) {
    return guarded([&] {
      if (cluster >= index_.k())
        throw Error(ErrorKind::not_found, "unknown cluster " + std::to_string(cluster));
      Json j;
      try {
        j = Json::parse(body);
      } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("request body is not JSON: ") + e.what());
      }
      if (!j.is_object()) throw Error(ErrorKind::parse, "request body must be a JSON object");
      ClusterDecision d;
      d.cluster_id = cluster;
      try {
        d.verdict = parse_verdict(j.at("verdict").get<std::string>());
        d.reason = j.contains("reason") && !j["reason"].is_null()
                       ? parse_reason(j["reason"].get<std::string>())
                       : Reason::not_applicable;
        if (j.contains("note") && !j["note"].is_null()) d.note = j["note"].get<std::string>();
        d.annotator = j.value("annotator", std::string{});
      } catch (const Json::exception& e) {
        throw Error(ErrorKind::validation, std::string("invalid decision: ") + e.what());
      }
      d.timestamp = opt_.clock();
      log_.record(d);
      return HttpReply{200, decision_to_json(d)};
    });
  }

  HttpReply progress() const { return {200, progress_to_json(review_progress(log_.current(), index_.k()))}; }

  void bind(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/api/clusters", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, list_clusters());
    });
    server.Get(R"(/api/clusters/(\d+)/exemplars)",
               [this, send](const httplib::Request& req, httplib::Response& res) {
                 std::optional<std::size_t> m;
                 if (req.has_param("m")) {
                   try {
                     m = std::stoul(req.get_param_value("m"));
                   } catch (const std::exception&) {
                     send(res, {400, {{"error", "m must be a positive integer"}}});
                     return;
                   }
                 }
                 send(res, get_exemplars(parse_cluster(req.matches[1]), m));
               });
    server.Get(R"(/api/docs/(.+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_document(req.matches[1].str()));
    });
    server.Post(R"(/api/clusters/(\d+)/decision)",
                [this, send](const httplib::Request& req, httplib::Response& res) {
                  send(res, post_decision(parse_cluster(req.matches[1]), req.body));
                });
    server.Get("/api/progress", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, progress());
    });
    if (opt_.static_dir) server.set_mount_point("/", opt_.static_dir->string());
  }

 private:
  static std::uint32_t parse_cluster(const std::string& s) {
    const auto v = std::stoull(s);
    return v > UINT32_MAX ? UINT32_MAX : static_cast<std::uint32_t>(v);
  }

  template <class Fn>
  static HttpReply guarded(Fn&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      int status = 500;
      switch (e.kind()) {
        case ErrorKind::validation: status = 422; break;
        case ErrorKind::not_found: status = 404; break;
        case ErrorKind::invalid_argument:
        case ErrorKind::parse: status = 400; break;
        default: break;
      }
      return HttpReply{status, {{"error", e.what()}, {"kind", to_string(e.kind())}}};
    }
  }

  std::vector<Assignment> assignments_;
  ClusterIndex index_;
  DocumentIndex docs_;
  DecisionLog log_;
  ReviewServiceOptions opt_;
};

}  // namespace corpus_prune
