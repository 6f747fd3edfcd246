#pragma once

// Minimal process-wide logging. Human-readable lines by default, JSON lines
// when json mode is on. The sink is swappable so tests and the acceptance
// suite can capture run logs.

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace corpus_prune::log {

enum class Level { debug, info, warn, error };

inline std::string_view level_name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "info";
}

struct Settings {
  bool json = false;
  std::ostream* sink = &std::cerr;
  std::mutex mu;
};

inline Settings& settings() {
  static Settings s;
  return s;
}

inline void set_sink(std::ostream& os) { settings().sink = &os; }
inline void set_json(bool on) { settings().json = on; }

inline void write(Level level, std::string_view msg,
                  const nlohmann::ordered_json& fields = nlohmann::ordered_json::object()) {
  auto& s = settings();
  std::lock_guard lock(s.mu);
  if (s.json) {
    nlohmann::ordered_json line;
    line["level"] = level_name(level);
    line["msg"] = msg;
    if (!fields.empty()) line["fields"] = fields;
    *s.sink << line.dump() << '\n';
  } else {
    *s.sink << '[' << level_name(level) << "] " << msg;
    if (!fields.empty()) *s.sink << ' ' << fields.dump();
    *s.sink << '\n';
  }
  s.sink->flush();
}

inline void info(std::string_view msg, const nlohmann::ordered_json& f = nlohmann::ordered_json::object()) {
  write(Level::info, msg, f);
}
inline void warn(std::string_view msg, const nlohmann::ordered_json& f = nlohmann::ordered_json::object()) {
  write(Level::warn, msg, f);
}
inline void error(std::string_view msg, const nlohmann::ordered_json& f = nlohmann::ordered_json::object()) {
  write(Level::error, msg, f);
}

}  // namespace corpus_prune::log
