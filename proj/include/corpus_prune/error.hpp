#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace corpus_prune {

enum class ErrorKind {
  invalid_argument,
  io,
  parse,
  validation,
  not_found,
  provider,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::provider: return "provider";
  }
  return "unknown";
}

// All library failures surface as this exception; kind() lets the CLI map
// them to exit codes and the review service to HTTP statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace corpus_prune
