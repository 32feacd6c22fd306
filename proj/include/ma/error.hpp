#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ma {

enum class ErrorKind {
  invalid_input,
  parse,
  validation,
  format,
  domain,
  not_found,
  unsupported,
  fit_failed,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::parse:         return "parse";
    case ErrorKind::validation:    return "validation";
    case ErrorKind::format:        return "format";
    case ErrorKind::domain:        return "domain";
    case ErrorKind::not_found:     return "not-found";
    case ErrorKind::unsupported:   return "unsupported";
    case ErrorKind::fit_failed:    return "fit-failed";
  }
  return "unknown";
}

/// Single exception type for the library. Ingestion errors carry the
/// 1-based line number and the offending field when known.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> line = std::nullopt,
        std::string field = {})
      : std::runtime_error(compose(kind, message, line, field)),
        kind_(kind),
        message_(message),
        line_(line),
        field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }
  /// The message without the kind/line/field prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  static std::string compose(ErrorKind kind, const std::string& message,
                             std::optional<std::size_t> line,
                             const std::string& field) {
    std::string out = to_string(kind);
    if (line) out += " (line " + std::to_string(*line) + ")";
    if (!field.empty()) out += " [" + field + "]";
    out += ": " + message;
    return out;
  }

  ErrorKind kind_;
  std::string message_;
  std::optional<std::size_t> line_;
  std::string field_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace ma
