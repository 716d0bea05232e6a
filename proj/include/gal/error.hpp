#pragma once

#include <stdexcept>
#include <string>

namespace gal {

enum class ErrorKind {
  dimension,
  parse,
  config,
  integrity,
  transport,
  format,
  index,
  data,
  state,
  numeric,
  analysis,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::parse: return "parse";
    case ErrorKind::config: return "config";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::transport: return "transport";
    case ErrorKind::format: return "format";
    case ErrorKind::index: return "index";
    case ErrorKind::data: return "data";
    case ErrorKind::state: return "state";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::analysis: return "analysis";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gal
