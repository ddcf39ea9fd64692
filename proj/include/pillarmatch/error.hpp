#pragma once

#include <stdexcept>
#include <string>

namespace pillarmatch {

// Error categories. Each maps to a CLI exit code (see tools/pillarmatch.cpp).
enum class ErrorKind {
  io,
  format,
  argument,
  shape,
  numeric,
  degenerate_point,
  degenerate_geometry,
  insufficient_points,
  insufficient_correspondences,
  config,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::argument: return "argument";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::degenerate_point: return "degenerate-point";
    case ErrorKind::degenerate_geometry: return "degenerate-geometry";
    case ErrorKind::insufficient_points: return "insufficient-points";
    case ErrorKind::insufficient_correspondences: return "insufficient-correspondences";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace pillarmatch
