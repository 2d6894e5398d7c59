#pragma once

#include <stdexcept>
#include <string>

namespace unisync {

enum class ErrorKind {
  shape,
  config,
  io,
  bad_magic,
  version_mismatch,
  truncated,
  length_mismatch,
  duplicate_track,
  misaligned_track,
  range,
  divergence,
  spec_mismatch,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::length_mismatch: return "length_mismatch";
    case ErrorKind::duplicate_track: return "duplicate_track";
    case ErrorKind::misaligned_track: return "misaligned_track";
    case ErrorKind::range: return "range";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::spec_mismatch: return "spec_mismatch";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` tells callers which
/// contract was violated so they can map it to an exit code or a retry.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool is_format() const noexcept {
    return kind_ == ErrorKind::bad_magic || kind_ == ErrorKind::version_mismatch ||
           kind_ == ErrorKind::truncated || kind_ == ErrorKind::length_mismatch;
  }

 private:
  ErrorKind kind_;
};

#define UNISYNC_CHECK(cond, kind, msg)                 \
  do {                                                 \
    if (!(cond)) throw ::unisync::Error((kind), (msg)); \
  } while (0)

}  // namespace unisync
