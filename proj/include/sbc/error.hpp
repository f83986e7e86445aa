#pragma once

#include <stdexcept>
#include <string>

namespace sbc {

enum class ErrorCode {
  bad_magic,
  bad_version,
  truncated,
  non_finite,
  bad_dims,
  bad_argument,
  degenerate_range,
  overflow,
  corrupt_stream,
  out_of_bounds,
  protocol,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::bad_version: return "bad_version";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::bad_dims: return "bad_dims";
    case ErrorCode::bad_argument: return "bad_argument";
    case ErrorCode::degenerate_range: return "degenerate_range";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::corrupt_stream: return "corrupt_stream";
    case ErrorCode::out_of_bounds: return "out_of_bounds";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sbc
