#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gcml {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kConfigMismatch,
  kOutOfRange,
  kIo,
  kBadMagic,
  kUnsupported,
  kTruncated,
  kCorrupt,
  kFrozen,
  kDegenerate,
};

std::string_view to_string(ErrorCode code);

// All recoverable failures in the library surface as gcml::Error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace gcml
