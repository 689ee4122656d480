#pragma once

#include <stdexcept>
#include <string>

namespace aptmle {

enum class ErrorCode {
  InvalidArgument = 1,
  Io,
  Parse,
  Config,
  Data,
  Numeric,
};

// Every failure inside the library is reported as an Error; the C API maps
// the code onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace aptmle
