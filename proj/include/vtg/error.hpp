#pragma once

#include <stdexcept>
#include <string>

namespace vtg {

enum class ErrorCode {
  InvalidArgument = 1,
  Shape = 2,
  Io = 3,
  Parse = 4,
  NonFinite = 5,
  Internal = 6,
};

// Every failure raised by the library carries a code so the C layer can map
// it onto a status value without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what, ErrorCode code = ErrorCode::InvalidArgument) {
  if (!cond) throw Error(code, what);
}

}  // namespace vtg
