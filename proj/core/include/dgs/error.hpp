// error.hpp
#pragma once

#include <stdexcept>
#include <string>

namespace dgs {

/// Failure category. Values double as CLI exit codes.
enum class ErrorCode : int {
  config = 2,         // bad config value / unknown key / usage
  io = 3,             // missing or unreadable/unwritable file
  invalid_input = 4,  // data violates an operation precondition
  uninpaintable = 5,  // mask leaves a frame with nothing to fill from
  divergence = 6,     // optimization loss increased persistently
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// Throw Error(code, message) when condition does not hold.
inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace dgs
