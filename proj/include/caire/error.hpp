#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caire {

enum class ErrorCode {
  kIo,
  kParse,
  kChecksum,
  kDimensionMismatch,
  kDanglingReference,
  kDuplicateId,
  kNotFound,
  kInvalidArgument,
  kEmpty,
  kProtocol,
  kTransport,
  kTimeout,
  kUnsupported,
  kUndefined,
  kKeyMismatch,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the engine. `stage` is filled in by the
// attribution pipeline ("vel", "context", "scoring") when an error crosses
// a component boundary; it is empty otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, bool retryable = false)
      : std::runtime_error(message), code_(code), retryable_(retryable) {}

  ErrorCode code() const noexcept { return code_; }
  bool retryable() const noexcept { return retryable_; }
  const std::string& stage() const noexcept { return stage_; }

  Error with_stage(std::string stage) const {
    Error e(code_, "[" + stage + "] " + what(), retryable_);
    e.stage_ = std::move(stage);
    return e;
  }

 private:
  ErrorCode code_;
  bool retryable_;
  std::string stage_;
};

}  // namespace caire
