#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deskbot {

enum class ErrorCode {
  kInvalidArgument,
  kDimension,
  kUnreachable,
  kOutOfBounds,
  kNoDepth,
  kEmptyUtterance,
  kShape,
  kUnbindable,
  kDegenerateCorpus,
  kEmptyDataset,
  kProtocol,
  kValidation,
  kTimeout,
  kConfig,
  kIo,
  kRejected,
};

std::string_view ErrorCodeName(ErrorCode code);

// Base exception for every typed failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace deskbot
