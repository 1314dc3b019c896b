#include "deskbot/common/error.hpp"

namespace deskbot {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kUnreachable: return "unreachable";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kNoDepth: return "no-depth";
    case ErrorCode::kEmptyUtterance: return "empty-utterance";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kUnbindable: return "unbindable";
    case ErrorCode::kDegenerateCorpus: return "degenerate-corpus";
    case ErrorCode::kEmptyDataset: return "empty-dataset";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kRejected: return "rejected";
  }
  return "unknown";
}

}  // namespace deskbot
