#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dlo {

enum class ErrorCode {
  kDegenerateInput,
  kIoError,
  kFormatError,
  kOutOfBounds,
  kInvalidNeighborhood,
  kNearPiRotation,
  kNoSupport,
  kSingularNormalMatrix,
  kInsufficientResiduals,
  kNotConverged,
  kNoGroundPlane,
  kLengthMismatch,
  kParseError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kInvalidNeighborhood: return "InvalidNeighborhood";
    case ErrorCode::kNearPiRotation: return "NearPiRotation";
    case ErrorCode::kNoSupport: return "NoSupport";
    case ErrorCode::kSingularNormalMatrix: return "SingularNormalMatrix";
    case ErrorCode::kInsufficientResiduals: return "InsufficientResiduals";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNoGroundPlane: return "NoGroundPlane";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dlo
