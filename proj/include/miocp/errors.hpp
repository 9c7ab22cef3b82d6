#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace miocp {

enum class ErrorCode {
  // input validation
  NotSymmetric,
  NonPositiveDefinite,
  DimensionMismatch,
  NonPositiveEpsilon,
  InvalidArgument,
  // numerics
  NotPsd,
  IllConditioned,
  NonInvertibleA,
  ImageMismatch,
  Diverged,
};

enum class ErrorCategory { Validation, Numerical };

inline ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSymmetric:
    case ErrorCode::NonPositiveDefinite:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NonPositiveEpsilon:
    case ErrorCode::InvalidArgument:
      return ErrorCategory::Validation;
    default:
      return ErrorCategory::Numerical;
  }
}

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonPositiveEpsilon: return "NonPositiveEpsilon";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotPsd: return "NotPsd";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NonInvertibleA: return "NonInvertibleA";
    case ErrorCode::ImageMismatch: return "ImageMismatch";
    case ErrorCode::Diverged: return "Diverged";
  }
  return "Unknown";
}

/// Every failure raised by the library. `field` names the offending input
/// (e.g. "R") and `stage` the time index, when they apply.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {},
        std::optional<std::size_t> stage = std::nullopt)
      : std::runtime_error(format(code, message, field, stage)),
        code_(code),
        field_(std::move(field)),
        stage_(stage) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }
  std::optional<std::size_t> stage() const noexcept { return stage_; }
  bool is_validation() const noexcept { return category(code_) == ErrorCategory::Validation; }

 private:
  static std::string format(ErrorCode code, const std::string& message, const std::string& field,
                            std::optional<std::size_t> stage) {
    std::string out = to_string(code);
    if (!field.empty() || stage) {
      out += "(";
      if (!field.empty()) out += field;
      if (stage) out += (field.empty() ? "" : ", ") + std::string("k=") + std::to_string(*stage);
      out += ")";
    }
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::string field_;
  std::optional<std::size_t> stage_;
};

}  // namespace miocp
