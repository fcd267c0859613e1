#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace curate {

enum class Errc {
  kMalformedRecord,
  kDuplicateId,
  kDimensionMismatch,
  kNonFiniteComponent,
  kInvalidRecord,
  kKTooLarge,
  kMissingEmbedding,
  kInsufficientPool,
  kTemplateError,
  kRateLimited,
  kAuthError,
  kTimeout,
  kServerError,
  kMalformedResponse,
  kUnparseableRating,
  kUnparseableVerdict,
  kShapeMismatch,
  kDivergenceDetected,
  kMissingScore,
  kSingleClass,
  kNoPositives,
  kEmptyReference,
  kInvalidArgument,
  kIoError,
  kConfigError,
  kNotFound,
  kConflict,
};

/// Stable name used in structured error output, e.g. "MalformedRecord".
std::string_view ErrcName(Errc code);

/// Single exception type for every failure the toolkit reports. The code
/// identifies the failure class; the message carries the specifics
/// (line number, id, expected/got dimensions, ...).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return ErrcName(code_); }

 private:
  Errc code_;
};

}  // namespace curate
