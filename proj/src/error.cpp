#include "curate/error.hpp"

namespace curate {

std::string_view ErrcName(Errc code) {
  switch (code) {
    case Errc::kMalformedRecord: return "MalformedRecord";
    case Errc::kDuplicateId: return "DuplicateId";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kNonFiniteComponent: return "NonFiniteComponent";
    case Errc::kInvalidRecord: return "InvalidRecord";
    case Errc::kKTooLarge: return "KTooLarge";
    case Errc::kMissingEmbedding: return "MissingEmbedding";
    case Errc::kInsufficientPool: return "InsufficientPool";
    case Errc::kTemplateError: return "TemplateError";
    case Errc::kRateLimited: return "RateLimited";
    case Errc::kAuthError: return "AuthError";
    case Errc::kTimeout: return "Timeout";
    case Errc::kServerError: return "ServerError";
    case Errc::kMalformedResponse: return "MalformedResponse";
    case Errc::kUnparseableRating: return "UnparseableRating";
    case Errc::kUnparseableVerdict: return "UnparseableVerdict";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kDivergenceDetected: return "DivergenceDetected";
    case Errc::kMissingScore: return "MissingScore";
    case Errc::kSingleClass: return "SingleClass";
    case Errc::kNoPositives: return "NoPositives";
    case Errc::kEmptyReference: return "EmptyReference";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kIoError: return "IoError";
    case Errc::kConfigError: return "ConfigError";
    case Errc::kNotFound: return "NotFound";
    case Errc::kConflict: return "Conflict";
  }
  return "Unknown";
}

}  // namespace curate
