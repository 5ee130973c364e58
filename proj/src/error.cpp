#include "x2face/error.hpp"

namespace x2face {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kResolutionMismatch: return "resolution_mismatch";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kTensorShapeMismatch: return "tensor_shape_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInvalidDataset: return "invalid_dataset";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kNotFitted: return "not_fitted";
    case ErrorCode::kUnknownLayer: return "unknown_layer";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

}  // namespace x2face
