#include "mtrack/errors.hpp"

namespace mtrack {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::SingularCamera: return "SingularCamera";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::ParallelRays: return "ParallelRays";
    case ErrorCode::CameraSeesNothing: return "CameraSeesNothing";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BranchDiscontinuity: return "BranchDiscontinuity";
    case ErrorCode::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::NoSolvableEpoch: return "NoSolvableEpoch";
    case ErrorCode::InconsistentCameraIds: return "InconsistentCameraIds";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::EpochMismatch: return "EpochMismatch";
  }
  return "Unknown";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::SchemaError:
    case ErrorCode::IoError:
    case ErrorCode::WindowOutOfRange:
    case ErrorCode::InconsistentCameraIds:
    case ErrorCode::EpochMismatch:
    case ErrorCode::UntrainedModel:
      return true;
    default:
      return false;
  }
}

}  // namespace mtrack
