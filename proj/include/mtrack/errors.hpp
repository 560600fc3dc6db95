#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtrack {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  SingularCamera,
  DegenerateConfiguration,
  InsufficientPoints,
  ParallelRays,
  CameraSeesNothing,
  SchemaError,
  IoError,
  BranchDiscontinuity,
  WindowOutOfRange,
  DivergedLoss,
  UntrainedModel,
  NoSolvableEpoch,
  InconsistentCameraIds,
  NonFiniteCost,
  EpochMismatch,
};

std::string_view to_string(ErrorCode code);

/// True for errors caused by malformed input (files, arguments, schemas),
/// false for numerical failures.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mtrack
