#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace depthforge {

/// Machine-readable failure reasons shared by every stage of the pipeline.
enum class ErrorCode {
  InvalidInput,
  ParseError,
  InsufficientMatches,
  DegenerateConfiguration,
  ZeroDenominator,
  NoCheiralPose,
  BehindCamera,
  LowParallax,
  FrustumExhausted,
  NoEligiblePairs,
  NonFiniteCue,
  EmptyCues,
  DimMismatch,
  TiedGroundTruth,
  NonFiniteGradient,
  EmptyCorpus,
  MissingPrediction,
  TargetUnreachable,
  ModelArchMismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A frame pair that could not be turned into a usable reconstruction.
/// `reason()` is the code of the underlying failure.
class RejectedPair : public Error {
 public:
  RejectedPair(std::string pair_id, ErrorCode reason, const std::string& detail)
      : Error(reason, pair_id + ": " + detail), pair_id_(std::move(pair_id)) {}

  const std::string& pair_id() const noexcept { return pair_id_; }
  ErrorCode reason() const noexcept { return code(); }

 private:
  std::string pair_id_;
};

}  // namespace depthforge
