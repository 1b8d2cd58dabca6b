#include "depthforge/error.hpp"

namespace depthforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::NoCheiralPose: return "NoCheiralPose";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::LowParallax: return "LowParallax";
    case ErrorCode::FrustumExhausted: return "FrustumExhausted";
    case ErrorCode::NoEligiblePairs: return "NoEligiblePairs";
    case ErrorCode::NonFiniteCue: return "NonFiniteCue";
    case ErrorCode::EmptyCues: return "EmptyCues";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::TiedGroundTruth: return "TiedGroundTruth";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::ModelArchMismatch: return "ModelArchMismatch";
  }
  return "Unknown";
}

}  // namespace depthforge
