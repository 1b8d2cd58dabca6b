#pragma once

// Synthetic two-view scenes with known ground truth, plus the relative-depth
// quality metric that scores a reconstruction against that ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "depthforge/geometry.hpp"

namespace depthforge {

struct SceneSpec {
  int n_points = 200;
  double f_true = 640;
  int width = 640;
  int height = 480;
  Eigen::Vector3d baseline_dir = Eigen::Vector3d::UnitX();  // camera B centre, unit
  double rot_deg = 5;            // rotation angle; the axis is drawn from `seed`
  double near = 3;               // depth range in baseline units
  double far = 30;
  double noise_px = 0;           // Gaussian std-dev, every coordinate of both frames
  double outlier_frac = 0;
  double moving_frac = 0;
  double moving_mag = 0.5;       // world units
  double outlier_min_sampson = 16;  // outliers are kept this far (px^2) from the true epipolar geometry
  std::uint64_t seed = 0;

  void validate() const;
};

enum class MatchLabel { Inlier, Outlier, Moving };

std::string_view to_string(MatchLabel label);
MatchLabel label_from_string(std::string_view s);

struct GroundTruthPoint {
  int id = 0;
  double depth_a = 0;
  double depth_b = 0;
  MatchLabel label = MatchLabel::Inlier;
};

struct GroundTruth {
  std::string pair_id;
  double f_true = 0;
  RelativePose pose;
  std::vector<GroundTruthPoint> points;  // indexed by correspondence id

  const GroundTruthPoint& at(int id) const;
};

struct SyntheticPair {
  FramePair pair;
  GroundTruth truth;
};

/// Throws FrustumExhausted if n_points visible points cannot be placed within
/// 10 * n_points attempts.
SyntheticPair generate_scene(const SceneSpec& spec, const std::string& pair_id = "synthetic");

/// Ranges for the randomized corpus recipe; every scene draws its own spec.
struct CorpusRecipe {
  double noise_max = 2.0;
  double outlier_max = 0.3;
  double moving_max = 0.4;
  double rot_min_deg = 1;
  double rot_max_deg = 15;
  int n_min = 50;
  int n_max = 400;
  double focal_min_scale = 0.6;  // f_true drawn log-uniformly, multiples of max(W, H)
  double focal_max_scale = 1.6;
  double moving_mag = 0.5;
  double near = 3;
  double far = 30;
  int width = 640;
  int height = 480;
};

SceneSpec sample_scene_spec(const CorpusRecipe& recipe, std::uint64_t seed);

/// Fraction of eligible point pairs whose reconstructed depth order matches
/// the ground truth, averaged over views A and B. Pairs whose ground-truth
/// depth ratio is below `margin` are not eligible. Throws NoEligiblePairs.
double gt_quality(const Reconstruction& recon, const GroundTruth& gt, double margin = 1.02);

/// Ordering agreement for one view given parallel arrays of reconstructed and
/// true depths. Returns {agreeing, eligible}.
struct OrderingCount {
  std::uint64_t agree = 0;
  std::uint64_t eligible = 0;
};
OrderingCount ordering_agreement(const std::vector<double>& recon_depth,
                                 const std::vector<double>& true_depth, double margin);

}  // namespace depthforge
