#pragma once

// Two-view epipolar geometry: robust fundamental-matrix estimation, focal
// length search, essential-matrix pose recovery and linear triangulation.
//
// Conventions
//   - Pixel coordinates, principal point at the image centre.
//   - Camera A is the world frame. A point X maps into camera B as R X + t.
//   - ||t|| = 1, so all depths are in baseline units.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "depthforge/error.hpp"

namespace depthforge {

struct Correspondence {
  double x1 = 0, y1 = 0;  // frame A
  double x2 = 0, y2 = 0;  // frame B
  int id = 0;
};

struct FramePair {
  std::string pair_id;
  int width = 0;
  int height = 0;
  std::vector<Correspondence> matches;

  /// Throws Error(InvalidInput) if dimensions, bounds or ids are inconsistent.
  void validate() const;
};

struct FundamentalMatrix {
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  std::vector<int> inlier_ids;  // sorted ascending
};

struct CameraModel {
  double focal = 0;
  double cx = 0;
  double cy = 0;

  static CameraModel centered(double focal, int width, int height) {
    return {focal, 0.5 * width, 0.5 * height};
  }
  Eigen::Matrix3d K() const;
};

struct RelativePose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::UnitX();
};

struct ReconPoint {
  int corr_id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  Eigen::Vector3d X = Eigen::Vector3d::Zero();
  double depth_a = 0;
  double depth_b = 0;
  double reproj_err = 0;  // pixels, mean over both views
  double sampson = 0;     // squared pixels
  double ray_angle = 0;   // radians
};

struct Reconstruction {
  std::string pair_id;
  int width = 0;
  int height = 0;
  CameraModel camera;
  RelativePose pose;
  FundamentalMatrix fundamental;
  std::vector<ReconPoint> points;  // ascending corr_id
  double mean_reproj = 0;
};

struct FocalGrid {
  std::vector<double> focals;

  /// `count` values log-spaced over [lo, hi], endpoints included.
  static FocalGrid log_spaced(double lo, double hi, int count);
};

struct SfmConfig {
  double ransac_threshold = 1.0;  // Sampson distance, squared px
  int ransac_max_iterations = 2000;
  double ransac_confidence = 0.999;
  int min_inliers = 30;
  double min_cheiral_frac = 0.8;
  double min_median_parallax_deg = 0.5;
  int focal_count = 40;
  double focal_min_scale = 0.3;  // multiples of max(width, height)
  double focal_max_scale = 3.0;
  std::uint64_t seed = 0;

  FocalGrid focal_grid(int width, int height) const;
};

struct FocalSearchResult {
  CameraModel camera;
  RelativePose pose;
  std::vector<ReconPoint> points;  // cheiral points only
  double mean_reproj = 0;
};

/// Normalized 8-point algorithm on all given matches, rank 2 enforced and
/// scaled to unit Frobenius norm. Throws InsufficientMatches (< 8) or
/// DegenerateConfiguration (null space of the linear system is not 1-D).
Eigen::Matrix3d eight_point(std::span<const Correspondence> matches);

/// RANSAC over minimal 8-point samples scored by Sampson distance, followed
/// by refits on the consensus set. Every returned inlier satisfies
/// sampson_distance(F, c) < cfg.ransac_threshold under the returned F.
FundamentalMatrix estimate_fundamental(std::span<const Correspondence> matches,
                                       const SfmConfig& cfg = {});

/// First-order geometric error of a correspondence under F, squared pixels.
/// Throws ZeroDenominator when both epipolar line gradients vanish.
double sampson_distance(const Eigen::Matrix3d& F, const Correspondence& c);

/// Same as sampson_distance but returns +inf instead of throwing.
double sampson_or_inf(const Eigen::Matrix3d& F, const Correspondence& c) noexcept;

/// The four (R, t) factorizations of an essential matrix. The input need not
/// have equal singular values; it is projected onto the essential manifold.
std::array<RelativePose, 4> decompose_essential(const Eigen::Matrix3d& E);

/// Linear triangulation of one correspondence with all per-point cues filled
/// in. Throws BehindCamera if either depth is not positive (or not finite).
ReconPoint triangulate(const CameraModel& camera, const RelativePose& pose,
                       const Correspondence& c);

/// Grid search over focal lengths: for each candidate the essential matrix
/// K^T F K is decomposed, the pose with the most cheiral points is kept, and
/// the candidate with the lowest mean reprojection error wins. Only matches
/// listed in F.inlier_ids are used. Throws NoCheiralPose.
FocalSearchResult search_focal(const FundamentalMatrix& F, const FramePair& pair,
                               const FocalGrid& grid, const SfmConfig& cfg = {});

/// estimate_fundamental -> drop non-consensus matches -> search_focal.
/// Any failure is rethrown as RejectedPair carrying the reason code.
Reconstruction reconstruct_pair(const FramePair& pair, const SfmConfig& cfg = {});

/// Arithmetic mean of the points' reprojection errors.
double mean_reprojection(std::span<const ReconPoint> points);

}  // namespace depthforge
