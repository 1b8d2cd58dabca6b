#pragma once

// Geometric cues fed to the quality network. Nothing here looks at pixel
// intensities; everything is derived from a Reconstruction record.

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "depthforge/geometry.hpp"

namespace depthforge {

enum class CueName { Coords2D, Sampson, Angle, Focal, RepErr };

std::string_view to_string(CueName cue);
CueName cue_from_string(std::string_view s);  // accepts "Coords2D" / "2D", "Sampson" / "Sam", ...

/// Which cues are kept. `point_reproj` = false reproduces the three point cues
/// (coordinates, Sampson, angle) without the per-point reprojection column.
struct CueMask {
  bool coords = true;
  bool sampson = true;
  bool angle = true;
  bool focal = true;
  bool reproj = true;        // both the mean (reconstruction-wise) and per-point column
  bool point_reproj = true;  // per-point column only; ignored when reproj is false

  static CueMask all() { return {}; }
  static CueMask without(const std::vector<CueName>& drop);

  int point_dim() const;
  int recon_dim() const;
  std::vector<CueName> dropped() const;
  bool operator==(const CueMask&) const = default;
};

/// Column layout of the full (unablated) point cue matrix.
inline constexpr int kPointCueCount = 7;
inline constexpr int kReconCueCount = 2;

struct CueVector {
  std::string id;
  Eigen::VectorXd recon_cues;  // (focal_norm, mean_reproj_norm) before ablation
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> point_cues;
  CueMask mask;

  Eigen::Index n() const { return point_cues.rows(); }
};

/// Normalized cues. Throws NonFiniteCue if any entry is NaN or infinite.
CueVector extract_cues(const Reconstruction& recon);

/// Removes the dropped cues from a full cue vector. Throws EmptyCues when no
/// point cue would remain, InvalidInput when `cv` is already ablated.
CueVector ablate_cues(const CueVector& cv, const CueMask& mask);
CueVector ablate_cues(const CueVector& cv, const std::vector<CueName>& drop);

/// Returns `cv` unchanged if it already carries `mask`, otherwise ablates it.
CueVector conform_cues(const CueVector& cv, const CueMask& mask);

}  // namespace depthforge
