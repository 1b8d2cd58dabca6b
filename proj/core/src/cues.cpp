#include "depthforge/cues.hpp"

#include <algorithm>
#include <cmath>

namespace depthforge {

std::string_view to_string(CueName cue) {
  switch (cue) {
    case CueName::Coords2D: return "Coords2D";
    case CueName::Sampson: return "Sampson";
    case CueName::Angle: return "Angle";
    case CueName::Focal: return "Focal";
    case CueName::RepErr: return "RepErr";
  }
  return "Coords2D";
}

CueName cue_from_string(std::string_view s) {
  if (s == "Coords2D" || s == "2D") return CueName::Coords2D;
  if (s == "Sampson" || s == "Sam") return CueName::Sampson;
  if (s == "Angle" || s == "Ang") return CueName::Angle;
  if (s == "Focal") return CueName::Focal;
  if (s == "RepErr") return CueName::RepErr;
  throw Error(ErrorCode::InvalidInput, "unknown cue '" + std::string(s) + "'");
}

CueMask CueMask::without(const std::vector<CueName>& drop) {
  CueMask m;
  for (CueName c : drop) {
    switch (c) {
      case CueName::Coords2D: m.coords = false; break;
      case CueName::Sampson: m.sampson = false; break;
      case CueName::Angle: m.angle = false; break;
      case CueName::Focal: m.focal = false; break;
      case CueName::RepErr: m.reproj = false; break;
    }
  }
  return m;
}

int CueMask::point_dim() const {
  return (coords ? 4 : 0) + (sampson ? 1 : 0) + (angle ? 1 : 0) + (reproj && point_reproj ? 1 : 0);
}

int CueMask::recon_dim() const { return (focal ? 1 : 0) + (reproj ? 1 : 0); }

std::vector<CueName> CueMask::dropped() const {
  std::vector<CueName> out;
  if (!coords) out.push_back(CueName::Coords2D);
  if (!sampson) out.push_back(CueName::Sampson);
  if (!angle) out.push_back(CueName::Angle);
  if (!focal) out.push_back(CueName::Focal);
  if (!reproj) out.push_back(CueName::RepErr);
  return out;
}

CueVector extract_cues(const Reconstruction& recon) {
  const double scale = std::max(recon.width, recon.height);
  if (!(scale > 0)) throw Error(ErrorCode::InvalidInput, recon.pair_id + ": missing image size");
  const double w = recon.width;
  const double h = recon.height;

  CueVector cv;
  cv.id = recon.pair_id;
  cv.recon_cues.resize(kReconCueCount);
  cv.recon_cues << recon.camera.focal / scale, std::log1p(recon.mean_reproj);

  const auto n = static_cast<Eigen::Index>(recon.points.size());
  cv.point_cues.resize(n, kPointCueCount);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = recon.points[static_cast<std::size_t>(i)];
    cv.point_cues.row(i) << (2 * p.x1 - w) / scale, (2 * p.y1 - h) / scale,
                            (2 * p.x2 - w) / scale, (2 * p.y2 - h) / scale,
                            std::log1p(p.sampson), p.ray_angle, std::log1p(p.reproj_err);
  }
  if (!cv.recon_cues.allFinite() || !cv.point_cues.allFinite()) {
    throw Error(ErrorCode::NonFiniteCue, recon.pair_id + ": non-finite cue value");
  }
  return cv;
}

CueVector ablate_cues(const CueVector& cv, const CueMask& mask) {
  if (!(cv.mask == CueMask::all()) || cv.point_cues.cols() != kPointCueCount ||
      cv.recon_cues.size() != kReconCueCount) {
    throw Error(ErrorCode::InvalidInput, cv.id + ": ablation expects a full cue vector");
  }
  if (mask.point_dim() == 0) {
    throw Error(ErrorCode::EmptyCues, "every point-wise cue is dropped");
  }

  std::vector<Eigen::Index> cols;
  if (mask.coords) cols.insert(cols.end(), {0, 1, 2, 3});
  if (mask.sampson) cols.push_back(4);
  if (mask.angle) cols.push_back(5);
  if (mask.reproj && mask.point_reproj) cols.push_back(6);

  CueVector out;
  out.id = cv.id;
  out.mask = mask;
  out.point_cues.resize(cv.point_cues.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.point_cues.col(static_cast<Eigen::Index>(k)) = cv.point_cues.col(cols[k]);
  }
  out.recon_cues.resize(mask.recon_dim());
  Eigen::Index r = 0;
  if (mask.focal) out.recon_cues(r++) = cv.recon_cues(0);
  if (mask.reproj) out.recon_cues(r++) = cv.recon_cues(1);
  return out;
}

CueVector ablate_cues(const CueVector& cv, const std::vector<CueName>& drop) {
  return ablate_cues(cv, CueMask::without(drop));
}

CueVector conform_cues(const CueVector& cv, const CueMask& mask) {
  if (cv.mask == mask) return cv;
  return ablate_cues(cv, mask);
}

}  // namespace depthforge
