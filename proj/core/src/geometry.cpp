#include "depthforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "depthforge/util.hpp"

namespace depthforge {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Similarity transform taking points to zero centroid and mean distance sqrt(2).
Eigen::Matrix3d hartley_transform(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());

  double mean_dist = 0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0)) {
    throw Error(ErrorCode::DegenerateConfiguration, "all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;

  Eigen::Matrix3d T;
  T << s, 0, -s * centroid.x(),
       0, s, -s * centroid.y(),
       0, 0, 1;
  return T;
}

Eigen::Matrix3d enforce_rank2(const Eigen::Matrix3d& F) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// Pixel -> normalized image coordinates for a centred pinhole.
struct NormalizedPair {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

NormalizedPair normalize(const CameraModel& cam, const Correspondence& c) {
  const double inv_f = 1.0 / cam.focal;
  return {{(c.x1 - cam.cx) * inv_f, (c.y1 - cam.cy) * inv_f},
          {(c.x2 - cam.cx) * inv_f, (c.y2 - cam.cy) * inv_f}};
}

// Least-squares solution of the four projection equations of P_A = [I|0]
// and P_B = [R|t] in normalized coordinates.
Eigen::Vector3d triangulate_normalized(const RelativePose& pose, const NormalizedPair& m) {
  Eigen::Matrix<double, 4, 3> A;
  Eigen::Vector4d b;
  A.row(0) << -1, 0, m.a.x();
  A.row(1) << 0, -1, m.a.y();
  b(0) = 0;
  b(1) = 0;
  const auto& R = pose.R;
  const auto& t = pose.t;
  A.row(2) = m.b.x() * R.row(2) - R.row(0);
  A.row(3) = m.b.y() * R.row(2) - R.row(1);
  b(2) = t(0) - m.b.x() * t(2);
  b(3) = t(1) - m.b.y() * t(2);
  return A.colPivHouseholderQr().solve(b);
}

bool in_front(const RelativePose& pose, const Eigen::Vector3d& X) {
  const double za = X.z();
  const double zb = pose.R.row(2).dot(X) + pose.t(2);
  return std::isfinite(za) && std::isfinite(zb) && za > 0 && zb > 0;
}

double reprojection_error(const CameraModel& cam, const RelativePose& pose,
                          const Correspondence& c, const Eigen::Vector3d& X) {
  const Eigen::Vector3d Y = pose.R * X + pose.t;
  const double ua = cam.focal * X.x() / X.z() + cam.cx;
  const double va = cam.focal * X.y() / X.z() + cam.cy;
  const double ub = cam.focal * Y.x() / Y.z() + cam.cx;
  const double vb = cam.focal * Y.y() / Y.z() + cam.cy;
  const double ea = std::hypot(ua - c.x1, va - c.y1);
  const double eb = std::hypot(ub - c.x2, vb - c.y2);
  return 0.5 * (ea + eb);
}

ReconPoint make_point(const CameraModel& cam, const RelativePose& pose,
                      const Correspondence& c, const Eigen::Vector3d& X,
                      const Eigen::Matrix3d& F) {
  ReconPoint p;
  p.corr_id = c.id;
  p.x1 = c.x1;
  p.y1 = c.y1;
  p.x2 = c.x2;
  p.y2 = c.y2;
  p.X = X;
  p.depth_a = X.z();
  p.depth_b = pose.R.row(2).dot(X) + pose.t(2);
  p.reproj_err = reprojection_error(cam, pose, c, X);
  p.sampson = sampson_or_inf(F, c);

  const Eigen::Vector3d center_b = -pose.R.transpose() * pose.t;
  const Eigen::Vector3d to_a = -X;
  const Eigen::Vector3d to_b = center_b - X;
  p.ray_angle = std::atan2(to_a.cross(to_b).norm(), to_a.dot(to_b));
  return p;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d S;
  S << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return S;
}

std::vector<int> consensus(const Eigen::Matrix3d& F, std::span<const Correspondence> matches,
                           double threshold, double* residual_sum) {
  std::vector<int> idx;
  double sum = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const double d = sampson_or_inf(F, matches[i]);
    if (d < threshold) {
      idx.push_back(static_cast<int>(i));
      sum += d;
    }
  }
  if (residual_sum) *residual_sum = sum;
  return idx;
}

std::vector<Correspondence> gather(std::span<const Correspondence> matches,
                                   const std::vector<int>& idx) {
  std::vector<Correspondence> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(matches[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

void FramePair::validate() const {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidInput, pair_id + ": image dimensions must be positive");
  }
  if (matches.empty()) {
    throw Error(ErrorCode::InvalidInput, pair_id + ": no matches");
  }
  std::unordered_set<int> ids;
  for (const auto& m : matches) {
    const bool finite = std::isfinite(m.x1) && std::isfinite(m.y1) &&
                        std::isfinite(m.x2) && std::isfinite(m.y2);
    const bool inside = m.x1 >= 0 && m.x1 < width && m.y1 >= 0 && m.y1 < height &&
                        m.x2 >= 0 && m.x2 < width && m.y2 >= 0 && m.y2 < height;
    if (!finite || !inside) {
      throw Error(ErrorCode::InvalidInput,
                  pair_id + ": match " + std::to_string(m.id) + " outside the image");
    }
    if (!ids.insert(m.id).second) {
      throw Error(ErrorCode::InvalidInput, pair_id + ": duplicate match id " + std::to_string(m.id));
    }
  }
}

Eigen::Matrix3d CameraModel::K() const {
  Eigen::Matrix3d K;
  K << focal, 0, cx,
       0, focal, cy,
       0, 0, 1;
  return K;
}

FocalGrid FocalGrid::log_spaced(double lo, double hi, int count) {
  if (!(lo > 0) || !(hi >= lo) || count < 1) {
    throw Error(ErrorCode::InvalidInput, "focal grid needs 0 < lo <= hi and count >= 1");
  }
  FocalGrid grid;
  grid.focals.reserve(static_cast<std::size_t>(count));
  if (count == 1) {
    grid.focals.push_back(lo);
    return grid;
  }
  const double log_lo = std::log(lo);
  const double step = (std::log(hi) - log_lo) / (count - 1);
  for (int k = 0; k < count; ++k) grid.focals.push_back(std::exp(log_lo + step * k));
  return grid;
}

FocalGrid SfmConfig::focal_grid(int width, int height) const {
  const double m = std::max(width, height);
  return FocalGrid::log_spaced(focal_min_scale * m, focal_max_scale * m, focal_count);
}

Eigen::Matrix3d eight_point(std::span<const Correspondence> matches) {
  const std::size_t n = matches.size();
  if (n < 8) {
    throw Error(ErrorCode::InsufficientMatches,
                "8-point algorithm needs >= 8 matches, got " + std::to_string(n));
  }
  std::vector<Eigen::Vector2d> p1(n), p2(n);
  for (std::size_t i = 0; i < n; ++i) {
    p1[i] = {matches[i].x1, matches[i].y1};
    p2[i] = {matches[i].x2, matches[i].y2};
  }
  const Eigen::Matrix3d T1 = hartley_transform(p1);
  const Eigen::Matrix3d T2 = hartley_transform(p2);

  Eigen::Matrix<double, Eigen::Dynamic, 9> A(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d a = T1 * p1[i].homogeneous();
    const Eigen::Vector3d b = T2 * p2[i].homogeneous();
    A.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(),
                                           b.y() * a.x(), b.y() * a.y(), b.y(),
                                           a.x(), a.y(), 1.0;
  }

  Eigen::Matrix<double, 9, 1> f;
  if (n == 8) {
    // Minimal sample: the null vector is the column of Q orthogonal to range(A^T).
    const Eigen::Matrix<double, 9, 8> At = A.transpose();
    Eigen::ColPivHouseholderQR<Eigen::Matrix<double, 9, 8>> qr(At);
    const auto& R = qr.matrixR();
    if (!(std::abs(R(7, 7)) > 1e-10 * std::abs(R(0, 0)))) {
      throw Error(ErrorCode::DegenerateConfiguration, "linear system has rank < 8");
    }
    const Eigen::Matrix<double, 9, 9> Q = qr.householderQ();
    f = Q.col(8);
  } else {
    // Same right singular vectors as A, at fixed size.
    Eigen::HouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 9>> qr(A);
    const Eigen::Matrix<double, 9, 9> M = qr.matrixQR().topRows(9).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(M, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A one-dimensional null space requires the 8th singular value to be
    // clearly nonzero; otherwise the points are in a degenerate configuration.
    if (!(sv(7) > 1e-10 * sv(0))) {
      throw Error(ErrorCode::DegenerateConfiguration, "linear system has rank < 8");
    }
    f = svd.matrixV().col(8);
  }
  Eigen::Matrix3d Fn;
  Fn << f(0), f(1), f(2),
        f(3), f(4), f(5),
        f(6), f(7), f(8);
  Fn = enforce_rank2(Fn);

  Eigen::Matrix3d F = T2.transpose() * Fn * T1;
  F = enforce_rank2(F);
  const double norm = F.norm();
  if (!(norm > 0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::DegenerateConfiguration, "fundamental matrix vanished");
  }
  F /= norm;
  // Fix the sign so the estimate is a deterministic function of the data.
  Eigen::Index r = 0, c = 0;
  F.cwiseAbs().maxCoeff(&r, &c);
  if (F(r, c) < 0) F = -F;
  return F;
}

double sampson_or_inf(const Eigen::Matrix3d& F, const Correspondence& c) noexcept {
  const Eigen::Vector3d x1(c.x1, c.y1, 1.0);
  const Eigen::Vector3d x2(c.x2, c.y2, 1.0);
  const Eigen::Vector3d Fx1 = F * x1;
  const Eigen::Vector3d Ftx2 = F.transpose() * x2;
  const double num = x2.dot(Fx1);
  const double den = Fx1(0) * Fx1(0) + Fx1(1) * Fx1(1) + Ftx2(0) * Ftx2(0) + Ftx2(1) * Ftx2(1);
  if (!(den > 0)) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

double sampson_distance(const Eigen::Matrix3d& F, const Correspondence& c) {
  const double d = sampson_or_inf(F, c);
  if (std::isinf(d)) {
    throw Error(ErrorCode::ZeroDenominator,
                "epipolar line gradients vanish for match " + std::to_string(c.id));
  }
  return d;
}

FundamentalMatrix estimate_fundamental(std::span<const Correspondence> matches,
                                       const SfmConfig& cfg) {
  const std::size_t n = matches.size();
  if (n < 8) {
    throw Error(ErrorCode::InsufficientMatches,
                "RANSAC needs >= 8 matches, got " + std::to_string(n));
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  Eigen::Matrix3d best_F = Eigen::Matrix3d::Zero();
  bool have_model = false;

  long needed = cfg.ransac_max_iterations;
  std::array<std::size_t, 8> sample{};
  std::vector<Correspondence> minimal(8);
  for (long iter = 0; iter < needed; ++iter) {
    for (std::size_t k = 0; k < 8; ++k) {
      std::size_t candidate;
      do {
        candidate = pick(rng);
      } while (std::find(sample.begin(), sample.begin() + static_cast<long>(k), candidate) !=
               sample.begin() + static_cast<long>(k));
      sample[k] = candidate;
      minimal[k] = matches[candidate];
    }

    Eigen::Matrix3d F;
    try {
      F = eight_point(minimal);
    } catch (const Error&) {
      continue;
    }
    double cost = 0;
    auto inliers = consensus(F, matches, cfg.ransac_threshold, &cost);
    if (inliers.size() > best.size() || (inliers.size() == best.size() && cost < best_cost)) {
      best = std::move(inliers);
      best_cost = cost;
      best_F = F;
      have_model = true;

      const double w = static_cast<double>(best.size()) / static_cast<double>(n);
      const double p_good = std::pow(w, 8);
      if (p_good >= 1.0) {
        needed = std::min<long>(needed, iter + 1);
      } else if (p_good > 0) {
        // Compare as double first: for tiny inlier ratios k exceeds any long.
        const double k = std::ceil(std::log(1.0 - cfg.ransac_confidence) / std::log1p(-p_good));
        if (k < static_cast<double>(needed)) needed = std::max<long>(iter + 1, static_cast<long>(k));
      }
    }
  }
  if (!have_model || best.size() < 8) {
    throw Error(ErrorCode::DegenerateConfiguration, "RANSAC found no non-degenerate model");
  }

  // Refit on the consensus set until it stops growing.
  for (int round = 0; round < 10; ++round) {
    Eigen::Matrix3d F;
    try {
      F = eight_point(gather(matches, best));
    } catch (const Error&) {
      break;
    }
    double cost = 0;
    auto inliers = consensus(F, matches, cfg.ransac_threshold, &cost);
    if (inliers.size() < best.size() || (inliers.size() == best.size() && cost >= best_cost)) {
      break;
    }
    const bool same = inliers == best;
    best = std::move(inliers);
    best_cost = cost;
    best_F = F;
    if (same) break;
  }

  FundamentalMatrix out;
  out.F = best_F;
  out.inlier_ids.reserve(best.size());
  for (int i : best) out.inlier_ids.push_back(matches[static_cast<std::size_t>(i)].id);
  std::sort(out.inlier_ids.begin(), out.inlier_ids.end());
  return out;
}

std::array<RelativePose, 4> decompose_essential(const Eigen::Matrix3d& E) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  Eigen::Matrix3d V = svd.matrixV();
  if (U.determinant() < 0) U.col(2) *= -1;
  if (V.determinant() < 0) V.col(2) *= -1;

  Eigen::Matrix3d W;
  W << 0, -1, 0,
       1, 0, 0,
       0, 0, 1;
  const Eigen::Matrix3d R1 = U * W * V.transpose();
  const Eigen::Matrix3d R2 = U * W.transpose() * V.transpose();
  const Eigen::Vector3d t = U.col(2).normalized();
  return {RelativePose{R1, t}, RelativePose{R1, -t}, RelativePose{R2, t}, RelativePose{R2, -t}};
}

ReconPoint triangulate(const CameraModel& camera, const RelativePose& pose,
                       const Correspondence& c) {
  const Eigen::Vector3d X = triangulate_normalized(pose, normalize(camera, c));
  if (!in_front(pose, X)) {
    throw Error(ErrorCode::BehindCamera,
                "match " + std::to_string(c.id) + " triangulates behind a camera");
  }
  const Eigen::Matrix3d Kinv = camera.K().inverse();
  const Eigen::Matrix3d F = Kinv.transpose() * skew(pose.t) * pose.R * Kinv;
  return make_point(camera, pose, c, X, F);
}

FocalSearchResult search_focal(const FundamentalMatrix& fm, const FramePair& pair,
                               const FocalGrid& grid, const SfmConfig& cfg) {
  if (grid.focals.empty()) {
    throw Error(ErrorCode::InvalidInput, "empty focal grid");
  }
  std::vector<Correspondence> used;
  for (const auto& m : pair.matches) {
    if (std::binary_search(fm.inlier_ids.begin(), fm.inlier_ids.end(), m.id)) used.push_back(m);
  }
  if (used.empty()) {
    throw Error(ErrorCode::InsufficientMatches, "no inlier matches to triangulate");
  }
  const std::size_t n = used.size();
  const double min_cheiral = cfg.min_cheiral_frac * static_cast<double>(n);

  bool found = false;
  double best_err = std::numeric_limits<double>::infinity();
  CameraModel best_cam;
  RelativePose best_pose;
  std::vector<Eigen::Vector3d> best_X;
  std::vector<char> best_mask;

  std::vector<NormalizedPair> norm(n);
  std::vector<Eigen::Vector3d> X(n), cand_X(n);
  std::vector<char> mask(n), cand_mask(n);

  for (double f : grid.focals) {
    const CameraModel cam = CameraModel::centered(f, pair.width, pair.height);
    const Eigen::Matrix3d K = cam.K();
    const Eigen::Matrix3d E = K.transpose() * fm.F * K;
    for (std::size_t i = 0; i < n; ++i) norm[i] = normalize(cam, used[i]);

    std::size_t best_count = 0;
    int best_k = -1;
    const auto poses = decompose_essential(E);
    for (int k = 0; k < 4; ++k) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        cand_X[i] = triangulate_normalized(poses[static_cast<std::size_t>(k)], norm[i]);
        cand_mask[i] = in_front(poses[static_cast<std::size_t>(k)], cand_X[i]);
        count += static_cast<std::size_t>(cand_mask[i]);
      }
      if (count > best_count) {
        best_count = count;
        best_k = k;
        X.swap(cand_X);
        mask.swap(cand_mask);
      }
    }
    if (best_k < 0 || static_cast<double>(best_count) < min_cheiral) continue;

    const RelativePose& pose = poses[static_cast<std::size_t>(best_k)];
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) sum += reprojection_error(cam, pose, used[i], X[i]);
    }
    const double err = sum / static_cast<double>(best_count);
    if (err < best_err) {
      found = true;
      best_err = err;
      best_cam = cam;
      best_pose = pose;
      best_X = X;
      best_mask = mask;
    }
  }
  if (!found) {
    throw Error(ErrorCode::NoCheiralPose,
                "no focal candidate puts enough points in front of both cameras");
  }

  FocalSearchResult out;
  out.camera = best_cam;
  out.pose = best_pose;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_mask[i]) out.points.push_back(make_point(best_cam, best_pose, used[i], best_X[i], fm.F));
  }
  std::sort(out.points.begin(), out.points.end(),
            [](const ReconPoint& a, const ReconPoint& b) { return a.corr_id < b.corr_id; });
  out.mean_reproj = mean_reprojection(out.points);
  return out;
}

double mean_reprojection(std::span<const ReconPoint> points) {
  if (points.empty()) return 0;
  double sum = 0;
  for (const auto& p : points) sum += p.reproj_err;
  return sum / static_cast<double>(points.size());
}

Reconstruction reconstruct_pair(const FramePair& pair, const SfmConfig& cfg) {
  try {
    pair.validate();

    SfmConfig local = cfg;
    local.seed = mix_seed(cfg.seed, pair.pair_id);
    FundamentalMatrix fm = estimate_fundamental(pair.matches, local);
    if (static_cast<int>(fm.inlier_ids.size()) < cfg.min_inliers) {
      throw Error(ErrorCode::InsufficientMatches,
                  std::to_string(fm.inlier_ids.size()) + " consensus matches < min_inliers " +
                      std::to_string(cfg.min_inliers));
    }

    FocalSearchResult fs = search_focal(fm, pair, cfg.focal_grid(pair.width, pair.height), cfg);
    if (static_cast<int>(fs.points.size()) < cfg.min_inliers) {
      throw Error(ErrorCode::InsufficientMatches,
                  std::to_string(fs.points.size()) + " cheiral points < min_inliers " +
                      std::to_string(cfg.min_inliers));
    }

    std::vector<double> angles;
    angles.reserve(fs.points.size());
    for (const auto& p : fs.points) angles.push_back(p.ray_angle);
    const std::size_t mid = angles.size() / 2;
    std::nth_element(angles.begin(), angles.begin() + static_cast<long>(mid), angles.end());
    double median = angles[mid];
    if (angles.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(angles.begin(), angles.begin() + static_cast<long>(mid)));
    }
    if (median < cfg.min_median_parallax_deg * kPi / 180.0) {
      throw Error(ErrorCode::LowParallax, "median ray angle " +
                                              std::to_string(median * 180.0 / kPi) + " deg");
    }

    Reconstruction r;
    r.pair_id = pair.pair_id;
    r.width = pair.width;
    r.height = pair.height;
    r.camera = fs.camera;
    r.pose = fs.pose;
    r.fundamental = std::move(fm);
    r.points = std::move(fs.points);
    r.mean_reproj = mean_reprojection(r.points);
    return r;
  } catch (const RejectedPair&) {
    throw;
  } catch (const Error& e) {
    throw RejectedPair(pair.pair_id, e.code(), e.what());
  }
}

}  // namespace depthforge
