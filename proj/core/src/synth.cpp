#include "depthforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "depthforge/util.hpp"

namespace depthforge {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kExactPairLimit = 2000;
constexpr std::uint64_t kSampledPairs = 2'000'000;

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = {g(rng), g(rng), g(rng)};
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d S;
  S << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return S;
}

int count_of(double frac, int n) {
  return static_cast<int>(std::floor(frac * n + 1e-9));
}

bool inside(double x, double y, int w, int h) {
  return x >= 0 && x < w && y >= 0 && y < h;
}

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidInput, "SceneSpec: " + msg); };
  if (n_points < 1) fail("n_points must be >= 1");
  if (!(f_true > 0)) fail("f_true must be positive");
  if (width <= 0 || height <= 0) fail("image dimensions must be positive");
  if (!(baseline_dir.norm() > 0)) fail("baseline_dir must be nonzero");
  if (!(near > 0) || !(far > near)) fail("need 0 < near < far");
  if (!(noise_px >= 0)) fail("noise_px must be >= 0");
  if (!(outlier_frac >= 0 && outlier_frac < 1)) fail("outlier_frac must be in [0, 1)");
  if (!(moving_frac >= 0 && moving_frac < 1)) fail("moving_frac must be in [0, 1)");
  if (!(outlier_frac + moving_frac < 1)) fail("outlier_frac + moving_frac must be < 1");
  if (!(moving_mag >= 0)) fail("moving_mag must be >= 0");
}

std::string_view to_string(MatchLabel label) {
  switch (label) {
    case MatchLabel::Inlier: return "inlier";
    case MatchLabel::Outlier: return "outlier";
    case MatchLabel::Moving: return "moving";
  }
  return "inlier";
}

MatchLabel label_from_string(std::string_view s) {
  if (s == "inlier") return MatchLabel::Inlier;
  if (s == "outlier") return MatchLabel::Outlier;
  if (s == "moving") return MatchLabel::Moving;
  throw Error(ErrorCode::ParseError, "unknown match label '" + std::string(s) + "'");
}

const GroundTruthPoint& GroundTruth::at(int id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < points.size() && points[static_cast<std::size_t>(id)].id == id) {
    return points[static_cast<std::size_t>(id)];
  }
  auto it = std::find_if(points.begin(), points.end(), [id](const auto& p) { return p.id == id; });
  if (it == points.end()) {
    throw Error(ErrorCode::InvalidInput, "ground truth has no correspondence " + std::to_string(id));
  }
  return *it;
}

SyntheticPair generate_scene(const SceneSpec& spec, const std::string& pair_id) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_px > 0 ? spec.noise_px : 1.0);

  const Eigen::Vector3d axis = random_unit(rng);
  const Eigen::Matrix3d R =
      Eigen::AngleAxisd(spec.rot_deg * kPi / 180.0, axis).toRotationMatrix();
  const Eigen::Vector3d center_b = spec.baseline_dir.normalized();
  const Eigen::Vector3d t = -R * center_b;

  const CameraModel cam = CameraModel::centered(spec.f_true, spec.width, spec.height);
  const Eigen::Matrix3d Kinv = cam.K().inverse();
  const Eigen::Matrix3d F_true = Kinv.transpose() * skew(t) * R * Kinv;

  const int n = spec.n_points;
  std::vector<MatchLabel> labels(static_cast<std::size_t>(n), MatchLabel::Inlier);
  const int n_out = count_of(spec.outlier_frac, n);
  const int n_mov = count_of(spec.moving_frac, n);
  std::fill_n(labels.begin(), n_out, MatchLabel::Outlier);
  std::fill_n(labels.begin() + n_out, n_mov, MatchLabel::Moving);
  std::shuffle(labels.begin(), labels.end(), rng);

  const double near3 = spec.near * spec.near * spec.near;
  const double far3 = spec.far * spec.far * spec.far;
  const long budget = 10L * n;
  long attempts = 0;

  SyntheticPair out;
  out.pair.pair_id = pair_id;
  out.pair.width = spec.width;
  out.pair.height = spec.height;
  out.pair.matches.reserve(static_cast<std::size_t>(n));
  out.truth.pair_id = pair_id;
  out.truth.f_true = spec.f_true;
  out.truth.pose = {R, t};
  out.truth.points.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const MatchLabel label = labels[static_cast<std::size_t>(i)];
    for (;;) {
      if (attempts++ >= budget) {
        throw Error(ErrorCode::FrustumExhausted,
                    "placed " + std::to_string(i) + " of " + std::to_string(n) + " points in " +
                        std::to_string(budget) + " attempts");
      }
      // Uniform in the frustum volume of camera A between near and far.
      const double u = unit(rng) * spec.width;
      const double v = unit(rng) * spec.height;
      const double z = std::cbrt(near3 + unit(rng) * (far3 - near3));
      const Eigen::Vector3d X = z * Eigen::Vector3d((u - cam.cx) / cam.focal, (v - cam.cy) / cam.focal, 1.0);

      Eigen::Vector3d X_seen_by_b = X;
      if (label == MatchLabel::Moving) X_seen_by_b = X + spec.moving_mag * random_unit(rng);
      const Eigen::Vector3d Y = R * X_seen_by_b + t;
      if (!(Y.z() > 0)) continue;
      const double u2 = cam.focal * Y.x() / Y.z() + cam.cx;
      const double v2 = cam.focal * Y.y() / Y.z() + cam.cy;
      if (!inside(u2, v2, spec.width, spec.height)) continue;

      Correspondence c{u, v, u2, v2, i};
      if (spec.noise_px > 0) {
        c.x1 += noise(rng);
        c.y1 += noise(rng);
        c.x2 += noise(rng);
        c.y2 += noise(rng);
      }
      if (label == MatchLabel::Outlier) {
        c.x2 = unit(rng) * spec.width;
        c.y2 = unit(rng) * spec.height;
        if (sampson_or_inf(F_true, c) < spec.outlier_min_sampson) continue;
      }
      if (!inside(c.x1, c.y1, spec.width, spec.height) || !inside(c.x2, c.y2, spec.width, spec.height)) {
        continue;
      }

      out.pair.matches.push_back(c);
      const Eigen::Vector3d Y_static = R * X + t;
      out.truth.points.push_back(
          {i, z, label == MatchLabel::Moving ? Y.z() : Y_static.z(), label});
      break;
    }
  }
  return out;
}

SceneSpec sample_scene_spec(const CorpusRecipe& recipe, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, "scene-spec"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SceneSpec s;
  s.width = recipe.width;
  s.height = recipe.height;
  s.noise_px = uniform(0, recipe.noise_max);
  s.outlier_frac = uniform(0, recipe.outlier_max);
  s.moving_frac = uniform(0, recipe.moving_max);
  s.rot_deg = uniform(recipe.rot_min_deg, recipe.rot_max_deg);
  s.n_points = std::uniform_int_distribution<int>(recipe.n_min, recipe.n_max)(rng);
  const double m = std::max(recipe.width, recipe.height);
  s.f_true = m * std::exp(uniform(std::log(recipe.focal_min_scale), std::log(recipe.focal_max_scale)));
  const double phi = uniform(0, 2 * kPi);
  s.baseline_dir = Eigen::Vector3d(std::cos(phi), std::sin(phi), uniform(-0.3, 0.3)).normalized();
  s.moving_mag = recipe.moving_mag;
  s.near = recipe.near;
  s.far = recipe.far;
  s.seed = mix_seed(seed, "scene");
  return s;
}

OrderingCount ordering_agreement(const std::vector<double>& recon_depth,
                                 const std::vector<double>& true_depth, double margin) {
  const std::size_t n = recon_depth.size();
  OrderingCount count;
  auto visit = [&](std::size_t i, std::size_t j) {
    const double gi = true_depth[i];
    const double gj = true_depth[j];
    if (std::max(gi, gj) / std::min(gi, gj) < margin) return;
    ++count.eligible;
    const double dr = recon_depth[i] - recon_depth[j];
    const double dg = gi - gj;
    if ((dr > 0 && dg > 0) || (dr < 0 && dg < 0)) ++count.agree;
  };
  if (n <= kExactPairLimit) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) visit(i, j);
  } else {
    std::mt19937_64 rng(0x5eed0fa11ULL);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::uint64_t s = 0; s < kSampledPairs;) {
      const std::size_t i = pick(rng);
      const std::size_t j = pick(rng);
      if (i == j) continue;
      visit(i, j);
      ++s;
    }
  }
  return count;
}

double gt_quality(const Reconstruction& recon, const GroundTruth& gt, double margin) {
  const std::size_t n = recon.points.size();
  std::vector<double> ra(n), rb(n), ga(n), gb(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = recon.points[k];
    const auto& g = gt.at(p.corr_id);
    ra[k] = p.depth_a;
    rb[k] = p.depth_b;
    ga[k] = g.depth_a;
    gb[k] = g.depth_b;
  }
  const OrderingCount a = ordering_agreement(ra, ga, margin);
  const OrderingCount b = ordering_agreement(rb, gb, margin);
  if (a.eligible == 0 && b.eligible == 0) {
    throw Error(ErrorCode::NoEligiblePairs,
                recon.pair_id + ": every point pair is within the ordering margin");
  }
  // A view with no eligible pairs carries no information; use the other one.
  if (a.eligible == 0) return static_cast<double>(b.agree) / static_cast<double>(b.eligible);
  if (b.eligible == 0) return static_cast<double>(a.agree) / static_cast<double>(a.eligible);
  const double qa = static_cast<double>(a.agree) / static_cast<double>(a.eligible);
  const double qb = static_cast<double>(b.agree) / static_cast<double>(b.eligible);
  return 0.5 * (qa + qb);
}

}  // namespace depthforge
