#include "depthforge/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace depthforge {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& msg) { throw Error(ErrorCode::ParseError, msg); }

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    parse_fail(std::string("invalid JSON: ") + e.what());
  }
}

template <typename T>
T get(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) parse_fail(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    parse_fail(std::string("field '") + key + "': " + e.what());
  }
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view tok, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) parse_fail(where + ": bad number '" + std::string(tok) + "'");
  return v;
}

json mat3(const Eigen::Matrix3d& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

Eigen::Matrix3d mat3(const json& a) {
  if (!a.is_array() || a.size() != 9) parse_fail("expected 9 floats");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a.at(static_cast<std::size_t>(3 * r + c)).get<double>();
  return m;
}

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3(const json& a) {
  if (!a.is_array() || a.size() != 3) parse_fail("expected 3 floats");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

json mask_json(const CueMask& m) {
  json drop = json::array();
  for (CueName c : m.dropped()) drop.push_back(std::string(to_string(c)));
  return {{"drop", drop}, {"point_reproj", m.point_reproj}};
}

CueMask mask_from(const json& j) {
  std::vector<CueName> drop;
  for (const auto& s : get<json>(j, "drop")) drop.push_back(cue_from_string(s.get<std::string>()));
  CueMask m = CueMask::without(drop);
  m.point_reproj = get<bool>(j, "point_reproj");
  return m;
}

// Applies the keys of `j` to fields registered in `fields`; unknown keys throw.
template <typename Setter>
void apply_object(const json& j, const std::string& section, Setter&& set) {
  if (!j.is_object()) parse_fail("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!set(it.key(), it.value())) parse_fail("unknown config key '" + section + "." + it.key() + "'");
    } catch (const json::exception& e) {
      parse_fail("config key '" + section + "." + it.key() + "': " + e.what());
    }
  }
}

}  // namespace

FramePair parse_match_file(std::istream& in) {
  FramePair pair;
  std::string line;
  if (!std::getline(in, line)) parse_fail("empty match file");
  std::istringstream header(line);
  std::string tag;
  long n = -1;
  if (!(header >> tag >> pair.pair_id >> pair.width >> pair.height >> n) || tag != "PAIR" || n < 0) {
    parse_fail("bad header, expected 'PAIR <pair_id> <width> <height> <n_matches>'");
  }
  pair.matches.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) parse_fail(pair.pair_id + ": expected " + std::to_string(n) + " matches, got " + std::to_string(i));
    std::istringstream row(line);
    std::string tok[4];
    std::string extra;
    if (!(row >> tok[0] >> tok[1] >> tok[2] >> tok[3]) || (row >> extra)) {
      parse_fail(pair.pair_id + ": line " + std::to_string(i + 2) + " needs exactly 4 numbers");
    }
    const std::string where = pair.pair_id + " line " + std::to_string(i + 2);
    pair.matches.push_back({parse_double(tok[0], where), parse_double(tok[1], where),
                            parse_double(tok[2], where), parse_double(tok[3], where), static_cast<int>(i)});
  }
  return pair;
}

FramePair read_match_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) parse_fail("cannot open " + path.string());
  return parse_match_file(in);
}

void write_match_file(std::ostream& out, const FramePair& pair) {
  out << "PAIR " << pair.pair_id << ' ' << pair.width << ' ' << pair.height << ' '
      << pair.matches.size() << '\n';
  for (const auto& m : pair.matches) {
    out << shortest(m.x1) << ' ' << shortest(m.y1) << ' ' << shortest(m.x2) << ' ' << shortest(m.y2) << '\n';
  }
}

std::string reconstruction_to_json(const Reconstruction& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    points.push_back({{"id", p.corr_id}, {"x1", p.x1}, {"y1", p.y1}, {"x2", p.x2}, {"y2", p.y2},
                      {"X", vec3(p.X)}, {"depth_a", p.depth_a}, {"depth_b", p.depth_b},
                      {"reproj", p.reproj_err}, {"sampson", p.sampson}, {"angle", p.ray_angle}});
  }
  json j = {{"pair_id", r.pair_id},
            {"width", r.width},
            {"height", r.height},
            {"focal", r.camera.focal},
            {"mean_reproj", r.mean_reproj},
            {"pose", {{"R", mat3(r.pose.R)}, {"t", vec3(r.pose.t)}}},
            {"F", mat3(r.fundamental.F)},
            {"inlier_ids", r.fundamental.inlier_ids},
            {"points", points}};
  return j.dump();
}

Reconstruction reconstruction_from_json(std::string_view line) {
  const json j = parse_json(line);
  Reconstruction r;
  try {
    r.pair_id = get<std::string>(j, "pair_id");
    r.width = get<int>(j, "width");
    r.height = get<int>(j, "height");
    r.camera = CameraModel::centered(get<double>(j, "focal"), r.width, r.height);
    r.mean_reproj = get<double>(j, "mean_reproj");
    const json pose = get<json>(j, "pose");
    r.pose.R = mat3(get<json>(pose, "R"));
    r.pose.t = vec3(get<json>(pose, "t"));
    r.fundamental.F = mat3(get<json>(j, "F"));
    r.fundamental.inlier_ids = get<std::vector<int>>(j, "inlier_ids");
    for (const auto& p : get<json>(j, "points")) {
      ReconPoint q;
      q.corr_id = get<int>(p, "id");
      q.x1 = get<double>(p, "x1");
      q.y1 = get<double>(p, "y1");
      q.x2 = get<double>(p, "x2");
      q.y2 = get<double>(p, "y2");
      q.X = vec3(get<json>(p, "X"));
      q.depth_a = get<double>(p, "depth_a");
      q.depth_b = get<double>(p, "depth_b");
      q.reproj_err = get<double>(p, "reproj");
      q.sampson = get<double>(p, "sampson");
      q.ray_angle = get<double>(p, "angle");
      r.points.push_back(q);
    }
  } catch (const json::exception& e) {
    parse_fail(std::string("reconstruction record: ") + e.what());
  }
  return r;
}

std::string ground_truth_to_json(const GroundTruth& gt) {
  json points = json::array();
  for (const auto& p : gt.points) {
    points.push_back({{"id", p.id}, {"depth_a", p.depth_a}, {"depth_b", p.depth_b},
                      {"label", std::string(to_string(p.label))}});
  }
  json j = {{"pair_id", gt.pair_id},
            {"f_true", gt.f_true},
            {"pose", {{"R", mat3(gt.pose.R)}, {"t", vec3(gt.pose.t)}}},
            {"points", points}};
  return j.dump();
}

GroundTruth ground_truth_from_json(std::string_view text) {
  const json j = parse_json(text);
  GroundTruth gt;
  gt.pair_id = get<std::string>(j, "pair_id");
  gt.f_true = get<double>(j, "f_true");
  const json pose = get<json>(j, "pose");
  gt.pose.R = mat3(get<json>(pose, "R"));
  gt.pose.t = vec3(get<json>(pose, "t"));
  for (const auto& p : get<json>(j, "points")) {
    gt.points.push_back({get<int>(p, "id"), get<double>(p, "depth_a"), get<double>(p, "depth_b"),
                         label_from_string(get<std::string>(p, "label"))});
  }
  return gt;
}

std::string scene_spec_to_json(const SceneSpec& s) {
  json j = {{"n_points", s.n_points},       {"f_true", s.f_true},
            {"width", s.width},             {"height", s.height},
            {"baseline_dir", vec3(s.baseline_dir)},
            {"rot_deg", s.rot_deg},         {"depth_range", {s.near, s.far}},
            {"noise_px", s.noise_px},       {"outlier_frac", s.outlier_frac},
            {"moving_frac", s.moving_frac}, {"moving_mag", s.moving_mag},
            {"outlier_min_sampson", s.outlier_min_sampson},
            {"seed", s.seed}};
  return j.dump();
}

SceneSpec scene_spec_from_json(std::string_view text) {
  const json j = parse_json(text);
  SceneSpec s;
  s.n_points = get<int>(j, "n_points");
  s.f_true = get<double>(j, "f_true");
  s.width = get<int>(j, "width");
  s.height = get<int>(j, "height");
  s.baseline_dir = vec3(get<json>(j, "baseline_dir"));
  s.rot_deg = get<double>(j, "rot_deg");
  const auto range = get<std::vector<double>>(j, "depth_range");
  if (range.size() != 2) parse_fail("depth_range needs two values");
  s.near = range[0];
  s.far = range[1];
  s.noise_px = get<double>(j, "noise_px");
  s.outlier_frac = get<double>(j, "outlier_frac");
  s.moving_frac = get<double>(j, "moving_frac");
  s.moving_mag = get<double>(j, "moving_mag");
  s.outlier_min_sampson = get<double>(j, "outlier_min_sampson");
  s.seed = get<std::uint64_t>(j, "seed");
  return s;
}

std::string cues_to_json(const CueVector& cv, std::optional<double> quality) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < cv.point_cues.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < cv.point_cues.cols(); ++c) row.push_back(cv.point_cues(r, c));
    rows.push_back(std::move(row));
  }
  json recon = json::array();
  for (Eigen::Index k = 0; k < cv.recon_cues.size(); ++k) recon.push_back(cv.recon_cues(k));
  json j = {{"id", cv.id}, {"mask", mask_json(cv.mask)}, {"recon_cues", recon}, {"point_cues", rows}};
  if (quality) j["gt_quality"] = *quality;
  return j.dump();
}

ParsedCues cues_from_json(std::string_view line) {
  const json j = parse_json(line);
  ParsedCues out;
  auto& cv = out.cues;
  cv.id = get<std::string>(j, "id");
  cv.mask = mask_from(get<json>(j, "mask"));
  const auto recon = get<std::vector<double>>(j, "recon_cues");
  cv.recon_cues = Eigen::Map<const Eigen::VectorXd>(recon.data(), static_cast<Eigen::Index>(recon.size()));
  const auto rows = get<std::vector<std::vector<double>>>(j, "point_cues");
  const auto width = static_cast<Eigen::Index>(cv.mask.point_dim());
  cv.point_cues.resize(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != width) parse_fail(cv.id + ": point cue row has wrong width");
    for (Eigen::Index c = 0; c < width; ++c) cv.point_cues(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  if (cv.recon_cues.size() != cv.mask.recon_dim()) parse_fail(cv.id + ": recon cue count does not match mask");
  if (j.contains("gt_quality") && !j["gt_quality"].is_null()) out.quality = j["gt_quality"].get<double>();
  return out;
}

std::string model_to_json(const QaModel& model) {
  auto layers = [&](const std::vector<LayerShape>& ls) {
    json arr = json::array();
    for (const auto& l : ls) {
      std::vector<double> w(model.params.begin() + static_cast<long>(l.weight_offset()),
                            model.params.begin() + static_cast<long>(l.bias_offset()));
      std::vector<double> b(model.params.begin() + static_cast<long>(l.bias_offset()),
                            model.params.begin() + static_cast<long>(l.bias_offset() + static_cast<std::size_t>(l.out)));
      arr.push_back({{"in", l.in}, {"out", l.out}, {"relu", l.relu}, {"weights", w}, {"bias", b}});
    }
    return arr;
  };
  const auto& a = model.arch;
  json j = {{"format_version", a.format_version},
            {"arch", {{"mask", mask_json(a.mask)},
                      {"point_in", a.point_in()},
                      {"recon_in", a.recon_in()},
                      {"point_widths", a.point_widths},
                      {"recon_widths", a.recon_widths},
                      {"head_widths", a.head_widths}}},
            {"layers", {{"point", layers(model.point_layers)},
                        {"recon", layers(model.recon_layers)},
                        {"head", layers(model.head_layers)}}}};
  return j.dump(1);
}

QaModel model_from_json(std::string_view text) {
  const json j = parse_json(text);
  const int version = get<int>(j, "format_version");
  if (version != 1) parse_fail("unsupported model format_version " + std::to_string(version));
  const json arch_j = get<json>(j, "arch");
  QaArch arch;
  arch.format_version = version;
  arch.mask = mask_from(get<json>(arch_j, "mask"));
  arch.point_widths = get<std::vector<int>>(arch_j, "point_widths");
  arch.recon_widths = get<std::vector<int>>(arch_j, "recon_widths");
  arch.head_widths = get<std::vector<int>>(arch_j, "head_widths");
  if (get<int>(arch_j, "point_in") != arch.point_in() || get<int>(arch_j, "recon_in") != arch.recon_in()) {
    parse_fail("model input dims disagree with its cue mask");
  }

  QaModel model = QaModel::zeros(arch);
  const json layers = get<json>(j, "layers");
  auto load = [&](const char* name, const std::vector<LayerShape>& shapes) {
    const json arr = get<json>(layers, name);
    if (arr.size() != shapes.size()) parse_fail(std::string("layer count mismatch in '") + name + "'");
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      const auto& l = shapes[k];
      const auto w = get<std::vector<double>>(arr[k], "weights");
      const auto b = get<std::vector<double>>(arr[k], "bias");
      if (get<int>(arr[k], "in") != l.in || get<int>(arr[k], "out") != l.out ||
          w.size() != static_cast<std::size_t>(l.in) * l.out || b.size() != static_cast<std::size_t>(l.out)) {
        parse_fail(std::string("layer shape mismatch in '") + name + "'");
      }
      std::copy(w.begin(), w.end(), model.params.begin() + static_cast<long>(l.weight_offset()));
      std::copy(b.begin(), b.end(), model.params.begin() + static_cast<long>(l.bias_offset()));
    }
  };
  load("point", model.point_layers);
  load("recon", model.recon_layers);
  load("head", model.head_layers);
  return model;
}

std::string dataset_record_to_json(const DatasetRecord& rec) {
  json pairs = json::array();
  for (const auto& p : rec.pairs) {
    pairs.push_back({{"xa", p.xa}, {"ya", p.ya}, {"xb", p.xb}, {"yb", p.yb},
                     {"closer", std::string(1, to_char(p.closer))}, {"ia", p.ia}, {"ib", p.ib}});
  }
  return json{{"image_id", rec.image_id}, {"pairs", pairs}}.dump();
}

DatasetRecord dataset_record_from_json(std::string_view line) {
  const json j = parse_json(line);
  DatasetRecord rec;
  rec.image_id = get<std::string>(j, "image_id");
  for (const auto& p : get<json>(j, "pairs")) {
    const auto closer = get<std::string>(p, "closer");
    if (closer.size() != 1) parse_fail("closer must be 'a' or 'b'");
    rec.pairs.push_back({get<double>(p, "xa"), get<double>(p, "ya"), get<double>(p, "xb"),
                         get<double>(p, "yb"), closer_from_char(closer[0]), get<int>(p, "ia"),
                         get<int>(p, "ib")});
  }
  return rec;
}

std::string report_to_json(const PipelineReport& r) {
  json j = {{"inputs", r.inputs},   {"reconstructed", r.reconstructed},
            {"retained", r.retained}, {"records", r.records},
            {"relative_pairs", r.relative_pairs}, {"rejections", r.rejections}};
  return j.dump(1);
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "epoch,loss,val_acc\n" << std::setprecision(17);
  for (const auto& row : log) os << row.epoch << ',' << row.loss << ',' << row.val_acc << '\n';
  return os.str();
}

void apply_config_json(std::string_view text, Settings& s) {
  const json j = parse_json(text);
  apply_object(j, "", [&](const std::string& key, const json& v) {
    if (key == "sfm") {
      apply_object(v, "sfm", [&](const std::string& k, const json& x) {
        auto& c = s.sfm;
        if (k == "ransac_threshold") c.ransac_threshold = x.get<double>();
        else if (k == "ransac_max_iterations") c.ransac_max_iterations = x.get<int>();
        else if (k == "ransac_confidence") c.ransac_confidence = x.get<double>();
        else if (k == "min_inliers") c.min_inliers = x.get<int>();
        else if (k == "min_cheiral_frac") c.min_cheiral_frac = x.get<double>();
        else if (k == "min_median_parallax_deg") c.min_median_parallax_deg = x.get<double>();
        else if (k == "focal_count") c.focal_count = x.get<int>();
        else if (k == "focal_min_scale") c.focal_min_scale = x.get<double>();
        else if (k == "focal_max_scale") c.focal_max_scale = x.get<double>();
        else if (k == "seed") c.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "train") {
      apply_object(v, "train", [&](const std::string& k, const json& x) {
        auto& c = s.train;
        if (k == "step_size") c.step_size = x.get<double>();
        else if (k == "beta1") c.beta1 = x.get<double>();
        else if (k == "beta2") c.beta2 = x.get<double>();
        else if (k == "epsilon") c.epsilon = x.get<double>();
        else if (k == "batch_size") c.batch_size = x.get<int>();
        else if (k == "epochs") c.epochs = x.get<int>();
        else if (k == "pairs_per_epoch") c.pairs_per_epoch = x.get<int>();
        else if (k == "delta_pair") c.delta_pair = x.get<double>();
        else if (k == "validation_fraction") c.validation_fraction = x.get<double>();
        else if (k == "seed") c.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "arch") {
      apply_object(v, "arch", [&](const std::string& k, const json& x) {
        auto& a = s.arch;
        if (k == "point_widths") a.point_widths = x.get<std::vector<int>>();
        else if (k == "recon_widths") a.recon_widths = x.get<std::vector<int>>();
        else if (k == "head_widths") a.head_widths = x.get<std::vector<int>>();
        else if (k == "point_reproj") a.mask.point_reproj = x.get<bool>();
        else if (k == "drop") {
          const bool keep = a.mask.point_reproj;
          std::vector<CueName> drop;
          for (const auto& name : x) drop.push_back(cue_from_string(name.get<std::string>()));
          a.mask = CueMask::without(drop);
          a.mask.point_reproj = keep;
        } else return false;
        return true;
      });
    } else if (key == "recipe") {
      apply_object(v, "recipe", [&](const std::string& k, const json& x) {
        auto& r = s.recipe;
        if (k == "noise_max") r.noise_max = x.get<double>();
        else if (k == "outlier_max") r.outlier_max = x.get<double>();
        else if (k == "moving_max") r.moving_max = x.get<double>();
        else if (k == "rot_min_deg") r.rot_min_deg = x.get<double>();
        else if (k == "rot_max_deg") r.rot_max_deg = x.get<double>();
        else if (k == "n_min") r.n_min = x.get<int>();
        else if (k == "n_max") r.n_max = x.get<int>();
        else if (k == "focal_min_scale") r.focal_min_scale = x.get<double>();
        else if (k == "focal_max_scale") r.focal_max_scale = x.get<double>();
        else if (k == "moving_mag") r.moving_mag = x.get<double>();
        else if (k == "near") r.near = x.get<double>();
        else if (k == "far") r.far = x.get<double>();
        else if (k == "width") r.width = x.get<int>();
        else if (k == "height") r.height = x.get<int>();
        else return false;
        return true;
      });
    } else if (key == "pipeline") {
      apply_object(v, "pipeline", [&](const std::string& k, const json& x) {
        auto& p = s.pipeline;
        if (k == "threshold") {
          p.threshold = x.get<double>();
          p.top_fraction.reset();
        } else if (k == "top_fraction") {
          p.top_fraction = x.get<double>();
          p.threshold.reset();
        } else if (k == "pairs_per_image") p.pairs_per_image = x.get<int>();
        else if (k == "emission_margin") p.emission_margin = x.get<double>();
        else if (k == "seed") p.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "quality_margin") {
      s.quality_margin = v.get<double>();
    } else {
      return false;
    }
    return true;
  });
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) parse_fail("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) parse_fail("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace depthforge
