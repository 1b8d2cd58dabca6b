// depthforge command-line driver.
//
//   depthforge synth --out DIR --count N
//   depthforge reconstruct --input DIR --out recon.jsonl
//   depthforge cues --recon recon.jsonl [--gt-dir DIR] --out cues.jsonl
//   depthforge train-qanet --cues cues.jsonl --out model.json [--log log.csv]
//   depthforge score --model model.json --cues cues.jsonl --out scores.csv
//   depthforge curve --scores scores.csv --out curve.csv
//   depthforge ablate --train a.jsonl --test b.jsonl --out ablation.csv
//   depthforge choose-threshold --scores scores.csv --target 0.95
//   depthforge forge --input DIR --model model.json --out dataset.jsonl --report report.json
//   depthforge whdr --pred pred.jsonl --truth truth.jsonl

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "depthforge/cues.hpp"
#include "depthforge/error.hpp"
#include "depthforge/geometry.hpp"
#include "depthforge/io.hpp"
#include "depthforge/pipeline.hpp"
#include "depthforge/qanet.hpp"
#include "depthforge/ranking.hpp"
#include "depthforge/synth.hpp"
#include "depthforge/util.hpp"

namespace fs = std::filesystem;
using namespace depthforge;
using nlohmann::json;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool quiet = false;
};

Settings load_settings(const Global& g) {
  Settings s;
  if (!g.config.empty()) apply_config_json(read_text(g.config), s);
  if (g.seed) {
    s.sfm.seed = *g.seed;
    s.train.seed = *g.seed;
    s.pipeline.seed = *g.seed;
  }
  return s;
}

std::uint64_t base_seed(const Global& g) { return g.seed.value_or(0); }

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + p.string());
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  auto out = open_out(p);
  out << text;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<fs::path> match_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".match") files.push_back(e.path());
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<FramePair> load_pairs(const std::vector<std::string>& inputs) {
  std::vector<FramePair> pairs;
  for (const auto& f : match_files(inputs)) pairs.push_back(read_match_file(f));
  return pairs;
}

std::vector<ParsedCues> load_cues(const fs::path& p) {
  std::vector<ParsedCues> out;
  for (const auto& line : read_lines(p)) out.push_back(cues_from_json(line));
  return out;
}

std::vector<LabeledCues> labeled(const std::vector<ParsedCues>& parsed, const std::string& src) {
  std::vector<LabeledCues> out;
  for (const auto& pc : parsed) {
    if (!pc.quality) throw Error(ErrorCode::InvalidInput, src + ": " + pc.cues.id + " has no gt_quality");
    out.push_back({pc.cues, *pc.quality});
  }
  return out;
}

struct ScoreRow {
  std::string id;
  double score = 0;
  std::optional<double> quality;
};

std::vector<ScoreRow> load_scores(const fs::path& p) {
  const auto lines = read_lines(p);
  if (lines.empty() || lines[0].rfind("id,score", 0) != 0) {
    throw Error(ErrorCode::ParseError, p.string() + ": expected header 'id,score,gt_quality'");
  }
  std::vector<ScoreRow> rows;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    std::vector<std::string> f;
    std::stringstream ss(lines[k]);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 2) throw Error(ErrorCode::ParseError, p.string() + ": bad row " + std::to_string(k + 1));
    ScoreRow r{f[0], std::stod(f[1]), std::nullopt};
    if (f.size() > 2 && !f[2].empty()) r.quality = std::stod(f[2]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<RankedItem> ranked_items(const std::vector<ScoreRow>& rows, const std::string& src) {
  std::vector<RankedItem> items;
  for (const auto& r : rows) {
    if (!r.quality) throw Error(ErrorCode::InvalidInput, src + ": " + r.id + " has no gt_quality");
    items.push_back({r.id, r.score, *r.quality});
  }
  return items;
}

std::map<OrderKey, Closer> load_orderings(const fs::path& p) {
  std::map<OrderKey, Closer> out;
  for (const auto& line : read_lines(p)) {
    const DatasetRecord rec = dataset_record_from_json(line);
    for (std::size_t k = 0; k < rec.pairs.size(); ++k) out[{rec.image_id, k}] = rec.pairs[k].closer;
  }
  return out;
}

// --- subcommands -----------------------------------------------------------

int cmd_synth(const Global& g, const fs::path& out_dir, int count) {
  const Settings s = load_settings(g);
  fs::create_directories(out_dir);
  auto manifest = open_out(out_dir / "manifest.jsonl");
  int failures = 0;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%05d", i);
    const SceneSpec spec = sample_scene_spec(s.recipe, mix_seed(base_seed(g), static_cast<std::uint64_t>(i)));
    const std::string spec_json = scene_spec_to_json(spec);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(spec_json)));
    json row = {{"pair_id", id}, {"spec_hash", hash}, {"spec", json::parse(spec_json)}};
    try {
      const SyntheticPair sp = generate_scene(spec, id);
      {
        auto f = open_out(out_dir / (std::string(id) + ".match"));
        write_match_file(f, sp.pair);
      }
      write_file(out_dir / (std::string(id) + ".gt.json"), ground_truth_to_json(sp.truth) + "\n");
      try {
        row["gt_quality"] = gt_quality(reconstruct_pair(sp.pair, s.sfm), sp.truth, s.quality_margin);
      } catch (const Error& e) {
        row["gt_quality"] = nullptr;
        row["rejection"] = std::string(to_string(e.code()));
      }
    } catch (const Error& e) {
      ++failures;
      row["error"] = std::string(to_string(e.code()));
      std::cerr << id << ": " << e.what() << "\n";
    }
    manifest << row.dump() << "\n";
  }
  if (!g.quiet) std::cerr << "synth: " << count - failures << "/" << count << " scenes written to " << out_dir << "\n";
  return 0;
}

int cmd_reconstruct(const Global& g, const std::vector<std::string>& inputs, const fs::path& out_path) {
  const Settings s = load_settings(g);
  const auto pairs = load_pairs(inputs);
  std::vector<std::optional<Reconstruction>> recons(pairs.size());
  std::vector<std::string> why(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t k) {
    try {
      recons[k] = reconstruct_pair(pairs[k], s.sfm);
    } catch (const RejectedPair& e) {
      why[k] = std::string(to_string(e.code()));
    }
  });
  auto out = open_out(out_path);
  std::map<std::string, int> rejected;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (recons[k]) {
      out << reconstruction_to_json(*recons[k]) << "\n";
    } else {
      ++rejected[why[k]];
    }
  }
  if (!g.quiet) {
    std::cerr << "reconstruct: " << pairs.size() << " pairs";
    for (const auto& [reason, n] : rejected) std::cerr << ", " << reason << " " << n;
    std::cerr << "\n";
  }
  return 0;
}

int cmd_cues(const Global& g, const fs::path& recon_path, const std::string& gt_dir, const fs::path& out_path) {
  const Settings s = load_settings(g);
  auto out = open_out(out_path);
  int skipped = 0;
  for (const auto& line : read_lines(recon_path)) {
    const Reconstruction r = reconstruction_from_json(line);
    std::optional<double> q;
    try {
      if (!gt_dir.empty()) {
        const GroundTruth gt = ground_truth_from_json(read_text(fs::path(gt_dir) / (r.pair_id + ".gt.json")));
        q = gt_quality(r, gt, s.quality_margin);
      }
      out << cues_to_json(extract_cues(r), q) << "\n";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoEligiblePairs && e.code() != ErrorCode::NonFiniteCue) throw;
      ++skipped;
      std::cerr << r.pair_id << ": skipped, " << e.what() << "\n";
    }
  }
  if (!g.quiet && skipped) std::cerr << "cues: " << skipped << " reconstructions skipped\n";
  return 0;
}

QaArch arch_with_drop(const Settings& s, const std::vector<std::string>& drop) {
  QaArch arch = s.arch;
  if (!drop.empty()) {
    std::vector<CueName> names;
    for (const auto& d : drop) names.push_back(cue_from_string(d));
    const bool keep = arch.mask.point_reproj;
    arch.mask = CueMask::without(names);
    arch.mask.point_reproj = keep;
  }
  return arch;
}

int cmd_train(const Global& g, const fs::path& cues_path, const fs::path& out_path, const std::string& log_path,
              const std::vector<std::string>& drop) {
  const Settings s = load_settings(g);
  const auto corpus = labeled(load_cues(cues_path), cues_path.string());
  const QaArch arch = arch_with_drop(s, drop);
  const TrainResult res = train(corpus, arch, s.train, [&](const TrainLogRow& row) {
    if (!g.quiet) std::cerr << "epoch " << row.epoch << " loss " << row.loss << " val_acc " << row.val_acc << "\n";
  });
  write_file(out_path, model_to_json(res.model) + "\n");
  if (!log_path.empty()) write_file(log_path, train_log_csv(res.log));
  if (!g.quiet) std::cerr << "best epoch " << res.best_epoch << " val_acc " << res.best_val_acc << "\n";
  return 0;
}

int cmd_score(const Global&, const fs::path& model_path, const fs::path& cues_path, const fs::path& out_path) {
  const QaModel model = model_from_json(read_text(model_path));
  auto out = open_out(out_path);
  out << "id,score,gt_quality\n";
  for (const auto& pc : load_cues(cues_path)) {
    out << pc.cues.id << ',' << fmt(score(model, conform_cues(pc.cues, model.arch.mask))) << ','
        << (pc.quality ? fmt(*pc.quality) : "") << '\n';
  }
  return 0;
}

int cmd_curve(const Global& g, const fs::path& scores_path, const fs::path& out_path) {
  const auto items = ranked_items(load_scores(scores_path), scores_path.string());
  const QualityCurve c = quality_curve(RankedCorpus(items));
  const Baselines b = baselines(items, base_seed(g));
  write_file(out_path, curve_csv(c));
  std::cout << json{{"auc", c.auc}, {"n_items", items.size()}, {"upperbound_auc", b.upper.auc}, {"random_auc", b.random.auc}}.dump() << "\n";
  return 0;
}

int cmd_ablate(const Global& g, const fs::path& train_path, const fs::path& test_path, const fs::path& out_path) {
  const Settings s = load_settings(g);
  const auto trn = labeled(load_cues(train_path), train_path.string());
  const auto tst = labeled(load_cues(test_path), test_path.string());
  const auto variants = standard_variants();
  const auto rows = ablation_suite(trn, tst, variants, s.arch, s.train);
  write_file(out_path, ablation_csv(rows));
  if (!g.quiet) std::cerr << ablation_csv(rows);
  return 0;
}

int cmd_choose(const Global&, const fs::path& scores_path, double target, const std::string& out_path) {
  std::vector<ScoredItem> items;
  for (const auto& r : ranked_items(load_scores(scores_path), scores_path.string()))
    items.push_back({r.id, r.score, r.gt_quality});
  const ThresholdChoice c = choose_threshold(items, target);
  if (!out_path.empty()) {
    std::ostringstream os;
    os << "threshold,retained_fraction,mean_quality\n";
    for (const auto& row : c.tradeoff)
      os << fmt(row.threshold) << ',' << fmt(row.retained_fraction) << ',' << fmt(row.mean_quality) << '\n';
    write_file(out_path, os.str());
  }
  std::cout << json{{"threshold", c.threshold}, {"retained_fraction", c.retained_fraction},
                    {"mean_quality", c.mean_quality}}.dump()
            << "\n";
  return 0;
}

int cmd_forge(const Global& g, const std::vector<std::string>& inputs, const fs::path& model_path,
              std::optional<double> threshold, std::optional<double> top_fraction,
              const std::vector<std::string>& expect_drop, bool check_mask, const fs::path& out_path,
              const std::string& report_path) {
  Settings s = load_settings(g);
  PipelineConfig cfg = s.pipeline;
  cfg.sfm = s.sfm;
  if (threshold) {
    cfg.threshold = threshold;
    cfg.top_fraction.reset();
  }
  if (top_fraction) {
    cfg.top_fraction = top_fraction;
    cfg.threshold.reset();
  }
  if (check_mask) cfg.expected_mask = arch_with_drop(s, expect_drop).mask;
  const QaModel model = model_from_json(read_text(model_path));
  const auto pairs = load_pairs(inputs);
  const PipelineOutput res = run_pipeline(pairs, model, cfg);

  auto out = open_out(out_path);
  for (const auto& rec : res.records) out << dataset_record_to_json(rec) << "\n";
  const std::string report = report_to_json(res.report) + "\n";
  if (!report_path.empty()) write_file(report_path, report);
  if (!g.quiet) std::cerr << report;
  return 0;
}

int cmd_whdr(const Global&, const fs::path& pred_path, const fs::path& truth_path) {
  const double w = whdr(load_orderings(pred_path), load_orderings(truth_path));
  std::cout << json{{"whdr", w}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthforge: two-view reconstruction quality ranking and relative-depth data forging"};
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--seed", g.seed, "Seed for every random choice (default 0)");
  app.add_option("--config", g.config, "JSON file overriding default settings")->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");

  std::function<int()> action;

  fs::path out;
  int count = 100;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus of match files with ground truth");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->callback([&] { action = [&] { return cmd_synth(g, out, count); }; });

  std::vector<std::string> inputs;
  auto* recon = app.add_subcommand("reconstruct", "Reconstruct match files into JSON-lines records");
  recon->add_option("--input", inputs, "Match files or directories")->required();
  recon->add_option("--out", out, "Output JSON-lines file")->required();
  recon->callback([&] { action = [&] { return cmd_reconstruct(g, inputs, out); }; });

  fs::path recon_path;
  std::string gt_dir;
  auto* cues = app.add_subcommand("cues", "Extract QANet cues from reconstructions");
  cues->add_option("--recon", recon_path, "Reconstruction JSON-lines file")->required()->check(CLI::ExistingFile);
  cues->add_option("--gt-dir", gt_dir, "Directory of <pair_id>.gt.json files; attaches gt_quality");
  cues->add_option("--out", out, "Output JSON-lines file")->required();
  cues->callback([&] { action = [&] { return cmd_cues(g, recon_path, gt_dir, out); }; });

  fs::path cues_path;
  std::string log_path;
  std::vector<std::string> drop;
  auto* trn = app.add_subcommand("train-qanet", "Train a QANet on labelled cues");
  trn->add_option("--cues", cues_path, "Cues with gt_quality")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", out, "Model JSON")->required();
  trn->add_option("--log", log_path, "Per-epoch CSV log");
  trn->add_option("--drop", drop, "Cues to ablate (2D, Sam, Ang, Focal, RepErr)");
  trn->callback([&] { action = [&] { return cmd_train(g, cues_path, out, log_path, drop); }; });

  fs::path model_path;
  auto* sc = app.add_subcommand("score", "Score cue vectors with a trained model");
  sc->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
  sc->add_option("--cues", cues_path, "Cues JSON-lines")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", out, "Scores CSV")->required();
  sc->callback([&] { action = [&] { return cmd_score(g, model_path, cues_path, out); }; });

  fs::path scores_path;
  auto* cv = app.add_subcommand("curve", "Quality-ranking curve of a scored corpus");
  cv->add_option("--scores", scores_path, "Scores CSV with gt_quality")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", out, "Curve CSV")->required();
  cv->callback([&] { action = [&] { return cmd_curve(g, scores_path, out); }; });

  fs::path test_path;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the single-cue ablation variants");
  ab->add_option("--train", cues_path, "Training cues")->required()->check(CLI::ExistingFile);
  ab->add_option("--test", test_path, "Held-out cues")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out, "Ablation CSV")->required();
  ab->callback([&] { action = [&] { return cmd_ablate(g, cues_path, test_path, out); }; });

  double target = 0.95;
  std::string tradeoff_path;
  auto* ch = app.add_subcommand("choose-threshold", "Pick the score threshold reaching a target mean quality");
  ch->add_option("--scores", scores_path, "Validation scores CSV with gt_quality")->required()->check(CLI::ExistingFile);
  ch->add_option("--target", target, "Target mean quality of the retained set");
  ch->add_option("--out", tradeoff_path, "Trade-off CSV");
  ch->callback([&] { action = [&] { return cmd_choose(g, scores_path, target, tradeoff_path); }; });

  std::optional<double> threshold, top_fraction;
  std::string report_path;
  std::vector<std::string> expect_drop;
  bool check_mask = false;
  auto* fg = app.add_subcommand("forge", "Reconstruct, score, filter and emit relative-depth records");
  fg->add_option("--input", inputs, "Match files or directories")->required();
  fg->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
  auto* th = fg->add_option("--threshold", threshold, "Retain pairs scoring at least this");
  fg->add_option("--top-fraction", top_fraction, "Retain this fraction of the best-scoring pairs")->excludes(th);
  fg->add_flag("--check-mask", check_mask, "Fail unless the model's cue mask matches --expect-drop");
  fg->add_option("--expect-drop", expect_drop, "Cues the model is expected to have dropped");
  fg->add_option("--out", out, "Dataset JSON-lines")->required();
  fg->add_option("--report", report_path, "Report JSON");
  fg->callback([&] {
    action = [&] {
      return cmd_forge(g, inputs, model_path, threshold, top_fraction, expect_drop, check_mask, out, report_path);
    };
  });

  fs::path pred_path, truth_path;
  auto* wh = app.add_subcommand("whdr", "Disagreement rate between predicted and annotated orderings");
  wh->add_option("--pred", pred_path, "Predicted dataset JSON-lines")->required()->check(CLI::ExistingFile);
  wh->add_option("--truth", truth_path, "Annotated dataset JSON-lines")->required()->check(CLI::ExistingFile);
  wh->callback([&] { action = [&] { return cmd_whdr(g, pred_path, truth_path); }; });

  CLI11_PARSE(app, argc, argv);

  try {
    return action ? action() : 1;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}
