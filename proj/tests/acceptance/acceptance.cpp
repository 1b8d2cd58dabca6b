// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance [--quick]
//
// --quick shrinks the corpora for a smoke run; its verdicts are not the
// acceptance verdicts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "depthforge/cues.hpp"
#include "depthforge/error.hpp"
#include "depthforge/geometry.hpp"
#include "depthforge/io.hpp"
#include "depthforge/pipeline.hpp"
#include "depthforge/qanet.hpp"
#include "depthforge/ranking.hpp"
#include "depthforge/synth.hpp"
#include "depthforge/util.hpp"
#include "oracles.hpp"

using namespace depthforge;

namespace {

int failures = 0;

void verdict(const char* tag, bool ok, const std::string& detail, double seconds) {
  std::printf("%s %-4s %s (%.1fs)\n", ok ? "PASS" : "FAIL", tag, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

void criterion_1() {
  Timer t;
  const double ln2 = ranking_loss(0, 0, 0.9, 0.3);
  bool ok = std::abs(ln2 - std::log(2.0)) <= 1e-12;
  double worst = 0;
  for (int k = -3000; k <= 3000; ++k) {
    const double z = k * 0.01;  // p2 - p1 in [-30, 30]
    const double stable = ranking_loss(0, z, 0.9, 0.3);
    worst = std::max(worst, std::abs(stable - oracle::naive_loss(0, z, 0.9, 0.3)));
    const double mirrored = ranking_loss(z, 0, 0.3, 0.9);
    worst = std::max(worst, std::abs(mirrored - oracle::naive_loss(z, 0, 0.3, 0.9)));
  }
  ok = ok && worst <= 1e-12;
  verdict("1", ok, fmt("ranking loss: |L(0,0)-ln2| = %.2e, max |stable-naive| over |z|<=30 = %.2e",
                       std::abs(ln2 - std::log(2.0)), worst),
          t.seconds());
}

// Random model: Glorot weights from init_model plus random biases so that
// draws do not all share the zero-bias activation boundary.
QaModel random_model(oracle::Gen& g, bool full_size) {
  QaArch arch;
  std::vector<CueName> drop;
  for (CueName c : {CueName::Coords2D, CueName::Sampson, CueName::Angle, CueName::Focal, CueName::RepErr})
    if (g.integer(0, 3) == 0) drop.push_back(c);
  arch.mask = CueMask::without(drop);
  if (arch.mask.point_dim() == 0) arch.mask = CueMask::without({CueName::Focal});
  if (!full_size) {
    auto widths = [&](int layers) {
      std::vector<int> w;
      for (int k = 0; k < layers; ++k) w.push_back(g.integer(1, 6));
      return w;
    };
    arch.point_widths = widths(g.integer(1, 3));
    arch.recon_widths = widths(g.integer(1, 2));
    arch.head_widths = widths(g.integer(0, 2));
  }
  QaModel m = init_model(arch, g.rng());
  for (const auto* group : {&m.point_layers, &m.recon_layers, &m.head_layers})
    for (const auto& l : *group)
      for (std::size_t k = l.bias_offset(); k < l.offset + l.size(); ++k) m.params[k] = g.uniform(-0.3, 0.3);
  return m;
}

void criterion_2() {
  Timer t;
  oracle::Gen g(0xacce55);
  const double h = 1e-3;
  std::size_t checked = 0, skipped = 0, bad = 0;
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const bool full = draw % 25 == 0;  // four full-size networks, the rest small
    QaModel m = random_model(g, full);
    const int rows_max = full ? 6 : 15;
    const CueVector a = g.cues(g.integer(1, rows_max), m.arch.mask);
    const CueVector b = g.cues(g.integer(1, rows_max), m.arch.mask);
    double s1 = g.uniform(0, 1), s2 = g.uniform(0, 1);
    if (s1 == s2) s2 = 1 - s1;
    const TrainPair pair{&a, &b, s1, s2};
    std::vector<double> grad;
    batch_loss_and_gradient(m, std::span<const TrainPair>(&pair, 1), grad);

    auto eval = [&](std::vector<int>& pattern) {
      pattern.clear();
      const double pa = oracle::score(m, a, &pattern);
      const double pb = oracle::score(m, b, &pattern);
      return oracle::naive_loss(pa, pb, s1, s2);
    };
    std::vector<int> base, up_pat, dn_pat;
    eval(base);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const double keep = m.params[i];
      m.params[i] = keep + h;
      const double up = eval(up_pat);
      m.params[i] = keep - h;
      const double dn = eval(dn_pat);
      m.params[i] = keep;
      // A stencil that crosses a ReLU or max-pool boundary samples two
      // different linear pieces; central differences are no oracle there.
      if (up_pat != base || dn_pat != base) {
        ++skipped;
        continue;
      }
      ++checked;
      const double fd = (up - dn) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      const double rel = std::abs(fd - grad[i]) / scale;
      worst = std::max(worst, rel);
      if (!(rel < 1e-4)) ++bad;
    }
  }
  verdict("2", bad == 0 && checked > 0,
          fmt("gradient vs central differences (h=1e-3): %zu params checked, %zu mismatches, max rel err %.2e, "
              "%zu stencils skipped for crossing an activation boundary",
              checked, bad, worst, skipped),
          t.seconds());
}

// Noiseless scene whose focal sits on the search grid.
SyntheticPair grid_scene(std::uint64_t seed) {
  CorpusRecipe recipe;
  SceneSpec s = sample_scene_spec(recipe, mix_seed(seed, "grid-scene"));
  s.noise_px = 0;
  s.outlier_frac = 0;
  s.moving_frac = 0;
  const FocalGrid grid = SfmConfig{}.focal_grid(s.width, s.height);
  s.f_true = grid.focals[static_cast<std::size_t>(mix_seed(seed, "focal-node") % grid.focals.size())];
  return generate_scene(s, fmt("grid%03llu", static_cast<unsigned long long>(seed)));
}

void criterion_3_and_5_exact(double& exact_min_quality) {
  Timer t;
  const FocalGrid grid = SfmConfig{}.focal_grid(640, 480);
  const double step = grid.focals[1] / grid.focals[0];
  int focal_ok = 0, sampson_ok = 0, ratio_ok = 0, rejected = 0;
  double worst_sampson = 0, worst_ratio = 0;
  exact_min_quality = 1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SyntheticPair sp = grid_scene(seed);
    Reconstruction r;
    try {
      r = reconstruct_pair(sp.pair);
    } catch (const Error& e) {
      ++rejected;
      std::printf("  scene %llu rejected: %s\n", static_cast<unsigned long long>(seed), e.what());
      exact_min_quality = 0;
      continue;
    }
    const double fr = r.camera.focal / sp.truth.f_true;
    if (fr <= step * (1 + 1e-12) && fr >= 1 / step / (1 + 1e-12)) ++focal_ok;

    double s_max = 0;
    for (const auto& m : sp.pair.matches) s_max = std::max(s_max, sampson_distance(r.fundamental.F, m));
    for (const auto& p : r.points) s_max = std::max(s_max, p.sampson);
    worst_sampson = std::max(worst_sampson, s_max);
    if (s_max < 1e-10 && r.points.size() == sp.pair.matches.size()) ++sampson_ok;

    // Depth is recovered up to one global scale: every per-point ratio
    // reconstructed / true must agree.
    double ref_a = 0, ref_b = 0, dev = 0;
    for (const auto& p : r.points) {
      const auto& gt = sp.truth.at(p.corr_id);
      const double ra = p.depth_a / gt.depth_a, rb = p.depth_b / gt.depth_b;
      if (ref_a == 0) ref_a = ra, ref_b = rb;
      dev = std::max({dev, std::abs(ra / ref_a - 1), std::abs(rb / ref_b - 1)});
    }
    worst_ratio = std::max(worst_ratio, dev);
    if (dev <= 1e-6) ++ratio_ok;

    exact_min_quality = std::min(exact_min_quality, gt_quality(r, sp.truth));
  }
  verdict("3", focal_ok == 100 && sampson_ok == 100 && ratio_ok == 100,
          fmt("noiseless scenes: focal within one grid step %d/100, all Sampson < 1e-10 %d/100 (max %.2e), "
              "depth ratios within 1e-6 %d/100 (max dev %.2e), rejected %d",
              focal_ok, sampson_ok, worst_sampson, ratio_ok, worst_ratio, rejected),
          t.seconds());
}

void criterion_4() {
  Timer t;
  std::size_t inliers = 0, kept_inliers = 0, kept_outliers = 0;
  double worst_seed_recall = 1;
  int seeds_clean = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SceneSpec s = sample_scene_spec(CorpusRecipe{}, mix_seed(seed, "ransac"));
    s.noise_px = 0.5;
    s.outlier_frac = 0.3;
    s.moving_frac = 0;
    const SyntheticPair sp = generate_scene(s);
    SfmConfig cfg;
    cfg.seed = seed;
    const FundamentalMatrix fm = estimate_fundamental(sp.pair.matches, cfg);
    const std::set<int> kept(fm.inlier_ids.begin(), fm.inlier_ids.end());
    std::size_t in = 0, kin = 0, kout = 0;
    for (const auto& p : sp.truth.points) {
      if (p.label == MatchLabel::Inlier) {
        ++in;
        kin += kept.count(p.id);
      } else if (p.label == MatchLabel::Outlier) {
        kout += kept.count(p.id);
      }
    }
    inliers += in;
    kept_inliers += kin;
    kept_outliers += kout;
    const double recall = static_cast<double>(kin) / static_cast<double>(in);
    worst_seed_recall = std::min(worst_seed_recall, recall);
    if (recall >= 0.99 && kout == 0) ++seeds_clean;
  }
  const double recall = static_cast<double>(kept_inliers) / static_cast<double>(inliers);
  verdict("4", recall >= 0.99 && kept_outliers == 0,
          fmt("RANSAC, 30%% outliers, 0.5 px noise: pooled inlier recall %.4f (need >= 0.99), outliers kept %zu "
              "(need 0), worst seed recall %.4f, seeds meeting both %d/100",
              recall, kept_outliers, worst_seed_recall, seeds_clean),
          t.seconds());
}

void criterion_5(double exact_min_quality) {
  Timer t;
  oracle::Gen g(0x5eed);
  double flip_max = 0, perm_sum = 0, perm_lo = 1, perm_hi = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Reconstruction r;
    GroundTruth gt;
    r.pair_id = gt.pair_id = "perm";
    for (int i = 0; i < 100; ++i) {
      ReconPoint p;
      p.corr_id = i;
      p.depth_a = g.uniform(3, 30);
      p.depth_b = g.uniform(3, 30);
      r.points.push_back(p);
      gt.points.push_back({i, p.depth_a, p.depth_b, MatchLabel::Inlier});
    }
    Reconstruction flipped = r;
    for (auto& p : flipped.points) p.depth_a = 1 / p.depth_a, p.depth_b = 1 / p.depth_b;
    flip_max = std::max(flip_max, gt_quality(flipped, gt));

    Reconstruction shuffled = r;
    std::vector<int> perm(100);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.rng);
    for (int i = 0; i < 100; ++i) {
      shuffled.points[static_cast<std::size_t>(i)].depth_a = r.points[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].depth_a;
      shuffled.points[static_cast<std::size_t>(i)].depth_b = r.points[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].depth_b;
    }
    const double q = gt_quality(shuffled, gt);
    perm_sum += q;
    perm_lo = std::min(perm_lo, q);
    perm_hi = std::max(perm_hi, q);
  }
  const double perm_mean = perm_sum / 50;
  verdict("5", exact_min_quality == 1.0 && flip_max == 0.0 && std::abs(perm_mean - 0.5) <= 0.05,
          fmt("gt_quality: exact reconstructions min %.6f, order-reversing flip max %.6f, random permutation "
              "mean %.4f over 50 seeds (per-seed range %.3f..%.3f)",
              exact_min_quality, flip_max, perm_mean, perm_lo, perm_hi),
          t.seconds());
}

void criterion_6() {
  Timer t;
  oracle::Gen g(0x9e7);
  int identical = 0;
  for (int model = 0; model < 10; ++model) {
    const QaModel m = init_model(QaArch{}, g.rng());
    const CueVector cv = g.cues(g.integer(2, 300));
    const double ref = score(m, cv);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(cv.n()));
    std::iota(perm.begin(), perm.end(), 0);
    for (int k = 0; k < 100; ++k) {
      std::shuffle(perm.begin(), perm.end(), g.rng);
      CueVector p = cv;
      for (Eigen::Index r = 0; r < cv.n(); ++r) p.point_cues.row(r) = cv.point_cues.row(perm[static_cast<std::size_t>(r)]);
      const double s = score(m, p);
      identical += std::memcmp(&s, &ref, sizeof s) == 0;
    }
  }
  verdict("6", identical == 1000, fmt("score bit-identical under row permutation: %d/1000", identical), t.seconds());
}

// ---------------------------------------------------------------------------

struct Item {
  FramePair pair;
  LabeledCues labeled;
};

// Reconstructs recipe scenes until `count` items carry a quality label.
std::vector<Item> build_corpus(std::size_t count, std::uint64_t seed, const char* prefix) {
  const CorpusRecipe recipe;
  std::vector<Item> out;
  std::size_t next = 0, failed = 0;
  while (out.size() < count) {
    const std::size_t batch = (count - out.size()) * 23 / 20 + 8;
    std::vector<std::optional<Item>> slots(batch);
    parallel_for(batch, [&](std::size_t k) {
      const std::size_t i = next + k;
      const SceneSpec spec = sample_scene_spec(recipe, mix_seed(seed, static_cast<std::uint64_t>(i)));
      SyntheticPair sp = generate_scene(spec, fmt("%s%05zu", prefix, i));
      try {
        const Reconstruction r = reconstruct_pair(sp.pair);
        LabeledCues lc{extract_cues(r), gt_quality(r, sp.truth)};
        slots[k] = Item{std::move(sp.pair), std::move(lc)};
      } catch (const Error&) {
      }
    });
    next += batch;
    for (auto& s : slots) {
      if (!s) {
        ++failed;
        continue;
      }
      if (out.size() < count) out.push_back(std::move(*s));
    }
  }
  std::printf("  corpus %s: %zu reconstructions (%zu scenes rejected)\n", prefix, out.size(), failed);
  return out;
}

std::vector<LabeledCues> labeled(const std::vector<Item>& items) {
  std::vector<LabeledCues> out;
  for (const auto& it : items) out.push_back(it.labeled);
  return out;
}

double mean_quality(std::span<const RankedItem> items) {
  double s = 0;
  for (const auto& it : items) s += it.gt_quality;
  return s / static_cast<double>(items.size());
}

void criteria_7_to_9(bool quick) {
  const std::size_t n = quick ? 300 : 2000;
  Timer t_corpus;
  const std::vector<Item> train_items = build_corpus(n, 0x7a11, "train");
  const std::vector<Item> test_items = build_corpus(n, 0x7e57, "test");
  const double corpus_seconds = t_corpus.seconds();
  const auto train_set = labeled(train_items);
  const auto test_set = labeled(test_items);

  TrainConfig cfg;
  cfg.seed = 7;
  if (quick) cfg.epochs = 5;
  const QaArch arch;

  Timer t7;
  const TrainResult trained = train(train_set, arch, cfg);
  std::printf("  training: best epoch %d, validation pairwise accuracy %.4f\n", trained.best_epoch, trained.best_val_acc);
  std::vector<RankedItem> ranked;
  for (const auto& it : test_set) ranked.push_back({it.cues.id, score(trained.model, it.cues), it.quality});
  const RankedCorpus rc(ranked);
  const QualityCurve curve = quality_curve(rc);
  const Baselines base = baselines(ranked, cfg.seed);
  const double corpus_mean = mean_quality(ranked);
  const std::size_t top = (rc.size() * 20 + 99) / 100;
  const double top_mean = mean_quality(std::span<const RankedItem>(rc.items()).first(top));
  const double gain = curve.auc - base.random.auc;
  const double head = base.upper.auc - base.random.auc;
  verdict("7", gain >= 0.6 * head && top_mean - corpus_mean >= 0.05,
          fmt("held-out N=%zu: AUC qanet %.4f, random %.4f, upper %.4f, (qanet-random)/(upper-random) = %.3f "
              "(need >= 0.6); top-20%% mean %.4f vs corpus mean %.4f (+%.4f, need >= 0.05)",
              rc.size(), curve.auc, base.random.auc, base.upper.auc, gain / head, top_mean, corpus_mean,
              top_mean - corpus_mean),
          corpus_seconds + t7.seconds());

  // Threshold chosen on half of the held-out corpus, checked on the other half.
  {
    Timer t;
    std::vector<ScoredItem> val, hold;
    for (std::size_t k = 0; k < ranked.size(); ++k)
      (k % 2 ? hold : val).push_back({ranked[k].id, ranked[k].score, ranked[k].gt_quality});
    bool ok = false;
    std::string detail;
    try {
      const ThresholdChoice c = choose_threshold(val, 0.95);
      double s = 0;
      std::size_t kept = 0;
      for (const auto& it : hold)
        if (it.score >= c.threshold) s += it.gt_quality, ++kept;
      const double m = kept ? s / static_cast<double>(kept) : 0;
      ok = c.retained_fraction > 0 && kept > 0 && m >= 0.95 - 0.02;
      detail = fmt("threshold for q*=0.95: %.4f, validation retained %.3f (mean %.4f), held-out retained %zu/%zu "
                   "with mean %.4f (need >= 0.93)",
                   c.threshold, c.retained_fraction, c.mean_quality, kept, hold.size(), m);
    } catch (const Error& e) {
      detail = std::string("choose_threshold failed: ") + e.what();
    }
    verdict("7b", ok, detail, t.seconds());
  }

  // Forge on the held-out pairs with a validation-optimal threshold.
  {
    Timer t;
    std::vector<ScoredItem> val;
    for (const auto& it : ranked) val.push_back({it.id, it.score, it.gt_quality});
    // Validation-optimal here: the threshold maximizing retained mean quality
    // among thresholds keeping at least 10% of the corpus.
    const ThresholdChoice all = choose_threshold(val, 0);
    double best_mean = -1, theta = 0;
    for (const auto& row : all.tradeoff)
      if (row.retained_fraction >= 0.1 && row.mean_quality > best_mean) best_mean = row.mean_quality, theta = row.threshold;

    std::vector<FramePair> inputs;
    std::map<std::string, double> quality_of;
    for (const auto& it : test_items) {
      inputs.push_back(it.pair);
      quality_of[it.pair.pair_id] = it.labeled.quality;
    }
    PipelineConfig pc;
    pc.threshold = theta;
    pc.seed = 11;
    const PipelineOutput out1 = run_pipeline(inputs, trained.model, pc);
    double kept_sum = 0, all_sum = 0;
    std::size_t kept = 0, scored = 0;
    for (const auto& o : out1.outcomes) {
      if (!o.score) continue;
      ++scored;
      all_sum += quality_of[o.pair_id];
      if (o.retained) kept_sum += quality_of[o.pair_id], ++kept;
    }
    const double kept_mean = kept ? kept_sum / static_cast<double>(kept) : 0;
    const double all_mean = all_sum / static_cast<double>(scored);
    verdict("7c", kept > 0 && kept_mean > all_mean,
            fmt("forge at threshold %.4f: retained %zu/%zu, retained mean quality %.4f vs unfiltered %.4f, "
                "%zu relative pairs",
                theta, kept, scored, kept_mean, all_mean, out1.report.relative_pairs),
            t.seconds());

    Timer t9;
    auto serialize = [](const PipelineOutput& o) {
      std::string s;
      for (const auto& r : o.records) s += dataset_record_to_json(r) + "\n";
      return std::make_pair(s, report_to_json(o.report));
    };
    const auto a = serialize(out1);
    const auto b = serialize(run_pipeline(inputs, trained.model, pc));
    verdict("9", a == b && !a.first.empty(),
            fmt("forge twice: dataset %zu bytes %s, report %s", a.first.size(),
                a.first == b.first ? "identical" : "DIFFERENT", a.second == b.second ? "identical" : "DIFFERENT"),
            t9.seconds() + t.seconds());
  }

  Timer t8;
  const auto variants = standard_variants();
  const auto rows = ablation_suite(train_set, test_set, variants, arch, cfg);
  double full = 0;
  for (const auto& r : rows)
    if (r.variant == "Full") full = r.auc;
  bool ok = true;
  std::string table;
  for (const auto& r : rows) {
    table += fmt(" %s=%.4f", r.variant.c_str(), r.auc);
    if (r.variant.front() == '-' && full < r.auc - 0.005) ok = false;
  }
  verdict("8", ok, "ablation AUCs (Full must be >= each ablated - 0.005):" + table, t8.seconds());
}

void criterion_10() {
  Timer t;
  oracle::Gen g(0x3d1);
  std::map<OrderKey, Closer> truth, inverted, coin;
  for (std::size_t i = 0; i < 10000; ++i) {
    const OrderKey k{fmt("img%03zu", i % 97), i};
    const Closer c = g.coin() ? Closer::A : Closer::B;
    truth[k] = c;
    inverted[k] = c == Closer::A ? Closer::B : Closer::A;
    coin[k] = g.coin() ? Closer::A : Closer::B;
  }
  const double self = whdr(truth, truth), inv = whdr(inverted, truth), flip = whdr(coin, truth);
  verdict("10", self == 0.0 && inv == 1.0 && std::abs(flip - 0.5) <= 0.02,
          fmt("WHDR: self %.3f, inverted %.3f, coin-flip %.4f on 10^4 pairs", self, inv, flip), t.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  try {
    criterion_1();
    criterion_2();
    double exact_min_quality = 0;
    criterion_3_and_5_exact(exact_min_quality);
    criterion_4();
    criterion_5(exact_min_quality);
    criterion_6();
    criterion_10();
    criteria_7_to_9(quick);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance run aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
