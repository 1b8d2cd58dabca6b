#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "depthforge/error.hpp"
#include "depthforge/qanet.hpp"
#include "oracles.hpp"

using namespace depthforge;

namespace {

QaArch small_arch(const CueMask& mask = {}) {
  QaArch a;
  a.mask = mask;
  a.point_widths = {5, 6};
  a.recon_widths = {3};
  a.head_widths = {4};
  return a;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidInput;
}

// Learnable toy corpus: quality is a smooth function of the cues.
std::vector<LabeledCues> toy_corpus(int n, std::uint64_t seed) {
  oracle::Gen g(seed);
  std::vector<LabeledCues> out;
  for (int i = 0; i < n; ++i) {
    LabeledCues lc;
    lc.cues = g.cues(g.integer(5, 30));
    lc.cues.id = "toy" + std::to_string(i);
    const double z = lc.cues.point_cues.col(4).maxCoeff() + lc.cues.recon_cues(1);
    lc.quality = 1 / (1 + std::exp(-2 * z));
    out.push_back(std::move(lc));
  }
  return out;
}

}  // namespace

TEST(QaModel, LayoutMatchesArchitecture) {
  const QaModel m = QaModel::zeros(QaArch{});
  ASSERT_EQ(m.point_layers.size(), 3u);
  ASSERT_EQ(m.recon_layers.size(), 2u);
  ASSERT_EQ(m.head_layers.size(), 3u);
  EXPECT_EQ(m.point_layers[0].in, 7);
  EXPECT_EQ(m.recon_layers[0].in, 2);
  EXPECT_EQ(m.head_layers[0].in, 160);
  EXPECT_EQ(m.output_layer().out, 1);
  EXPECT_FALSE(m.output_layer().relu);
  const std::size_t expect = 8 * 32 + 33 * 64 + 65 * 128 + 3 * 16 + 17 * 32 + 161 * 64 + 65 * 32 + 33 * 1;
  EXPECT_EQ(m.parameter_count(), expect);
  std::size_t off = 0;
  for (const auto* group : {&m.point_layers, &m.recon_layers, &m.head_layers}) {
    for (const auto& l : *group) {
      EXPECT_EQ(l.offset, off);
      off += l.size();
    }
  }
  EXPECT_EQ(off, m.parameter_count());
}

TEST(QaModel, NoReconBranchWhenFocalAndReprojDropped) {
  const QaModel m = QaModel::zeros(small_arch(CueMask::without({CueName::Focal, CueName::RepErr})));
  EXPECT_TRUE(m.recon_layers.empty());
  EXPECT_EQ(m.head_layers[0].in, 6);
}

TEST(QaModel, GlorotBoundsAndZeroBias) {
  const QaModel m = init_model(QaArch{}, 17);
  for (const auto* group : {&m.point_layers, &m.recon_layers, &m.head_layers}) {
    for (const auto& l : *group) {
      const double a = std::sqrt(6.0 / (l.in + l.out));
      double sq = 0;
      for (std::size_t k = l.weight_offset(); k < l.bias_offset(); ++k) {
        ASSERT_LE(std::abs(m.params[k]), a);
        sq += m.params[k] * m.params[k];
      }
      for (std::size_t k = l.bias_offset(); k < l.offset + l.size(); ++k) ASSERT_EQ(m.params[k], 0.0);
      // Uniform(-a, a) has variance a^2 / 3.
      if (l.in * l.out >= 256) EXPECT_NEAR(sq / (l.in * l.out), a * a / 3, 0.25 * a * a / 3);
    }
  }
  EXPECT_EQ(init_model(QaArch{}, 17).params, m.params);
  EXPECT_NE(init_model(QaArch{}, 18).params, m.params);
}

TEST(Score, MatchesNaiveForwardPass) {
  oracle::Gen g(3);
  for (int trial = 0; trial < 20; ++trial) {
    CueMask mask;
    if (trial % 3 == 1) mask = CueMask::without({CueName::Sampson, CueName::Focal});
    if (trial % 3 == 2) mask = CueMask::without({CueName::Focal, CueName::RepErr});
    const QaModel m = init_model(trial < 10 ? QaArch{mask} : small_arch(mask), static_cast<std::uint64_t>(trial));
    const CueVector cv = g.cues(g.integer(1, 40), mask);
    EXPECT_NEAR(score(m, cv), oracle::score(m, cv), 1e-12);
  }
}

TEST(Score, SinglePointPoolsToItself) {
  oracle::Gen g(5);
  const QaModel m = init_model(QaArch{}, 1);
  const CueVector one = g.cues(1);
  CueVector twice = one;
  twice.point_cues.resize(2, 7);
  twice.point_cues.row(0) = one.point_cues.row(0);
  twice.point_cues.row(1) = one.point_cues.row(0);
  EXPECT_NEAR(score(m, one), score(m, twice), 1e-14);
}

TEST(Score, PermutationInvariantBitExact) {
  oracle::Gen g(7);
  const QaModel m = init_model(QaArch{}, 2);
  for (int trial = 0; trial < 30; ++trial) {
    const CueVector cv = g.cues(g.integer(2, 60));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(cv.n()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.rng);
    CueVector shuffled = cv;
    for (Eigen::Index r = 0; r < cv.n(); ++r) shuffled.point_cues.row(r) = cv.point_cues.row(perm[static_cast<std::size_t>(r)]);
    EXPECT_EQ(score(m, cv), score(m, shuffled));
  }
}

TEST(Score, DuplicatingARowDoesNotChangeScore) {
  oracle::Gen g(8);
  const QaModel m = init_model(QaArch{}, 4);
  const CueVector cv = g.cues(12);
  CueVector dup = cv;
  dup.point_cues.conservativeResize(13, Eigen::NoChange);
  dup.point_cues.row(12) = cv.point_cues.row(5);
  EXPECT_EQ(score(m, cv), score(m, dup));
}

TEST(Score, DimensionMismatch) {
  oracle::Gen g(9);
  const QaModel m = init_model(QaArch{}, 4);
  const CueVector narrow = g.cues(10, CueMask::without({CueName::Angle}));
  EXPECT_EQ(code_of([&] { score(m, narrow); }), ErrorCode::DimMismatch);
  CueVector empty = g.cues(1);
  empty.point_cues.resize(0, 7);
  EXPECT_EQ(code_of([&] { score(m, empty); }), ErrorCode::DimMismatch);
  CueVector short_recon = g.cues(4);
  short_recon.recon_cues.resize(1);
  EXPECT_EQ(code_of([&] { score(m, short_recon); }), ErrorCode::DimMismatch);
}

TEST(RankingLoss, ReferenceValues) {
  EXPECT_NEAR(ranking_loss(0, 0, 0.9, 0.1), std::log(2.0), 1e-15);
  EXPECT_NEAR(ranking_loss(10, 0, 0.9, 0.1), 4.5398899216870535e-05, 1e-16);
  EXPECT_NEAR(ranking_loss(-50, 0, 0.9, 0.1), 50.0, 1e-12);
  EXPECT_NEAR(ranking_loss(0, 10, 0.1, 0.9), 4.5398899216870535e-05, 1e-16);
  EXPECT_TRUE(std::isfinite(ranking_loss(-1e6, 1e6, 0.9, 0.1)));
  EXPECT_EQ(code_of([] { ranking_loss(1, 2, 0.5, 0.5); }), ErrorCode::TiedGroundTruth);
  EXPECT_EQ(code_of([] { ranking_loss_dp1(1, 2, 0.5, 0.5); }), ErrorCode::TiedGroundTruth);
}

TEST(RankingLoss, SymmetricMonotoneAndMatchesNaive) {
  oracle::Gen g(11);
  for (int i = 0; i < 1000; ++i) {
    const double p1 = g.uniform(-20, 20), p2 = g.uniform(-20, 20);
    double s1 = g.uniform(0, 1), s2 = g.uniform(0, 1);
    if (s1 == s2) s2 += 0.1;
    const double l = ranking_loss(p1, p2, s1, s2);
    EXPECT_EQ(l, ranking_loss(p2, p1, s2, s1));
    EXPECT_NEAR(l, oracle::naive_loss(p1, p2, s1, s2), 1e-12 * std::max(1.0, l));
    const double up = ranking_loss(p1 + 0.5, p2, s1, s2);
    if (s1 > s2) EXPECT_LT(up, l); else EXPECT_GT(up, l);
    const double h = 1e-6;
    const double fd = (ranking_loss(p1 + h, p2, s1, s2) - ranking_loss(p1 - h, p2, s1, s2)) / (2 * h);
    EXPECT_NEAR(ranking_loss_dp1(p1, p2, s1, s2), fd, 1e-7);
  }
}

TEST(Gradient, MatchesFiniteDifferencesOnSmallNets) {
  oracle::Gen g(13);
  for (int trial = 0; trial < 8; ++trial) {
    CueMask mask;
    if (trial % 2) mask = CueMask::without({CueName::Coords2D, CueName::Focal});
    // Random biases: with zero biases a row whose inputs all die sits
    // exactly on the next ReLU kink, where central differences are meaningless.
    QaModel m = init_model(small_arch(mask), 100 + static_cast<std::uint64_t>(trial));
    for (double& v : m.params) v = g.uniform(-0.5, 0.5);
    std::vector<CueVector> cues;
    for (int k = 0; k < 6; ++k) cues.push_back(g.cues(g.integer(1, 12), mask));
    std::vector<TrainPair> batch;
    for (int k = 0; k < 3; ++k) batch.push_back({&cues[2 * k], &cues[2 * k + 1], g.uniform(0, 1), g.uniform(0, 1)});
    std::vector<double> grad;
    batch_loss_and_gradient(m, batch, grad);
    const std::vector<double> fd = oracle::fd_gradient(m, batch, 1e-6);
    ASSERT_EQ(grad.size(), fd.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
      EXPECT_NEAR(grad[i], fd[i], 1e-6 + 1e-5 * std::abs(fd[i])) << "trial " << trial << " param " << i;
    }
  }
}

TEST(Gradient, AccumulatesScaledByUpstream) {
  oracle::Gen g(14);
  const QaModel m = init_model(small_arch(), 5);
  const CueVector cv = g.cues(7);
  std::vector<double> g1(m.parameter_count(), 0.0), g3(m.parameter_count(), 0.0);
  score_and_accumulate(m, cv, 1.0, g1);
  score_and_accumulate(m, cv, 1.0, g3);
  score_and_accumulate(m, cv, 1.0, g3);
  score_and_accumulate(m, cv, 1.0, g3);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 3 * g1[i], 1e-12 * (1 + std::abs(g1[i])));
  std::vector<double> wrong(3);
  EXPECT_EQ(code_of([&] { score_and_accumulate(m, cv, 1.0, wrong); }), ErrorCode::DimMismatch);
}

TEST(Gradient, ZeroOutputLayerGivesLogTwo) {
  oracle::Gen g(15);
  QaModel m = init_model(QaArch{}, 6);
  const auto& out = m.output_layer();
  for (std::size_t k = out.offset; k < out.offset + out.size(); ++k) m.params[k] = 0;
  const CueVector a = g.cues(20), b = g.cues(30);
  const TrainPair pr{&a, &b, 0.8, 0.2};
  std::vector<double> grad;
  EXPECT_NEAR(batch_loss_and_gradient(m, std::span<const TrainPair>(&pr, 1), grad), std::log(2.0), 1e-15);
}

TEST(GradStep, FirstAdamStepMatchesClosedForm) {
  oracle::Gen g(16);
  const QaModel m = init_model(small_arch(), 7);
  const CueVector a = g.cues(9), b = g.cues(11);
  const TrainPair pr{&a, &b, 0.3, 0.7};
  std::vector<double> grad;
  batch_loss_and_gradient(m, std::span<const TrainPair>(&pr, 1), grad);

  TrainConfig cfg;
  TrainState st{m, {}};
  grad_step(st, std::span<const TrainPair>(&pr, 1), cfg);
  // After one step both moment estimates are unbiased: m_hat = g, v_hat = g^2.
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double expect = m.params[i] - cfg.step_size * grad[i] / (std::abs(grad[i]) + cfg.epsilon);
    EXPECT_NEAR(st.model.params[i], expect, 1e-15);
  }
  EXPECT_EQ(st.adam.step, 1);
}

TEST(GradStep, OverfitsASinglePair) {
  oracle::Gen g(17);
  const CueVector a = g.cues(25), b = g.cues(25);
  const TrainPair pr{&a, &b, 0.9, 0.1};
  TrainState st{init_model(QaArch{}, 8), {}};
  TrainConfig cfg;
  for (int i = 0; i < 200; ++i) grad_step(st, std::span<const TrainPair>(&pr, 1), cfg);
  EXPECT_GT(score(st.model, a) - score(st.model, b), 2.0);
}

TEST(GradStep, NonFiniteGradientIsReported) {
  oracle::Gen g(18);
  const CueVector a = g.cues(5), b = g.cues(5);
  const TrainPair pr{&a, &b, 0.9, 0.1};
  TrainState st{init_model(small_arch(), 9), {}};
  st.model.params[st.model.output_layer().bias_offset()] = std::numeric_limits<double>::quiet_NaN();
  try {
    grad_step(st, std::span<const TrainPair>(&pr, 1), TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
    EXPECT_NE(std::string(e.what()).find("gen"), std::string::npos);
  }
}

TEST(PairwiseAccuracy, CountsOnlyEligiblePairsAndTiesAreWrong) {
  const std::vector<double> q{0.1, 0.2, 0.5, 0.52};
  const std::vector<double> s{0.0, 1.0, 1.0, -5.0};
  // Eligible at delta 0.05: (0,1) right, (0,2) right, (0,3) wrong, (1,2) tie, (1,3) wrong.
  EXPECT_DOUBLE_EQ(pairwise_accuracy(s, q, 0.05), 2.0 / 5.0);
  EXPECT_TRUE(std::isnan(pairwise_accuracy(s, std::vector<double>(4, 0.5), 0.05)));
}

TEST(Train, RejectsCorpusWithoutEligiblePairs) {
  auto corpus = toy_corpus(20, 1);
  for (auto& c : corpus) c.quality = 0.5;
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_EQ(code_of([&] { train(corpus, small_arch(), cfg); }), ErrorCode::NoEligiblePairs);
  EXPECT_EQ(code_of([&] { train(std::span<const LabeledCues>(corpus).first(1), small_arch(), cfg); }),
            ErrorCode::NoEligiblePairs);
}

TEST(Train, DeterministicAndLearnsToyTask) {
  const auto corpus = toy_corpus(120, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.pairs_per_epoch = 512;
  cfg.step_size = 3e-3;
  cfg.seed = 42;
  std::vector<TrainLogRow> seen;
  const TrainResult r1 = train(corpus, small_arch(), cfg, [&](const TrainLogRow& row) { seen.push_back(row); });
  const TrainResult r2 = train(corpus, small_arch(), cfg);
  EXPECT_EQ(r1.model.params, r2.model.params);
  ASSERT_EQ(r1.log.size(), 6u);
  EXPECT_EQ(seen.size(), 6u);
  for (std::size_t k = 0; k < r1.log.size(); ++k) {
    EXPECT_EQ(r1.log[k].loss, r2.log[k].loss);
    EXPECT_EQ(r1.log[k].epoch, static_cast<int>(k) + 1);
  }
  double best = -1;
  for (const auto& row : r1.log) best = std::max(best, row.val_acc);
  EXPECT_EQ(r1.best_val_acc, best);
  EXPECT_EQ(r1.log[static_cast<std::size_t>(r1.best_epoch) - 1].val_acc, best);
  EXPECT_GT(r1.best_val_acc, 0.7);

  cfg.seed = 43;
  EXPECT_NE(train(corpus, small_arch(), cfg).model.params, r1.model.params);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.delta_pair = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.beta2 = 1;
  EXPECT_THROW(c.validate(), Error);
}
