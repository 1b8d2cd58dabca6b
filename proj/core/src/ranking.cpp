#include "depthforge/ranking.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "depthforge/util.hpp"

namespace depthforge {

RankedCorpus::RankedCorpus(std::vector<RankedItem> items) : items_(std::move(items)) {
  std::sort(items_.begin(), items_.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

namespace {

QualityCurve curve_of(const std::vector<double>& ordered_quality) {
  const std::size_t n = ordered_quality.size();
  if (n == 0) throw Error(ErrorCode::EmptyCorpus, "quality curve of an empty corpus");
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + ordered_quality[i];

  QualityCurve curve;
  double sum = 0;
  for (std::size_t pct = 1; pct <= 100; ++pct) {
    const std::size_t k = (pct * n + 99) / 100;  // ceil(pct / 100 * n), never 0 for n >= 1
    curve.values[pct - 1] = prefix[k] / static_cast<double>(k);
    sum += curve.values[pct - 1];
  }
  curve.auc = sum / 100.0;
  return curve;
}

}  // namespace

QualityCurve quality_curve(const RankedCorpus& rc) {
  std::vector<double> q;
  q.reserve(rc.size());
  for (const auto& item : rc.items()) q.push_back(item.gt_quality);
  return curve_of(q);
}

Baselines baselines(std::span<const RankedItem> corpus, std::uint64_t seed, int shuffles) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "baselines of an empty corpus");
  std::vector<RankedItem> oracle(corpus.begin(), corpus.end());
  for (auto& item : oracle) item.score = item.gt_quality;

  Baselines out;
  out.upper = quality_curve(RankedCorpus(std::move(oracle)));

  std::vector<double> q;
  for (const auto& item : corpus) q.push_back(item.gt_quality);
  std::mt19937_64 rng(mix_seed(seed, "random-ranking"));
  for (int s = 0; s < shuffles; ++s) {
    std::shuffle(q.begin(), q.end(), rng);
    const QualityCurve c = curve_of(q);
    for (std::size_t k = 0; k < 100; ++k) out.random.values[k] += c.values[k] / shuffles;
  }
  out.random.auc = std::accumulate(out.random.values.begin(), out.random.values.end(), 0.0) / 100.0;
  return out;
}

std::vector<AblationVariant> standard_variants() {
  return {
      {"-2D", {CueName::Coords2D}},  {"-Sam", {CueName::Sampson}}, {"-Ang", {CueName::Angle}},
      {"-Focal", {CueName::Focal}},  {"-RepErr", {CueName::RepErr}}, {"Full", {}},
  };
}

std::vector<AblationRow> ablation_suite(std::span<const LabeledCues> train_set,
                                        std::span<const LabeledCues> test_set,
                                        std::span<const AblationVariant> variants,
                                        const QaArch& base_arch, const TrainConfig& cfg) {
  if (test_set.empty()) throw Error(ErrorCode::EmptyCorpus, "ablation test corpus is empty");
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    QaArch arch = base_arch;
    arch.mask = CueMask::without(variant.drop);
    arch.mask.point_reproj = base_arch.mask.point_reproj;
    const TrainResult trained = train(train_set, arch, cfg);

    std::vector<RankedItem> ranked;
    ranked.reserve(test_set.size());
    for (const auto& item : test_set) {
      ranked.push_back({item.cues.id, score(trained.model, conform_cues(item.cues, arch.mask)), item.quality});
    }
    rows.push_back({variant.name, quality_curve(RankedCorpus(std::move(ranked))).auc});
  }

  std::vector<RankedItem> plain;
  for (const auto& item : test_set) plain.push_back({item.cues.id, 0.0, item.quality});
  const Baselines b = baselines(plain, cfg.seed);
  rows.push_back({"Upperbound", b.upper.auc});
  rows.push_back({"Random Ranking", b.random.auc});
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "variant,auc\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.variant << ',' << r.auc << '\n';
  return os.str();
}

std::string curve_csv(const QualityCurve& curve) {
  std::ostringstream os;
  os << "n_percent,mean_quality\n" << std::setprecision(17);
  for (std::size_t k = 0; k < curve.values.size(); ++k) os << k + 1 << ',' << curve.values[k] << '\n';
  return os.str();
}

char to_char(Closer c) {
  switch (c) {
    case Closer::A: return 'a';
    case Closer::B: return 'b';
    case Closer::Tie: return '=';
  }
  return '=';
}

Closer closer_from_char(char c) {
  if (c == 'a') return Closer::A;
  if (c == 'b') return Closer::B;
  if (c == '=') return Closer::Tie;
  throw Error(ErrorCode::ParseError, std::string("unknown ordering '") + c + "'");
}

double whdr(const std::map<OrderKey, Closer>& predictions,
            const std::map<OrderKey, Closer>& annotations) {
  if (annotations.empty()) throw Error(ErrorCode::EmptyCorpus, "no annotations");
  std::size_t wrong = 0;
  for (const auto& [key, truth] : annotations) {
    if (truth == Closer::Tie) {
      throw Error(ErrorCode::InvalidInput, "annotation " + key.image_id + "#" +
                                               std::to_string(key.index) + " has no closer side");
    }
    auto it = predictions.find(key);
    if (it == predictions.end()) {
      throw Error(ErrorCode::MissingPrediction,
                  "no prediction for " + key.image_id + "#" + std::to_string(key.index));
    }
    if (it->second != truth) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(annotations.size());
}

}  // namespace depthforge
