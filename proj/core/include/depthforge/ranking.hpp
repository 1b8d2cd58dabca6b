#pragma once

// Quality-ranking curves, their baselines, the cue ablation harness and the
// relative-depth disagreement rate.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "depthforge/cues.hpp"
#include "depthforge/qanet.hpp"

namespace depthforge {

struct RankedItem {
  std::string id;
  double score = 0;
  double gt_quality = 0;
};

/// Items ordered by descending score, ties by ascending id.
class RankedCorpus {
 public:
  explicit RankedCorpus(std::vector<RankedItem> items);
  const std::vector<RankedItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<RankedItem> items_;
};

struct QualityCurve {
  std::array<double, 100> values{};  // values[n - 1] = mean quality of the top n%
  double auc = 0;                    // mean of the 100 values
};

/// Throws EmptyCorpus.
QualityCurve quality_curve(const RankedCorpus& rc);

struct Baselines {
  QualityCurve upper;   // ranking by ground-truth quality
  QualityCurve random;  // mean curve over seeded shuffles
};

Baselines baselines(std::span<const RankedItem> corpus, std::uint64_t seed = 0, int shuffles = 20);

struct AblationVariant {
  std::string name;
  std::vector<CueName> drop;
};

/// Full plus the five single-cue ablations.
std::vector<AblationVariant> standard_variants();

struct AblationRow {
  std::string variant;
  double auc = 0;
};

/// Trains one model per variant on `train` (identical config and seeds) and
/// evaluates each on `test`. Upperbound and Random Ranking rows are appended.
std::vector<AblationRow> ablation_suite(std::span<const LabeledCues> train,
                                        std::span<const LabeledCues> test,
                                        std::span<const AblationVariant> variants,
                                        const QaArch& base_arch, const TrainConfig& cfg);

std::string ablation_csv(std::span<const AblationRow> rows);
std::string curve_csv(const QualityCurve& curve);

/// Which point of an annotated pair is closer to the camera.
enum class Closer { A, B, Tie };

char to_char(Closer c);
Closer closer_from_char(char c);

struct OrderKey {
  std::string image_id;
  std::size_t index = 0;
  auto operator<=>(const OrderKey&) const = default;
};

/// Unweighted disagreement rate between predicted and annotated orderings.
/// A predicted tie counts as a disagreement. Throws MissingPrediction.
double whdr(const std::map<OrderKey, Closer>& predictions,
            const std::map<OrderKey, Closer>& annotations);

}  // namespace depthforge
