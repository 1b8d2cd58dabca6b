#include "depthforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "depthforge/util.hpp"

namespace depthforge {

void PipelineConfig::validate() const {
  if (threshold.has_value() == top_fraction.has_value()) {
    throw Error(ErrorCode::InvalidInput, "set exactly one of threshold and top_fraction");
  }
  if (top_fraction && !(*top_fraction > 0 && *top_fraction <= 1)) {
    throw Error(ErrorCode::InvalidInput, "top_fraction must be in (0, 1]");
  }
  if (threshold && std::isnan(*threshold)) throw Error(ErrorCode::InvalidInput, "threshold is NaN");
  if (pairs_per_image < 1) throw Error(ErrorCode::InvalidInput, "pairs_per_image must be >= 1");
  if (!(emission_margin > 1)) throw Error(ErrorCode::InvalidInput, "emission_margin must be > 1");
}

std::vector<DatasetPair> sample_pairs(const Reconstruction& recon, View view, int max_pairs,
                                      double margin, std::uint64_t seed) {
  const std::size_t n = recon.points.size();
  std::vector<DatasetPair> out;
  if (n < 2 || max_pairs < 1) return out;

  auto depth = [&](std::size_t i) {
    return view == View::A ? recon.points[i].depth_a : recon.points[i].depth_b;
  };
  auto eligible = [&](std::size_t i, std::size_t j) {
    const double di = depth(i), dj = depth(j);
    return std::max(di, dj) / std::min(di, dj) >= margin;
  };
  auto emit = [&](std::size_t i, std::size_t j) {
    const auto& p = recon.points[i];
    const auto& q = recon.points[j];
    DatasetPair d;
    if (view == View::A) {
      d.xa = p.x1; d.ya = p.y1; d.xb = q.x1; d.yb = q.y1;
    } else {
      d.xa = p.x2; d.ya = p.y2; d.xb = q.x2; d.yb = q.y2;
    }
    d.closer = depth(i) < depth(j) ? Closer::A : Closer::B;
    d.ia = p.corr_id;
    d.ib = q.corr_id;
    out.push_back(d);
  };

  std::mt19937_64 rng(seed);
  const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  if (total <= 4'000'000) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pool;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (eligible(i, j)) pool.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    const std::size_t k = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(max_pairs));
    for (std::size_t s = 0; s < k; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, pool.size() - 1);
      std::swap(pool[s], pool[pick(rng)]);
      emit(pool[s].first, pool[s].second);
    }
    return out;
  }

  // Large point sets: rejection sampling over index pairs.
  std::unordered_set<std::uint64_t> seen;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::uint64_t max_draws = 50ULL * static_cast<std::uint64_t>(max_pairs) + 1000;
  for (std::uint64_t draw = 0; draw < max_draws && out.size() < static_cast<std::size_t>(max_pairs); ++draw) {
    std::size_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (!eligible(i, j) || !seen.insert(static_cast<std::uint64_t>(i) * n + j).second) continue;
    emit(i, j);
  }
  return out;
}

PipelineOutput run_pipeline(std::span<const FramePair> inputs, const QaModel& model,
                            const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.expected_mask && !(*cfg.expected_mask == model.arch.mask)) {
    throw Error(ErrorCode::ModelArchMismatch, "model cue mask differs from the configured mask");
  }

  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return inputs[a].pair_id < inputs[b].pair_id; });

  struct Slot {
    std::optional<Reconstruction> recon;
    PairOutcome outcome;
  };
  std::vector<Slot> slots(order.size());
  parallel_for(order.size(), [&](std::size_t k) {
    const FramePair& pair = inputs[order[k]];
    Slot& slot = slots[k];
    slot.outcome.pair_id = pair.pair_id;
    try {
      Reconstruction r = reconstruct_pair(pair, cfg.sfm);
      const CueVector cv = conform_cues(extract_cues(r), model.arch.mask);
      slot.outcome.score = score(model, cv);
      slot.recon = std::move(r);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DimMismatch) throw;
      slot.outcome.rejection = e.code();
    }
  });

  if (cfg.top_fraction) {
    std::vector<std::size_t> scored;
    for (std::size_t k = 0; k < slots.size(); ++k)
      if (slots[k].outcome.score) scored.push_back(k);
    std::sort(scored.begin(), scored.end(), [&](std::size_t a, std::size_t b) {
      const double sa = *slots[a].outcome.score, sb = *slots[b].outcome.score;
      if (sa != sb) return sa > sb;
      return slots[a].outcome.pair_id < slots[b].outcome.pair_id;
    });
    const auto keep = static_cast<std::size_t>(std::ceil(*cfg.top_fraction * static_cast<double>(scored.size())));
    for (std::size_t r = 0; r < std::min(keep, scored.size()); ++r) slots[scored[r]].outcome.retained = true;
  } else {
    for (auto& slot : slots)
      if (slot.outcome.score && *slot.outcome.score >= *cfg.threshold) slot.outcome.retained = true;
  }

  PipelineOutput out;
  out.report.inputs = slots.size();
  for (auto& slot : slots) {
    auto& o = slot.outcome;
    if (o.rejection) {
      ++out.report.rejections[std::string(to_string(*o.rejection))];
    } else {
      ++out.report.reconstructed;
      if (!o.retained) {
        ++out.report.rejections["BelowThreshold"];
      } else {
        ++out.report.retained;
        for (View view : {View::A, View::B}) {
          const std::string image_id = o.pair_id + (view == View::A ? "/a" : "/b");
          DatasetRecord rec{image_id, sample_pairs(*slot.recon, view, cfg.pairs_per_image,
                                                   cfg.emission_margin, mix_seed(cfg.seed, image_id))};
          out.report.relative_pairs += rec.pairs.size();
          out.records.push_back(std::move(rec));
        }
      }
    }
    out.outcomes.push_back(std::move(o));
  }
  out.report.records = out.records.size();
  return out;
}

ThresholdChoice choose_threshold(std::span<const ScoredItem> validation, double target) {
  if (validation.empty()) throw Error(ErrorCode::EmptyCorpus, "no validation items");
  std::vector<ScoredItem> items(validation.begin(), validation.end());
  std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  ThresholdChoice choice;
  const double n = static_cast<double>(items.size());
  double sum = 0;
  std::size_t k = 0;
  std::optional<std::size_t> chosen;
  while (k < items.size()) {
    const double s = items[k].score;
    while (k < items.size() && items[k].score == s) sum += items[k++].gt_quality;
    const double mean = sum / static_cast<double>(k);
    choice.tradeoff.push_back({s, static_cast<double>(k) / n, mean});
    // Tolerance absorbs summation-order rounding when target is itself a mean.
    if (mean >= target - 1e-12) chosen = choice.tradeoff.size() - 1;
  }
  if (!chosen) {
    throw Error(ErrorCode::TargetUnreachable, "no score threshold reaches mean quality " + std::to_string(target));
  }
  const ThresholdRow& row = choice.tradeoff[*chosen];
  choice.threshold = row.threshold;
  choice.retained_fraction = row.retained_fraction;
  choice.mean_quality = row.mean_quality;
  return choice;
}

}  // namespace depthforge
