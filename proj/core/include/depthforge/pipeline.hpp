#pragma once

// End-to-end data forging: reconstruct each frame pair, score it, keep the
// confident ones and emit relative-depth training records.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depthforge/cues.hpp"
#include "depthforge/geometry.hpp"
#include "depthforge/qanet.hpp"
#include "depthforge/ranking.hpp"

namespace depthforge {

enum class View { A, B };

struct PipelineConfig {
  SfmConfig sfm;
  std::optional<double> threshold;     // retain iff score >= threshold
  std::optional<double> top_fraction;  // or: retain the best fraction after scoring everything
  std::optional<CueMask> expected_mask;
  int pairs_per_image = 281;
  double emission_margin = 1.03;
  std::uint64_t seed = 0;

  /// Exactly one of threshold / top_fraction, P >= 1, margin > 1.
  void validate() const;
};

struct DatasetPair {
  double xa = 0, ya = 0;  // first point
  double xb = 0, yb = 0;  // second point
  Closer closer = Closer::A;
  int ia = 0, ib = 0;     // correspondence ids
};

struct DatasetRecord {
  std::string image_id;  // "<pair_id>/a" or "<pair_id>/b"
  std::vector<DatasetPair> pairs;
};

/// Uniform sample without replacement of up to `max_pairs` point pairs whose
/// depth ratio in `view` is at least `margin`. Deterministic in `seed`.
std::vector<DatasetPair> sample_pairs(const Reconstruction& recon, View view, int max_pairs,
                                      double margin, std::uint64_t seed);

struct PairOutcome {
  std::string pair_id;
  std::optional<ErrorCode> rejection;  // reconstruction / cue failure
  std::optional<double> score;
  bool retained = false;
};

struct PipelineReport {
  std::size_t inputs = 0;
  std::size_t reconstructed = 0;
  std::size_t retained = 0;
  std::size_t records = 0;
  std::size_t relative_pairs = 0;
  std::map<std::string, std::size_t> rejections;  // reason -> count, includes "BelowThreshold"
};

struct PipelineOutput {
  std::vector<DatasetRecord> records;
  std::vector<PairOutcome> outcomes;  // ascending pair_id
  PipelineReport report;
};

/// Per-pair failures are recorded in the report; ModelArchMismatch (model and
/// cfg.expected_mask disagree) aborts.
PipelineOutput run_pipeline(std::span<const FramePair> inputs, const QaModel& model,
                            const PipelineConfig& cfg);

struct ScoredItem {
  std::string id;
  double score = 0;
  double gt_quality = 0;
};

struct ThresholdRow {
  double threshold = 0;
  double retained_fraction = 0;
  double mean_quality = 0;
};

struct ThresholdChoice {
  double threshold = 0;
  double retained_fraction = 0;
  double mean_quality = 0;
  std::vector<ThresholdRow> tradeoff;  // one row per distinct score, descending
};

/// Smallest threshold whose retained set {score >= threshold} has mean
/// quality >= target. Throws TargetUnreachable or EmptyCorpus.
ThresholdChoice choose_threshold(std::span<const ScoredItem> validation, double target);

}  // namespace depthforge
