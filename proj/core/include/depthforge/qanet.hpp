#pragma once

// Quality assessment network.
//
//   point cues (n x d) --shared MLP, ReLU--> n x 128 --column max--> 128 --+
//                                                                         +--> head MLP --> score
//   recon cues (2)     --MLP, ReLU-------------------------------> 32  ---+
//
// The point branch is permutation invariant. Parameters live in one flat
// vector so the optimizer and gradient checks can treat them uniformly.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "depthforge/cues.hpp"

namespace depthforge {

struct QaArch {
  CueMask mask;
  std::vector<int> point_widths{32, 64, 128};
  std::vector<int> recon_widths{16, 32};
  std::vector<int> head_widths{64, 32};  // hidden layers; a 1-unit output layer follows
  int format_version = 1;

  int point_in() const { return mask.point_dim(); }
  int recon_in() const { return mask.recon_dim(); }
  bool has_recon_branch() const { return recon_in() > 0; }
  int head_in() const;
  bool operator==(const QaArch&) const = default;
};

/// Dense layer stored row-major (out x in) at `offset`, bias follows.
struct LayerShape {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;
  bool relu = true;

  std::size_t weight_offset() const { return offset; }
  std::size_t bias_offset() const { return offset + static_cast<std::size_t>(in) * out; }
  std::size_t size() const { return static_cast<std::size_t>(in + 1) * out; }
};

struct QaModel {
  QaArch arch;
  std::vector<LayerShape> point_layers;
  std::vector<LayerShape> recon_layers;
  std::vector<LayerShape> head_layers;
  std::vector<double> params;

  /// Layout for `arch` with every parameter zero. Throws InvalidInput on an
  /// arch with no point cues or non-positive widths.
  static QaModel zeros(const QaArch& arch);
  std::size_t parameter_count() const { return params.size(); }
  const LayerShape& output_layer() const { return head_layers.back(); }
};

/// Glorot-uniform weights, zero biases.
QaModel init_model(const QaArch& arch, std::uint64_t seed);

/// Predicted quality score. Throws DimMismatch if the cue vector does not
/// match the model's input layout or has no points.
double score(const QaModel& model, const CueVector& cv);

/// Scores `cv` and accumulates upstream * d(score)/d(params) into `grad`
/// (size parameter_count()). Max-pool ties route to the lowest row index.
double score_and_accumulate(const QaModel& model, const CueVector& cv, double upstream,
                            std::span<double> grad);

/// Pairwise logistic ranking loss; s1 > s2 means the first item should score
/// higher. Throws TiedGroundTruth when s1 == s2.
double ranking_loss(double p1, double p2, double s1, double s2);

/// d ranking_loss / d p1 (the derivative with respect to p2 is its negation).
double ranking_loss_dp1(double p1, double p2, double s1, double s2);

struct TrainPair {
  const CueVector* a = nullptr;
  const CueVector* b = nullptr;
  double s1 = 0;
  double s2 = 0;
};

/// Mean ranking loss over the batch and its gradient with respect to params.
double batch_loss_and_gradient(const QaModel& model, std::span<const TrainPair> batch,
                               std::vector<double>& grad);

struct TrainConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  int pairs_per_epoch = 2048;
  double delta_pair = 0.05;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct TrainState {
  QaModel model;
  AdamState adam;
};

/// One adaptive-moments update on the batch; returns the batch loss measured
/// before the update. Throws NonFiniteGradient with the offending pair ids.
double grad_step(TrainState& state, std::span<const TrainPair> batch, const TrainConfig& cfg);

struct LabeledCues {
  CueVector cues;
  double quality = 0;
};

struct TrainLogRow {
  int epoch = 0;
  double loss = 0;
  double val_acc = 0;
};

struct TrainResult {
  QaModel model;  // best validation pairwise accuracy
  std::vector<TrainLogRow> log;
  int best_epoch = 0;
  double best_val_acc = 0;
};

/// Fraction of pairs with |quality difference| >= delta whose predicted
/// scores are ordered the same way. Equal scores count as wrong. Returns
/// NaN when there is no such pair.
double pairwise_accuracy(std::span<const double> scores, std::span<const double> quality,
                         double delta);

/// Trains on `corpus`. Cue vectors are conformed to arch.mask. Throws
/// NoEligiblePairs if no training pair differs in quality by delta_pair.
TrainResult train(std::span<const LabeledCues> corpus, const QaArch& arch,
                  const TrainConfig& cfg,
                  const std::function<void(const TrainLogRow&)>& on_epoch = {});

}  // namespace depthforge
