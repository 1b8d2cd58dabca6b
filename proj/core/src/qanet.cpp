#include "depthforge/qanet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "depthforge/util.hpp"

namespace depthforge {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMat>;
using Weights = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

ConstWeights weights(const std::vector<double>& p, const LayerShape& l) {
  return {p.data() + l.weight_offset(), l.out, l.in};
}
ConstVec bias(const std::vector<double>& p, const LayerShape& l) {
  return {p.data() + l.bias_offset(), l.out};
}
Weights weights(std::span<double> p, const LayerShape& l) {
  return {p.data() + l.weight_offset(), l.out, l.in};
}
Vec bias(std::span<double> p, const LayerShape& l) { return {p.data() + l.bias_offset(), l.out}; }

std::vector<LayerShape> chain(int in, const std::vector<int>& widths, bool relu_last,
                              std::size_t& offset) {
  std::vector<LayerShape> layers;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] <= 0) throw Error(ErrorCode::InvalidInput, "layer widths must be positive");
    LayerShape l{in, widths[k], offset, relu_last || k + 1 < widths.size()};
    offset += l.size();
    layers.push_back(l);
    in = widths[k];
  }
  return layers;
}

// Activations kept for the backward pass.
struct Forward {
  std::vector<RowMat> point;             // point[0] = inputs, point[k] = layer k output
  std::vector<Eigen::Index> argmax;      // per pooled coordinate
  std::vector<Eigen::VectorXd> recon;    // recon[0] = inputs
  std::vector<Eigen::VectorXd> head;     // head[0] = concatenation
  double score = 0;
};

void check_dims(const QaModel& model, const CueVector& cv) {
  const auto& arch = model.arch;
  if (cv.point_cues.cols() != arch.point_in() || cv.recon_cues.size() != arch.recon_in()) {
    std::ostringstream msg;
    msg << cv.id << ": cue dims (" << cv.point_cues.cols() << ", " << cv.recon_cues.size()
        << ") do not match model inputs (" << arch.point_in() << ", " << arch.recon_in() << ")";
    throw Error(ErrorCode::DimMismatch, msg.str());
  }
  if (cv.point_cues.rows() == 0) {
    throw Error(ErrorCode::DimMismatch, cv.id + ": empty point set");
  }
}

void forward(const QaModel& model, const CueVector& cv, Forward& fw) {
  check_dims(model, cv);
  const auto& p = model.params;

  fw.point.resize(model.point_layers.size() + 1);
  fw.point[0] = cv.point_cues;
  for (std::size_t k = 0; k < model.point_layers.size(); ++k) {
    const auto& l = model.point_layers[k];
    RowMat z = fw.point[k] * weights(p, l).transpose();
    z.rowwise() += bias(p, l).transpose();
    fw.point[k + 1] = l.relu ? RowMat(z.cwiseMax(0.0)) : z;
  }

  const RowMat& last = fw.point.back();
  const Eigen::Index width = last.cols();
  Eigen::VectorXd pooled(width);
  fw.argmax.assign(static_cast<std::size_t>(width), 0);
  for (Eigen::Index c = 0; c < width; ++c) {
    Eigen::Index best = 0;
    double v = last(0, c);
    for (Eigen::Index r = 1; r < last.rows(); ++r) {
      if (last(r, c) > v) {
        v = last(r, c);
        best = r;
      }
    }
    pooled(c) = v;
    fw.argmax[static_cast<std::size_t>(c)] = best;
  }

  fw.recon.resize(model.recon_layers.size() + 1);
  fw.recon[0] = cv.recon_cues;
  for (std::size_t k = 0; k < model.recon_layers.size(); ++k) {
    const auto& l = model.recon_layers[k];
    Eigen::VectorXd z = weights(p, l) * fw.recon[k] + bias(p, l);
    fw.recon[k + 1] = l.relu ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }

  fw.head.resize(model.head_layers.size() + 1);
  const Eigen::Index recon_width = model.arch.has_recon_branch() ? fw.recon.back().size() : 0;
  fw.head[0].resize(width + recon_width);
  fw.head[0].head(width) = pooled;
  if (recon_width > 0) fw.head[0].tail(recon_width) = fw.recon.back();
  for (std::size_t k = 0; k < model.head_layers.size(); ++k) {
    const auto& l = model.head_layers[k];
    Eigen::VectorXd z = weights(p, l) * fw.head[k] + bias(p, l);
    fw.head[k + 1] = l.relu ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  fw.score = fw.head.back()(0);
}

// Backpropagates through a chain of dense layers given d(loss)/d(output of
// the last layer); returns d(loss)/d(input of the first layer).
Eigen::VectorXd backward_vector(const std::vector<LayerShape>& layers,
                                const std::vector<Eigen::VectorXd>& acts,
                                Eigen::VectorXd delta, const std::vector<double>& p,
                                std::span<double> grad) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    if (l.relu) delta = delta.cwiseProduct((acts[k + 1].array() > 0).cast<double>().matrix());
    weights(grad, l).noalias() += delta * acts[k].transpose();
    bias(grad, l) += delta;
    delta = weights(p, l).transpose() * delta;
  }
  return delta;
}

void backward(const QaModel& model, const Forward& fw, double upstream, std::span<double> grad) {
  const auto& p = model.params;
  Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, upstream);
  delta = backward_vector(model.head_layers, fw.head, delta, p, grad);

  const Eigen::Index width = fw.point.back().cols();
  if (model.arch.has_recon_branch()) {
    backward_vector(model.recon_layers, fw.recon, delta.tail(delta.size() - width), p, grad);
  }

  // Only rows that win at least one pooled coordinate receive gradient.
  std::vector<Eigen::Index> rows(fw.argmax.begin(), fw.argmax.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  const auto m = static_cast<Eigen::Index>(rows.size());

  RowMat d_out = RowMat::Zero(m, width);
  for (Eigen::Index c = 0; c < width; ++c) {
    const auto r = std::lower_bound(rows.begin(), rows.end(), fw.argmax[static_cast<std::size_t>(c)]) - rows.begin();
    d_out(r, c) = delta(c);
  }

  for (std::size_t k = model.point_layers.size(); k-- > 0;) {
    const auto& l = model.point_layers[k];
    RowMat in(m, l.in);
    for (Eigen::Index i = 0; i < m; ++i) in.row(i) = fw.point[k].row(rows[static_cast<std::size_t>(i)]);
    if (l.relu) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto out_row = fw.point[k + 1].row(rows[static_cast<std::size_t>(i)]);
        for (Eigen::Index c = 0; c < l.out; ++c)
          if (!(out_row(c) > 0)) d_out(i, c) = 0;
      }
    }
    weights(grad, l).noalias() += d_out.transpose() * in;
    bias(grad, l) += d_out.colwise().sum().transpose();
    if (k > 0) {
      RowMat d_in = d_out * weights(p, l);
      d_out.swap(d_in);
    }
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

int QaArch::head_in() const {
  if (point_widths.empty()) return 0;
  return point_widths.back() + (has_recon_branch() && !recon_widths.empty() ? recon_widths.back() : 0);
}

QaModel QaModel::zeros(const QaArch& arch) {
  if (arch.point_in() <= 0) throw Error(ErrorCode::EmptyCues, "architecture has no point cues");
  if (arch.point_widths.empty()) throw Error(ErrorCode::InvalidInput, "point branch needs a layer");
  if (arch.has_recon_branch() && arch.recon_widths.empty()) {
    throw Error(ErrorCode::InvalidInput, "reconstruction branch needs a layer");
  }
  QaModel m;
  m.arch = arch;
  std::size_t offset = 0;
  m.point_layers = chain(arch.point_in(), arch.point_widths, true, offset);
  if (arch.has_recon_branch()) m.recon_layers = chain(arch.recon_in(), arch.recon_widths, true, offset);
  std::vector<int> head = arch.head_widths;
  head.push_back(1);
  m.head_layers = chain(arch.head_in(), head, false, offset);
  m.params.assign(offset, 0.0);
  return m;
}

QaModel init_model(const QaArch& arch, std::uint64_t seed) {
  QaModel m = QaModel::zeros(arch);
  std::mt19937_64 rng(seed);
  auto fill = [&](const std::vector<LayerShape>& layers) {
    for (const auto& l : layers) {
      const double a = std::sqrt(6.0 / (l.in + l.out));
      std::uniform_real_distribution<double> u(-a, a);
      auto W = weights(std::span<double>(m.params), l);
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = u(rng);
    }
  };
  fill(m.point_layers);
  fill(m.recon_layers);
  fill(m.head_layers);
  return m;
}

double score(const QaModel& model, const CueVector& cv) {
  Forward fw;
  forward(model, cv, fw);
  return fw.score;
}

double score_and_accumulate(const QaModel& model, const CueVector& cv, double upstream,
                            std::span<double> grad) {
  if (grad.size() != model.params.size()) {
    throw Error(ErrorCode::DimMismatch, "gradient buffer size does not match the model");
  }
  Forward fw;
  forward(model, cv, fw);
  backward(model, fw, upstream, grad);
  return fw.score;
}

double ranking_loss(double p1, double p2, double s1, double s2) {
  if (s1 == s2) throw Error(ErrorCode::TiedGroundTruth, "ranking loss needs s1 != s2");
  return s1 > s2 ? softplus(p2 - p1) : softplus(p1 - p2);
}

double ranking_loss_dp1(double p1, double p2, double s1, double s2) {
  if (s1 == s2) throw Error(ErrorCode::TiedGroundTruth, "ranking loss needs s1 != s2");
  return s1 > s2 ? -sigmoid(p2 - p1) : sigmoid(p1 - p2);
}

double batch_loss_and_gradient(const QaModel& model, std::span<const TrainPair> batch,
                               std::vector<double>& grad) {
  if (batch.empty()) throw Error(ErrorCode::InvalidInput, "empty batch");
  grad.assign(model.params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0;
  Forward fa, fb;
  for (const auto& pair : batch) {
    forward(model, *pair.a, fa);
    forward(model, *pair.b, fb);
    total += ranking_loss(fa.score, fb.score, pair.s1, pair.s2);
    const double g = ranking_loss_dp1(fa.score, fb.score, pair.s1, pair.s2) * inv;
    backward(model, fa, g, grad);
    backward(model, fb, -g, grad);
  }
  return total * inv;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidInput, "TrainConfig: " + msg); };
  if (!(step_size > 0)) fail("step_size must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) fail("moment decays must be in (0, 1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
  if (batch_size < 1 || epochs < 1 || pairs_per_epoch < 1) fail("batch_size, epochs, pairs_per_epoch must be >= 1");
  if (!(delta_pair > 0 && delta_pair < 1)) fail("delta_pair must be in (0, 1)");
  if (!(validation_fraction > 0 && validation_fraction < 1)) fail("validation_fraction must be in (0, 1)");
}

double grad_step(TrainState& state, std::span<const TrainPair> batch, const TrainConfig& cfg) {
  auto& model = state.model;
  auto& adam = state.adam;
  const std::size_t n = model.params.size();
  if (adam.m.size() != n) {
    adam.m.assign(n, 0.0);
    adam.v.assign(n, 0.0);
    adam.step = 0;
  }

  std::vector<double> grad;
  const double loss = batch_loss_and_gradient(model, batch, grad);
  const bool finite = std::isfinite(loss) &&
                      std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite loss or gradient in batch of " << batch.size() << " pairs:";
    for (const auto& pair : batch) {
      const double pa = score(model, *pair.a);
      const double pb = score(model, *pair.b);
      if (!std::isfinite(pa) || !std::isfinite(pb) || !std::isfinite(ranking_loss(pa, pb, pair.s1, pair.s2))) {
        msg << " (" << pair.a->id << " score " << pa << " q " << pair.s1 << ", " << pair.b->id
            << " score " << pb << " q " << pair.s2 << ")";
      }
    }
    throw Error(ErrorCode::NonFiniteGradient, msg.str());
  }

  ++adam.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
  for (std::size_t i = 0; i < n; ++i) {
    adam.m[i] = cfg.beta1 * adam.m[i] + (1 - cfg.beta1) * grad[i];
    adam.v[i] = cfg.beta2 * adam.v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = adam.m[i] / c1;
    const double v_hat = adam.v[i] / c2;
    model.params[i] -= cfg.step_size * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  return loss;
}

double pairwise_accuracy(std::span<const double> scores, std::span<const double> quality,
                         double delta) {
  std::uint64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = i + 1; j < scores.size(); ++j) {
      const double dq = quality[i] - quality[j];
      if (std::abs(dq) < delta) continue;
      ++total;
      const double ds = scores[i] - scores[j];
      if ((dq > 0 && ds > 0) || (dq < 0 && ds < 0)) ++correct;
    }
  }
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult train(std::span<const LabeledCues> corpus, const QaArch& arch, const TrainConfig& cfg,
                  const std::function<void(const TrainLogRow&)>& on_epoch) {
  cfg.validate();
  if (corpus.size() < 2) throw Error(ErrorCode::NoEligiblePairs, "corpus has fewer than two items");

  std::vector<CueVector> cues;
  std::vector<double> quality;
  cues.reserve(corpus.size());
  for (const auto& item : corpus) {
    cues.push_back(conform_cues(item.cues, arch.mask));
    quality.push_back(item.quality);
  }

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(mix_seed(cfg.seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(order.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  const std::vector<std::size_t> trn(order.begin() + static_cast<long>(n_val), order.end());

  const auto [qmin, qmax] = std::minmax_element(trn.begin(), trn.end(), [&](std::size_t a, std::size_t b) {
    return quality[a] < quality[b];
  });
  if (quality[*qmax] - quality[*qmin] < cfg.delta_pair) {
    throw Error(ErrorCode::NoEligiblePairs, "no training pair differs in quality by delta_pair");
  }

  std::vector<double> val_quality;
  for (std::size_t i : val) val_quality.push_back(quality[i]);

  TrainState state{init_model(arch, mix_seed(cfg.seed, "init")), {}};
  TrainResult result;
  result.model = state.model;
  result.best_val_acc = -1;

  std::mt19937_64 rng(mix_seed(cfg.seed, "pairs"));
  std::uniform_int_distribution<std::size_t> pick(0, trn.size() - 1);
  std::vector<TrainPair> epoch_pairs;
  std::vector<double> val_scores(val.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    epoch_pairs.clear();
    while (epoch_pairs.size() < static_cast<std::size_t>(cfg.pairs_per_epoch)) {
      const std::size_t i = trn[pick(rng)];
      const std::size_t j = trn[pick(rng)];
      if (std::abs(quality[i] - quality[j]) < cfg.delta_pair) continue;
      epoch_pairs.push_back({&cues[i], &cues[j], quality[i], quality[j]});
    }

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < epoch_pairs.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), epoch_pairs.size() - start);
      loss_sum += grad_step(state, std::span<const TrainPair>(epoch_pairs).subspan(start, len), cfg);
      ++batches;
    }

    for (std::size_t k = 0; k < val.size(); ++k) val_scores[k] = score(state.model, cues[val[k]]);
    TrainLogRow row{epoch, loss_sum / static_cast<double>(batches),
                    pairwise_accuracy(val_scores, val_quality, cfg.delta_pair)};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    // NaN accuracy (no eligible validation pair) falls back to the latest epoch.
    const bool better = std::isnan(row.val_acc) ? true : row.val_acc > result.best_val_acc;
    if (better) {
      result.best_val_acc = std::isnan(row.val_acc) ? result.best_val_acc : row.val_acc;
      result.best_epoch = epoch;
      result.model = state.model;
    }
  }
  return result;
}

}  // namespace depthforge
