#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnn/dataset.hpp"
#include "mrnn/model.hpp"
#include "mrnn/rng.hpp"
#include "mrnn/tape.hpp"

namespace mrnn {

namespace detail {

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
    if (kind_ == OptimizerKind::Adam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> values, std::span<const double> grads) {
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr_ * grads[i];
      return;
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
      values[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  double t_ = 0;
  std::vector<double> m_, v_;
};

inline void require_unit_interval(const TemporalDataset& ds, const char* who) {
  for (const auto& rec : ds.records)
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < rec.streams(); ++d)
        if (rec.observed(t, d)) {
          const double v = rec.value(t, d);
          if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string(who) +
                                        ": dataset must be normalized to [0,1] first");
        }
}

}  // namespace detail

struct TrainOutcome {
  MRnnModel model;
  std::vector<double> loss_history;  // per epoch, mean per-patient masked loss
};

// Joint mini-batch training of the interpolation and imputation blocks on
// the masked MSE objective (or of the whole stack plus predictor head on
// cross-entropy). Frozen structural zeros are restored after every step.
inline TrainOutcome train_mrnn(const TemporalDataset& ds, const MRnnConfig& cfg) {
  cfg.validate();
  detail::require_unit_interval(ds, "train_mrnn");
  if (ds.size() == 0) throw std::invalid_argument("train_mrnn: empty dataset");
  const bool cross_entropy = cfg.loss_mode == LossMode::CrossEntropy;
  if (cross_entropy && !ds.has_labels())
    throw std::invalid_argument("train_mrnn: cross-entropy training needs labels");

  Rng root(cfg.seed);
  MRnnModel model(ds.streams(), cfg, root.substream("init"));
  if (cross_entropy) model.add_predictor(root.substream("init-predictor"));
  Rng shuffle_rng = root.substream("shuffle");
  Rng dropout_rng = root.substream("dropout");
  Rng hide_rng = root.substream("hide");

  std::vector<MaskDelta> deltas;
  deltas.reserve(ds.records.size());
  for (const auto& rec : ds.records) deltas.push_back(compute_mask_delta(rec));

  std::vector<int> order(ds.size());
  for (int i = 0; i < ds.size(); ++i) order[i] = i;

  TrainOutcome out{std::move(model), {}};
  MRnnModel& m = out.model;
  detail::Optimizer opt(cfg.optimizer, cfg.learning_rate, m.params().total_size());
  Tape tape(m.params());
  const DropoutMode train_mode =
      cfg.keep_p < 1.0 && cfg.ablation != Ablation::InterpOnly ? DropoutMode::Sample
                                                               : DropoutMode::Off;
  std::vector<NodeId> batch_losses;
  std::vector<NodeId> bce_terms;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    double epoch_norm = 0.0;
    for (int start = 0; start < ds.size(); start += cfg.batch_size) {
      const int end = std::min(ds.size(), start + cfg.batch_size);
      tape.reset();
      m.params().zero_grad();
      batch_losses.clear();
      double batch_norm = 0.0;
      for (int bi = start; bi < end; ++bi) {
        const int ri = order[bi];
        const auto& rec = ds.records[ri];
        if (cross_entropy) {
          auto fwd = m.build_forward(tape, rec, deltas[ri], train_mode, &dropout_rng, true);
          bce_terms.clear();
          for (int t = 0; t < rec.length(); ++t)
            if (rec.labels[t] >= 0)
              bce_terms.push_back(tape.bce(fwd.y_hat[t], rec.labels[t]));
          if (bce_terms.empty()) continue;
          batch_losses.push_back(tape.sum_scalars(bce_terms));
          batch_norm += static_cast<double>(bce_terms.size());
          continue;
        }

        double mask_total = 0.0;
        for (std::uint8_t mm : rec.mask) mask_total += mm;
        if (mask_total == 0.0) continue;  // nothing to score for this patient

        MRnnModel::RecordForward fwd;
        if (cfg.hide_p > 0.0) {
          // Estimates for scored cells must come from data with those
          // cells removed; hiding a random subset of inputs per pass
          // trains exactly the regime inference runs in.
          PatientRecord hidden = rec;
          for (std::size_t i = 0; i < hidden.mask.size(); ++i)
            if (hidden.mask[i] && hide_rng.bernoulli(cfg.hide_p)) hidden.mask[i] = 0;
          const MaskDelta hidden_md = compute_mask_delta(hidden);
          fwd = m.build_forward(tape, hidden, hidden_md, train_mode, &dropout_rng, false);
        } else {
          fwd = m.build_forward(tape, rec, deltas[ri], train_mode, &dropout_rng, false);
        }

        std::vector<NodeId> terms(rec.length());
        for (int t = 0; t < rec.length(); ++t) {
          std::vector<double> target(rec.streams(), 0.0), weight(rec.streams(), 0.0);
          for (int d = 0; d < rec.streams(); ++d)
            if (rec.observed(t, d)) {
              target[d] = rec.value(t, d);
              weight[d] = 1.0;
            }
          terms[t] = tape.weighted_sse(fwd.x_hat[t], target, weight);
        }
        batch_losses.push_back(tape.scale(tape.sum_scalars(terms), 1.0 / mask_total));
        batch_norm += 1.0;
      }
      if (batch_losses.empty()) continue;
      const NodeId total = tape.sum_scalars(batch_losses);
      const NodeId loss = tape.scale(total, 1.0 / batch_norm);
      const double loss_value = tape.value(loss);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train_mrnn: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch) + ", batch starting at record " +
                                 std::to_string(start));
      tape.backward(loss);
      opt.step(m.params().all_values(), m.params().all_grads());
      m.project_constraints();
      epoch_loss += tape.value(total);
      epoch_norm += batch_norm;
    }
    out.loss_history.push_back(epoch_norm > 0.0 ? epoch_loss / epoch_norm : 0.0);
  }
  return out;
}

// Prediction-oriented variant: the M-RNN blocks and the 1-layer recurrent
// head are trained jointly on cross-entropy.
inline TrainOutcome train_prediction_oriented(const TemporalDataset& ds, MRnnConfig cfg) {
  cfg.loss_mode = LossMode::CrossEntropy;
  return train_mrnn(ds, cfg);
}

class PredictorModel {
 public:
  PredictorModel(int n_streams, int hidden, Rng init_rng)
      : n_streams_(n_streams), hidden_(hidden) {
    const int in = 2 * n_streams;
    ids_.w_rec = params_.add_uniform_fan_in(hidden, hidden, hidden, init_rng);
    ids_.v_in = params_.add_uniform_fan_in(hidden, in, in, init_rng);
    ids_.b_hidden = params_.add_uniform_fan_in(hidden, 1, hidden + in, init_rng);
    ids_.u_out = params_.add_uniform_fan_in(1, hidden, hidden, init_rng);
    ids_.b_out = params_.add_uniform_fan_in(1, 1, hidden, init_rng);
  }

  int streams() const { return n_streams_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::vector<NodeId> build_forward(Tape& tape, const PatientRecord& rec) const {
    const int T = rec.length(), D = rec.streams();
    if (D != n_streams_) throw std::invalid_argument("predictor: stream count mismatch");
    std::vector<NodeId> inputs(T);
    std::vector<double> in_row(2 * D);
    for (int t = 0; t < T; ++t) {
      for (int d = 0; d < D; ++d) {
        in_row[d] = rec.observed(t, d) ? rec.value(t, d) : 0.0;
        in_row[D + d] = rec.observed(t, d) ? 1.0 : 0.0;
      }
      inputs[t] = tape.constant(in_row);
    }
    return MRnnModel::build_predictor_steps(tape, ids_, hidden_, inputs);
  }

  // Per-time-stamp probabilities.
  std::vector<double> predict(const PatientRecord& rec) const {
    ParamStore& store = const_cast<ParamStore&>(params_);
    Tape tape(store);
    auto nodes = build_forward(tape, rec);
    std::vector<double> out(nodes.size());
    for (std::size_t t = 0; t < nodes.size(); ++t) out[t] = tape.value(nodes[t]);
    return out;
  }

 private:
  int n_streams_;
  int hidden_;
  ParamStore params_;
  PredictorParams ids_;
};

struct PredictorOutcome {
  PredictorModel model;
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
};

// The shared downstream classifier of the benchmark protocol: one recurrent
// layer over [values, mask] rows, trained on cross-entropy over labeled
// time stamps.
inline PredictorOutcome train_predictor(const TemporalDataset& ds, const MRnnConfig& cfg) {
  cfg.validate();
  bool any_label = false, all_same = true;
  int first_label = -1;
  for (const auto& rec : ds.records)
    for (int y : rec.labels)
      if (y >= 0) {
        if (!any_label) first_label = y;
        any_label = true;
        if (y != first_label) all_same = false;
      }
  if (!any_label) throw std::invalid_argument("train_predictor: dataset has no labels");

  Rng root(cfg.seed);
  PredictorOutcome out{PredictorModel(ds.streams(), cfg.predictor_hidden,
                                      root.substream("init-predictor")),
                       {},
                       {}};
  if (all_same)
    out.warnings.push_back("all labels identical; downstream AUROC will be degenerate");

  Rng shuffle_rng = root.substream("shuffle");
  std::vector<int> order(ds.size());
  for (int i = 0; i < ds.size(); ++i) order[i] = i;

  detail::Optimizer opt(cfg.optimizer, cfg.learning_rate, out.model.params().total_size());
  Tape tape(out.model.params());
  std::vector<NodeId> batch_losses, bce_terms;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0, epoch_norm = 0.0;
    for (int start = 0; start < ds.size(); start += cfg.batch_size) {
      const int end = std::min(ds.size(), start + cfg.batch_size);
      tape.reset();
      out.model.params().zero_grad();
      batch_losses.clear();
      double batch_norm = 0.0;
      for (int bi = start; bi < end; ++bi) {
        const auto& rec = ds.records[order[bi]];
        auto y_nodes = out.model.build_forward(tape, rec);
        bce_terms.clear();
        for (int t = 0; t < rec.length(); ++t)
          if (rec.labels[t] >= 0) bce_terms.push_back(tape.bce(y_nodes[t], rec.labels[t]));
        if (bce_terms.empty()) continue;
        batch_losses.push_back(tape.sum_scalars(bce_terms));
        batch_norm += static_cast<double>(bce_terms.size());
      }
      if (batch_losses.empty()) continue;
      const NodeId loss = tape.scale(tape.sum_scalars(batch_losses), 1.0 / batch_norm);
      const double loss_value = tape.value(loss);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train_predictor: loss diverged at epoch " +
                                 std::to_string(epoch));
      tape.backward(loss);
      opt.step(out.model.params().all_values(), out.model.params().all_grads());
      epoch_loss += loss_value * batch_norm;
      epoch_norm += batch_norm;
    }
    out.loss_history.push_back(epoch_norm > 0.0 ? epoch_loss / epoch_norm : 0.0);
  }
  return out;
}

// Probabilities from the joint (prediction-oriented) model.
inline std::vector<double> predict_labels(const MRnnModel& model, const PatientRecord& rec) {
  if (!model.has_predictor())
    throw std::logic_error("predict_labels: model has no predictor head");
  ParamStore& store = const_cast<ParamStore&>(model.params());
  Tape tape(store);
  const MaskDelta md = compute_mask_delta(rec);
  auto fwd = model.build_forward(tape, rec, md, DropoutMode::Scale, nullptr, true);
  std::vector<double> out(fwd.y_hat.size());
  for (std::size_t t = 0; t < fwd.y_hat.size(); ++t) out[t] = tape.value(fwd.y_hat[t]);
  return out;
}

}  // namespace mrnn
