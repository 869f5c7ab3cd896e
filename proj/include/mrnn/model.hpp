#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrnn/dataset.hpp"
#include "mrnn/rng.hpp"
#include "mrnn/tape.hpp"
#include "mrnn/tensor.hpp"

namespace mrnn {

enum class Ablation { Full, InterpOnly, ImputeOnly };
enum class LossMode { Mse, CrossEntropy };
enum class OptimizerKind { Sgd, Adam };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::InterpOnly: return "interp-only";
    case Ablation::ImputeOnly: return "impute-only";
  }
  return "?";
}

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "interp-only") return Ablation::InterpOnly;
  if (s == "impute-only") return Ablation::ImputeOnly;
  throw std::invalid_argument("unknown ablation '" + s + "'");
}

inline const char* to_string(LossMode m) {
  return m == LossMode::Mse ? "mse" : "cross-entropy";
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "mse") return LossMode::Mse;
  if (s == "cross-entropy") return LossMode::CrossEntropy;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

struct MRnnConfig {
  int hidden = 8;
  double keep_p = 1.0;  // dropout KEEP probability; 1 disables dropout
  double learning_rate = 0.01;
  int epochs = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::Mse;
  Ablation ablation = Ablation::Full;
  int mi_draws = 5;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  int predictor_hidden = 8;
  // Probability of hiding an observed cell from the inputs of a training
  // pass (value and mask zeroed, elapsed times recomputed) while still
  // scoring it in the masked MSE. This realizes the estimate-from-
  // data-with-the-cell-removed objective and matches what the network
  // sees when it later fills genuinely missing cells.
  double hide_p = 0.25;

  void validate() const {
    if (hidden < 1) throw std::invalid_argument("config: hidden must be >= 1");
    if (!(keep_p > 0.0) || keep_p > 1.0)
      throw std::invalid_argument("config: keep_p must lie in (0,1]");
    if (hide_p < 0.0 || hide_p >= 1.0)
      throw std::invalid_argument("config: hide_p must lie in [0,1)");
    if (epochs < 0 || batch_size < 1)
      throw std::invalid_argument("config: bad epochs/batch_size");
    if (mi_draws < 1) throw std::invalid_argument("config: mi_draws must be >= 1");
  }
};

// Per-stream bi-directional interpolation parameters. Forward hidden
// states consume the t-1 input, backward ones the t+1 input, so the
// same-time measurement never reaches its own estimate.
struct InterpStreamParams {
  ParamId w_fwd, v_fwd, c_fwd;  // h x h, h x 3, h
  ParamId w_bwd, v_bwd, c_bwd;
  ParamId u_fwd, u_bwd, c_out;  // 1 x h, 1 x h, 1
};

// Cross-stream imputation parameters. u_cross keeps a zero diagonal and
// w_out keeps zero off-diagonal entries, so x_hat_d never sees x_d.
struct ImputeParams {
  ParamId u_cross;  // D x D, diag frozen at 0
  ParamId v_feat;   // D x 2D
  ParamId beta;     // D
  ParamId w_out;    // D x D, off-diagonal frozen at 0
  ParamId alpha;    // D
};

struct PredictorParams {
  ParamId w_rec;  // hp x hp
  ParamId v_in;   // hp x 2D
  ParamId b_hidden;
  ParamId u_out;  // 1 x hp
  ParamId b_out;
};

enum class DropoutMode { Off, Sample, Scale };

class MRnnModel {
 public:
  MRnnModel(int n_streams, const MRnnConfig& cfg, Rng init_rng)
      : cfg_(cfg), n_streams_(n_streams) {
    cfg_.validate();
    if (n_streams < 1) throw std::invalid_argument("MRnnModel: need >= 1 stream");
    const int h = cfg_.hidden;
    if (cfg_.ablation != Ablation::ImputeOnly) {
      interp_.reserve(n_streams);
      for (int d = 0; d < n_streams; ++d) {
        InterpStreamParams p;
        p.w_fwd = params_.add_uniform_fan_in(h, h, h, init_rng);
        p.v_fwd = params_.add_uniform_fan_in(h, 3, 3, init_rng);
        p.c_fwd = params_.add_uniform_fan_in(h, 1, h + 3, init_rng);
        p.w_bwd = params_.add_uniform_fan_in(h, h, h, init_rng);
        p.v_bwd = params_.add_uniform_fan_in(h, 3, 3, init_rng);
        p.c_bwd = params_.add_uniform_fan_in(h, 1, h + 3, init_rng);
        p.u_fwd = params_.add_uniform_fan_in(1, h, h, init_rng);
        p.u_bwd = params_.add_uniform_fan_in(1, h, h, init_rng);
        p.c_out = params_.add_uniform_fan_in(1, 1, 2 * h, init_rng);
        interp_.push_back(p);
      }
    }
    if (cfg_.ablation != Ablation::InterpOnly) {
      const int D = n_streams;
      ImputeParams p;
      p.u_cross = params_.add_uniform_fan_in(D, D, D, init_rng);
      p.v_feat = params_.add_uniform_fan_in(D, 2 * D, 2 * D, init_rng);
      p.beta = params_.add_uniform_fan_in(D, 1, 3 * D, init_rng);
      p.w_out = params_.add_uniform_fan_in(D, D, D, init_rng);
      p.alpha = params_.add_uniform_fan_in(D, 1, D, init_rng);
      impute_ = p;
    }
    project_constraints();
  }

  int streams() const { return n_streams_; }
  const MRnnConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  bool has_predictor() const { return predictor_.has_value(); }
  const std::optional<ImputeParams>& impute_params() const { return impute_; }

  const std::vector<std::pair<double, double>>& normalization() const { return norm_; }
  void set_normalization(std::vector<std::pair<double, double>> norm) {
    if (!norm.empty() && static_cast<int>(norm.size()) != n_streams_)
      throw std::invalid_argument("set_normalization: stream count mismatch");
    norm_ = std::move(norm);
  }

  void add_predictor(Rng init_rng) {
    if (predictor_) return;
    const int hp = cfg_.predictor_hidden;
    const int in = 2 * n_streams_;
    PredictorParams p;
    p.w_rec = params_.add_uniform_fan_in(hp, hp, hp, init_rng);
    p.v_in = params_.add_uniform_fan_in(hp, in, in, init_rng);
    p.b_hidden = params_.add_uniform_fan_in(hp, 1, hp + in, init_rng);
    p.u_out = params_.add_uniform_fan_in(1, hp, hp, init_rng);
    p.b_out = params_.add_uniform_fan_in(1, 1, hp, init_rng);
    predictor_ = p;
  }

  // Frozen structure: diag(u_cross) = 0 and off-diag(w_out) = 0, restored
  // after every optimizer step.
  void project_constraints() {
    if (!impute_) return;
    const int D = n_streams_;
    auto u = params_.value(impute_->u_cross);
    auto w = params_.value(impute_->w_out);
    for (int d = 0; d < D; ++d) u[static_cast<std::size_t>(d) * D + d] = 0.0;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j)
        if (i != j) w[static_cast<std::size_t>(i) * D + j] = 0.0;
  }

  // Number of trainable interpolation-block scalars: D * (2h^2 + 10h + 1).
  std::size_t interp_param_count() const {
    std::size_t n = 0;
    for (const auto& p : interp_)
      n += params_.size(p.w_fwd) + params_.size(p.v_fwd) + params_.size(p.c_fwd) +
           params_.size(p.w_bwd) + params_.size(p.v_bwd) + params_.size(p.c_bwd) +
           params_.size(p.u_fwd) + params_.size(p.u_bwd) + params_.size(p.c_out);
    return n;
  }

  // --- graph builders ------------------------------------------------

  // Interpolation pass for stream d over explicit z rows (each [x, m, delta]).
  // Returns the T scalar nodes x_tilde_t.
  std::vector<NodeId> build_interp_stream(Tape& tape, int d,
                                          const std::vector<std::array<double, 3>>& z) const {
    if (interp_.empty()) throw std::logic_error("model has no interpolation block");
    const int T = static_cast<int>(z.size());
    if (T == 0) throw std::invalid_argument("interp_forward: empty sequence");
    const auto& p = interp_[d];
    const int h = cfg_.hidden;

    std::vector<NodeId> zc(T);
    for (int t = 0; t < T; ++t) zc[t] = tape.constant(std::span<const double>(z[t].data(), 3));
    const NodeId z_pad = tape.zeros(3);
    const NodeId h_pad = tape.zeros(h);

    std::vector<NodeId> fwd(T), bwd(T);
    for (int t = 0; t < T; ++t) {
      const NodeId h_prev = t == 0 ? h_pad : fwd[t - 1];
      const NodeId z_prev = t == 0 ? z_pad : zc[t - 1];
      fwd[t] = tape.relu(tape.affine2(p.w_fwd, h_prev, p.v_fwd, z_prev, p.c_fwd));
    }
    for (int t = T - 1; t >= 0; --t) {
      const NodeId h_next = t == T - 1 ? h_pad : bwd[t + 1];
      const NodeId z_next = t == T - 1 ? z_pad : zc[t + 1];
      bwd[t] = tape.relu(tape.affine2(p.w_bwd, h_next, p.v_bwd, z_next, p.c_bwd));
    }
    std::vector<NodeId> out(T);
    for (int t = 0; t < T; ++t)
      out[t] = tape.relu(tape.affine2(p.u_fwd, fwd[t], p.u_bwd, bwd[t], p.c_out));
    return out;
  }

  // One imputation step: x_hat = sigma(W (h .* drop) + alpha) with
  // h = phi(U x + V [x_tilde, m] + beta).
  NodeId build_impute_step(Tape& tape, NodeId x_node, NodeId x_tilde_node, NodeId m_node,
                           DropoutMode mode, const std::vector<double>* drop_mask) const {
    if (!impute_) throw std::logic_error("model has no imputation block");
    const NodeId z = tape.concat(x_tilde_node, m_node);
    NodeId h = tape.relu(tape.affine2(impute_->u_cross, x_node, impute_->v_feat, z,
                                      impute_->beta));
    if (mode == DropoutMode::Sample) {
      h = tape.mul_const(h, *drop_mask);
    } else if (mode == DropoutMode::Scale && cfg_.keep_p < 1.0) {
      h = tape.scale(h, cfg_.keep_p);
    }
    return tape.sigmoid(tape.affine(impute_->w_out, impute_->alpha, h));
  }

  struct RecordForward {
    std::vector<NodeId> x_hat;  // per time stamp, length-D node
    std::vector<NodeId> y_hat;  // per time stamp scalar; filled when requested
    double mask_total = 0.0;
  };

  // Full forward pass over one record. Dropout masks, when sampled, are
  // drawn per time stamp from dropout_rng.
  RecordForward build_forward(Tape& tape, const PatientRecord& rec, const MaskDelta& md,
                              DropoutMode mode, Rng* dropout_rng,
                              bool with_predictor = false) const {
    if (rec.streams() != n_streams_)
      throw std::invalid_argument("forward: dataset stream count mismatch");
    const int T = rec.length();
    const int D = n_streams_;
    if (T == 0) throw std::invalid_argument("forward: empty record");

    RecordForward out;
    for (std::uint8_t m : rec.mask) out.mask_total += m;

    // x zero-filled at missing cells; mask rows as constants
    std::vector<std::vector<double>> x_rows(T, std::vector<double>(D, 0.0));
    std::vector<std::vector<double>> m_rows(T, std::vector<double>(D, 0.0));
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) {
        if (rec.observed(t, d)) x_rows[t][d] = rec.value(t, d);
        m_rows[t][d] = md.mask.at(t, d);
      }

    std::vector<NodeId> x_tilde_t(T, -1);
    if (cfg_.ablation != Ablation::ImputeOnly) {
      // per-stream interpolation, then stack across streams per time stamp
      std::vector<std::vector<NodeId>> per_stream(D);
      std::vector<std::array<double, 3>> z(T);
      for (int d = 0; d < D; ++d) {
        for (int t = 0; t < T; ++t)
          z[t] = {x_rows[t][d], md.mask.at(t, d), md.delta.at(t, d)};
        per_stream[d] = build_interp_stream(tape, d, z);
      }
      std::vector<NodeId> scalars(D);
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < D; ++d) scalars[d] = per_stream[d][t];
        x_tilde_t[t] = tape.stack_scalars(scalars);
      }
    }

    out.x_hat.resize(T);
    std::vector<double> drop;
    for (int t = 0; t < T; ++t) {
      const NodeId x_node = tape.constant(x_rows[t]);
      const NodeId m_node = tape.constant(m_rows[t]);
      if (cfg_.ablation == Ablation::InterpOnly) {
        out.x_hat[t] = x_tilde_t[t];
        continue;
      }
      const NodeId tilde = cfg_.ablation == Ablation::ImputeOnly ? x_node : x_tilde_t[t];
      const std::vector<double>* mask_ptr = nullptr;
      if (mode == DropoutMode::Sample) {
        drop = dropout_mask(*dropout_rng, D, cfg_.keep_p);
        mask_ptr = &drop;
      }
      out.x_hat[t] = build_impute_step(tape, x_node, tilde, m_node, mode, mask_ptr);
    }

    if (with_predictor) {
      if (!predictor_) throw std::logic_error("model has no predictor head");
      std::vector<NodeId> inputs(T);
      for (int t = 0; t < T; ++t) {
        // completed vector: observed values pass through, gaps take x_hat
        std::vector<double> inv(D, 0.0), keep(D, 0.0);
        for (int d = 0; d < D; ++d) {
          keep[d] = 1.0 - m_rows[t][d];
          inv[d] = m_rows[t][d] * x_rows[t][d];
        }
        const NodeId completed = tape.add_const(tape.mul_const(out.x_hat[t], keep), inv);
        inputs[t] = tape.concat(completed, tape.constant(m_rows[t]));
      }
      out.y_hat = build_predictor_steps(tape, *predictor_, cfg_.predictor_hidden, inputs);
    }
    return out;
  }

  static std::vector<NodeId> build_predictor_steps(Tape& tape, const PredictorParams& p,
                                                   int hidden,
                                                   const std::vector<NodeId>& inputs) {
    const int T = static_cast<int>(inputs.size());
    std::vector<NodeId> y(T);
    NodeId h_prev = tape.zeros(hidden);
    for (int t = 0; t < T; ++t) {
      h_prev = tape.relu(tape.affine2(p.w_rec, h_prev, p.v_in, inputs[t], p.b_hidden));
      y[t] = tape.sigmoid(tape.affine(p.u_out, p.b_out, h_prev));
    }
    return y;
  }

  // --- value-level operation contracts --------------------------------

  // x_tilde for one stream given explicit z_t = [x, m, delta] rows.
  std::vector<double> interp_forward(int d, const std::vector<std::array<double, 3>>& z) const {
    ParamStore& store = const_cast<ParamStore&>(params_);
    Tape tape(store);
    auto nodes = build_interp_stream(tape, d, z);
    std::vector<double> out(nodes.size());
    for (std::size_t t = 0; t < nodes.size(); ++t) out[t] = tape.value(nodes[t]);
    return out;
  }

  // One cross-stream step; drop_mask empty means Off (keep_p = 1) or
  // deterministic keep_p scaling depending on scale_hidden.
  std::vector<double> impute_forward(std::span<const double> x, std::span<const double> x_tilde,
                                     std::span<const double> m,
                                     const std::vector<double>& drop_mask,
                                     bool scale_hidden = false) const {
    if (static_cast<int>(x.size()) != n_streams_ || x_tilde.size() != x.size() ||
        m.size() != x.size())
      throw std::invalid_argument("impute_forward: dimension mismatch");
    ParamStore& store = const_cast<ParamStore&>(params_);
    Tape tape(store);
    const NodeId xn = tape.constant(x);
    const NodeId tn = tape.constant(x_tilde);
    const NodeId mn = tape.constant(m);
    DropoutMode mode = DropoutMode::Off;
    if (!drop_mask.empty()) mode = DropoutMode::Sample;
    else if (scale_hidden) mode = DropoutMode::Scale;
    const NodeId out = build_impute_step(tape, xn, tn, mn, mode,
                                         drop_mask.empty() ? nullptr : &drop_mask);
    auto v = tape.values(out);
    return {v.begin(), v.end()};
  }

  // x_tilde matrix for a whole record (used by tests and ablation flows).
  Tensor2 interp_forward_record(const PatientRecord& rec) const {
    const MaskDelta md = compute_mask_delta(rec);
    ParamStore& store = const_cast<ParamStore&>(params_);
    Tape tape(store);
    const int T = rec.length(), D = rec.streams();
    Tensor2 out(T, D);
    std::vector<std::array<double, 3>> z(T);
    for (int d = 0; d < D; ++d) {
      for (int t = 0; t < T; ++t) {
        const double x = rec.observed(t, d) ? rec.value(t, d) : 0.0;
        z[t] = {x, md.mask.at(t, d), md.delta.at(t, d)};
      }
      auto nodes = build_interp_stream(tape, d, z);
      for (int t = 0; t < T; ++t) out.at(t, d) = tape.value(nodes[t]);
    }
    return out;
  }

  std::optional<PredictorParams> predictor_params() const { return predictor_; }
  std::vector<InterpStreamParams>& interp_blocks() { return interp_; }
  const std::vector<InterpStreamParams>& interp_blocks() const { return interp_; }

  // --- serialization ---------------------------------------------------

  void save(std::ostream& out) const;
  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    save(f);
  }
  static MRnnModel load(std::istream& in);
  static MRnnModel load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    return load(f);
  }

 private:
  friend struct ModelIo;
  MRnnConfig cfg_;
  int n_streams_;
  ParamStore params_;
  std::vector<InterpStreamParams> interp_;
  std::optional<ImputeParams> impute_;
  std::optional<PredictorParams> predictor_;
  std::vector<std::pair<double, double>> norm_;
};

// Sum over patients of (masked squared error / observed-cell count).
// Patients with no observed cells are skipped and reported as warnings.
inline double masked_mse_loss(const std::vector<Tensor2>& predictions,
                              const TemporalDataset& ds,
                              std::vector<std::string>* warnings = nullptr) {
  if (predictions.size() != ds.records.size())
    throw std::invalid_argument("masked_mse_loss: prediction count mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n < predictions.size(); ++n) {
    const auto& rec = ds.records[n];
    const auto& pred = predictions[n];
    if (pred.rows != rec.length() || pred.cols != rec.streams())
      throw std::invalid_argument("masked_mse_loss: prediction shape mismatch");
    double num = 0.0, den = 0.0;
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < rec.streams(); ++d)
        if (rec.observed(t, d)) {
          const double e = pred.at(t, d) - rec.value(t, d);
          num += e * e;
          den += 1.0;
        }
    if (den == 0.0) {
      if (warnings)
        warnings->push_back("patient '" + rec.id + "' has no observed cells; excluded");
      continue;
    }
    total += num / den;
  }
  return total;
}

struct ImputationResult {
  TemporalDataset data;
  std::string method;
  std::uint64_t seed = 0;
  int draw = 0;
};

namespace detail {

inline TemporalDataset complete_with_model(const MRnnModel& model, const TemporalDataset& ds,
                                           DropoutMode mode, Rng* rng) {
  if (ds.streams() != model.streams())
    throw std::invalid_argument("impute: dataset stream count mismatch with model");
  TemporalDataset out = ds;
  ParamStore& store = const_cast<ParamStore&>(model.params());
  Tape tape(store);
  for (auto& rec : out.records) {
    tape.reset();
    const MaskDelta md = compute_mask_delta(rec);
    auto fwd = model.build_forward(tape, rec, md, mode, rng, false);
    for (int t = 0; t < rec.length(); ++t) {
      auto row = tape.values(fwd.x_hat[t]);
      for (int d = 0; d < rec.streams(); ++d)
        if (!rec.observed(t, d)) {
          rec.values.at(t, d) = row[d];
          rec.set_observed(t, d, true);
        }
    }
  }
  return out;
}

}  // namespace detail

// Deterministic completion: observed cells pass through, missing cells take
// x_hat computed without dropout sampling (hidden activations scaled by
// keep_p when the model was trained with dropout).
inline ImputationResult impute_single(const MRnnModel& model, const TemporalDataset& ds) {
  ImputationResult res;
  res.data = detail::complete_with_model(model, ds, DropoutMode::Scale, nullptr);
  res.method = "mrnn-si";
  res.seed = model.config().seed;
  res.draw = 0;
  return res;
}

// K stochastic completions from independent dropout draws.
inline std::vector<ImputationResult> impute_multiple(const MRnnModel& model,
                                                     const TemporalDataset& ds, int k, Rng rng) {
  if (k < 2) throw std::invalid_argument("impute_multiple: K must be >= 2");
  if (model.config().keep_p >= 1.0)
    throw std::invalid_argument("impute_multiple: model was trained with keep_p = 1 (no stochasticity)");
  if (!model.impute_params())
    throw std::invalid_argument("impute_multiple: model has no imputation block (dropout lives there)");
  std::vector<ImputationResult> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    Rng draw_rng = rng.substream(static_cast<std::uint64_t>(i));
    ImputationResult res;
    res.data = detail::complete_with_model(model, ds, DropoutMode::Sample, &draw_rng);
    res.method = "mrnn-mi";
    res.seed = rng.seed();
    res.draw = i;
    out.push_back(std::move(res));
  }
  return out;
}

// Rubin's rule: pooled estimate is the mean of the per-draw estimates;
// total variance = mean within-draw variance + (1 + 1/K) * between variance.
inline std::pair<double, double> rubin_combine(std::span<const double> estimates,
                                               std::span<const double> within_variances) {
  const std::size_t k = estimates.size();
  if (k < 2 || within_variances.size() != k)
    throw std::invalid_argument("rubin_combine: need K >= 2 matched draws");
  double mean = 0.0, wbar = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mean += estimates[i];
    wbar += within_variances[i];
  }
  mean /= static_cast<double>(k);
  wbar /= static_cast<double>(k);
  double between = 0.0;
  for (double e : estimates) between += (e - mean) * (e - mean);
  between /= static_cast<double>(k - 1);
  return {mean, wbar + (1.0 + 1.0 / static_cast<double>(k)) * between};
}

// --- model archive ----------------------------------------------------

struct ModelIo {
  static void write_param(std::ostream& out, const ParamStore& store, const std::string& name,
                          ParamId id) {
    out << "param " << name << ' ' << store.rows(id) << ' ' << store.cols(id) << '\n';
    auto v = store.value(id);
    const int rows = store.rows(id), cols = store.cols(id);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        if (j) out << ' ';
        out << detail::format_double(v[static_cast<std::size_t>(i) * cols + j]);
      }
      out << '\n';
    }
  }

  static void read_param(std::istream& in, ParamStore& store, const std::string& expect_name,
                         ParamId id) {
    std::string tag, name;
    int rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "param")
      throw std::runtime_error("model archive: expected 'param " + expect_name + "'");
    if (name != expect_name)
      throw std::runtime_error("model archive: expected param '" + expect_name + "', found '" +
                               name + "'");
    if (rows != store.rows(id) || cols != store.cols(id))
      throw std::runtime_error("model archive: dimension mismatch for '" + name + "'");
    auto v = store.value(id);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!(in >> v[i]))
        throw std::runtime_error("model archive: truncated values for '" + name + "'");
  }

  template <typename Fn>
  static void each_param(const MRnnModel& m, Fn&& fn) {
    for (std::size_t d = 0; d < m.interp_.size(); ++d) {
      const auto& p = m.interp_[d];
      const std::string prefix = "interp" + std::to_string(d) + ".";
      fn(prefix + "w_fwd", p.w_fwd);
      fn(prefix + "v_fwd", p.v_fwd);
      fn(prefix + "c_fwd", p.c_fwd);
      fn(prefix + "w_bwd", p.w_bwd);
      fn(prefix + "v_bwd", p.v_bwd);
      fn(prefix + "c_bwd", p.c_bwd);
      fn(prefix + "u_fwd", p.u_fwd);
      fn(prefix + "u_bwd", p.u_bwd);
      fn(prefix + "c_out", p.c_out);
    }
    if (m.impute_) {
      fn("impute.u_cross", m.impute_->u_cross);
      fn("impute.v_feat", m.impute_->v_feat);
      fn("impute.beta", m.impute_->beta);
      fn("impute.w_out", m.impute_->w_out);
      fn("impute.alpha", m.impute_->alpha);
    }
    if (m.predictor_) {
      fn("predictor.w_rec", m.predictor_->w_rec);
      fn("predictor.v_in", m.predictor_->v_in);
      fn("predictor.b_hidden", m.predictor_->b_hidden);
      fn("predictor.u_out", m.predictor_->u_out);
      fn("predictor.b_out", m.predictor_->b_out);
    }
  }
};

inline void MRnnModel::save(std::ostream& out) const {
  out << "mrnn-model v1\n";
  out << "streams " << n_streams_ << '\n';
  out << "hidden " << cfg_.hidden << '\n';
  out << "keep_p " << detail::format_double(cfg_.keep_p) << '\n';
  out << "ablation " << to_string(cfg_.ablation) << '\n';
  out << "loss " << to_string(cfg_.loss_mode) << '\n';
  out << "predictor " << (predictor_ ? cfg_.predictor_hidden : 0) << '\n';
  out << "norm " << norm_.size() << '\n';
  for (const auto& [lo, hi] : norm_)
    out << detail::format_double(lo) << ' ' << detail::format_double(hi) << '\n';
  ModelIo::each_param(*this, [&](const std::string& name, ParamId id) {
    ModelIo::write_param(out, params_, name, id);
  });
  out << "end\n";
}

inline MRnnModel MRnnModel::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mrnn-model v1")
    throw std::runtime_error("model archive: bad magic (expected 'mrnn-model v1')");
  auto read_kv = [&](const char* key) -> std::string {
    std::string k, v;
    if (!(in >> k >> v) || k != key)
      throw std::runtime_error(std::string("model archive: expected '") + key + "'");
    return v;
  };
  MRnnConfig cfg;
  const int streams = std::stoi(read_kv("streams"));
  cfg.hidden = std::stoi(read_kv("hidden"));
  cfg.keep_p = std::stod(read_kv("keep_p"));
  cfg.ablation = ablation_from_string(read_kv("ablation"));
  cfg.loss_mode = loss_mode_from_string(read_kv("loss"));
  const int predictor_hidden = std::stoi(read_kv("predictor"));
  if (predictor_hidden > 0) cfg.predictor_hidden = predictor_hidden;
  const int n_norm = std::stoi(read_kv("norm"));
  if (streams < 1 || cfg.hidden < 1)
    throw std::runtime_error("model archive: bad dimension header");
  if (n_norm != 0 && n_norm != streams)
    throw std::runtime_error("model archive: normalization size mismatch");
  std::vector<std::pair<double, double>> norm(n_norm);
  for (auto& [lo, hi] : norm)
    if (!(in >> lo >> hi)) throw std::runtime_error("model archive: truncated normalization");

  MRnnModel model(streams, cfg, Rng(0));
  if (predictor_hidden > 0) model.add_predictor(Rng(0));
  model.norm_ = std::move(norm);
  ModelIo::each_param(model, [&](const std::string& name, ParamId id) {
    ModelIo::read_param(in, model.params_, name, id);
  });
  std::string tail;
  if (!(in >> tail) || tail != "end")
    throw std::runtime_error("model archive: missing 'end' marker");
  model.project_constraints();
  return model;
}

}  // namespace mrnn
