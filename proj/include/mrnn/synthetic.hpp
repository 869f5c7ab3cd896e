#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnn/dataset.hpp"
#include "mrnn/rng.hpp"
#include "mrnn/tensor.hpp"

namespace mrnn {

// Synthetic stand-in for clinical streams: a per-patient VAR(1) latent
// process with tunable within-stream and cross-stream coupling, squashed to
// (0,1), sampled at irregular exponential gaps.
//
// Transition matrix A = intra_corr * I + (inter_corr / (2(D-1))) * (J - I).
// Its spectral radius is intra_corr + inter_corr/2 for nonnegative inputs;
// combinations at or above 1 are rejected as unstable.
struct SyntheticConfig {
  int n_patients = 100;
  int n_streams = 5;
  int max_len = 20;              // T_n drawn uniformly from [ceil(max_len/2), max_len]
  double intra_corr = 0.5;
  double inter_corr = 0.2;
  std::vector<double> label_weights;  // empty = unlabeled dataset
  double gap_mean = 1.0;
  double noise_std = 0.4;
};

inline double synthetic_spectral_radius(const SyntheticConfig& cfg) {
  const double off = cfg.n_streams > 1
                         ? cfg.inter_corr / (2.0 * (cfg.n_streams - 1))
                         : 0.0;
  const double lead = cfg.intra_corr + off * (cfg.n_streams - 1);
  const double rest = std::abs(cfg.intra_corr - off);
  return std::max(std::abs(lead), rest);
}

inline TemporalDataset generate_synthetic(const SyntheticConfig& cfg, Rng rng) {
  if (cfg.n_streams < 2)
    throw std::invalid_argument("generate_synthetic: need at least 2 streams");
  if (cfg.intra_corr < 0.0 || cfg.intra_corr >= 1.0 || cfg.inter_corr < 0.0 ||
      cfg.inter_corr >= 1.0)
    throw std::invalid_argument("generate_synthetic: correlations must lie in [0,1)");
  if (cfg.max_len < 1) throw std::invalid_argument("generate_synthetic: max_len must be >= 1");
  if (!cfg.label_weights.empty() &&
      static_cast<int>(cfg.label_weights.size()) != cfg.n_streams)
    throw std::invalid_argument("generate_synthetic: label_weights length must equal n_streams");
  if (synthetic_spectral_radius(cfg) >= 1.0)
    throw std::domain_error("generate_synthetic: unstable process (spectral radius >= 1)");

  const int D = cfg.n_streams;
  const double diag = cfg.intra_corr;
  const double off = cfg.inter_corr / (2.0 * (D - 1));
  const bool labeled = !cfg.label_weights.empty();

  TemporalDataset ds;
  ds.stream_names.resize(D);
  for (int d = 0; d < D; ++d) ds.stream_names[d] = "s" + std::to_string(d);

  const int min_len = (cfg.max_len + 1) / 2;
  std::vector<double> state(D), next(D);
  for (int n = 0; n < cfg.n_patients; ++n) {
    const int T = min_len + static_cast<int>(rng.below(cfg.max_len - min_len + 1));
    PatientRecord rec;
    rec.id = "p" + std::to_string(n);
    rec.stamps.resize(T);
    rec.values = Tensor2(T, D);
    rec.mask.assign(static_cast<std::size_t>(T) * D, 1);
    rec.labels.assign(T, -1);

    // Burn-in from zero reaches the stationary regime before sampling.
    for (int d = 0; d < D; ++d) state[d] = 0.0;
    const int burn = 30;
    for (int step = 0; step < burn + T; ++step) {
      double sum = 0.0;
      for (int d = 0; d < D; ++d) sum += state[d];
      for (int d = 0; d < D; ++d)
        next[d] = diag * state[d] + off * (sum - state[d]) + cfg.noise_std * rng.normal();
      state.swap(next);
      if (step < burn) continue;
      const int t = step - burn;
      rec.stamps[t] = t == 0 ? 0.0 : rec.stamps[t - 1] + rng.exponential(cfg.gap_mean);
      for (int d = 0; d < D; ++d) rec.values.at(t, d) = sigmoid_scalar(state[d]);
      if (labeled) {
        double z = 0.0;
        for (int d = 0; d < D; ++d) z += cfg.label_weights[d] * state[d];
        rec.labels[t] = rng.bernoulli(sigmoid_scalar(z)) ? 1 : 0;
      }
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace mrnn
