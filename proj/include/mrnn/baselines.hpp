#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnn/dataset.hpp"

namespace mrnn {

enum class BaselineKind { Mean, Locf, Linear, CubicSpline, Zero };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Mean: return "mean";
    case BaselineKind::Locf: return "locf";
    case BaselineKind::Linear: return "linear";
    case BaselineKind::CubicSpline: return "spline";
    case BaselineKind::Zero: return "zero";
  }
  return "?";
}

// Per-stream observed means, the statistics baselines share. In benchmark
// runs these come from the training split so test fills never leak.
struct StreamStats {
  std::vector<double> means;
};

inline StreamStats stream_means(const TemporalDataset& ds) {
  const int D = ds.streams();
  std::vector<double> sum(D, 0.0);
  std::vector<long> cnt(D, 0);
  for (const auto& rec : ds.records)
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < D; ++d)
        if (rec.observed(t, d)) {
          sum[d] += rec.value(t, d);
          ++cnt[d];
        }
  StreamStats stats;
  stats.means.resize(D);
  for (int d = 0; d < D; ++d) {
    if (cnt[d] == 0)
      throw std::runtime_error("stream '" + ds.stream_names[d] + "' has no observed values");
    stats.means[d] = sum[d] / cnt[d];
  }
  return stats;
}

namespace detail {

inline void fill_cell(PatientRecord& rec, int t, int d, double v) {
  rec.values.at(t, d) = v;
  rec.set_observed(t, d, true);
}

// Natural cubic spline second derivatives at the knots (Thomas algorithm).
inline std::vector<double> natural_spline_second_derivs(const std::vector<double>& x,
                                                        const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;  // natural boundary makes n<=2 a straight line
  std::vector<double> diag(n - 2), upper(n - 2), rhs(n - 2);
  for (int i = 1; i <= n - 2; ++i) {
    const double h0 = x[i] - x[i - 1];
    const double h1 = x[i + 1] - x[i];
    diag[i - 1] = (h0 + h1) / 3.0;
    upper[i - 1] = h1 / 6.0;
    rhs[i - 1] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
  }
  // forward sweep; sub-diagonal equals previous row's upper entry
  for (int i = 1; i < n - 2; ++i) {
    const double w = upper[i - 1] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (int i = n - 3; i >= 0; --i) {
    const double t = i + 1 <= n - 3 ? upper[i] * m[i + 2] : 0.0;
    m[i + 1] = (rhs[i] - t) / diag[i];
  }
  return m;
}

inline double spline_eval(const std::vector<double>& x, const std::vector<double>& y,
                          const std::vector<double>& m, double s) {
  const int n = static_cast<int>(x.size());
  if (s <= x.front()) return y.front();
  if (s >= x.back()) return y.back();  // clamped extrapolation
  int i = static_cast<int>(std::upper_bound(x.begin(), x.end(), s) - x.begin()) - 1;
  i = std::min(std::max(i, 0), n - 2);
  const double h = x[i + 1] - x[i];
  const double a = (x[i + 1] - s) / h;
  const double b = (s - x[i]) / h;
  return a * y[i] + b * y[i + 1] +
         ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
}

template <typename FillStream>
TemporalDataset impute_per_stream(const TemporalDataset& ds, FillStream&& fill) {
  TemporalDataset out = ds;
  for (auto& rec : out.records) {
    for (int d = 0; d < rec.streams(); ++d) {
      std::vector<int> obs_t;
      for (int t = 0; t < rec.length(); ++t)
        if (rec.observed(t, d)) obs_t.push_back(t);
      std::vector<int> missing_t;
      for (int t = 0; t < rec.length(); ++t)
        if (!rec.observed(t, d)) missing_t.push_back(t);
      if (missing_t.empty()) continue;
      fill(rec, d, obs_t, missing_t);
    }
  }
  return out;
}

}  // namespace detail

inline TemporalDataset mean_impute(const TemporalDataset& ds, const StreamStats& stats) {
  return detail::impute_per_stream(
      ds, [&](PatientRecord& rec, int d, const std::vector<int>&, const std::vector<int>& miss) {
        for (int t : miss) detail::fill_cell(rec, t, d, stats.means[d]);
      });
}

inline TemporalDataset mean_impute(const TemporalDataset& ds) {
  return mean_impute(ds, stream_means(ds));
}

// Carry the latest observation forward; leading gaps fall back to the
// stream mean.
inline TemporalDataset locf_impute(const TemporalDataset& ds, const StreamStats& stats) {
  return detail::impute_per_stream(
      ds, [&](PatientRecord& rec, int d, const std::vector<int>&, const std::vector<int>&) {
        double last = stats.means[d];
        bool seen = false;
        for (int t = 0; t < rec.length(); ++t) {
          if (rec.observed(t, d)) {
            last = rec.value(t, d);
            seen = true;
          } else {
            detail::fill_cell(rec, t, d, seen ? last : stats.means[d]);
          }
        }
      });
}

inline TemporalDataset locf_impute(const TemporalDataset& ds) {
  return locf_impute(ds, stream_means(ds));
}

// Linear interpolation in actual time; outside the observed range values
// clamp to the nearest observation. Streams with no observation in a record
// fall back to the stream mean.
inline TemporalDataset linear_interp(const TemporalDataset& ds, const StreamStats& stats) {
  return detail::impute_per_stream(
      ds,
      [&](PatientRecord& rec, int d, const std::vector<int>& obs, const std::vector<int>& miss) {
        if (obs.empty()) {
          for (int t : miss) detail::fill_cell(rec, t, d, stats.means[d]);
          return;
        }
        for (int t : miss) {
          const double s = rec.stamps[t];
          auto hi = std::find_if(obs.begin(), obs.end(),
                                 [&](int o) { return rec.stamps[o] > s; });
          double v;
          if (hi == obs.begin()) {
            v = rec.value(obs.front(), d);
          } else if (hi == obs.end()) {
            v = rec.value(obs.back(), d);
          } else {
            const int t1 = *hi, t0 = *(hi - 1);
            const double s0 = rec.stamps[t0], s1 = rec.stamps[t1];
            const double w = (s - s0) / (s1 - s0);
            v = (1.0 - w) * rec.value(t0, d) + w * rec.value(t1, d);
          }
          detail::fill_cell(rec, t, d, v);
        }
      });
}

inline TemporalDataset linear_interp(const TemporalDataset& ds) {
  return linear_interp(ds, stream_means(ds));
}

// Natural cubic spline through the observed (stamp, value) knots of each
// stream; extrapolation clamps to the boundary knots. Streams with a single
// observation clamp to it; empty streams fall back to the stream mean.
inline TemporalDataset cubic_spline_interp(const TemporalDataset& ds, const StreamStats& stats) {
  return detail::impute_per_stream(
      ds,
      [&](PatientRecord& rec, int d, const std::vector<int>& obs, const std::vector<int>& miss) {
        if (obs.empty()) {
          for (int t : miss) detail::fill_cell(rec, t, d, stats.means[d]);
          return;
        }
        if (obs.size() == 1) {
          for (int t : miss) detail::fill_cell(rec, t, d, rec.value(obs[0], d));
          return;
        }
        std::vector<double> xs, ys;
        xs.reserve(obs.size());
        ys.reserve(obs.size());
        for (int o : obs) {
          xs.push_back(rec.stamps[o]);
          ys.push_back(rec.value(o, d));
        }
        const auto m = detail::natural_spline_second_derivs(xs, ys);
        for (int t : miss)
          detail::fill_cell(rec, t, d, detail::spline_eval(xs, ys, m, rec.stamps[t]));
      });
}

inline TemporalDataset cubic_spline_interp(const TemporalDataset& ds) {
  return cubic_spline_interp(ds, stream_means(ds));
}

inline TemporalDataset zero_impute(const TemporalDataset& ds) {
  return detail::impute_per_stream(
      ds, [](PatientRecord& rec, int d, const std::vector<int>&, const std::vector<int>& miss) {
        for (int t : miss) detail::fill_cell(rec, t, d, 0.0);
      });
}

inline TemporalDataset impute_with(BaselineKind kind, const TemporalDataset& ds,
                                   const StreamStats* train_stats = nullptr) {
  const StreamStats stats = train_stats ? *train_stats : stream_means(ds);
  switch (kind) {
    case BaselineKind::Mean: return mean_impute(ds, stats);
    case BaselineKind::Locf: return locf_impute(ds, stats);
    case BaselineKind::Linear: return linear_interp(ds, stats);
    case BaselineKind::CubicSpline: return cubic_spline_interp(ds, stats);
    case BaselineKind::Zero: return zero_impute(ds);
  }
  throw std::logic_error("impute_with: unknown baseline");
}

}  // namespace mrnn
