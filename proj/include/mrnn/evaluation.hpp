#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnn/baselines.hpp"
#include "mrnn/dataset.hpp"
#include "mrnn/masking.hpp"
#include "mrnn/model.hpp"
#include "mrnn/train.hpp"

namespace mrnn {

// RMSE over exactly the plan's removed cells, in the units the datasets
// carry (normalized [0,1] in benchmark runs).
inline double masked_rmse(const TemporalDataset& imputed, const TemporalDataset& truth,
                          const MaskPlan& plan) {
  if (plan.cells.empty()) throw std::invalid_argument("masked_rmse: empty plan");
  std::map<std::string, const PatientRecord*> imp, tru;
  for (const auto& r : imputed.records) imp[r.id] = &r;
  for (const auto& r : truth.records) tru[r.id] = &r;
  double sum = 0.0;
  long n = 0;
  for (const auto& c : plan.cells) {
    auto ti = tru.find(c.id);
    auto ii = imp.find(c.id);
    if (ti == tru.end() || ii == imp.end())
      throw std::runtime_error("masked_rmse: plan cell for unknown patient '" + c.id + "'");
    if (!ti->second->observed(c.t, c.d))
      throw std::runtime_error("masked_rmse: plan cell not observed in truth");
    if (!ii->second->observed(c.t, c.d))
      throw std::runtime_error("masked_rmse: plan cell not filled in imputed dataset");
    const double e = ii->second->value(c.t, c.d) - ti->second->value(c.t, c.d);
    sum += e * e;
    ++n;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

// Probability a random positive outranks a random negative, ties at 1/2
// (normalized Mann-Whitney U via midranks).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: length mismatch");
  const std::size_t n = scores.size();
  long n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    n_pos += y;
  }
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: need at least one positive and one negative label");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// L2-regularized logistic regression by full-batch gradient descent with a
// Lipschitz step size; deterministic. Feature rows get an implicit trailing
// intercept column, and the returned weight vector includes it last. All
// coordinates are regularized, so shrinkage is monotone in lambda.
inline std::vector<double> fit_logistic(const std::vector<std::vector<double>>& features,
                                        const std::vector<int>& labels, double regularization,
                                        double tol = 1e-6, long max_iter = 200000) {
  if (features.empty() || features.size() != labels.size())
    throw std::invalid_argument("fit_logistic: bad inputs");
  if (!(regularization > 0.0))
    throw std::invalid_argument("fit_logistic: regularization must be > 0");
  const std::size_t n = features.size();
  const std::size_t d = features[0].size() + 1;
  for (const auto& row : features)
    if (row.size() + 1 != d) throw std::invalid_argument("fit_logistic: ragged features");

  double sq_sum = 0.0;
  for (const auto& row : features) {
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("fit_logistic: non-finite feature");
      sq_sum += v * v;
    }
    sq_sum += 1.0;  // intercept column
  }
  const double lipschitz = 0.25 * sq_sum / static_cast<double>(n) + regularization;
  const double step = 1.0 / lipschitz;

  std::vector<double> w(d, 0.0), grad(d, 0.0);
  for (long iter = 0; iter < max_iter; ++iter) {
    for (std::size_t j = 0; j < d; ++j) grad[j] = regularization * w[j];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = features[i];
      double z = w[d - 1];
      for (std::size_t j = 0; j + 1 < d; ++j) z += w[j] * row[j];
      const double g = (sigmoid_scalar(z) - static_cast<double>(labels[i])) /
                       static_cast<double>(n);
      for (std::size_t j = 0; j + 1 < d; ++j) grad[j] += g * row[j];
      grad[d - 1] += g;
    }
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    if (std::sqrt(norm) <= tol) return w;
    for (std::size_t j = 0; j < d; ++j) w[j] -= step * grad[j];
  }
  throw std::runtime_error("fit_logistic: no convergence within iteration cap");
}

// (mean |w - w_hat|, sqrt(mean (w - w_hat)^2)) with per-coordinate averaging.
inline std::pair<double, double> congeniality(std::span<const double> w_true,
                                              std::span<const double> w_imputed) {
  if (w_true.size() != w_imputed.size() || w_true.empty())
    throw std::invalid_argument("congeniality: dimension mismatch");
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < w_true.size(); ++i) {
    const double diff = std::abs(w_true[i] - w_imputed[i]);
    l1 += diff;
    l2 += diff * diff;
  }
  const double d = static_cast<double>(w_true.size());
  return {l1 / d, std::sqrt(l2 / d)};
}

// --- benchmark harness --------------------------------------------------

struct DegradationSpec {
  MaskSetting setting = MaskSetting::Mcar;
  double rate = 0.3;
  int top_k = 4;

  std::string tag() const {
    std::ostringstream os;
    os << to_string(setting) << '@' << detail::format_double(rate);
    if (setting == MaskSetting::Correlated) os << "top" << top_k;
    return os.str();
  }
};

struct BenchmarkOptions {
  int k_folds = 5;
  bool with_auroc = false;
  bool with_congeniality = false;
  double logistic_regularization = 0.01;
  std::string reference = "mrnn";
  MRnnConfig mrnn;
  MRnnConfig predictor;  // used for the shared downstream classifier
};

struct EvalRow {
  std::string method;
  std::string setting;
  int fold = 0;
  bool failed = false;
  std::string error;
  double rmse = 0.0;
  std::optional<double> auroc;
  std::optional<double> mean_bias;
  std::optional<double> weight_rmse;
};

struct EvalSummaryRow {
  std::string setting;
  std::string method;
  int folds = 0;
  double mean_rmse = 0.0;
  double rmse_lo = 0.0, rmse_hi = 0.0;
  double gain_vs_reference = 0.0;
  std::optional<double> mean_auroc, auroc_lo, auroc_hi;
  std::optional<double> mean_bias, weight_rmse;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::uint64_t seed = 0;
  int k_folds = 0;
  std::string reference;
  std::vector<std::string> warnings;

  std::vector<double> fold_metric(const std::string& method, const std::string& setting,
                                  double EvalRow::* field) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.method == method && r.setting == setting && !r.failed) out.push_back(r.*field);
    return out;
  }

  std::vector<EvalSummaryRow> summarize() const;
  void write_fold_csv(std::ostream& out) const;
  void write_summary_csv(std::ostream& out) const;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Logistic-regression features: one row per labeled time stamp.
inline void logistic_rows(const TemporalDataset& ds, std::vector<std::vector<double>>& X,
                          std::vector<int>& y) {
  X.clear();
  y.clear();
  for (const auto& rec : ds.records)
    for (int t = 0; t < rec.length(); ++t) {
      if (rec.labels[t] < 0) continue;
      std::vector<double> row(rec.streams());
      for (int d = 0; d < rec.streams(); ++d)
        row[d] = rec.observed(t, d) ? rec.value(t, d) : 0.0;
      X.push_back(std::move(row));
      y.push_back(rec.labels[t]);
    }
}

inline MaskPlan restrict_plan(const MaskPlan& plan, const TemporalDataset& subset) {
  std::set<std::string> ids;
  for (const auto& r : subset.records) ids.insert(r.id);
  MaskPlan out;
  out.seed = plan.seed;
  out.setting = plan.setting;
  for (const auto& c : plan.cells)
    if (ids.count(c.id)) out.cells.push_back(c);
  return out;
}

inline TemporalDataset impute_arm(const std::string& method, const TemporalDataset& train,
                                  const TemporalDataset& test, const BenchmarkOptions& opt,
                                  std::uint64_t fold_seed) {
  if (method == "mrnn" || method == "mrnn-si") {
    MRnnConfig cfg = opt.mrnn;
    cfg.seed = fold_seed;
    auto trained = train_mrnn(train, cfg);
    return impute_single(trained.model, test).data;
  }
  if (method == "mrnn-interp" || method == "mrnn-impute") {
    MRnnConfig cfg = opt.mrnn;
    cfg.seed = fold_seed;
    cfg.ablation = method == "mrnn-interp" ? Ablation::InterpOnly : Ablation::ImputeOnly;
    auto trained = train_mrnn(train, cfg);
    return impute_single(trained.model, test).data;
  }
  const StreamStats stats = stream_means(train);
  if (method == "mean") return mean_impute(test, stats);
  if (method == "locf") return locf_impute(test, stats);
  if (method == "linear") return linear_interp(test, stats);
  if (method == "spline") return cubic_spline_interp(test, stats);
  if (method == "zero") return zero_impute(test);
  throw std::invalid_argument("unknown method '" + method + "'");
}

}  // namespace detail

// 5-fold-style benchmark: normalize, degrade the whole dataset under one
// reproducible plan, split by patient, train every arm on the degraded
// training fold, impute the degraded test fold, and score each fold on the
// plan cells that fall inside it. A failing arm is recorded and skipped.
inline EvalReport benchmark_run(const TemporalDataset& raw, std::vector<std::string> methods,
                                const DegradationSpec& spec, const BenchmarkOptions& opt,
                                Rng rng) {
  if (spec.setting != MaskSetting::Mcar && spec.setting != MaskSetting::Correlated)
    throw std::invalid_argument("benchmark_run: degradation must be MCAR or CORRELATED");

  EvalReport report;
  report.seed = rng.seed();
  report.k_folds = opt.k_folds;
  report.reference = opt.reference;

  // de-duplicate while keeping first occurrence order
  std::vector<std::string> uniq;
  for (const auto& m : methods) {
    if (std::find(uniq.begin(), uniq.end(), m) == uniq.end()) {
      uniq.push_back(m);
    } else {
      report.warnings.push_back("duplicate method '" + m + "' ignored");
    }
  }

  const TemporalDataset truth = normalize_minmax(raw);
  auto degraded = spec.setting == MaskSetting::Mcar
                      ? mcar_remove(truth, spec.rate, rng.substream("mask"))
                      : correlated_remove(truth, spec.rate, spec.top_k, rng.substream("mask"));
  for (auto& w : degraded.warnings) report.warnings.push_back(w);

  const auto folds = kfold_split(degraded.data, opt.k_folds, rng.substream("split"));
  const std::string setting = spec.tag();

  for (int f = 0; f < opt.k_folds; ++f) {
    const MaskPlan fold_plan = detail::restrict_plan(degraded.plan, folds[f].test);
    // truth restricted to the same patients, for scoring and congeniality
    TemporalDataset truth_test;
    truth_test.stream_names = truth.stream_names;
    truth_test.normalization = truth.normalization;
    {
      std::set<std::string> ids;
      for (const auto& r : folds[f].test.records) ids.insert(r.id);
      for (const auto& r : truth.records)
        if (ids.count(r.id)) truth_test.records.push_back(r);
    }

    std::optional<std::vector<double>> w_true;
    if (opt.with_congeniality) {
      std::vector<std::vector<double>> X;
      std::vector<int> y;
      detail::logistic_rows(truth_test, X, y);
      w_true = fit_logistic(X, y, opt.logistic_regularization);
    }

    for (const auto& method : uniq) {
      EvalRow row;
      row.method = method;
      row.setting = setting;
      row.fold = f;
      try {
        const std::uint64_t fold_seed = rng.substream("arm-" + method).substream(f).seed();
        const TemporalDataset imputed =
            detail::impute_arm(method, folds[f].train, folds[f].test, opt, fold_seed);
        row.rmse = masked_rmse(imputed, truth_test, fold_plan);

        if (opt.with_auroc && truth.has_labels()) {
          const TemporalDataset imputed_train =
              detail::impute_arm(method, folds[f].train, folds[f].train, opt, fold_seed);
          MRnnConfig pcfg = opt.predictor;
          pcfg.seed = fold_seed;
          auto pred = train_predictor(imputed_train, pcfg);
          std::vector<double> scores;
          std::vector<int> labels;
          for (const auto& rec : imputed.records) {
            auto probs = pred.model.predict(rec);
            for (int t = 0; t < rec.length(); ++t)
              if (rec.labels[t] >= 0) {
                scores.push_back(probs[t]);
                labels.push_back(rec.labels[t]);
              }
          }
          row.auroc = auroc(scores, labels);
        }

        if (opt.with_congeniality) {
          std::vector<std::vector<double>> X;
          std::vector<int> y;
          detail::logistic_rows(imputed, X, y);
          const auto w_hat = fit_logistic(X, y, opt.logistic_regularization);
          const auto [bias, wrmse] = congeniality(*w_true, w_hat);
          row.mean_bias = bias;
          row.weight_rmse = wrmse;
        }
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        report.warnings.push_back("arm '" + method + "' fold " + std::to_string(f) +
                                  " failed: " + e.what());
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

inline std::vector<EvalSummaryRow> EvalReport::summarize() const {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.setting, r.method);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::sort(keys.begin(), keys.end());

  std::vector<EvalSummaryRow> out;
  for (const auto& [setting, method] : keys) {
    EvalSummaryRow s;
    s.setting = setting;
    s.method = method;
    const auto rmse = fold_metric(method, setting, &EvalRow::rmse);
    s.folds = static_cast<int>(rmse.size());
    s.mean_rmse = detail::mean_of(rmse);
    s.rmse_lo = detail::percentile(rmse, 0.025);
    s.rmse_hi = detail::percentile(rmse, 0.975);

    std::vector<double> aur, bias, wrm;
    for (const auto& r : rows) {
      if (r.method != method || r.setting != setting || r.failed) continue;
      if (r.auroc) aur.push_back(*r.auroc);
      if (r.mean_bias) bias.push_back(*r.mean_bias);
      if (r.weight_rmse) wrm.push_back(*r.weight_rmse);
    }
    if (!aur.empty()) {
      s.mean_auroc = detail::mean_of(aur);
      s.auroc_lo = detail::percentile(aur, 0.025);
      s.auroc_hi = detail::percentile(aur, 0.975);
    }
    if (!bias.empty()) s.mean_bias = detail::mean_of(bias);
    if (!wrm.empty()) s.weight_rmse = detail::mean_of(wrm);
    out.push_back(s);
  }

  // % gain of the reference arm relative to each benchmark, in the
  // direction that favors the reference: (benchmark - reference)/benchmark
  // for RMSE, (reference - benchmark)/benchmark for AUROC.
  for (auto& s : out) {
    const EvalSummaryRow* ref = nullptr;
    for (const auto& cand : out)
      if (cand.setting == s.setting && cand.method == reference) ref = &cand;
    if (ref && s.mean_rmse > 0.0)
      s.gain_vs_reference = (s.mean_rmse - ref->mean_rmse) / s.mean_rmse;
  }
  return out;
}

inline void EvalReport::write_fold_csv(std::ostream& out) const {
  out << "method,setting,fold,rmse,auroc,mean_bias,weight_rmse\n";
  std::vector<const EvalRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const EvalRow* a, const EvalRow* b) {
    return std::tie(a->setting, a->method, a->fold) < std::tie(b->setting, b->method, b->fold);
  });
  for (const EvalRow* r : order) {
    out << r->method << ',' << r->setting << ',' << r->fold << ',';
    if (!r->failed) out << detail::format_double(r->rmse);
    out << ',';
    if (r->auroc) out << detail::format_double(*r->auroc);
    out << ',';
    if (r->mean_bias) out << detail::format_double(*r->mean_bias);
    out << ',';
    if (r->weight_rmse) out << detail::format_double(*r->weight_rmse);
    out << '\n';
  }
}

inline void EvalReport::write_summary_csv(std::ostream& out) const {
  out << "setting,method,folds,mean_rmse,rmse_lo,rmse_hi,gain_vs_" << reference
      << ",mean_auroc,auroc_lo,auroc_hi,mean_bias,weight_rmse\n";
  for (const auto& s : summarize()) {
    out << s.setting << ',' << s.method << ',' << s.folds << ','
        << detail::format_double(s.mean_rmse) << ',' << detail::format_double(s.rmse_lo) << ','
        << detail::format_double(s.rmse_hi) << ',' << detail::format_double(s.gain_vs_reference)
        << ',';
    if (s.mean_auroc) out << detail::format_double(*s.mean_auroc);
    out << ',';
    if (s.auroc_lo) out << detail::format_double(*s.auroc_lo);
    out << ',';
    if (s.auroc_hi) out << detail::format_double(*s.auroc_hi);
    out << ',';
    if (s.mean_bias) out << detail::format_double(*s.mean_bias);
    out << ',';
    if (s.weight_rmse) out << detail::format_double(*s.weight_rmse);
    out << '\n';
  }
}

}  // namespace mrnn
