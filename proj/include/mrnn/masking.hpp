#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mrnn/dataset.hpp"
#include "mrnn/rng.hpp"

namespace mrnn {

enum class MaskSetting { Mcar, StreamSubset, SampleSubset, LengthTruncate, Correlated };

inline const char* to_string(MaskSetting s) {
  switch (s) {
    case MaskSetting::Mcar: return "MCAR";
    case MaskSetting::StreamSubset: return "STREAM_SUBSET";
    case MaskSetting::SampleSubset: return "SAMPLE_SUBSET";
    case MaskSetting::LengthTruncate: return "LENGTH_TRUNCATE";
    case MaskSetting::Correlated: return "CORRELATED";
  }
  return "?";
}

inline MaskSetting mask_setting_from_string(const std::string& s) {
  if (s == "MCAR") return MaskSetting::Mcar;
  if (s == "STREAM_SUBSET") return MaskSetting::StreamSubset;
  if (s == "SAMPLE_SUBSET") return MaskSetting::SampleSubset;
  if (s == "LENGTH_TRUNCATE") return MaskSetting::LengthTruncate;
  if (s == "CORRELATED") return MaskSetting::Correlated;
  throw std::invalid_argument("unknown mask setting '" + s + "'");
}

struct RemovedCell {
  std::string id;
  int t = 0;
  int d = 0;
  bool operator==(const RemovedCell& o) const { return id == o.id && t == o.t && d == o.d; }
  bool operator<(const RemovedCell& o) const {
    return std::tie(id, t, d) < std::tie(o.id, o.t, o.d);
  }
};

// Ground-truth record of which observed cells were artificially removed.
struct MaskPlan {
  std::vector<RemovedCell> cells;
  std::uint64_t seed = 0;
  MaskSetting setting = MaskSetting::Mcar;
};

struct DegradeResult {
  TemporalDataset data;
  MaskPlan plan;
  std::vector<std::string> warnings;
};

// Re-applies a plan to the source dataset; checks each cell was observed.
inline TemporalDataset apply_plan(const TemporalDataset& ds, const MaskPlan& plan) {
  TemporalDataset out = ds;
  for (const auto& cell : plan.cells) {
    PatientRecord* rec = nullptr;
    for (auto& r : out.records)
      if (r.id == cell.id) {
        rec = &r;
        break;
      }
    if (!rec) throw std::runtime_error("apply_plan: unknown patient '" + cell.id + "'");
    if (cell.t < 0 || cell.t >= rec->length() || cell.d < 0 || cell.d >= rec->streams())
      throw std::runtime_error("apply_plan: cell index out of range");
    if (!rec->observed(cell.t, cell.d))
      throw std::runtime_error("apply_plan: cell was not observed in source");
    rec->set_observed(cell.t, cell.d, false);
    rec->values.at(cell.t, cell.d) = 0.0;
  }
  return out;
}

namespace detail {

struct CellRef {
  int rec;
  int t;
  int d;
};

// Observed cells in deterministic (record, t, d) order, optionally
// restricted to a stream subset.
inline std::vector<CellRef> observed_cells(const TemporalDataset& ds,
                                           const std::vector<bool>* stream_ok = nullptr) {
  std::vector<CellRef> cells;
  for (int r = 0; r < ds.size(); ++r) {
    const auto& rec = ds.records[r];
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < rec.streams(); ++d) {
        if (stream_ok && !(*stream_ok)[d]) continue;
        if (rec.observed(t, d)) cells.push_back({r, t, d});
      }
  }
  return cells;
}

inline DegradeResult remove_cells(const TemporalDataset& ds, std::vector<CellRef> pool,
                                  double rate, Rng& rng, MaskSetting setting) {
  if (!(rate > 0.0) || rate >= 1.0)
    throw std::invalid_argument("removal rate must lie in (0,1)");
  const std::size_t n_remove =
      static_cast<std::size_t>(std::floor(rate * static_cast<double>(pool.size())));

  // Partial Fisher-Yates: the first n_remove entries are a uniform sample
  // without replacement.
  for (std::size_t i = 0; i < n_remove; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  DegradeResult out;
  out.data = ds;
  out.plan.seed = rng.seed();
  out.plan.setting = setting;
  out.plan.cells.reserve(n_remove);
  for (std::size_t i = 0; i < n_remove; ++i) {
    const auto& c = pool[i];
    auto& rec = out.data.records[c.rec];
    rec.set_observed(c.t, c.d, false);
    rec.values.at(c.t, c.d) = 0.0;
    out.plan.cells.push_back({rec.id, c.t, c.d});
  }
  std::sort(out.plan.cells.begin(), out.plan.cells.end());

  for (const auto& rec : out.data.records) {
    bool any = false;
    for (std::uint8_t m : rec.mask) any = any || m;
    if (!any)
      out.warnings.push_back("patient '" + rec.id + "' lost all observations");
  }
  return out;
}

}  // namespace detail

// Removes floor(rate * observed) cells uniformly without replacement.
inline DegradeResult mcar_remove(const TemporalDataset& ds, double rate, Rng rng) {
  return detail::remove_cells(ds, detail::observed_cells(ds), rate, rng, MaskSetting::Mcar);
}

inline TemporalDataset subsample_streams(const TemporalDataset& ds, int d_keep, Rng rng) {
  const int D = ds.streams();
  if (d_keep < 2 || d_keep > D)
    throw std::invalid_argument("subsample_streams: d_keep out of range");
  std::vector<int> idx(D);
  for (int i = 0; i < D; ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(d_keep);
  std::sort(idx.begin(), idx.end());

  TemporalDataset out;
  out.stream_names.reserve(d_keep);
  for (int d : idx) out.stream_names.push_back(ds.stream_names[d]);
  for (const auto& rec : ds.records) {
    PatientRecord nr;
    nr.id = rec.id;
    nr.stamps = rec.stamps;
    nr.labels = rec.labels;
    nr.values = Tensor2(rec.length(), d_keep);
    nr.mask.assign(static_cast<std::size_t>(rec.length()) * d_keep, 0);
    for (int t = 0; t < rec.length(); ++t)
      for (int k = 0; k < d_keep; ++k) {
        nr.values.at(t, k) = rec.value(t, idx[k]);
        nr.set_observed(t, k, rec.observed(t, idx[k]));
      }
    out.records.push_back(std::move(nr));
  }
  return out;
}

inline TemporalDataset subsample_patients(const TemporalDataset& ds, int n_keep, Rng rng) {
  const int N = ds.size();
  if (n_keep < 1 || n_keep > N)
    throw std::invalid_argument("subsample_patients: n_keep out of range");
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(n_keep);
  std::sort(idx.begin(), idx.end());
  TemporalDataset out;
  out.stream_names = ds.stream_names;
  out.normalization = ds.normalization;
  for (int i : idx) out.records.push_back(ds.records[i]);
  return out;
}

inline TemporalDataset truncate_length(const TemporalDataset& ds, int t_keep) {
  if (t_keep < 1) throw std::invalid_argument("truncate_length: t_keep must be >= 1");
  TemporalDataset out;
  out.stream_names = ds.stream_names;
  out.normalization = ds.normalization;
  for (const auto& rec : ds.records) {
    const int T = std::min(rec.length(), t_keep);
    PatientRecord nr;
    nr.id = rec.id;
    nr.stamps.assign(rec.stamps.begin(), rec.stamps.begin() + T);
    nr.labels.assign(rec.labels.begin(), rec.labels.begin() + T);
    nr.values = Tensor2(T, rec.streams());
    nr.mask.assign(rec.mask.begin(), rec.mask.begin() + static_cast<std::size_t>(T) * rec.streams());
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < rec.streams(); ++d) nr.values.at(t, d) = rec.value(t, d);
    out.records.push_back(std::move(nr));
  }
  return out;
}

// Pearson correlation between each stream's observed values and the
// co-timed label, over cells where both are present.
inline std::vector<double> feature_label_correlation(const TemporalDataset& ds) {
  const int D = ds.streams();
  std::vector<double> corr(D, 0.0);
  for (int d = 0; d < D; ++d) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    long n = 0;
    for (const auto& rec : ds.records)
      for (int t = 0; t < rec.length(); ++t) {
        if (!rec.observed(t, d) || rec.labels[t] < 0) continue;
        const double x = rec.value(t, d), y = rec.labels[t];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        ++n;
      }
    if (n < 2)
      throw std::runtime_error("feature_label_correlation: stream '" + ds.stream_names[d] +
                               "' has fewer than 2 labeled observations");
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    corr[d] = (vx > 0 && vy > 0) ? cov / std::sqrt(vx * vy) : 0.0;
  }
  return corr;
}

// MCAR removal restricted to the top_k streams most correlated with the
// label; the rate is relative to those streams' observed cells. Ties in
// |correlation| break toward the lower stream index.
inline DegradeResult correlated_remove(const TemporalDataset& ds, double rate, int top_k,
                                       Rng rng) {
  const int D = ds.streams();
  if (top_k < 1 || top_k > D)
    throw std::invalid_argument("correlated_remove: top_k out of range");
  auto corr = feature_label_correlation(ds);
  std::vector<int> order(D);
  for (int d = 0; d < D; ++d) order[d] = d;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(corr[a]) > std::abs(corr[b]);
  });
  std::vector<bool> selected(D, false);
  for (int k = 0; k < top_k; ++k) selected[order[k]] = true;
  auto res = detail::remove_cells(ds, detail::observed_cells(ds, &selected), rate, rng,
                                  MaskSetting::Correlated);
  return res;
}

// Plan CSV: a comment line carrying seed and setting, then id,t_index,stream.
inline void write_plan(const MaskPlan& plan, std::ostream& out) {
  out << "# seed=" << plan.seed << " setting=" << to_string(plan.setting) << '\n';
  out << "id,t_index,stream\n";
  for (const auto& c : plan.cells) out << c.id << ',' << c.t << ',' << c.d << '\n';
}

inline void write_plan(const MaskPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_plan(plan, out);
}

inline MaskPlan parse_plan(std::istream& in) {
  MaskPlan plan;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# seed=", 0) != 0)
    throw std::runtime_error("plan: missing '# seed=... setting=...' comment line");
  std::istringstream hdr(line.substr(2));
  std::string kv;
  while (hdr >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "seed") plan.seed = std::stoull(value);
    if (key == "setting") plan.setting = mask_setting_from_string(value);
  }
  if (!std::getline(in, line) || line != "id,t_index,stream")
    throw std::runtime_error("plan: missing id,t_index,stream header");
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 3)
      throw std::runtime_error("plan line " + std::to_string(line_no) + ": expected 3 fields");
    plan.cells.push_back({fields[0], std::stoi(fields[1]), std::stoi(fields[2])});
  }
  return plan;
}

inline MaskPlan parse_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_plan(in);
}

}  // namespace mrnn
