#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "mrnn/rng.hpp"
#include "mrnn/tensor.hpp"

namespace mrnn {

// One patient: strictly increasing time stamps (stamps[0] == 0 after
// ingestion), a T x D value matrix, and an explicit presence flag per cell.
// Missingness is never encoded as a sentinel value; unobserved value slots
// are kept at 0.0 so equality comparisons stay deterministic.
struct PatientRecord {
  std::string id;
  std::vector<double> stamps;
  Tensor2 values;                  // T x D
  std::vector<std::uint8_t> mask;  // T x D row-major, 1 = observed
  std::vector<int> labels;         // length T; -1 = unlabeled, else 0/1

  int length() const { return static_cast<int>(stamps.size()); }
  int streams() const { return values.cols; }

  bool observed(int t, int d) const {
    return mask[static_cast<std::size_t>(t) * values.cols + d] != 0;
  }
  void set_observed(int t, int d, bool on) {
    mask[static_cast<std::size_t>(t) * values.cols + d] = on ? 1 : 0;
  }
  double value(int t, int d) const { return values.at(t, d); }

  bool fully_labeled() const {
    for (int y : labels)
      if (y < 0) return false;
    return !labels.empty();
  }
};

struct TemporalDataset {
  std::vector<PatientRecord> records;
  std::vector<std::string> stream_names;
  // Per-stream (min, max) captured by normalize_minmax; empty when the
  // dataset is in its original units.
  std::vector<std::pair<double, double>> normalization;

  int streams() const { return static_cast<int>(stream_names.size()); }
  int size() const { return static_cast<int>(records.size()); }

  bool has_labels() const {
    if (records.empty()) return false;
    for (const auto& r : records)
      if (!r.fully_labeled()) return false;
    return true;
  }

  std::size_t observed_cells() const {
    std::size_t n = 0;
    for (const auto& r : records)
      for (std::uint8_t m : r.mask) n += m;
    return n;
  }

  const PatientRecord* find(const std::string& id) const {
    for (const auto& r : records)
      if (r.id == id) return &r;
    return nullptr;
  }
};

// m_t^d and the elapsed-time matrix delta_t^d.
struct MaskDelta {
  Tensor2 mask;   // T x D, entries 0/1
  Tensor2 delta;  // T x D, nonnegative
};

// delta_1^d = 0; for t > 1:
//   delta_t^d = s_t - s_{t-1} + delta_{t-1}^d   if m_{t-1}^d = 0
//   delta_t^d = s_t - s_{t-1}                   if m_{t-1}^d = 1
inline MaskDelta compute_mask_delta(const PatientRecord& rec) {
  const int T = rec.length(), D = rec.streams();
  MaskDelta out{Tensor2(T, D), Tensor2(T, D)};
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) out.mask.at(t, d) = rec.observed(t, d) ? 1.0 : 0.0;
  for (int d = 0; d < D; ++d) {
    for (int t = 1; t < T; ++t) {
      const double gap = rec.stamps[t] - rec.stamps[t - 1];
      out.delta.at(t, d) = rec.observed(t - 1, d) ? gap : gap + out.delta.at(t - 1, d);
    }
  }
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double_field(const std::string& s, int line_no, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": unparsable " + what +
                             " '" + s + "'");
  return v;
}

}  // namespace detail

// CSV contract: header `id,time,label,<stream_1>,...,<stream_D>`, one row
// per (patient, time stamp), empty feature fields meaning missing. Rows for
// an id need not be contiguous; (id, time) must be unique. Stamps are
// shifted per patient so the first observation sits at 0.
inline TemporalDataset parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("line 1: missing header row");
  auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "time" || header[2] != "label")
    throw std::runtime_error("line 1: header must start with id,time,label and name >=1 stream");

  TemporalDataset ds;
  ds.stream_names.assign(header.begin() + 3, header.end());
  const int D = ds.streams();

  struct Row {
    double time;
    int label;
    std::vector<double> vals;
    std::vector<std::uint8_t> present;
    int line_no;
  };
  std::map<std::string, std::vector<Row>> by_id;
  std::vector<std::string> id_order;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != 3 + D)
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(3 + D) + " fields, got " +
                               std::to_string(fields.size()));
    Row row;
    row.line_no = line_no;
    row.time = detail::parse_double_field(fields[1], line_no, "time");
    if (fields[2].empty()) {
      row.label = -1;
    } else if (fields[2] == "0" || fields[2] == "1") {
      row.label = fields[2][0] - '0';
    } else {
      throw std::runtime_error("line " + std::to_string(line_no) + ": label must be empty, 0 or 1");
    }
    row.vals.resize(D, 0.0);
    row.present.resize(D, 0);
    for (int d = 0; d < D; ++d) {
      if (fields[3 + d].empty()) continue;
      row.vals[d] = detail::parse_double_field(fields[3 + d], line_no, "value");
      row.present[d] = 1;
    }
    if (by_id.find(fields[0]) == by_id.end()) id_order.push_back(fields[0]);
    by_id[fields[0]].push_back(std::move(row));
  }

  for (const auto& id : id_order) {
    auto& rows = by_id[id];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.time < b.time; });
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].time == rows[i - 1].time)
        throw std::runtime_error("line " + std::to_string(rows[i].line_no) +
                                 ": duplicate (id,time) pair for id '" + id + "'");
    PatientRecord rec;
    rec.id = id;
    const int T = static_cast<int>(rows.size());
    rec.stamps.resize(T);
    rec.values = Tensor2(T, D);
    rec.mask.assign(static_cast<std::size_t>(T) * D, 0);
    rec.labels.resize(T);
    const double t0 = rows.front().time;
    for (int t = 0; t < T; ++t) {
      rec.stamps[t] = rows[t].time - t0;
      rec.labels[t] = rows[t].label;
      for (int d = 0; d < D; ++d) {
        if (rows[t].present[d]) {
          rec.values.at(t, d) = rows[t].vals[d];
          rec.set_observed(t, d, true);
        }
      }
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

inline TemporalDataset parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_csv(in);
}

// Rows sorted by (id, time); doubles in shortest round-trip form.
inline void write_csv(const TemporalDataset& ds, std::ostream& out) {
  out << "id,time,label";
  for (const auto& name : ds.stream_names) out << ',' << name;
  out << '\n';
  std::vector<const PatientRecord*> order;
  order.reserve(ds.records.size());
  for (const auto& r : ds.records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const PatientRecord* a, const PatientRecord* b) { return a->id < b->id; });
  for (const PatientRecord* rec : order) {
    for (int t = 0; t < rec->length(); ++t) {
      out << rec->id << ',' << detail::format_double(rec->stamps[t]) << ',';
      if (rec->labels[t] >= 0) out << rec->labels[t];
      for (int d = 0; d < rec->streams(); ++d) {
        out << ',';
        if (rec->observed(t, d)) out << detail::format_double(rec->value(t, d));
      }
      out << '\n';
    }
  }
}

inline void write_csv(const TemporalDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_csv(ds, out);
}

// Maps every observed value to (x - min_d) / (max_d - min_d). Constant
// streams map to 0. The per-stream (min, max) is stored for inversion.
inline TemporalDataset normalize_minmax(const TemporalDataset& ds) {
  const int D = ds.streams();
  std::vector<std::pair<double, double>> ranges(D, {0.0, 0.0});
  std::vector<bool> seen(D, false);
  for (const auto& rec : ds.records) {
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < D; ++d) {
        if (!rec.observed(t, d)) continue;
        const double v = rec.value(t, d);
        if (!seen[d]) {
          ranges[d] = {v, v};
          seen[d] = true;
        } else {
          ranges[d].first = std::min(ranges[d].first, v);
          ranges[d].second = std::max(ranges[d].second, v);
        }
      }
  }
  for (int d = 0; d < D; ++d)
    if (!seen[d])
      throw std::runtime_error("normalize_minmax: stream '" + ds.stream_names[d] +
                               "' has no observed values");
  TemporalDataset out = ds;
  out.normalization = ranges;
  for (auto& rec : out.records)
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < D; ++d) {
        if (!rec.observed(t, d)) continue;
        const auto [lo, hi] = ranges[d];
        rec.values.at(t, d) = hi > lo ? (rec.value(t, d) - lo) / (hi - lo) : 0.0;
      }
  return out;
}

// Applies a previously captured normalization (e.g. the one stored in a
// model archive) instead of recomputing ranges.
inline TemporalDataset apply_normalization(const TemporalDataset& ds,
                                           const std::vector<std::pair<double, double>>& ranges) {
  if (static_cast<int>(ranges.size()) != ds.streams())
    throw std::invalid_argument("apply_normalization: stream count mismatch");
  TemporalDataset out = ds;
  out.normalization = ranges;
  for (auto& rec : out.records)
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < ds.streams(); ++d) {
        if (!rec.observed(t, d)) continue;
        const auto [lo, hi] = ranges[d];
        rec.values.at(t, d) = hi > lo ? (rec.value(t, d) - lo) / (hi - lo) : 0.0;
      }
  return out;
}

inline TemporalDataset denormalize(const TemporalDataset& ds) {
  if (ds.normalization.empty())
    throw std::runtime_error("denormalize: dataset carries no normalization");
  TemporalDataset out = ds;
  for (auto& rec : out.records)
    for (int t = 0; t < rec.length(); ++t)
      for (int d = 0; d < ds.streams(); ++d) {
        if (!rec.observed(t, d)) continue;
        const auto [lo, hi] = ds.normalization[d];
        rec.values.at(t, d) = rec.value(t, d) * (hi - lo) + lo;
      }
  out.normalization.clear();
  return out;
}

struct FoldSplit {
  TemporalDataset train;
  TemporalDataset test;
};

// Patient-level partition into k folds; fold sizes differ by at most one.
inline std::vector<FoldSplit> kfold_split(const TemporalDataset& ds, int k, Rng rng) {
  const int n = ds.size();
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (k > n) throw std::invalid_argument("kfold_split: k exceeds patient count");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<int> fold_of(n);
  for (int i = 0; i < n; ++i) fold_of[perm[i]] = i % k;

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) {
    folds[f].train.stream_names = ds.stream_names;
    folds[f].train.normalization = ds.normalization;
    folds[f].test.stream_names = ds.stream_names;
    folds[f].test.normalization = ds.normalization;
  }
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < k; ++f)
      (fold_of[i] == f ? folds[f].test : folds[f].train).records.push_back(ds.records[i]);
  return folds;
}

}  // namespace mrnn
