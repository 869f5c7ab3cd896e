#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace mrnn {

// Dense row-major matrix of doubles.
struct Tensor2 {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor2: negative shape");
  }

  static Tensor2 identity(int n) {
    Tensor2 t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {
inline void require_finite(std::span<const double> v, const char* who) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}
}  // namespace detail

inline std::vector<double> relu(std::span<const double> v) {
  detail::require_finite(v, "relu");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

inline std::vector<double> sigmoid(std::span<const double> v) {
  detail::require_finite(v, "sigmoid");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    // Split on sign so exp never overflows.
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return out;
}

inline double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// W x + b
inline std::vector<double> affine(const Tensor2& W, std::span<const double> b,
                                  std::span<const double> x) {
  if (W.cols != static_cast<int>(x.size()) || W.rows != static_cast<int>(b.size()))
    throw std::invalid_argument("affine: dimension mismatch");
  std::vector<double> out(b.begin(), b.end());
  for (int i = 0; i < W.rows; ++i) {
    double acc = 0.0;
    const double* row = W.data.data() + static_cast<std::size_t>(i) * W.cols;
    for (int j = 0; j < W.cols; ++j) acc += row[j] * x[j];
    out[i] += acc;
  }
  return out;
}

}  // namespace mrnn
