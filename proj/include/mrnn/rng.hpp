#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace mrnn {

// Counter-based deterministic generator (SplitMix64 output function).
// The u64/uniform streams are pure 64-bit integer arithmetic and therefore
// bit-identical across platforms for a given seed. Transformed draws
// (normal, exponential) additionally go through libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Independent stream derived from a label; used to fan one CLI seed out
  // into split/mask/init/dropout streams that do not interact.
  Rng substream(std::string_view label) const {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char ch : label) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 0x100000001b3ull;
    }
    return Rng(mix(seed_ ^ h));
  }

  Rng substream(std::uint64_t index) const {
    return Rng(mix(seed_ ^ mix(index + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(seed_ + counter_ * 0x9e3779b97f4a7c15ull);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // (0, 1); safe under log()
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one value per call (two u64 draws).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Strictly positive with probability 1.
  double exponential(double mean) {
    if (!(mean > 0.0)) throw std::invalid_argument("exponential: mean must be > 0");
    return -mean * std::log(uniform_open());
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n). Modulo bias is negligible for desk-scale n
  // and keeps the draw platform-stable.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be > 0");
    return next_u64() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Each entry is 1 with probability keep_p, else 0.
inline std::vector<double> dropout_mask(Rng& rng, std::size_t n, double keep_p) {
  if (!(keep_p > 0.0) || keep_p > 1.0)
    throw std::invalid_argument("dropout_mask: keep_p must lie in (0,1]");
  std::vector<double> mask(n, 1.0);
  if (keep_p < 1.0) {
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.bernoulli(keep_p) ? 1.0 : 0.0;
  }
  return mask;
}

}  // namespace mrnn
