#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mrnn/rng.hpp"
#include "mrnn/tape.hpp"
#include "mrnn/tensor.hpp"

using namespace mrnn;

namespace {

std::vector<double> random_vec(Rng& rng, int n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("relu matches definition") {
  REQUIRE(relu(std::vector<double>{-1.0, 0.0, 2.0}) == std::vector<double>{0.0, 0.0, 2.0});
  REQUIRE(relu(std::vector<double>(4, 0.0)) == std::vector<double>(4, 0.0));

  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_vec(rng, 1 + static_cast<int>(rng.below(8)));
    auto out = relu(v);
    for (std::size_t i = 0; i < v.size(); ++i)
      REQUIRE(out[i] == std::max(0.0, v[i]));
  }

  REQUIRE_THROWS_AS(relu(std::vector<double>{std::nan("")}), std::invalid_argument);
}

TEST_CASE("sigmoid symmetry and saturation") {
  REQUIRE(sigmoid(std::vector<double>{0.0})[0] == 0.5);

  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = rng.uniform(-10.0, 10.0);
    const double a = sigmoid(std::vector<double>{x})[0];
    const double b = sigmoid(std::vector<double>{-x})[0];
    REQUIRE_THAT(a + b, Catch::Matchers::WithinAbs(1.0, 1e-15));
    REQUIRE(a > 0.0);
    REQUIRE(a < 1.0);
  }

  const auto hi = sigmoid(std::vector<double>{30.0})[0];
  const auto lo = sigmoid(std::vector<double>{-30.0})[0];
  REQUIRE_THAT(hi, Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(lo, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("affine against the naive oracle") {
  const Tensor2 eye = Tensor2::identity(2);
  REQUIRE(affine(eye, std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, -1.0}) ==
          std::vector<double>{3.0, -1.0});

  Tensor2 zero(1, 3);
  REQUIRE(affine(zero, std::vector<double>{5.0}, std::vector<double>{7.0, -2.0, 0.5}) ==
          std::vector<double>{5.0});

  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 W(4, 3);
    for (double& v : W.data) v = rng.uniform(-1.0, 1.0);
    auto b = random_vec(rng, 4);
    auto x = random_vec(rng, 3);
    auto got = affine(W, b, x);
    for (int i = 0; i < 4; ++i) {
      double want = b[i];
      for (int j = 0; j < 3; ++j) want += W.at(i, j) * x[j];
      REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(want, 1e-14));
    }
  }

  REQUIRE_THROWS_AS(affine(Tensor2(2, 2), std::vector<double>{0.0, 0.0},
                           std::vector<double>{1.0}),
                    std::invalid_argument);
}

TEST_CASE("affine is linear in x") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 W(3, 3);
    for (double& v : W.data) v = rng.uniform(-1.0, 1.0);
    auto b = random_vec(rng, 3);
    auto x = random_vec(rng, 3);
    auto y = random_vec(rng, 3);
    const double al = rng.uniform(-2.0, 2.0), be = rng.uniform(-2.0, 2.0);
    std::vector<double> mix(3), zero(3, 0.0);
    for (int i = 0; i < 3; ++i) mix[i] = al * x[i] + be * y[i];
    const auto lhs = affine(W, b, mix);
    const auto fx = affine(W, zero, x);
    const auto fy = affine(W, zero, y);
    for (int i = 0; i < 3; ++i)
      REQUIRE_THAT(lhs[i], Catch::Matchers::WithinAbs(al * fx[i] + be * fy[i] + b[i], 1e-12));
  }
}

TEST_CASE("tape gradient of x^2") {
  ParamStore store;
  const ParamId w = store.add(1, 1);
  const ParamId b = store.add(1, 1);
  store.value(w)[0] = 3.0;

  Tape tape(store);
  const std::vector<double> one{1.0};
  const NodeId x = tape.affine(w, b, tape.constant(one));
  const NodeId loss = tape.weighted_sse(x, std::vector<double>{0.0}, std::vector<double>{1.0});
  REQUIRE(tape.value(loss) == 9.0);
  tape.backward(loss);
  REQUIRE(store.grad(w)[0] == 6.0);

  REQUIRE_THROWS_AS(tape.backward(loss), std::logic_error);  // replay without reset
}

TEST_CASE("disconnected parameter has exactly zero gradient") {
  ParamStore store;
  const ParamId used = store.add(1, 1);
  const ParamId unused = store.add(2, 2);
  store.value(used)[0] = 1.5;

  Tape tape(store);
  const ParamId zero_bias = store.add(1, 1);
  const NodeId x = tape.affine(used, zero_bias, tape.constant(std::vector<double>{2.0}));
  const NodeId loss = tape.weighted_sse(x, std::vector<double>{1.0}, std::vector<double>{1.0});
  tape.backward(loss);
  for (double g : store.grad(unused)) REQUIRE(g == 0.0);
  REQUIRE(store.grad(used)[0] != 0.0);
}

// A composite graph touching every op kind, checked against central finite
// differences at 10 random parameter coordinates.
TEST_CASE("tape gradients match finite differences") {
  Rng rng(99);
  for (int instance = 0; instance < 5; ++instance) {
    ParamStore store;
    const ParamId W1 = store.add_uniform_fan_in(3, 4, 4, rng);
    const ParamId b1 = store.add_uniform_fan_in(3, 1, 4, rng);
    const ParamId W2 = store.add_uniform_fan_in(3, 3, 3, rng);
    const ParamId W3 = store.add_uniform_fan_in(3, 6, 6, rng);
    const ParamId b3 = store.add_uniform_fan_in(3, 1, 6, rng);
    const ParamId U = store.add_uniform_fan_in(1, 3, 3, rng);
    const ParamId bu = store.add_uniform_fan_in(1, 1, 3, rng);

    const auto x1 = random_vec(rng, 4, 0.1, 1.0);
    const auto x2 = random_vec(rng, 3, 0.1, 1.0);
    const auto cmul = random_vec(rng, 3, 0.5, 1.5);
    const auto cadd = random_vec(rng, 3, -0.5, 0.5);
    const auto target = random_vec(rng, 3, 0.0, 1.0);
    const std::vector<double> weight{1.0, 0.0, 1.0};

    auto eval = [&](Tape& tape) {
      const NodeId a = tape.relu(tape.affine(W1, b1, tape.constant(x1)));
      const NodeId b = tape.sigmoid(tape.affine2(W2, a, W2, tape.constant(x2), b1));
      const NodeId c = tape.relu(tape.affine(W3, b3, tape.concat(a, b)));
      const NodeId d = tape.add_const(tape.mul_const(c, cmul), cadd);
      const NodeId wsse = tape.weighted_sse(d, target, weight);
      const NodeId s0 = tape.sigmoid(tape.affine(U, bu, d));
      const NodeId ce = tape.bce(s0, 1.0);
      std::vector<NodeId> parts{wsse, ce, tape.stack_scalars(std::vector<NodeId>{wsse, ce})};
      const NodeId stacked = parts[2];
      const NodeId folded = tape.weighted_sse(stacked, std::vector<double>{0.0, 0.0},
                                              std::vector<double>{0.25, 0.25});
      return tape.scale(tape.sum_scalars(std::vector<NodeId>{wsse, ce, folded}), 0.7);
    };

    Tape tape(store);
    const NodeId loss = eval(tape);
    tape.backward(loss);
    std::vector<double> analytic(store.total_size());
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = store.flat_grad(i);

    for (int probe = 0; probe < 10; ++probe) {
      const std::size_t i = rng.below(store.total_size());
      const double h = 1e-5;
      const double saved = store.flat_value(i);
      store.flat_value(i) = saved + h;
      Tape tp(store);
      const double up = tp.value(eval(tp));
      store.flat_value(i) = saved - h;
      Tape tm(store);
      const double dn = tm.value(eval(tm));
      store.flat_value(i) = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
      REQUIRE(std::abs(fd - analytic[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("dropout_mask statistics and determinism") {
  Rng rng(7);
  REQUIRE(dropout_mask(rng, 16, 1.0) == std::vector<double>(16, 1.0));

  Rng a(42), b(42);
  REQUIRE(dropout_mask(a, 100, 0.5) == dropout_mask(b, 100, 0.5));

  Rng big(1234);
  auto mask = dropout_mask(big, 100000, 0.7);
  double mean = 0.0;
  for (double m : mask) mean += m;
  mean /= static_cast<double>(mask.size());
  REQUIRE(mean > 0.69);
  REQUIRE(mean < 0.71);

  REQUIRE_THROWS_AS(dropout_mask(rng, 4, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(dropout_mask(rng, 4, 1.5), std::invalid_argument);
}

TEST_CASE("rng reproducibility and substreams") {
  Rng a(2024), b(2024);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng base(5);
  Rng s1 = base.substream("mask");
  Rng s2 = base.substream("split");
  REQUIRE(s1.seed() != s2.seed());
  Rng s1b = base.substream("mask");
  REQUIRE(s1.next_u64() == s1b.next_u64());

  Rng u(17);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }
  Rng e(18);
  for (int i = 0; i < 1000; ++i) REQUIRE(e.exponential(1.0) > 0.0);
}
