#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnn/rng.hpp"
#include "mrnn/tensor.hpp"

namespace mrnn {

using ParamId = int;
using NodeId = int;

// Flat store of trainable parameters with matching gradient buffers.
// Parameters are addressable both by id and by a global flat coordinate,
// which is what the finite-difference oracles perturb.
class ParamStore {
 public:
  ParamId add(int rows, int cols) {
    Info info;
    info.offset = values_.size();
    info.rows = rows;
    info.cols = cols;
    infos_.push_back(info);
    values_.resize(values_.size() + static_cast<std::size_t>(rows) * cols, 0.0);
    grads_.resize(values_.size(), 0.0);
    return static_cast<ParamId>(infos_.size() - 1);
  }

  ParamId add_uniform_fan_in(int rows, int cols, int fan_in, Rng& rng) {
    ParamId id = add(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : value(id)) v = rng.uniform(-bound, bound);
    return id;
  }

  int count() const { return static_cast<int>(infos_.size()); }
  int rows(ParamId id) const { return infos_[id].rows; }
  int cols(ParamId id) const { return infos_[id].cols; }
  std::size_t size(ParamId id) const {
    return static_cast<std::size_t>(infos_[id].rows) * infos_[id].cols;
  }

  std::span<double> value(ParamId id) {
    return {values_.data() + infos_[id].offset, size(id)};
  }
  std::span<const double> value(ParamId id) const {
    return {values_.data() + infos_[id].offset, size(id)};
  }
  std::span<double> grad(ParamId id) {
    return {grads_.data() + infos_[id].offset, size(id)};
  }
  std::span<const double> grad(ParamId id) const {
    return {grads_.data() + infos_[id].offset, size(id)};
  }

  std::size_t total_size() const { return values_.size(); }
  double& flat_value(std::size_t i) { return values_[i]; }
  double flat_grad(std::size_t i) const { return grads_[i]; }

  void zero_grad() { grads_.assign(grads_.size(), 0.0); }

  std::span<double> all_values() { return values_; }
  std::span<double> all_grads() { return grads_; }

 private:
  struct Info {
    std::size_t offset;
    int rows;
    int cols;
  };
  std::vector<Info> infos_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

// Reverse-mode tape over vector-valued nodes. Forward values are computed
// eagerly as nodes are recorded; backward() replays the records in exact
// reverse order and accumulates adjoints into the ParamStore.
//
// All node values, adjoints and constant payloads live in pooled buffers,
// so a reset() keeps capacity and rebuilding the graph every mini-batch
// stays cheap.
class Tape {
 public:
  explicit Tape(ParamStore& params) : params_(&params) {}

  NodeId constant(std::span<const double> v) {
    NodeId id = new_node(OpKind::Const, static_cast<int>(v.size()));
    auto out = val(id);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
    return id;
  }

  NodeId zeros(int n) { return new_node(OpKind::Const, n); }

  // y = W x + b
  NodeId affine(ParamId W, ParamId b, NodeId x) {
    check_dims(W, b, x, "affine");
    NodeId id = new_node(OpKind::Affine1, params_->rows(W));
    Node& nd = nodes_[id];
    nd.a = x;
    nd.p0 = W;
    nd.p2 = b;
    auto out = val(id);
    auto wv = params_->value(W);
    auto bv = params_->value(b);
    auto xv = val(x);
    const int rows = params_->rows(W), cols = params_->cols(W);
    for (int i = 0; i < rows; ++i) {
      double acc = bv[i];
      const double* wrow = wv.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += wrow[j] * xv[j];
      out[i] = acc;
    }
    return id;
  }

  // y = W1 x1 + W2 x2 + b
  NodeId affine2(ParamId W1, NodeId x1, ParamId W2, NodeId x2, ParamId b) {
    check_dims(W1, b, x1, "affine2");
    check_dims(W2, b, x2, "affine2");
    NodeId id = new_node(OpKind::Affine2, params_->rows(W1));
    Node& nd = nodes_[id];
    nd.a = x1;
    nd.b = x2;
    nd.p0 = W1;
    nd.p1 = W2;
    nd.p2 = b;
    auto out = val(id);
    auto w1 = params_->value(W1);
    auto w2 = params_->value(W2);
    auto bv = params_->value(b);
    auto v1 = val(x1);
    auto v2 = val(x2);
    const int rows = params_->rows(W1);
    const int c1 = params_->cols(W1), c2 = params_->cols(W2);
    for (int i = 0; i < rows; ++i) {
      double acc = bv[i];
      const double* r1 = w1.data() + static_cast<std::size_t>(i) * c1;
      const double* r2 = w2.data() + static_cast<std::size_t>(i) * c2;
      for (int j = 0; j < c1; ++j) acc += r1[j] * v1[j];
      for (int j = 0; j < c2; ++j) acc += r2[j] * v2[j];
      out[i] = acc;
    }
    return id;
  }

  NodeId relu(NodeId x) {
    NodeId id = new_node(OpKind::Relu, len(x));
    nodes_[id].a = x;
    auto out = val(id);
    auto xv = val(x);
    for (int i = 0; i < len(x); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return id;
  }

  NodeId sigmoid(NodeId x) {
    NodeId id = new_node(OpKind::Sigmoid, len(x));
    nodes_[id].a = x;
    auto out = val(id);
    auto xv = val(x);
    for (int i = 0; i < len(x); ++i) out[i] = sigmoid_scalar(xv[i]);
    return id;
  }

  NodeId concat(NodeId a, NodeId b) {
    NodeId id = new_node(OpKind::Concat2, len(a) + len(b));
    nodes_[id].a = a;
    nodes_[id].b = b;
    auto out = val(id);
    auto av = val(a);
    auto bv = val(b);
    for (int i = 0; i < len(a); ++i) out[i] = av[i];
    for (int i = 0; i < len(b); ++i) out[len(a) + i] = bv[i];
    return id;
  }

  // y_k = parents[k][0]; every parent must be scalar.
  NodeId stack_scalars(std::span<const NodeId> parents) {
    NodeId id = new_node(OpKind::Stack, static_cast<int>(parents.size()));
    attach_kids(id, parents);
    auto out = val(id);
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (len(parents[k]) != 1) throw std::invalid_argument("stack_scalars: parent not scalar");
      out[k] = val(parents[k])[0];
    }
    return id;
  }

  NodeId mul_const(NodeId x, std::span<const double> c) {
    if (static_cast<int>(c.size()) != len(x))
      throw std::invalid_argument("mul_const: length mismatch");
    NodeId id = new_node(OpKind::MulConst, len(x));
    nodes_[id].a = x;
    attach_aux(id, c);
    auto out = val(id);
    auto xv = val(x);
    auto cv = aux(id);
    for (int i = 0; i < len(x); ++i) out[i] = xv[i] * cv[i];
    return id;
  }

  NodeId add_const(NodeId x, std::span<const double> c) {
    if (static_cast<int>(c.size()) != len(x))
      throw std::invalid_argument("add_const: length mismatch");
    NodeId id = new_node(OpKind::AddConst, len(x));
    nodes_[id].a = x;
    attach_aux(id, c);
    auto out = val(id);
    auto xv = val(x);
    auto cv = aux(id);
    for (int i = 0; i < len(x); ++i) out[i] = xv[i] + cv[i];
    return id;
  }

  // Scalar: sum_i weight[i] * (pred[i] - target[i])^2
  NodeId weighted_sse(NodeId pred, std::span<const double> target,
                      std::span<const double> weight) {
    if (target.size() != weight.size() || static_cast<int>(target.size()) != len(pred))
      throw std::invalid_argument("weighted_sse: length mismatch");
    NodeId id = new_node(OpKind::Wsse, 1);
    nodes_[id].a = pred;
    // aux holds target then weight
    std::vector<double> payload(target.begin(), target.end());
    payload.insert(payload.end(), weight.begin(), weight.end());
    attach_aux(id, payload);
    auto pv = val(pred);
    double acc = 0.0;
    for (int i = 0; i < len(pred); ++i) {
      const double d = pv[i] - target[i];
      acc += weight[i] * d * d;
    }
    val(id)[0] = acc;
    return id;
  }

  // Scalar binary cross-entropy of probability node p against label y.
  // p is clamped to [kProbEps, 1-kProbEps]; the gradient is zero in the
  // clamped region, consistent with the forward value.
  NodeId bce(NodeId p, double y) {
    if (len(p) != 1) throw std::invalid_argument("bce: probability node must be scalar");
    NodeId id = new_node(OpKind::Bce, 1);
    nodes_[id].a = p;
    nodes_[id].c = y;
    const double pc = clamp_prob(val(p)[0]);
    val(id)[0] = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    return id;
  }

  NodeId sum_scalars(std::span<const NodeId> parents) {
    NodeId id = new_node(OpKind::SumScalars, 1);
    attach_kids(id, parents);
    double acc = 0.0;
    for (NodeId k : parents) {
      if (len(k) != 1) throw std::invalid_argument("sum_scalars: parent not scalar");
      acc += val(k)[0];
    }
    val(id)[0] = acc;
    return id;
  }

  NodeId scale(NodeId x, double c) {
    NodeId id = new_node(OpKind::Scale, len(x));
    nodes_[id].a = x;
    nodes_[id].c = c;
    auto out = val(id);
    auto xv = val(x);
    for (int i = 0; i < len(x); ++i) out[i] = c * xv[i];
    return id;
  }

  int len(NodeId id) const { return nodes_[id].len; }

  std::span<const double> values(NodeId id) const {
    return {buf_.data() + nodes_[id].val, static_cast<std::size_t>(nodes_[id].len)};
  }

  double value(NodeId id) const {
    if (nodes_[id].len != 1) throw std::invalid_argument("value: node is not scalar");
    return buf_[nodes_[id].val];
  }

  // Accumulates d(loss)/d(theta) into the ParamStore gradients.
  void backward(NodeId loss) {
    if (backward_done_)
      throw std::logic_error("Tape::backward: tape replayed without reset");
    if (nodes_[loss].len != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar");
    backward_done_ = true;
    grad_.assign(buf_.size(), 0.0);
    grad_[nodes_[loss].val] = 1.0;
    for (int id = loss; id >= 0; --id) step_backward(id);
  }

  void reset() {
    nodes_.clear();
    buf_.clear();
    grad_.clear();
    aux_.clear();
    kids_.clear();
    backward_done_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }

  static constexpr double kProbEps = 1e-12;

 private:
  enum class OpKind : std::uint8_t {
    Const,
    Affine1,
    Affine2,
    Relu,
    Sigmoid,
    Concat2,
    Stack,
    MulConst,
    AddConst,
    Wsse,
    Bce,
    SumScalars,
    Scale,
  };

  struct Node {
    OpKind kind;
    int a = -1, b = -1;          // parent nodes
    ParamId p0 = -1, p1 = -1, p2 = -1;  // weight, weight, bias
    std::size_t val = 0;
    int len = 0;
    std::size_t aux_off = 0;
    int aux_len = 0;
    std::size_t kids_off = 0;
    int kids_len = 0;
    double c = 0.0;
  };

  static double clamp_prob(double p) {
    if (p < kProbEps) return kProbEps;
    if (p > 1.0 - kProbEps) return 1.0 - kProbEps;
    return p;
  }

  NodeId new_node(OpKind kind, int n) {
    if (backward_done_)
      throw std::logic_error("Tape: recording after backward without reset");
    Node nd;
    nd.kind = kind;
    nd.val = buf_.size();
    nd.len = n;
    buf_.resize(buf_.size() + n, 0.0);
    nodes_.push_back(nd);
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void attach_aux(NodeId id, std::span<const double> payload) {
    nodes_[id].aux_off = aux_.size();
    nodes_[id].aux_len = static_cast<int>(payload.size());
    aux_.insert(aux_.end(), payload.begin(), payload.end());
  }

  void attach_kids(NodeId id, std::span<const NodeId> parents) {
    nodes_[id].kids_off = kids_.size();
    nodes_[id].kids_len = static_cast<int>(parents.size());
    kids_.insert(kids_.end(), parents.begin(), parents.end());
  }

  std::span<double> val(NodeId id) {
    return {buf_.data() + nodes_[id].val, static_cast<std::size_t>(nodes_[id].len)};
  }
  std::span<double> grd(NodeId id) {
    return {grad_.data() + nodes_[id].val, static_cast<std::size_t>(nodes_[id].len)};
  }
  std::span<const double> aux(NodeId id) const {
    return {aux_.data() + nodes_[id].aux_off, static_cast<std::size_t>(nodes_[id].aux_len)};
  }

  void check_dims(ParamId W, ParamId b, NodeId x, const char* who) const {
    if (params_->cols(W) != nodes_[x].len || params_->rows(W) != static_cast<int>(params_->size(b)))
      throw std::invalid_argument(std::string(who) + ": dimension mismatch");
  }

  void step_backward(NodeId id) {
    const Node& nd = nodes_[id];
    auto gy = grd(id);
    switch (nd.kind) {
      case OpKind::Const:
        break;
      case OpKind::Affine1: {
        auto gx = grd(nd.a);
        auto xv = val(nd.a);
        auto wv = params_->value(nd.p0);
        auto gW = params_->grad(nd.p0);
        auto gb = params_->grad(nd.p2);
        const int rows = nd.len, cols = nodes_[nd.a].len;
        for (int i = 0; i < rows; ++i) {
          const double g = gy[i];
          if (g == 0.0) continue;
          gb[i] += g;
          const std::size_t off = static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) {
            gW[off + j] += g * xv[j];
            gx[j] += wv[off + j] * g;
          }
        }
        break;
      }
      case OpKind::Affine2: {
        auto g1 = grd(nd.a);
        auto g2 = grd(nd.b);
        auto v1 = val(nd.a);
        auto v2 = val(nd.b);
        auto w1 = params_->value(nd.p0);
        auto w2 = params_->value(nd.p1);
        auto gW1 = params_->grad(nd.p0);
        auto gW2 = params_->grad(nd.p1);
        auto gb = params_->grad(nd.p2);
        const int rows = nd.len;
        const int c1 = nodes_[nd.a].len, c2 = nodes_[nd.b].len;
        for (int i = 0; i < rows; ++i) {
          const double g = gy[i];
          if (g == 0.0) continue;
          gb[i] += g;
          const std::size_t o1 = static_cast<std::size_t>(i) * c1;
          const std::size_t o2 = static_cast<std::size_t>(i) * c2;
          for (int j = 0; j < c1; ++j) {
            gW1[o1 + j] += g * v1[j];
            g1[j] += w1[o1 + j] * g;
          }
          for (int j = 0; j < c2; ++j) {
            gW2[o2 + j] += g * v2[j];
            g2[j] += w2[o2 + j] * g;
          }
        }
        break;
      }
      case OpKind::Relu: {
        auto gx = grd(nd.a);
        auto xv = val(nd.a);
        for (int i = 0; i < nd.len; ++i)
          if (xv[i] > 0.0) gx[i] += gy[i];
        break;
      }
      case OpKind::Sigmoid: {
        auto gx = grd(nd.a);
        auto yv = val(id);
        for (int i = 0; i < nd.len; ++i) gx[i] += yv[i] * (1.0 - yv[i]) * gy[i];
        break;
      }
      case OpKind::Concat2: {
        auto ga = grd(nd.a);
        auto gb = grd(nd.b);
        const int la = nodes_[nd.a].len;
        for (int i = 0; i < la; ++i) ga[i] += gy[i];
        for (int i = 0; i < nodes_[nd.b].len; ++i) gb[i] += gy[la + i];
        break;
      }
      case OpKind::Stack: {
        for (int k = 0; k < nd.kids_len; ++k)
          grd(kids_[nd.kids_off + k])[0] += gy[k];
        break;
      }
      case OpKind::MulConst: {
        auto gx = grd(nd.a);
        auto cv = aux(id);
        for (int i = 0; i < nd.len; ++i) gx[i] += cv[i] * gy[i];
        break;
      }
      case OpKind::AddConst: {
        auto gx = grd(nd.a);
        for (int i = 0; i < nd.len; ++i) gx[i] += gy[i];
        break;
      }
      case OpKind::Wsse: {
        auto gx = grd(nd.a);
        auto pv = val(nd.a);
        auto payload = aux(id);
        const int n = nodes_[nd.a].len;
        const double g = gy[0];
        for (int i = 0; i < n; ++i)
          gx[i] += g * 2.0 * payload[n + i] * (pv[i] - payload[i]);
        break;
      }
      case OpKind::Bce: {
        const double p = val(nd.a)[0];
        if (p > kProbEps && p < 1.0 - kProbEps) {
          const double y = nd.c;
          grd(nd.a)[0] += gy[0] * (-(y / p) + (1.0 - y) / (1.0 - p));
        }
        break;
      }
      case OpKind::SumScalars: {
        for (int k = 0; k < nd.kids_len; ++k)
          grd(kids_[nd.kids_off + k])[0] += gy[0];
        break;
      }
      case OpKind::Scale: {
        auto gx = grd(nd.a);
        for (int i = 0; i < nd.len; ++i) gx[i] += nd.c * gy[i];
        break;
      }
    }
  }

  ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<double> buf_;
  std::vector<double> grad_;
  std::vector<double> aux_;
  std::vector<NodeId> kids_;
  bool backward_done_ = false;
};

}  // namespace mrnn
