#pragma once

// Define-by-run reverse-mode differentiation over dense Tensors.
//
// A Tape records every operation as it is evaluated. backward() walks the
// tape in reverse creation order, so node ids double as a topological order.
// Gradients are produced for every leaf created with requires_grad and for
// every intermediate node passed to watch(); the latter is how gradients with
// respect to activations (e.g. gathered embeddings) are read out.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradlens/error.hpp"
#include "gradlens/tensor.hpp"

namespace gradlens::autodiff {

enum class OpKind {
  kLeaf,
  kDense,
  kRelu,
  kSigmoid,
  kTanh,
  kGather,
  kConv1d,
  kMaxPoolTime,
  kBinaryCrossEntropy,
  kSum,
  kConcat,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kDense: return "dense";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGather: return "gather";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kMaxPoolTime: return "max_pool_time";
    case OpKind::kBinaryCrossEntropy: return "binary_cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kConcat: return "concat";
  }
  return "unknown";
}

// Handle to a node on a Tape. Default-constructed handles refer to nothing.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;

  bool valid() const { return id != kNone; }
  friend bool operator==(Var, Var) = default;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class GradientMap {
 public:
  bool contains(Var v) const { return grads_.count(v.id) != 0; }

  const Tensor& at(Var v) const {
    auto it = grads_.find(v.id);
    if (it == grads_.end()) {
      throw BackwardError("no gradient recorded for node " +
                          std::to_string(v.id));
    }
    return it->second;
  }

  std::size_t size() const { return grads_.size(); }

  friend bool operator==(const GradientMap&, const GradientMap&) = default;

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  // Leaf owning its value.
  Var input(Tensor value, bool requires_grad = true) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.owned = std::move(value);
    n.is_leaf = true;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return input(std::move(value), false); }

  // Leaf borrowing an externally owned tensor; it must outlive the tape.
  Var parameter(const Tensor& value, bool requires_grad = true) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.borrowed = &value;
    n.is_leaf = true;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Var parameter(Tensor&&, bool = true) = delete;  // would dangle

  // Report d(output)/d(v) in the GradientMap even though v is not a leaf.
  void watch(Var v) { node(v).watched = true; }

  const Tensor& value(Var v) const { return node(v).value(); }
  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const { return nodes_.size(); }

  // x: [n] or [batch, n]; weight: [n, m]; bias: [m].
  Var dense(Var x, Var weight, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(weight);
    const Tensor& bv = value(bias);
    if (wv.rank() != 2 || (xv.rank() != 1 && xv.rank() != 2) ||
        xv.shape().back() != wv.extent(0)) {
      throw ShapeError("dense: input " + shape_string(xv.shape()) +
                       " incompatible with weight " + shape_string(wv.shape()));
    }
    if (bv.rank() != 1 || bv.extent(0) != wv.extent(1)) {
      throw ShapeError("dense: bias " + shape_string(bv.shape()) +
                       " incompatible with weight " + shape_string(wv.shape()));
    }
    const std::size_t n = wv.extent(0);
    const std::size_t m = wv.extent(1);
    const std::size_t batch = xv.rank() == 2 ? xv.extent(0) : 1;
    Shape out_shape = xv.rank() == 2 ? Shape{batch, m} : Shape{m};
    Tensor out(out_shape);
    const double* w = wv.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
      double* o = out.data().data() + b * m;
      std::copy(bv.data().begin(), bv.data().end(), o);
      const double* xr = xv.data().data() + b * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = xr[i];
        if (xi == 0.0) continue;
        const double* wr = w + i * m;
        for (std::size_t j = 0; j < m; ++j) o[j] += xi * wr[j];
      }
    }
    return push_op(OpKind::kDense, {x, weight, bias}, std::move(out));
  }

  Var relu(Var x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push_op(OpKind::kRelu, {x}, std::move(out));
  }

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = autodiff::sigmoid(v);
    return push_op(OpKind::kSigmoid, {x}, std::move(out));
  }

  Var tanh(Var x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = std::tanh(v);
    return push_op(OpKind::kTanh, {x}, std::move(out));
  }

  // table: [vocab, dim] -> [indices.size(), dim].
  Var gather(Var table, std::span<const std::size_t> indices) {
    const Tensor& tv = value(table);
    if (tv.rank() != 2) {
      throw ShapeError("gather: table must be rank 2, got " +
                       shape_string(tv.shape()));
    }
    if (indices.empty()) throw ShapeError("gather: empty index sequence");
    const std::size_t rows = tv.extent(0);
    const std::size_t dim = tv.extent(1);
    Tensor out({indices.size(), dim});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] >= rows) {
        throw IndexError("gather: index " + std::to_string(indices[k]) +
                         " out of range for table with " +
                         std::to_string(rows) + " rows");
      }
      auto src = tv.row(indices[k]);
      std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    Var v = push_op(OpKind::kGather, {table}, std::move(out));
    nodes_[v.id].aux_index.assign(indices.begin(), indices.end());
    return v;
  }

  // Valid (unpadded) stride-1 convolution along time.
  // input: [time, dim]; kernel: [width, dim, channels]; bias: [channels]
  // -> [time - width + 1, channels].
  Var conv1d(Var input, Var kernel, Var bias) {
    const Tensor& iv = value(input);
    const Tensor& kv = value(kernel);
    const Tensor& bv = value(bias);
    if (iv.rank() != 2 || kv.rank() != 3 || kv.extent(1) != iv.extent(1)) {
      throw ShapeError("conv1d: input " + shape_string(iv.shape()) +
                       " incompatible with kernel " + shape_string(kv.shape()));
    }
    if (kv.extent(0) > iv.extent(0)) {
      throw ShapeError("conv1d: kernel " + shape_string(kv.shape()) +
                       " wider than input " + shape_string(iv.shape()));
    }
    if (bv.rank() != 1 || bv.extent(0) != kv.extent(2)) {
      throw ShapeError("conv1d: bias " + shape_string(bv.shape()) +
                       " incompatible with kernel " + shape_string(kv.shape()));
    }
    const std::size_t dim = iv.extent(1);
    const std::size_t window = kv.extent(0) * dim;
    const std::size_t channels = kv.extent(2);
    const std::size_t steps = iv.extent(0) - kv.extent(0) + 1;
    Tensor out({steps, channels});
    const double* in = iv.data().data();
    const double* k = kv.data().data();
    for (std::size_t t = 0; t < steps; ++t) {
      double* o = out.data().data() + t * channels;
      std::copy(bv.data().begin(), bv.data().end(), o);
      // Rows are contiguous, so the window starting at t is a flat slice.
      const double* win = in + t * dim;
      for (std::size_t q = 0; q < window; ++q) {
        const double a = win[q];
        const double* kr = k + q * channels;
        for (std::size_t c = 0; c < channels; ++c) o[c] += a * kr[c];
      }
    }
    return push_op(OpKind::kConv1d, {input, kernel, bias}, std::move(out));
  }

  // [time, channels] -> [channels]; ties resolve to the earliest time step.
  Var max_pool_time(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2 || xv.size() == 0) {
      throw ShapeError("max_pool_time: empty time axis for input " +
                       shape_string(xv.shape()));
    }
    const std::size_t steps = xv.extent(0);
    const std::size_t channels = xv.extent(1);
    Tensor out({channels});
    std::vector<std::size_t> argmax(channels, 0);
    for (std::size_t c = 0; c < channels; ++c) out[c] = xv.at(0, c);
    for (std::size_t t = 1; t < steps; ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        if (xv.at(t, c) > out[c]) {
          out[c] = xv.at(t, c);
          argmax[c] = t;
        }
      }
    }
    Var v = push_op(OpKind::kMaxPoolTime, {x}, std::move(out));
    nodes_[v.id].aux_index = std::move(argmax);
    return v;
  }

  // Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
  Var binary_cross_entropy(Var logits, std::span<const double> targets) {
    const Tensor& lv = value(logits);
    if (lv.size() != targets.size()) {
      throw ShapeError("binary_cross_entropy: logits " +
                       shape_string(lv.shape()) + " vs " +
                       std::to_string(targets.size()) + " targets");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double z = lv[i];
      const double y = targets[i];
      if (!(y >= 0.0 && y <= 1.0)) {
        throw ShapeError("binary_cross_entropy: target outside [0, 1]");
      }
      total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor out({1}, total / static_cast<double>(targets.size()));
    Var v = push_op(OpKind::kBinaryCrossEntropy, {logits}, std::move(out));
    nodes_[v.id].aux_value.assign(targets.begin(), targets.end());
    return v;
  }

  Var sum(Var x) {
    double total = 0.0;
    for (double v : value(x).data()) total += v;
    return push_op(OpKind::kSum, {x}, Tensor({1}, total));
  }

  // Flattens and joins inputs into one rank-1 tensor.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<double> joined;
    std::vector<Var> inputs(parts.begin(), parts.end());
    for (Var p : parts) {
      auto d = value(p).data();
      joined.insert(joined.end(), d.begin(), d.end());
    }
    return push_op(OpKind::kConcat, std::move(inputs),
                   Tensor::vector(std::move(joined)));
  }

  // Name-based dispatch for operators that need no side data.
  Var apply(std::string_view op, std::span<const Var> in) {
    auto need = [&](std::size_t n) {
      if (in.size() != n) {
        throw ShapeError(std::string(op) + ": expected " + std::to_string(n) +
                         " inputs, got " + std::to_string(in.size()));
      }
    };
    if (op == "dense") { need(3); return dense(in[0], in[1], in[2]); }
    if (op == "conv1d") { need(3); return conv1d(in[0], in[1], in[2]); }
    if (op == "relu") { need(1); return relu(in[0]); }
    if (op == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (op == "tanh") { need(1); return tanh(in[0]); }
    if (op == "max_pool_time") { need(1); return max_pool_time(in[0]); }
    if (op == "sum") { need(1); return sum(in[0]); }
    if (op == "concat") return concat(in);
    throw UnsupportedOperatorError("unsupported operator '" + std::string(op) +
                                   "'");
  }

  GradientMap backward(Var output) const {
    if (!output.valid() || output.id >= nodes_.size()) {
      throw BackwardError("backward called before forward: output node " +
                          (output.valid() ? std::to_string(output.id)
                                          : std::string("<none>")) +
                          " is not on this tape");
    }
    if (value(output).size() != 1) {
      throw BackwardError("backward requires a scalar output, got shape " +
                          shape_string(value(output).shape()));
    }

    const std::size_t count = output.id + 1;
    std::vector<bool> needs(count, false);
    for (std::size_t i = 0; i < count; ++i) {
      const Node& n = nodes_[i];
      bool need = n.watched || (n.is_leaf && n.requires_grad);
      for (std::size_t in : n.inputs) need = need || needs[in];
      needs[i] = need;
    }

    std::vector<Tensor> grads(count);
    std::vector<bool> has(count, false);
    auto grad_of = [&](std::size_t id) -> Tensor& {
      if (!has[id]) {
        grads[id] = Tensor(nodes_[id].value().shape(), 0.0);
        has[id] = true;
      }
      return grads[id];
    };
    if (needs[output.id]) {
      grad_of(output.id)[0] = 1.0;
    }

    for (std::size_t id = count; id-- > 0;) {
      if (!has[id] || nodes_[id].is_leaf) continue;
      propagate(id, grads[id], needs, grad_of);
    }

    GradientMap result;
    for (std::size_t i = 0; i < count; ++i) {
      const Node& n = nodes_[i];
      if (n.watched || (n.is_leaf && n.requires_grad)) {
        result.grads_.emplace(i, has[i] ? std::move(grads[i])
                                        : Tensor(n.value().shape(), 0.0));
      }
    }
    // Leaves created after the output cannot influence it.
    for (std::size_t i = count; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.is_leaf && n.requires_grad) {
        result.grads_.emplace(i, Tensor(n.value().shape(), 0.0));
      }
    }
    return result;
  }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool is_leaf = false;
    bool requires_grad = false;
    bool watched = false;
    std::vector<std::size_t> aux_index;
    std::vector<double> aux_value;

    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) {
      throw BackwardError("invalid node reference");
    }
    return nodes_[v.id];
  }
  Node& node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) {
      throw BackwardError("invalid node reference");
    }
    return nodes_[v.id];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(OpKind kind, std::vector<Var> inputs, Tensor out) {
    Node n;
    n.kind = kind;
    for (Var v : inputs) n.inputs.push_back(v.id);
    n.owned = std::move(out);
    return push(std::move(n));
  }

  template <typename GradOf>
  void propagate(std::size_t id, const Tensor& g, const std::vector<bool>& needs,
                 GradOf& grad_of) const {
    const Node& n = nodes_[id];
    const auto& in = n.inputs;
    switch (n.kind) {
      case OpKind::kLeaf:
        return;

      case OpKind::kDense: {
        const Tensor& xv = nodes_[in[0]].value();
        const Tensor& wv = nodes_[in[1]].value();
        const std::size_t n_in = wv.extent(0);
        const std::size_t m = wv.extent(1);
        const std::size_t batch = xv.rank() == 2 ? xv.extent(0) : 1;
        const double* w = wv.data().data();
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gy = g.data().data() + b * m;
          const double* xr = xv.data().data() + b * n_in;
          if (needs[in[1]]) {
            double* gw = grad_of(in[1]).data().data();
            for (std::size_t i = 0; i < n_in; ++i) {
              const double xi = xr[i];
              if (xi == 0.0) continue;
              double* gr = gw + i * m;
              for (std::size_t j = 0; j < m; ++j) gr[j] += xi * gy[j];
            }
          }
          if (needs[in[2]]) {
            double* gb = grad_of(in[2]).data().data();
            for (std::size_t j = 0; j < m; ++j) gb[j] += gy[j];
          }
          if (needs[in[0]]) {
            double* gx = grad_of(in[0]).data().data() + b * n_in;
            for (std::size_t i = 0; i < n_in; ++i) {
              const double* wr = w + i * m;
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += wr[j] * gy[j];
              gx[i] += acc;
            }
          }
        }
        return;
      }

      case OpKind::kRelu: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        const Tensor& y = n.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (y[i] > 0.0) gx[i] += g[i];
        }
        return;
      }

      case OpKind::kSigmoid: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        const Tensor& y = n.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        return;
      }

      case OpKind::kTanh: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        const Tensor& y = n.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += g[i] * (1.0 - y[i] * y[i]);
        }
        return;
      }

      case OpKind::kGather: {
        if (!needs[in[0]]) return;
        Tensor& gt = grad_of(in[0]);
        for (std::size_t k = 0; k < n.aux_index.size(); ++k) {
          auto src = g.row(k);
          auto dst = gt.row(n.aux_index[k]);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        return;
      }

      case OpKind::kConv1d: {
        const Tensor& iv = nodes_[in[0]].value();
        const Tensor& kv = nodes_[in[1]].value();
        const std::size_t dim = iv.extent(1);
        const std::size_t window = kv.extent(0) * dim;
        const std::size_t channels = kv.extent(2);
        const std::size_t steps = g.extent(0);
        const double* x = iv.data().data();
        const double* k = kv.data().data();
        double* gk = needs[in[1]] ? grad_of(in[1]).data().data() : nullptr;
        double* gb = needs[in[2]] ? grad_of(in[2]).data().data() : nullptr;
        double* gx = needs[in[0]] ? grad_of(in[0]).data().data() : nullptr;
        for (std::size_t t = 0; t < steps; ++t) {
          const double* gy = g.data().data() + t * channels;
          if (std::all_of(gy, gy + channels, [](double v) { return v == 0.0; })) {
            continue;
          }
          if (gb) {
            for (std::size_t c = 0; c < channels; ++c) gb[c] += gy[c];
          }
          const double* win = x + t * dim;
          for (std::size_t q = 0; q < window; ++q) {
            if (gk) {
              const double a = win[q];
              double* gkr = gk + q * channels;
              for (std::size_t c = 0; c < channels; ++c) gkr[c] += a * gy[c];
            }
            if (gx) {
              const double* kr = k + q * channels;
              double acc = 0.0;
              for (std::size_t c = 0; c < channels; ++c) acc += kr[c] * gy[c];
              gx[t * dim + q] += acc;
            }
          }
        }
        return;
      }

      case OpKind::kMaxPoolTime: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        const std::size_t channels = g.size();
        for (std::size_t c = 0; c < channels; ++c) {
          gx.at(n.aux_index[c], c) += g[c];
        }
        return;
      }

      case OpKind::kBinaryCrossEntropy: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        const Tensor& z = nodes_[in[0]].value();
        const double scale = g[0] / static_cast<double>(n.aux_value.size());
        for (std::size_t i = 0; i < n.aux_value.size(); ++i) {
          gx[i] += scale * (autodiff::sigmoid(z[i]) - n.aux_value[i]);
        }
        return;
      }

      case OpKind::kSum: {
        if (!needs[in[0]]) return;
        Tensor& gx = grad_of(in[0]);
        for (double& v : gx.data()) v += g[0];
        return;
      }

      case OpKind::kConcat: {
        std::size_t offset = 0;
        for (std::size_t src : in) {
          const std::size_t len = nodes_[src].value().size();
          if (needs[src]) {
            Tensor& gx = grad_of(src);
            for (std::size_t i = 0; i < len; ++i) gx[i] += g[offset + i];
          }
          offset += len;
        }
        return;
      }
    }
    throw UnsupportedOperatorError("backward: unsupported operator '" +
                                   std::string(op_name(n.kind)) + "'");
  }

  std::vector<Node> nodes_;
};

}  // namespace gradlens::autodiff
