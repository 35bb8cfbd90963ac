#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hgfnet/error.hpp"
#include "hgfnet/tensor.hpp"

namespace hgf {

// A trainable tensor that outlives any single tape. Tapes read `value`
// directly and add into `grad` during backward.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), requires_grad(trainable) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  bool attached() const noexcept { return tape != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const;
};

template <typename T>
struct CVar {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const ComplexTensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  bool needs_grad() const;
};

// Records operations in creation order; backward walks them in exact reverse.
// Each node keeps its forward value so backward rules can read inputs and
// outputs without capturing copies.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    ComplexTensor<T> cvalue;
    bool is_complex = false;
    const Tensor<T>* external = nullptr;  // parameter leaves
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    Tensor<T> grad;
    ComplexTensor<T> cgrad;
    bool has_grad = false;
    Backward backward;
  };

  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push_real(std::move(n));
  }

  // A leaf whose gradient is kept on the tape (not pushed anywhere); used by
  // tests that differentiate with respect to plain inputs.
  Var<T> variable(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    return push_real(std::move(n));
  }

  Var<T> parameter(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    const bool track = p.requires_grad && grad_enabled_;
    n.param = track ? &p : nullptr;
    n.needs_grad = track;
    return push_real(std::move(n));
  }

  CVar<T> complex_constant(ComplexTensor<T> value) {
    Node n;
    n.cvalue = std::move(value);
    n.is_complex = true;
    nodes_.push_back(std::move(n));
    return CVar<T>{this, nodes_.size() - 1};
  }

  // Pushes an op result. `backward` is dropped when no input needs a grad.
  Var<T> record(Tensor<T> value, bool needs_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    return push_real(std::move(n));
  }

  CVar<T> record_complex(ComplexTensor<T> value, bool needs_grad, Backward backward) {
    Node n;
    n.cvalue = std::move(value);
    n.is_complex = true;
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return CVar<T>{this, nodes_.size() - 1};
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const ComplexTensor<T>& cvalue(std::size_t id) const { return nodes_[id].cvalue; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Output cotangent of a node (valid inside its backward rule).
  const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const ComplexTensor<T>& cgrad_of(std::size_t id) const { return nodes_[id].cgrad; }

  // Zero-initialized accumulator for an input node's cotangent.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }
  ComplexTensor<T>& cgrad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.cgrad = ComplexTensor<T>(n.cvalue.shape);
      n.has_grad = true;
    }
    return n.cgrad;
  }

  // Gradient accumulated on a tape-local leaf (see `variable`).
  Tensor<T> gradient(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor<T>(value(v.id).shape());
  }

  void backward(Var<T> loss) {
    if (!loss.attached()) throw TapeError("loss is not attached to a tape");
    if (loss.tape != this) throw TapeError("loss belongs to a different tape");
    const Tensor<T>& lv = value(loss.id);
    if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(lv.shape()));
    if (!std::isfinite(lv[0])) throw DomainError("loss is not finite");

    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
      n.cgrad = ComplexTensor<T>();
    }
    if (!nodes_[loss.id].needs_grad) return;
    grad_buffer(loss.id).fill(T(1));

    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        Parameter<T>& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
        auto dst = p.grad.data();
        auto src = n.grad.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      // Interior cotangents are no longer needed once propagated.
      if (n.backward) {
        n.grad = Tensor<T>();
        n.cgrad = ComplexTensor<T>();
      }
    }
  }

 private:
  Var<T> push_real(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!tape) throw TapeError("detached variable");
  return tape->value(id);
}

template <typename T>
bool Var<T>::needs_grad() const {
  return tape && tape->needs_grad(id);
}

template <typename T>
const ComplexTensor<T>& CVar<T>::value() const {
  if (!tape) throw TapeError("detached variable");
  return tape->cvalue(id);
}

template <typename T>
bool CVar<T>::needs_grad() const {
  return tape && tape->needs_grad(id);
}

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (!a.tape || a.tape != b.tape) throw TapeError("operands live on different tapes");
  return *a.tape;
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.tape) throw TapeError("detached variable");
  return *a.tape;
}

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * std::erfc(-x * T(0.5 * std::numbers::sqrt2));
}

template <typename T>
T normal_pdf(T x) {
  return T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2) * std::exp(T(-0.5) * x * x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

enum class BinaryOp { add, sub, mul };
enum class UnaryOp { neg, exp, log, gelu, relu };

template <typename T>
Var<T> binary(BinaryOp op, Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(out_shape);
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  switch (op) {
    case BinaryOp::add:
      for_each_broadcast(av.shape(), bv.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] + y[ib]; });
      break;
    case BinaryOp::sub:
      for_each_broadcast(av.shape(), bv.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] - y[ib]; });
      break;
    case BinaryOp::mul:
      for_each_broadcast(av.shape(), bv.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] * y[ib]; });
      break;
  }
  const std::size_t ia_id = a.id, ib_id = b.id;
  return tape.record(std::move(out), a.needs_grad() || b.needs_grad(),
                     [op, ia_id, ib_id](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_of(self);
    const Shape& gs = g.shape();
    const Shape as = t.value(ia_id).shape();
    const Shape bs = t.value(ib_id).shape();
    if (t.needs_grad(ia_id)) {
      Tensor<T>& ga = t.grad_buffer(ia_id);
      if (op == BinaryOp::mul) {
        auto yv = t.value(ib_id).data();
        auto gd = g.data();
        auto dst = ga.data();
        for_each_broadcast(as, bs, gs, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          dst[ia] += gd[i] * yv[ib];
        });
      } else {
        accumulate_reduced<T>(g.data(), gs, ga.data(), as);
      }
    }
    if (t.needs_grad(ib_id)) {
      Tensor<T>& gb = t.grad_buffer(ib_id);
      if (op == BinaryOp::mul) {
        auto xv = t.value(ia_id).data();
        auto gd = g.data();
        auto dst = gb.data();
        for_each_broadcast(as, bs, gs, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          dst[ib] += gd[i] * xv[ia];
        });
      } else if (op == BinaryOp::sub) {
        Tensor<T> neg(gs);
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g[i];
        accumulate_reduced<T>(neg.data(), gs, gb.data(), bs);
      } else {
        accumulate_reduced<T>(g.data(), gs, gb.data(), bs);
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) { return binary(BinaryOp::add, a, b); }
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) { return binary(BinaryOp::sub, a, b); }
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) { return binary(BinaryOp::mul, a, b); }

// Exact GELU, x * Phi(x).
template <typename T>
T gelu_value(T x) {
  return x * detail::normal_cdf(x);
}

template <typename T>
T gelu_derivative(T x) {
  return detail::normal_cdf(x) + x * detail::normal_pdf(x);
}

template <typename T>
Var<T> unary(UnaryOp op, Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  auto x = av.data();
  auto o = out.data();
  switch (op) {
    case UnaryOp::neg:
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = -x[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = std::exp(x[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > T(0))) throw DomainError("log of non-positive value");
        o[i] = std::log(x[i]);
      }
      break;
    case UnaryOp::gelu:
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = gelu_value(x[i]);
      break;
    case UnaryOp::relu:
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
      break;
  }
  const std::size_t in = a.id;
  return tape.record(std::move(out), a.needs_grad(), [op, in](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto x = t.value(in).data();
    auto y = t.value(self).data();
    auto dst = t.grad_buffer(in).data();
    switch (op) {
      case UnaryOp::neg:
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
        break;
      case UnaryOp::exp:
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
        break;
      case UnaryOp::log:
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] / x[i];
        break;
      case UnaryOp::gelu:
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * gelu_derivative(x[i]);
        break;
      case UnaryOp::relu:
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > T(0) ? g[i] : T(0);
        break;
    }
  });
}

template <typename T>
Var<T> neg(Var<T> a) { return unary(UnaryOp::neg, a); }
template <typename T>
Var<T> exp(Var<T> a) { return unary(UnaryOp::exp, a); }
template <typename T>
Var<T> log(Var<T> a) { return unary(UnaryOp::log, a); }
template <typename T>
Var<T> gelu(Var<T> a) { return unary(UnaryOp::gelu, a); }
template <typename T>
Var<T> relu(Var<T> a) { return unary(UnaryOp::relu, a); }

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out(a.shape());
  auto x = a.value().data();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  const std::size_t in = a.id;
  return tape.record(std::move(out), a.needs_grad(), [in, factor](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto dst = t.grad_buffer(in).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t in = a.id;
  return tape.record(std::move(out), a.needs_grad(), [in](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto dst = t.grad_buffer(in).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

}  // namespace hgf
