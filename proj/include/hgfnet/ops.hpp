#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/gemm.hpp"

namespace hgf {

// Dense matrix product of two rank-2 operands.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor<T> out(Shape{m, n});
  gemm::multiply(av.data().data(), false, bv.data().data(), false, out.data().data(), m, n, k, false);
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), a.needs_grad() || b.needs_grad(),
                     [ia, ib, m, n, k](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_of(self).data().data();
    if (t.needs_grad(ia)) {
      // dA = dC * B^T
      gemm::multiply(g, false, t.value(ib).data().data(), true,
                     t.grad_buffer(ia).data().data(), m, k, n, true);
    }
    if (t.needs_grad(ib)) {
      // dB = A^T * dC
      gemm::multiply(t.value(ia).data().data(), true, g, false,
                     t.grad_buffer(ib).data().data(), k, n, m, true);
    }
  });
}

enum class ReduceOp { sum, mean, std };

namespace detail {

// Maps each input element to its slot in the axis-dropped output.
struct ReductionMap {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // per input element
  std::size_t group = 1;               // elements folded into each output
};

inline ReductionMap reduction_map(const Shape& in, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size()) throw ShapeError("reduction axis out of range");
    reduced[ax] = true;
  }
  ReductionMap map;
  std::vector<std::size_t> out_stride_for_axis(in.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) {
      map.group *= in[i];
    } else {
      map.out_shape.push_back(in[i]);
    }
  }
  const auto out_strides = strides_of(map.out_shape);
  for (std::size_t i = 0, o = 0; i < in.size(); ++i) {
    if (!reduced[i]) out_stride_for_axis[i] = out_strides[o++];
  }
  const std::size_t n = numel(in);
  map.out_index.resize(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map.out_index[i] = pos;
    for (std::size_t ax = in.size(); ax-- > 0;) {
      ++idx[ax];
      pos += out_stride_for_axis[ax];
      if (idx[ax] < in[ax]) break;
      pos -= out_stride_for_axis[ax] * in[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

inline std::vector<std::size_t> all_axes(std::size_t rank) {
  std::vector<std::size_t> axes(rank);
  for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  return axes;
}

}  // namespace detail

// Reduces over `axes`, dropping them from the result. `std` is the
// population deviation (divide by n).
template <typename T>
Var<T> reduce(ReduceOp op, Var<T> a, const std::vector<std::size_t>& axes) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& av = a.value();
  auto map = detail::reduction_map(av.shape(), axes);
  if (map.group == 0) throw DomainError("empty reduction extent");
  const std::size_t n_out = numel(map.out_shape);
  std::vector<T> sum(n_out, T(0));
  auto x = av.data();
  for (std::size_t i = 0; i < x.size(); ++i) sum[map.out_index[i]] += x[i];
  const T count = static_cast<T>(map.group);
  Tensor<T> out(map.out_shape);
  std::vector<T> mean(n_out);
  for (std::size_t o = 0; o < n_out; ++o) mean[o] = sum[o] / count;
  if (op == ReduceOp::sum) {
    for (std::size_t o = 0; o < n_out; ++o) out[o] = sum[o];
  } else if (op == ReduceOp::mean) {
    for (std::size_t o = 0; o < n_out; ++o) out[o] = mean[o];
  } else {
    std::vector<T> sq(n_out, T(0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T d = x[i] - mean[map.out_index[i]];
      sq[map.out_index[i]] += d * d;
    }
    for (std::size_t o = 0; o < n_out; ++o) out[o] = std::sqrt(sq[o] / count);
  }
  const std::size_t in = a.id;
  return tape.record(std::move(out), a.needs_grad(),
                     [op, in, map = std::move(map), mean = std::move(mean), count](Tape<T>& t,
                                                                                 std::size_t self) {
    auto g = t.grad_of(self).data();
    auto y = t.value(self).data();
    auto x = t.value(in).data();
    auto dst = t.grad_buffer(in).data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::size_t o = map.out_index[i];
      switch (op) {
        case ReduceOp::sum: dst[i] += g[o]; break;
        case ReduceOp::mean: dst[i] += g[o] / count; break;
        case ReduceOp::std:
          if (y[o] > T(0)) dst[i] += g[o] * (x[i] - mean[o]) / (count * y[o]);
          break;
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) { return reduce(ReduceOp::sum, a, detail::all_axes(a.value().rank())); }
template <typename T>
Var<T> mean(Var<T> a) { return reduce(ReduceOp::mean, a, detail::all_axes(a.value().rank())); }
template <typename T>
Var<T> stddev(Var<T> a) { return reduce(ReduceOp::std, a, detail::all_axes(a.value().rank())); }

}  // namespace hgf
