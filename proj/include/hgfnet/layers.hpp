#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/gemm.hpp"
#include "hgfnet/ops.hpp"
#include "hgfnet/parallel.hpp"
#include "hgfnet/random.hpp"

namespace hgf {

enum class Mode { train, eval };

// Per-call state the forward pass threads through stochastic layers. The
// dropout mask of a call depends only on (seed, step, stream), so results do
// not depend on how many layers ran before it.
struct ForwardContext {
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

template <typename T>
struct Conv3dLayer {
  Parameter<T> weight;  // [F, C_in, Dk, Hk, Wk]
  Parameter<T> bias;    // [F]

  std::size_t filters() const { return weight.value.dim(0); }
  std::size_t in_channels() const { return weight.value.dim(1); }
};

template <typename T>
struct LinearLayer {
  Parameter<T> weight;  // [out, in]
  Parameter<T> bias;    // [out]

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }
};

struct DropoutState {
  double rate = 0.0;
  std::uint64_t stream = 0;
};

namespace detail {

struct ConvGeometry {
  std::size_t batch, cin, depth, height, width;
  std::size_t filters, kd, kh, kw;
  std::size_t spatial() const { return depth * height * width; }
  std::size_t patch() const { return cin * kd * kh * kw; }
};

// Output positions w whose source w + e - pad lies inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t extent, std::size_t e, std::size_t pad) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const auto shift = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, n);
  const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(n - shift, lo, n);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix [C*Kd*Kh*Kw, D*H*W] of one sample under zero same-padding.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t pd = g.kd / 2, ph = g.kh / 2, pw = g.kw / 2;
  const std::size_t S = g.spatial();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * S;
    for (std::size_t a = 0; a < g.kd; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          T* out = col + row * S;
          const auto [w_lo, w_hi] = valid_range(g.width, e, pw);
          for (std::size_t d = 0; d < g.depth; ++d) {
            const std::ptrdiff_t sd = static_cast<std::ptrdiff_t>(d + a) - static_cast<std::ptrdiff_t>(pd);
            for (std::size_t h = 0; h < g.height; ++h) {
              T* o = out + (d * g.height + h) * g.width;
              const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + b) - static_cast<std::ptrdiff_t>(ph);
              if (sd < 0 || sd >= static_cast<std::ptrdiff_t>(g.depth) || sh < 0 ||
                  sh >= static_cast<std::ptrdiff_t>(g.height)) {
                std::fill(o, o + g.width, T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(sd) * g.height + static_cast<std::size_t>(sh)) * g.width;
              std::fill(o, o + w_lo, T(0));
              for (std::size_t w = w_lo; w < w_hi; ++w) o[w] = src[w + e - pw];
              std::fill(o + w_hi, o + g.width, T(0));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t pd = g.kd / 2, ph = g.kh / 2, pw = g.kw / 2;
  const std::size_t S = g.spatial();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * S;
    for (std::size_t a = 0; a < g.kd; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          const T* in = col + row * S;
          const auto [w_lo, w_hi] = valid_range(g.width, e, pw);
          for (std::size_t d = 0; d < g.depth; ++d) {
            const std::ptrdiff_t sd = static_cast<std::ptrdiff_t>(d + a) - static_cast<std::ptrdiff_t>(pd);
            if (sd < 0 || sd >= static_cast<std::ptrdiff_t>(g.depth)) continue;
            for (std::size_t h = 0; h < g.height; ++h) {
              const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + b) - static_cast<std::ptrdiff_t>(ph);
              if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(g.height)) continue;
              const T* i = in + (d * g.height + h) * g.width;
              T* dst = xc + (static_cast<std::size_t>(sd) * g.height + static_cast<std::size_t>(sh)) * g.width;
              for (std::size_t w = w_lo; w < w_hi; ++w) dst[w + e - pw] += i[w];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Same-padded, stride-1 3D cross-correlation: x [B,C,D,H,W], w [F,C,kd,kh,kw],
// b [F] -> [B,F,D,H,W].
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (xv.rank() != 5) throw ShapeError("conv3d input must be [B,C,D,H,W], got " + shape_str(xv.shape()));
  if (wv.rank() != 5) throw ShapeError("conv3d weight must be rank 5");
  if (wv.dim(1) != xv.dim(1)) {
    throw ShapeError("conv3d channel mismatch: input has " + std::to_string(xv.dim(1)) +
                     ", kernel expects " + std::to_string(wv.dim(1)));
  }
  if (wv.dim(0) == 0) throw ConfigError("conv3d needs at least one filter");
  for (std::size_t ax = 2; ax < 5; ++ax) {
    if (wv.dim(ax) % 2 == 0) throw ConfigError("conv3d kernel extents must be odd");
  }
  if (b.value().shape() != Shape{wv.dim(0)}) throw ShapeError("conv3d bias must be [F]");

  const detail::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), xv.dim(4),
                               wv.dim(0), wv.dim(2), wv.dim(3), wv.dim(4)};
  const std::size_t S = g.spatial(), P = g.patch();
  Tensor<T> out(Shape{g.batch, g.filters, g.depth, g.height, g.width});
  {
    const T* xp = xv.data().data();
    const T* wp = wv.data().data();
    const T* bp = b.value().data().data();
    T* op = out.data().data();
    parallel_for(g.batch, [&](std::size_t n) {
      std::vector<T> col(P * S);
      detail::im2col(xp + n * g.cin * S, g, col.data());
      T* y = op + n * g.filters * S;
      for (std::size_t f = 0; f < g.filters; ++f) std::fill(y + f * S, y + (f + 1) * S, bp[f]);
      gemm::multiply(wp, false, col.data(), false, y, g.filters, S, P, true);
    });
  }
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  const bool needs = x.needs_grad() || w.needs_grad() || b.needs_grad();
  return tape.record(std::move(out), needs, [g, ix, iw, ib](Tape<T>& t, std::size_t self) {
    const std::size_t S = g.spatial(), P = g.patch();
    const T* gy = t.grad_of(self).data().data();
    const T* xp = t.value(ix).data().data();
    const T* wp = t.value(iw).data().data();
    T* gw = t.needs_grad(iw) ? t.grad_buffer(iw).data().data() : nullptr;
    T* gx = t.needs_grad(ix) ? t.grad_buffer(ix).data().data() : nullptr;
    if (t.needs_grad(ib)) {
      T* gb = t.grad_buffer(ib).data().data();
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t f = 0; f < g.filters; ++f) {
          const T* row = gy + (n * g.filters + f) * S;
          T acc = T(0);
          for (std::size_t s = 0; s < S; ++s) acc += row[s];
          gb[f] += acc;
        }
      }
    }
    std::vector<T> col(P * S);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* gyn = gy + n * g.filters * S;
      if (gw) {
        detail::im2col(xp + n * g.cin * S, g, col.data());
        gemm::multiply(gyn, false, col.data(), true, gw, g.filters, P, S, true);
      }
      if (gx) {
        gemm::multiply(wp, true, gyn, false, col.data(), P, S, g.filters, false);
        detail::col2im_add(col.data(), g, gx + n * g.cin * S);
      }
    }
  });
}

template <typename T>
Var<T> conv3d(Tape<T>& tape, Conv3dLayer<T>& layer, Var<T> x) {
  return conv3d(x, tape.parameter(layer.weight), tape.parameter(layer.bias));
}

// (x - mean) / (std + eps) over `axes`, population std, no affine.
template <typename T>
Var<T> feature_norm(Var<T> x, const std::vector<std::size_t>& axes, T eps) {
  Tape<T>& tape = detail::tape_of(x);
  const Tensor<T>& xv = x.value();
  auto map = detail::reduction_map(xv.shape(), axes);
  if (map.group == 0) throw DomainError("empty normalization extent");
  const std::size_t groups = numel(map.out_shape);
  const T count = static_cast<T>(map.group);
  std::vector<T> mu(groups, T(0)), sd(groups, T(0));
  auto xd = xv.data();
  for (std::size_t i = 0; i < xd.size(); ++i) mu[map.out_index[i]] += xd[i];
  for (auto& m : mu) m /= count;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T d = xd[i] - mu[map.out_index[i]];
    sd[map.out_index[i]] += d * d;
  }
  for (auto& s : sd) s = std::sqrt(s / count);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const std::size_t o = map.out_index[i];
    out[i] = (xd[i] - mu[o]) / (sd[o] + eps);
  }
  const std::size_t in = x.id;
  return tape.record(std::move(out), x.needs_grad(),
                     [in, eps, count, map = std::move(map), mu = std::move(mu), sd = std::move(sd)](
                         Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto xd = t.value(in).data();
    auto dst = t.grad_buffer(in).data();
    const std::size_t groups = mu.size();
    std::vector<T> gsum(groups, T(0)), gdot(groups, T(0));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t o = map.out_index[i];
      gsum[o] += g[i];
      gdot[o] += g[i] * (xd[i] - mu[o]);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t o = map.out_index[i];
      const T s = sd[o] + eps;
      T v = (g[i] - gsum[o] / count) / s;
      if (sd[o] > T(0)) v -= (xd[i] - mu[o]) * gdot[o] / (count * sd[o] * s * s);
      dst[i] += v;
    }
  });
}

// Per-sample normalization over every axis but the leading batch axis.
template <typename T>
Var<T> feature_norm(Var<T> x, T eps = T(1e-5)) {
  std::vector<std::size_t> axes;
  for (std::size_t ax = 1; ax < x.value().rank(); ++ax) axes.push_back(ax);
  return feature_norm(x, axes, eps);
}

// Affine map on the trailing axis: y = x W^T + b.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (wv.rank() != 2) throw ShapeError("linear weight must be [out, in]");
  if (xv.rank() == 0 || xv.shape().back() != wv.dim(1)) {
    throw ShapeError("linear expects trailing extent " + std::to_string(wv.dim(1)) + ", got " +
                     shape_str(xv.shape()));
  }
  const std::size_t in = wv.dim(1), outf = wv.dim(0), rows = xv.size() / in;
  if (b.value().shape() != Shape{outf}) throw ShapeError("linear bias must be [out]");
  Shape out_shape = xv.shape();
  out_shape.back() = outf;
  Tensor<T> out(out_shape);
  T* op = out.data().data();
  const T* bp = b.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bp, bp + outf, op + r * outf);
  gemm::multiply(xv.data().data(), false, wv.data().data(), true, op, rows, outf, in, true);
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  const bool needs = x.needs_grad() || w.needs_grad() || b.needs_grad();
  return tape.record(std::move(out), needs, [ix, iw, ib, rows, in, outf](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_of(self).data().data();
    if (t.needs_grad(ix)) {
      gemm::multiply(g, false, t.value(iw).data().data(), false, t.grad_buffer(ix).data().data(), rows,
                     in, outf, true);
    }
    if (t.needs_grad(iw)) {
      gemm::multiply(g, true, t.value(ix).data().data(), false, t.grad_buffer(iw).data().data(), outf,
                     in, rows, true);
    }
    if (t.needs_grad(ib)) {
      T* gb = t.grad_buffer(ib).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < outf; ++o) gb[o] += g[r * outf + o];
      }
    }
  });
}

template <typename T>
Var<T> linear(Tape<T>& tape, LinearLayer<T>& layer, Var<T> x) {
  return linear(x, tape.parameter(layer.weight), tape.parameter(layer.bias));
}

// Affine map applied pointwise along axis 1: x [B, in, ...] -> [B, out, ...].
template <typename T>
Var<T> channel_linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (wv.rank() != 2 || xv.rank() < 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("channel_linear expects axis-1 extent " + std::to_string(wv.dim(1)) + ", got " +
                     shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), in = wv.dim(1), outf = wv.dim(0);
  const std::size_t S = xv.size() / (batch * in);
  if (b.value().shape() != Shape{outf}) throw ShapeError("channel_linear bias must be [out]");
  Shape out_shape = xv.shape();
  out_shape[1] = outf;
  Tensor<T> out(out_shape);
  {
    const T* xp = xv.data().data();
    const T* wp = wv.data().data();
    const T* bp = b.value().data().data();
    T* op = out.data().data();
    parallel_for(batch, [&](std::size_t n) {
      T* y = op + n * outf * S;
      for (std::size_t o = 0; o < outf; ++o) std::fill(y + o * S, y + (o + 1) * S, bp[o]);
      gemm::multiply(wp, false, xp + n * in * S, false, y, outf, S, in, true);
    });
  }
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  const bool needs = x.needs_grad() || w.needs_grad() || b.needs_grad();
  return tape.record(std::move(out), needs, [ix, iw, ib, batch, in, outf, S](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_of(self).data().data();
    const T* xp = t.value(ix).data().data();
    const T* wp = t.value(iw).data().data();
    T* gx = t.needs_grad(ix) ? t.grad_buffer(ix).data().data() : nullptr;
    T* gw = t.needs_grad(iw) ? t.grad_buffer(iw).data().data() : nullptr;
    T* gb = t.needs_grad(ib) ? t.grad_buffer(ib).data().data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* gn = g + n * outf * S;
      if (gx) gemm::multiply(wp, true, gn, false, gx + n * in * S, in, S, outf, true);
      if (gw) gemm::multiply(gn, false, xp + n * in * S, true, gw, outf, in, S, true);
      if (gb) {
        for (std::size_t o = 0; o < outf; ++o) {
          T acc = T(0);
          for (std::size_t s = 0; s < S; ++s) acc += gn[o * S + s];
          gb[o] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> channel_linear(Tape<T>& tape, LinearLayer<T>& layer, Var<T> x) {
  return channel_linear(x, tape.parameter(layer.weight), tape.parameter(layer.bias));
}

inline void validate_dropout(const DropoutState& state) {
  if (!(state.rate >= 0.0 && state.rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(state.rate));
  }
}

// Inverted dropout in train mode; identity in eval mode or at rate 0.
template <typename T>
Var<T> dropout(const DropoutState& state, Var<T> x, const ForwardContext& ctx) {
  validate_dropout(state);
  if (ctx.mode == Mode::eval || state.rate == 0.0) return x;
  Tape<T>& tape = detail::tape_of(x);
  Rng rng(mix_seed(mix_seed(ctx.seed, ctx.step), state.stream));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - state.rate));
  Tensor<T> mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= state.rate ? keep_scale : T(0);
  Tensor<T> out(x.shape());
  auto xd = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  const std::size_t in = x.id;
  return tape.record(std::move(out), x.needs_grad(), [in, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto dst = t.grad_buffer(in).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
  });
}

// Softmax over the trailing axis with max subtraction.
template <typename T>
Var<T> softmax(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0 || xv.shape().back() == 0) throw ShapeError("softmax needs a non-empty trailing axis");
  if (!xv.all_finite()) throw DomainError("softmax input is not finite");
  const std::size_t K = xv.shape().back(), rows = xv.size() / K;
  Tensor<T> out(xv.shape());
  auto xd = xv.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * K;
    T* o = out.data().data() + r * K;
    const T mx = *std::max_element(in, in + K);
    T total = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      o[k] = std::exp(in[k] - mx);
      total += o[k];
    }
    for (std::size_t k = 0; k < K; ++k) o[k] /= total;
  }
  const std::size_t in = x.id;
  return tape.record(std::move(out), x.needs_grad(), [in, K, rows](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto y = t.value(self).data();
    auto dst = t.grad_buffer(in).data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t k = 0; k < K; ++k) dot += g[r * K + k] * y[r * K + k];
      for (std::size_t k = 0; k < K; ++k) dst[r * K + k] += y[r * K + k] * (g[r * K + k] - dot);
    }
  });
}

}  // namespace hgf
