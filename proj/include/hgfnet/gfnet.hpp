#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/fft.hpp"
#include "hgfnet/layers.hpp"

namespace hgf {

// Which axes of a [B, F, D, H, W] feature map move to the frequency domain.
enum class TransformMode { sft, spft, ssft };
enum class MaskMode { learnable, binary };

inline std::vector<std::size_t> transform_axes(TransformMode mode) {
  switch (mode) {
    case TransformMode::sft: return {2};          // spectral (depth)
    case TransformMode::spft: return {3, 4};      // spatial
    case TransformMode::ssft: return {2, 3, 4};   // joint
  }
  return {};
}

inline std::string to_string(TransformMode mode) {
  switch (mode) {
    case TransformMode::sft: return "sft";
    case TransformMode::spft: return "spft";
    case TransformMode::ssft: return "ssft";
  }
  return "?";
}

inline TransformMode parse_transform_mode(const std::string& s) {
  if (s == "sft") return TransformMode::sft;
  if (s == "spft") return TransformMode::spft;
  if (s == "ssft") return TransformMode::ssft;
  throw ConfigError("unknown transform mode '" + s + "' (expected sft|spft|ssft)");
}

inline std::string to_string(MaskMode mode) {
  return mode == MaskMode::learnable ? "learnable" : "binary";
}

inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "learnable") return MaskMode::learnable;
  if (s == "binary") return MaskMode::binary;
  throw ConfigError("unknown mask mode '" + s + "' (expected learnable|binary)");
}

// Frequency filter over a [F, D, H, W] spectrum. Learnable masks are complex
// (two real parameters); binary masks are a fixed 0/1 gate.
template <typename T>
struct FrequencyMask {
  MaskMode mode = MaskMode::learnable;
  Parameter<T> re;
  Parameter<T> im;
  Tensor<T> gate;

  const Shape& shape() const { return mode == MaskMode::learnable ? re.value.shape() : gate.shape(); }
};

// Bins kept by an axis-aligned low-pass box of length ceil(keep * n): DC
// first, then increasing |frequency|, positive before negative on ties.
inline std::vector<bool> low_pass_bins(std::size_t n, double keep) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw ConfigError("mask keep ratio must lie in (0, 1], got " + std::to_string(keep));
  }
  const double scaled = std::ceil(keep * static_cast<double>(n) - 1e-9);
  const std::size_t count = std::clamp<std::size_t>(static_cast<std::size_t>(scaled), 1, n);
  std::vector<std::size_t> order{0};
  for (std::size_t f = 1; order.size() < n; ++f) {
    if (f <= n - f) order.push_back(f);     // +f (includes Nyquist)
    if (n - f > f) order.push_back(n - f);  // -f
  }
  std::vector<bool> kept(n, false);
  for (std::size_t i = 0; i < count; ++i) kept[order[i]] = true;
  return kept;
}

// `shape` is [F, D, H, W]; `axes` name transformed axes of the [B, F, D, H, W]
// map, so axis a here is a - 1.
template <typename T>
FrequencyMask<T> mask_init(const Shape& shape, MaskMode mode, TransformMode transform = TransformMode::ssft,
                           double keep = 0.5, const std::string& name = "mask") {
  if (shape.size() != 4) throw ShapeError("mask shape must be [F, D, H, W]");
  FrequencyMask<T> mask;
  mask.mode = mode;
  if (mode == MaskMode::learnable) {
    mask.re = Parameter<T>(name + ".re", Tensor<T>(shape, T(1)));
    mask.im = Parameter<T>(name + ".im", Tensor<T>(shape, T(0)));
    return mask;
  }
  std::vector<std::vector<bool>> kept(4);
  for (std::size_t ax = 0; ax < 4; ++ax) kept[ax] = std::vector<bool>(shape[ax], true);
  for (std::size_t ax : transform_axes(transform)) kept[ax - 1] = low_pass_bins(shape[ax - 1], keep);
  mask.gate = Tensor<T>(shape);
  std::size_t i = 0;
  for (std::size_t f = 0; f < shape[0]; ++f)
    for (std::size_t d = 0; d < shape[1]; ++d)
      for (std::size_t h = 0; h < shape[2]; ++h)
        for (std::size_t w = 0; w < shape[3]; ++w, ++i)
          mask.gate[i] = (kept[0][f] && kept[1][d] && kept[2][h] && kept[3][w]) ? T(1) : T(0);
  return mask;
}

// X'_FT = X_FT (.) M, with M broadcast over the batch axis.
template <typename T>
CVar<T> apply_mask(CVar<T> x_ft, FrequencyMask<T>& mask) {
  const Shape& xs = x_ft.shape();
  const Shape& ms = mask.shape();
  if (xs.size() < ms.size() || !std::equal(ms.begin(), ms.end(), xs.end() - static_cast<std::ptrdiff_t>(ms.size()))) {
    throw ShapeError("mask " + shape_str(ms) + " does not match spectrum " + shape_str(xs));
  }
  if (mask.mode == MaskMode::binary) return fft::gate(x_ft, mask.gate);
  Tape<T>& tape = *x_ft.tape;
  CVar<T> m = fft::make_complex(tape.parameter(mask.re), tape.parameter(mask.im));
  return fft::complex_mul(x_ft, m);
}

template <typename T>
struct GfnetBlock {
  FrequencyMask<T> mask;
  LinearLayer<T> ffn_in;   // d -> d_h
  LinearLayer<T> ffn_out;  // d_h -> d
  DropoutState dropout;
  TransformMode mode = TransformMode::ssft;
  T eps = T(1e-5);
};

// normalize -> FFT -> mask -> inverse FFT (real part) -> channel FFN with
// dropout between the two linears -> residual from the normalized input.
template <typename T>
Var<T> gfnet_block_forward(GfnetBlock<T>& block, Var<T> x, const ForwardContext& ctx) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape& xs = x.shape();
  if (xs.size() != 5) throw ShapeError("gfnet block input must be [B,F,D,H,W], got " + shape_str(xs));
  if (!std::equal(xs.begin() + 1, xs.end(), block.mask.shape().begin(), block.mask.shape().end())) {
    throw ShapeError("gfnet block expects feature map " + shape_str(block.mask.shape()) + ", got " +
                     shape_str(xs));
  }
  const auto axes = transform_axes(block.mode);
  Var<T> x_norm = feature_norm(x, block.eps);
  CVar<T> x_ft = fft::fft_diff(x_norm, axes, fft::Direction::forward);
  CVar<T> filtered = apply_mask(x_ft, block.mask);
  Var<T> x_sp = fft::real_ifft_diff(filtered, axes);
  Var<T> hidden = gelu(channel_linear(tape, block.ffn_in, x_sp));
  hidden = dropout(block.dropout, hidden, ctx);
  Var<T> x_out = channel_linear(tape, block.ffn_out, hidden);
  return add(x_norm, x_out);
}

}  // namespace hgf
