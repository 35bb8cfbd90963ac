#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <vector>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/tensor.hpp"

namespace hgf::fft {

enum class Direction { forward, inverse };

// Axes to transform plus the extents they carry. Forward is unnormalized;
// inverse carries 1/N per transformed axis ("backward" normalization).
struct FftPlan {
  std::vector<std::size_t> axes;
  std::vector<std::size_t> lengths;
  Direction direction = Direction::forward;

  std::size_t total_length() const {
    std::size_t n = 1;
    for (std::size_t l : lengths) n *= l;
    return n;
  }
};

inline FftPlan make_plan(const Shape& shape, const std::vector<std::size_t>& axes,
                         Direction direction) {
  FftPlan plan;
  plan.direction = direction;
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) throw ShapeError("fft axis " + std::to_string(ax) + " out of range");
    if (std::find(plan.axes.begin(), plan.axes.end(), ax) != plan.axes.end()) {
      throw ShapeError("fft axes must be distinct");
    }
    if (shape[ax] == 0) throw ShapeError("fft over zero-length axis");
    plan.axes.push_back(ax);
    plan.lengths.push_back(shape[ax]);
  }
  return plan;
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

// Radix-2 decimation-in-time over `lanes` independent signals stored as
// [n][lanes] planes; the inner lane loop is what the compiler vectorizes.
template <typename T>
class Radix2 {
 public:
  explicit Radix2(std::size_t n) : n_(n), cos_(n / 2), sin_(n / 2), bitrev_(n) {
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      cos_[k] = static_cast<T>(std::cos(angle));
      sin_[k] = static_cast<T>(std::sin(angle));
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t length() const { return n_; }

  void forward(T* re, T* im, std::size_t lanes) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t j = bitrev_[i];
      if (j > i) {
        std::swap_ranges(re + i * lanes, re + (i + 1) * lanes, re + j * lanes);
        std::swap_ranges(im + i * lanes, im + (i + 1) * lanes, im + j * lanes);
      }
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const T wr = cos_[j * step];
          const T wi = sin_[j * step];
          T* __restrict ar = re + (start + j) * lanes;
          T* __restrict ai = im + (start + j) * lanes;
          T* __restrict br = re + (start + j + half) * lanes;
          T* __restrict bi = im + (start + j + half) * lanes;
          for (std::size_t l = 0; l < lanes; ++l) {
            const T tr = wr * br[l] - wi * bi[l];
            const T ti = wr * bi[l] + wi * br[l];
            br[l] = ar[l] - tr;
            bi[l] = ai[l] - ti;
            ar[l] += tr;
            ai[l] += ti;
          }
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<T> cos_, sin_;
  std::vector<std::size_t> bitrev_;
};

// Unnormalized forward DFT of one length, for any n >= 1: radix-2 when n is
// a power of two, Bluestein's chirp-z convolution otherwise.
template <typename T>
class Plan1d {
 public:
  explicit Plan1d(std::size_t n) : n_(n) {
    if (is_pow2(n)) {
      radix_ = std::make_unique<Radix2<T>>(n);
      return;
    }
    m_ = next_pow2(2 * n - 1);
    radix_ = std::make_unique<Radix2<T>>(m_);
    chirp_re_.resize(n);
    chirp_im_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the angle small and exact.
      const std::size_t k2 = (k * k) % (2 * n);
      const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
      chirp_re_[k] = static_cast<T>(std::cos(angle));
      chirp_im_[k] = static_cast<T>(std::sin(angle));
    }
    // Filter b_k = conj(chirp_k) at k and m-k, transformed once, pre-scaled
    // by 1/m so the inverse radix-2 pass needs no extra normalization.
    filter_re_.assign(m_, T(0));
    filter_im_.assign(m_, T(0));
    for (std::size_t k = 0; k < n; ++k) {
      filter_re_[k] = chirp_re_[k];
      filter_im_[k] = -chirp_im_[k];
      if (k != 0) {
        filter_re_[m_ - k] = chirp_re_[k];
        filter_im_[m_ - k] = -chirp_im_[k];
      }
    }
    radix_->forward(filter_re_.data(), filter_im_.data(), 1);
    const T inv_m = T(1) / static_cast<T>(m_);
    for (std::size_t k = 0; k < m_; ++k) {
      filter_re_[k] *= inv_m;
      filter_im_[k] *= inv_m;
    }
  }

  std::size_t length() const { return n_; }

  // In-place transform of [n][lanes] planes.
  void forward(T* re, T* im, std::size_t lanes, std::vector<T>& work) const {
    if (n_ == 1) return;
    if (m_ == 0) {
      radix_->forward(re, im, lanes);
      return;
    }
    work.assign(2 * m_ * lanes, T(0));
    T* wr = work.data();
    T* wi = work.data() + m_ * lanes;
    for (std::size_t k = 0; k < n_; ++k) {
      const T cr = chirp_re_[k], ci = chirp_im_[k];
      for (std::size_t l = 0; l < lanes; ++l) {
        const T xr = re[k * lanes + l], xi = im[k * lanes + l];
        wr[k * lanes + l] = xr * cr - xi * ci;
        wi[k * lanes + l] = xr * ci + xi * cr;
      }
    }
    radix_->forward(wr, wi, lanes);
    // Multiply by the filter spectrum, then inverse via conjugation:
    // ifft(z) = conj(fft(conj(z))) / m, with 1/m folded into the filter.
    for (std::size_t k = 0; k < m_; ++k) {
      const T fr = filter_re_[k], fi = filter_im_[k];
      for (std::size_t l = 0; l < lanes; ++l) {
        const T ar = wr[k * lanes + l], ai = wi[k * lanes + l];
        wr[k * lanes + l] = ar * fr - ai * fi;
        wi[k * lanes + l] = -(ar * fi + ai * fr);
      }
    }
    radix_->forward(wr, wi, lanes);
    for (std::size_t k = 0; k < n_; ++k) {
      const T cr = chirp_re_[k], ci = chirp_im_[k];
      for (std::size_t l = 0; l < lanes; ++l) {
        const T ar = wr[k * lanes + l], ai = -wi[k * lanes + l];
        re[k * lanes + l] = ar * cr - ai * ci;
        im[k * lanes + l] = ar * ci + ai * cr;
      }
    }
  }

 private:
  std::size_t n_;
  std::size_t m_ = 0;
  std::unique_ptr<Radix2<T>> radix_;
  std::vector<T> chirp_re_, chirp_im_;
  std::vector<T> filter_re_, filter_im_;
};

// Plans are cached per thread; they are immutable once built.
template <typename T>
const Plan1d<T>& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<Plan1d<T>>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<Plan1d<T>>(n)).first;
  return *it->second;
}

inline constexpr std::size_t kLanes = 32;

// Transforms every line along `axis` in place.
template <typename T>
void transform_axis(ComplexTensor<T>& x, std::size_t axis, Direction direction) {
  const Shape& shape = x.shape;
  const std::size_t n = shape[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t lines = x.size() / n;
  const Plan1d<T>& plan = plan_for<T>(n);
  const bool inverse = direction == Direction::inverse;
  const T scale = inverse ? T(1) / static_cast<T>(n) : T(1);

  std::vector<T> buf_re(n * kLanes), buf_im(n * kLanes), work;
  std::vector<std::size_t> base(kLanes);
  T* re = x.re.data();
  T* im = x.im.data();
  for (std::size_t first = 0; first < lines; first += kLanes) {
    const std::size_t lanes = std::min(kLanes, lines - first);
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t line = first + l;
      base[l] = (line / inner) * n * inner + line % inner;
    }
    // Inverse transform as conj(fft(conj(x))).
    const T sign = inverse ? T(-1) : T(1);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t p = base[l] + k * inner;
        buf_re[k * lanes + l] = re[p];
        buf_im[k * lanes + l] = sign * im[p];
      }
    }
    plan.forward(buf_re.data(), buf_im.data(), lanes, work);
    const T im_scale = sign * scale;
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t p = base[l] + k * inner;
        re[p] = buf_re[k * lanes + l] * scale;
        im[p] = buf_im[k * lanes + l] * im_scale;
      }
    }
  }
}

template <typename T>
void transform(ComplexTensor<T>& x, const FftPlan& plan) {
  for (std::size_t ax : plan.axes) transform_axis(x, ax, plan.direction);
}

}  // namespace detail

// Direct O(N^2) summation per axis, composed over axes. No normalization.
// Serves as the reference the fast path is tested against.
template <typename T>
ComplexTensor<T> dft_naive(const ComplexTensor<T>& x, const std::vector<std::size_t>& axes) {
  make_plan(x.shape, axes, Direction::forward);
  ComplexTensor<T> cur = x;
  for (std::size_t axis : axes) {
    const std::size_t n = cur.shape[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < cur.shape.size(); ++i) inner *= cur.shape[i];
    const std::size_t outer = cur.size() / (n * inner);
    std::vector<double> c(n), s(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      c[j] = std::cos(angle);
      s[j] = std::sin(angle);
    }
    ComplexTensor<T> next(cur.shape);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        for (std::size_t k = 0; k < n; ++k) {
          double acc_re = 0.0, acc_im = 0.0;
          for (std::size_t t = 0; t < n; ++t) {
            const std::size_t j = (k * t) % n;
            const double xr = cur.re[base + t * inner];
            const double xi = cur.im[base + t * inner];
            acc_re += xr * c[j] - xi * s[j];
            acc_im += xr * s[j] + xi * c[j];
          }
          next.re[base + k * inner] = static_cast<T>(acc_re);
          next.im[base + k * inner] = static_cast<T>(acc_im);
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

template <typename T>
ComplexTensor<T> fft(ComplexTensor<T> x, const std::vector<std::size_t>& axes) {
  detail::transform(x, make_plan(x.shape, axes, Direction::forward));
  return x;
}

template <typename T>
ComplexTensor<T> ifft(ComplexTensor<T> x, const std::vector<std::size_t>& axes) {
  detail::transform(x, make_plan(x.shape, axes, Direction::inverse));
  return x;
}

// ---------------------------------------------------------------------------
// Tape ops. Complex cotangents are stored as dL/dRe + i dL/dIm, under which
// the adjoint of a complex-linear map A is A^H. For the unnormalized DFT F,
// F^H = N * ifft, and for ifft = F^H / N the adjoint is F / N.

namespace detail {

template <typename T>
void scale_inplace(ComplexTensor<T>& z, T factor) {
  for (auto& v : z.re) v *= factor;
  for (auto& v : z.im) v *= factor;
}

template <typename T>
void add_into(ComplexTensor<T>& dst, const ComplexTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst.re[i] += src.re[i];
    dst.im[i] += src.im[i];
  }
}

// Cotangent of the input given the cotangent of a transform's output.
template <typename T>
ComplexTensor<T> adjoint(const ComplexTensor<T>& g, const FftPlan& plan) {
  const T n = static_cast<T>(plan.total_length());
  if (plan.direction == Direction::forward) {
    ComplexTensor<T> r = ifft(g, plan.axes);
    scale_inplace(r, n);
    return r;
  }
  ComplexTensor<T> r = fft(g, plan.axes);
  scale_inplace(r, T(1) / n);
  return r;
}

}  // namespace detail

// Differentiable transform of a real tensor viewed as complex.
template <typename T>
CVar<T> fft_diff(Var<T> x, const std::vector<std::size_t>& axes, Direction direction) {
  Tape<T>& tape = hgf::detail::tape_of(x);
  const FftPlan plan = make_plan(x.shape(), axes, direction);
  ComplexTensor<T> z = ComplexTensor<T>::from_real(x.value());
  detail::transform(z, plan);
  const std::size_t in = x.id;
  return tape.record_complex(std::move(z), x.needs_grad(), [plan, in](Tape<T>& t, std::size_t self) {
    const ComplexTensor<T> g = detail::adjoint(t.cgrad_of(self), plan);
    auto dst = t.grad_buffer(in).data();
    // The input's imaginary part is fixed at zero, so only Re flows back.
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.re[i];
  });
}

template <typename T>
CVar<T> transform_diff(CVar<T> x, const std::vector<std::size_t>& axes, Direction direction) {
  Tape<T>& tape = *x.tape;
  const FftPlan plan = make_plan(x.shape(), axes, direction);
  ComplexTensor<T> z = x.value();
  detail::transform(z, plan);
  const std::size_t in = x.id;
  return tape.record_complex(std::move(z), x.needs_grad(), [plan, in](Tape<T>& t, std::size_t self) {
    detail::add_into(t.cgrad_buffer(in), detail::adjoint(t.cgrad_of(self), plan));
  });
}

template <typename T>
CVar<T> fft_diff(CVar<T> x, const std::vector<std::size_t>& axes) {
  return transform_diff(x, axes, Direction::forward);
}

template <typename T>
CVar<T> ifft_diff(CVar<T> x, const std::vector<std::size_t>& axes) {
  return transform_diff(x, axes, Direction::inverse);
}

template <typename T>
Var<T> real_part(CVar<T> z) {
  Tape<T>& tape = *z.tape;
  Tensor<T> out(z.shape(), z.value().re);
  const std::size_t in = z.id;
  return tape.record(std::move(out), z.needs_grad(), [in](Tape<T>& t, std::size_t self) {
    auto g = t.grad_of(self).data();
    auto& dst = t.cgrad_buffer(in);
    for (std::size_t i = 0; i < g.size(); ++i) dst.re[i] += g[i];
  });
}

// Re(ifft(z)) without materializing the imaginary plane on the tape.
template <typename T>
Var<T> real_ifft_diff(CVar<T> z, const std::vector<std::size_t>& axes) {
  Tape<T>& tape = *z.tape;
  const FftPlan plan = make_plan(z.shape(), axes, Direction::inverse);
  ComplexTensor<T> w = z.value();
  detail::transform(w, plan);
  Tensor<T> out(w.shape, std::move(w.re));
  const std::size_t in = z.id;
  return tape.record(std::move(out), z.needs_grad(), [plan, in](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_of(self);
    detail::add_into(t.cgrad_buffer(in), detail::adjoint(ComplexTensor<T>::from_real(g), plan));
  });
}

// Combines two real tensors into one complex tensor (re + i im).
template <typename T>
CVar<T> make_complex(Var<T> re, Var<T> im) {
  Tape<T>& tape = hgf::detail::same_tape(re, im);
  if (re.shape() != im.shape()) throw ShapeError("complex planes differ in shape");
  ComplexTensor<T> z(re.shape(), re.value().storage(), im.value().storage());
  const std::size_t ir = re.id, ii = im.id;
  return tape.record_complex(std::move(z), re.needs_grad() || im.needs_grad(),
                             [ir, ii](Tape<T>& t, std::size_t self) {
    const auto& g = t.cgrad_of(self);
    if (t.needs_grad(ir)) {
      auto dst = t.grad_buffer(ir).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.re[i];
    }
    if (t.needs_grad(ii)) {
      auto dst = t.grad_buffer(ii).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.im[i];
    }
  });
}

// Complex Hadamard product with trailing-dimension broadcast of `b`.
template <typename T>
CVar<T> complex_mul(CVar<T> a, CVar<T> b) {
  if (!a.tape || a.tape != b.tape) throw TapeError("operands live on different tapes");
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape, bv.shape);
  ComplexTensor<T> out(out_shape);
  for_each_broadcast(av.shape, bv.shape, out_shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out.re[i] = av.re[ia] * bv.re[ib] - av.im[ia] * bv.im[ib];
    out.im[i] = av.re[ia] * bv.im[ib] + av.im[ia] * bv.re[ib];
  });
  const std::size_t ia_id = a.id, ib_id = b.id;
  return tape.record_complex(std::move(out), a.needs_grad() || b.needs_grad(),
                             [ia_id, ib_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.cgrad_of(self);
    const auto& x = t.cvalue(ia_id);
    const auto& y = t.cvalue(ib_id);
    const bool need_a = t.needs_grad(ia_id), need_b = t.needs_grad(ib_id);
    ComplexTensor<T>* ga = need_a ? &t.cgrad_buffer(ia_id) : nullptr;
    ComplexTensor<T>* gb = need_b ? &t.cgrad_buffer(ib_id) : nullptr;
    for_each_broadcast(x.shape, y.shape, g.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) {  // g * conj(y)
        ga->re[ia] += g.re[i] * y.re[ib] + g.im[i] * y.im[ib];
        ga->im[ia] += g.im[i] * y.re[ib] - g.re[i] * y.im[ib];
      }
      if (gb) {  // g * conj(x)
        gb->re[ib] += g.re[i] * x.re[ia] + g.im[i] * x.im[ia];
        gb->im[ib] += g.im[i] * x.re[ia] - g.re[i] * x.im[ia];
      }
    });
  });
}

// Hadamard product with a fixed real gate (trailing broadcast).
template <typename T>
CVar<T> gate(CVar<T> a, const Tensor<T>& mask) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const Shape out_shape = broadcast_shape(av.shape, mask.shape());
  if (out_shape != av.shape) throw ShapeError("gate must not enlarge its operand");
  ComplexTensor<T> out(out_shape);
  auto m = mask.data();
  for_each_broadcast(av.shape, mask.shape(), out_shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out.re[i] = av.re[ia] * m[ib];
    out.im[i] = av.im[ia] * m[ib];
  });
  const std::size_t in = a.id;
  return tape.record_complex(std::move(out), a.needs_grad(), [in, mask](Tape<T>& t, std::size_t self) {
    const auto& g = t.cgrad_of(self);
    auto& dst = t.cgrad_buffer(in);
    auto m = mask.data();
    for_each_broadcast(g.shape, mask.shape(), g.shape, [&](std::size_t i, std::size_t, std::size_t ib) {
      dst.re[i] += g.re[i] * m[ib];
      dst.im[i] += g.im[i] * m[ib];
    });
  });
}

}  // namespace hgf::fft
