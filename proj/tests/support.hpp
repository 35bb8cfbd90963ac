#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hgfnet/hgfnet.hpp"

namespace hgf::test {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTol = 1e-4;
// Relative error is taken against max(|analytic|, |numeric|, floor).
inline constexpr double kGradFloor = 1e-5;

inline Tensor<double> randn(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

inline Tensor<double> randu(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Random signed weights bounded away from zero, for projecting an output to
// a scalar loss without creating exact cancellations.
inline Tensor<double> signed_weights(const Shape& s, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  return t;
}

template <typename T>
Var<T> project(Var<T> y, const Tensor<T>& w) {
  return sum(mul(y, y.tape->constant(w)));
}

struct GradReport {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;

  bool ok() const { return worst < kGradTol; }
};

using LossFn = std::function<Var<double>(Tape<double>&)>;

// Compares tape gradients of every parameter against central differences.
// `max_per_tensor` > 0 checks an evenly strided subset of each tensor.
inline GradReport grad_check(const std::vector<Parameter<double>*>& params, const LossFn& loss,
                             std::size_t max_per_tensor = 0) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    tape.backward(l);
  }
  GradReport r;
  auto eval = [&] {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride = max_per_tensor && n > max_per_tensor ? n / max_per_tensor : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p->value[i];
      p->value[i] = orig + kFdStep;
      const double fp = eval();
      p->value[i] = orig - kFdStep;
      const double fm = eval();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * kFdStep);
      const double analytic = p->grad[i];
      const double err =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      ++r.checked;
      if (err > r.worst) {
        r.worst = err;
        r.where = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline ComplexTensor<double> random_complex(const Shape& s, Rng& rng) {
  ComplexTensor<double> z(s);
  for (auto& v : z.re) v = rng.normal();
  for (auto& v : z.im) v = rng.normal();
  return z;
}

// max |a - b| / max |b| over both planes.
inline double rel_error(const ComplexTensor<double>& a, const ComplexTensor<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::hypot(a.re[i] - b.re[i], a.im[i] - b.im[i]));
    den = std::max(den, std::hypot(b.re[i], b.im[i]));
  }
  return den > 0.0 ? num / den : num;
}

// Five-nested-loop same-padded cross-correlation, the conv3d reference.
inline Tensor<double> conv3d_naive(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t B = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t F = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const auto pd = static_cast<long>(kd / 2), ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor<double> y(Shape{B, F, D, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t ww = 0; ww < W; ++ww) {
            double acc = b[f];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < kd; ++a)
                for (std::size_t e = 0; e < kh; ++e)
                  for (std::size_t g = 0; g < kw; ++g) {
                    const long sd = static_cast<long>(d + a) - pd;
                    const long sh = static_cast<long>(h + e) - ph;
                    const long sw = static_cast<long>(ww + g) - pw;
                    if (sd < 0 || sh < 0 || sw < 0 || sd >= static_cast<long>(D) || sh >= static_cast<long>(H) ||
                        sw >= static_cast<long>(W))
                      continue;
                    acc += w.at({f, c, a, e, g}) *
                           x.at({n, c, static_cast<std::size_t>(sd), static_cast<std::size_t>(sh),
                                 static_cast<std::size_t>(sw)});
                  }
            y.at({n, f, d, h, ww}) = acc;
          }
  return y;
}

}  // namespace hgf::test
