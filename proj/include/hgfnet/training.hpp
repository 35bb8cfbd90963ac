#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/data.hpp"
#include "hgfnet/metrics.hpp"
#include "hgfnet/model.hpp"
#include "hgfnet/parallel.hpp"
#include "hgfnet/random.hpp"

namespace hgf {

// Per-class weights and focusing exponents; index 0 is class 1.
struct ClassStats {
  std::vector<std::size_t> counts;
  std::vector<double> alpha;
  std::vector<double> gamma;

  std::size_t classes() const { return alpha.size(); }
};

inline ClassStats uniform_stats(std::size_t classes, double alpha, double gamma) {
  ClassStats s;
  s.counts.assign(classes, 0);
  s.alpha.assign(classes, alpha);
  s.gamma.assign(classes, gamma);
  return s;
}

// alpha_i = N / (K n_i); gamma_i = gamma_base + gamma_scale (1 - n_i / max n).
inline ClassStats class_stats(std::span<const std::int32_t> labels, std::size_t classes, double gamma_base = 2.0,
                              double gamma_scale = 2.0) {
  ClassStats s;
  s.counts.assign(classes, 0);
  for (std::int32_t l : labels) {
    if (l < 1 || static_cast<std::size_t>(l) > classes) {
      throw DataError("label " + std::to_string(l) + " outside 1.." + std::to_string(classes));
    }
    ++s.counts[static_cast<std::size_t>(l - 1)];
  }
  const std::size_t max_n = classes ? *std::max_element(s.counts.begin(), s.counts.end()) : 0;
  const double n = static_cast<double>(labels.size());
  for (std::size_t i = 0; i < classes; ++i) {
    if (s.counts[i] == 0) throw DataError("class " + std::to_string(i + 1) + " has no training samples");
    const double ni = static_cast<double>(s.counts[i]);
    s.alpha.push_back(n / (static_cast<double>(classes) * ni));
    s.gamma.push_back(gamma_base + gamma_scale * (1.0 - ni / static_cast<double>(max_n)));
  }
  return s;
}

inline nlohmann::json stats_json(const ClassStats& s) {
  return {{"counts", s.counts}, {"alpha", s.alpha}, {"gamma", s.gamma}};
}

inline constexpr double kProbFloor = 1e-12;

namespace detail {

template <typename T>
std::size_t check_loss_inputs(const Var<T>& probs, std::span<const std::int32_t> labels,
                              std::size_t classes) {
  const Shape& s = probs.shape();
  if (s.size() != 2) throw ShapeError("loss expects probabilities [B, K], got " + shape_str(s));
  if (s[0] != labels.size()) throw ShapeError("loss batch size differs from label count");
  if (s[0] == 0) throw DataError("loss over an empty batch");
  if (s[1] != classes) throw ShapeError("loss expects " + std::to_string(classes) + " classes, got " + shape_str(s));
  for (std::int32_t l : labels)
    if (l < 1 || static_cast<std::size_t>(l) > classes) throw DataError("invalid label " + std::to_string(l));
  return s[1];
}

}  // namespace detail

// Batch mean of alpha_y (1 - p_y)^gamma_y (-log p_y), p clamped to [1e-12, 1].
template <typename T>
Var<T> afl_loss(Var<T> probs, std::span<const std::int32_t> labels, const ClassStats& stats) {
  Tape<T>& tape = detail::tape_of(probs);
  const std::size_t K = detail::check_loss_inputs(probs, labels, stats.classes());
  const std::size_t B = labels.size();
  auto p = probs.value().data();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto y = static_cast<std::size_t>(labels[b] - 1);
    const double pc = std::clamp(static_cast<double>(p[b * K + y]), kProbFloor, 1.0);
    total += stats.alpha[y] * std::pow(1.0 - pc, stats.gamma[y]) * -std::log(pc);
  }
  const double loss = total / static_cast<double>(B);
  std::vector<std::int32_t> ys(labels.begin(), labels.end());
  const std::size_t in = probs.id;
  return tape.record(Tensor<T>::scalar(static_cast<T>(loss)), probs.needs_grad(),
                     [in, K, B, ys = std::move(ys), stats](Tape<T>& t, std::size_t self) {
                       const double g = static_cast<double>(t.grad_of(self)[0]) / static_cast<double>(B);
                       auto pv = t.value(in).data();
                       auto dst = t.grad_buffer(in).data();
                       for (std::size_t b = 0; b < B; ++b) {
                         const auto y = static_cast<std::size_t>(ys[b] - 1);
                         const double raw = static_cast<double>(pv[b * K + y]);
                         if (raw < kProbFloor || raw > 1.0) continue;  // clamp is flat here
                         const double a = stats.alpha[y], gm = stats.gamma[y];
                         double d = -a * std::pow(1.0 - raw, gm) / raw;
                         if (gm != 0.0 && raw < 1.0) d += a * gm * std::pow(1.0 - raw, gm - 1.0) * std::log(raw);
                         dst[b * K + y] += static_cast<T>(g * d);
                       }
                     });
}

template <typename T>
Var<T> focal_loss(Var<T> probs, std::span<const std::int32_t> labels, double alpha = 1.0, double gamma = 2.0) {
  const std::size_t K = probs.shape().size() == 2 ? probs.shape()[1] : 0;
  return afl_loss(probs, labels, uniform_stats(K, alpha, gamma));
}

// Batch mean of -log p_y with the same clamp as the focal losses.
template <typename T>
Var<T> cross_entropy(Var<T> probs, std::span<const std::int32_t> labels) {
  Tape<T>& tape = detail::tape_of(probs);
  const std::size_t K = detail::check_loss_inputs(probs, labels, probs.shape().size() == 2 ? probs.shape()[1] : 0);
  const std::size_t B = labels.size();
  auto p = probs.value().data();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double pc = std::clamp(static_cast<double>(p[b * K + static_cast<std::size_t>(labels[b] - 1)]), kProbFloor, 1.0);
    total += -std::log(pc);
  }
  std::vector<std::int32_t> ys(labels.begin(), labels.end());
  const std::size_t in = probs.id;
  return tape.record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(B))), probs.needs_grad(),
                     [in, K, B, ys = std::move(ys)](Tape<T>& t, std::size_t self) {
                       const double g = static_cast<double>(t.grad_of(self)[0]) / static_cast<double>(B);
                       auto pv = t.value(in).data();
                       auto dst = t.grad_buffer(in).data();
                       for (std::size_t b = 0; b < B; ++b) {
                         const std::size_t at = b * K + static_cast<std::size_t>(ys[b] - 1);
                         const double raw = static_cast<double>(pv[at]);
                         if (raw < kProbFloor || raw > 1.0) continue;
                         dst[at] += static_cast<T>(-g / raw);
                       }
                     });
}

enum class LossKind { ce, sfl, afl };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::sfl: return "sfl";
    case LossKind::afl: return "afl";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "sfl") return LossKind::sfl;
  if (s == "afl") return LossKind::afl;
  throw ConfigError("unknown loss '" + s + "' (expected ce|sfl|afl)");
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

// Adam with bias correction; decoupled decay theta *= (1 - lr * wd) first.
template <typename T>
struct Adam {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit Adam(AdamConfig c = {}) : config(c) {}

  void step(const std::vector<Parameter<T>*>& params) {
    if (m.empty()) {
      for (const auto* p : params) {
        m.emplace_back(p->value.size(), 0.0);
        v.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m.size() != params.size()) throw TapeError("optimizer was bound to a different parameter set");
    for (const auto* p : params) {
      if (p->requires_grad && p->grad.shape() != p->value.shape()) {
        throw TapeError("parameter '" + p->name + "' has no gradient");
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    const double decay = 1.0 - config.lr * config.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter<T>& p = *params[k];
      if (!p.requires_grad) continue;
      if (m[k].size() != p.value.size()) throw TapeError("moment shape differs for '" + p.name + "'");
      auto th = p.value.data();
      auto g = p.grad.data();
      for (std::size_t i = 0; i < th.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[k][i] = config.beta1 * m[k][i] + (1.0 - config.beta1) * gi;
        v[k][i] = config.beta2 * v[k][i] + (1.0 - config.beta2) * gi * gi;
        const double mh = m[k][i] / c1, vh = v[k][i] / c2;
        double x = static_cast<double>(th[i]);
        if (config.weight_decay != 0.0) x *= decay;
        x -= config.lr * mh / (std::sqrt(vh) + config.eps);
        th[i] = static_cast<T>(x);
      }
    }
  }
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  AdamConfig adam;
  LossKind loss = LossKind::afl;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_oa = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
          {"val_oa", r.val_oa}, {"wall_ms", r.wall_ms}};
}

struct FitResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_oa = -1.0;
};

template <typename T>
Var<T> compute_loss(LossKind kind, Var<T> probs, std::span<const std::int32_t> labels, const ClassStats& stats) {
  return kind == LossKind::ce ? cross_entropy(probs, labels) : afl_loss(probs, labels, stats);
}

template <typename T>
Tensor<T> gather_batch(const PatchDataset& ds, std::span<const std::size_t> idx) {
  const Shape& s = ds.patches.shape();
  const std::size_t per = numel(Shape(s.begin() + 1, s.end()));
  Shape bs = s;
  bs[0] = idx.size();
  Tensor<T> out(bs);
  auto src = ds.patches.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* from = src.data() + idx[i] * per;
    std::copy(from, from + per, out.data().data() + i * per);
  }
  return out;
}

struct Predictions {
  std::vector<std::int32_t> labels;  // argmax + 1
  std::vector<std::vector<double>> probs;
};

// Eval-mode class probabilities for one batch on a gradient-free tape.
template <typename T>
void predict_batch(HgfnetModel<T>& model, Tensor<T> batch, Predictions& out) {
  const ForwardContext ctx{Mode::eval, 0, 0};
  const std::size_t n = batch.dim(0);
  Tape<T> tape(false);
  Var<T> probs = forward(model, tape.constant(std::move(batch)), ctx);
  const std::size_t K = probs.shape()[1];
  auto p = probs.value().data();
  for (std::size_t b = 0; b < n; ++b) {
    const T* row = p.data() + b * K;
    out.labels.push_back(static_cast<std::int32_t>(std::max_element(row, row + K) - row) + 1);
    out.probs.emplace_back(row, row + K);
  }
}

template <typename T>
Predictions predict(HgfnetModel<T>& model, const PatchDataset& ds, std::span<const std::size_t> idx,
                    std::size_t batch_size = 64) {
  const FlushDenormals ftz;
  Predictions out;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    predict_batch(model, gather_batch<T>(ds, idx.subspan(start, std::min(batch_size, idx.size() - start))), out);
  }
  return out;
}

namespace detail {

template <typename T>
std::pair<double, double> loss_and_oa(HgfnetModel<T>& model, const PatchDataset& ds, std::span<const std::size_t> idx,
                                      LossKind kind, const ClassStats& stats, std::size_t batch_size) {
  const ForwardContext ctx{Mode::eval, 0, 0};
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const auto chunk = idx.subspan(start, std::min(batch_size, idx.size() - start));
    std::vector<std::int32_t> labels;
    for (std::size_t i : chunk) labels.push_back(ds.labels[i]);
    Tape<T> tape(false);
    Var<T> probs = forward(model, tape.constant(gather_batch<T>(ds, chunk)), ctx);
    loss_sum += static_cast<double>(compute_loss(kind, probs, labels, stats).value()[0]) *
                static_cast<double>(chunk.size());
    const std::size_t K = probs.shape()[1];
    auto p = probs.value().data();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const T* row = p.data() + b * K;
      if (static_cast<std::int32_t>(std::max_element(row, row + K) - row) + 1 == labels[b]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(idx.size()), static_cast<double>(correct) / static_cast<double>(idx.size())};
}

}  // namespace detail

// Minibatch training with a per-epoch reshuffle; the parameters with the best
// validation OA (earliest on ties) are restored at the end.
template <typename T>
FitResult fit(HgfnetModel<T>& model, const PatchDataset& ds, std::span<const std::size_t> train_idx,
              std::span<const std::size_t> val_idx, const ClassStats& stats, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_idx.empty()) throw DataError("training split is empty");
  if (val_idx.empty()) throw DataError("validation split is empty");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  const FlushDenormals ftz;
  const auto params = model.parameters();
  Adam<T> opt(cfg.adam);
  FitResult result;
  std::vector<Tensor<T>> best;
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::sort(order.begin(), order.end());
    Rng rng(mix_seed(cfg.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<std::int32_t> labels;
      for (std::size_t i : chunk) labels.push_back(ds.labels[i]);
      model.zero_grad();
      Tape<T> tape;
      const ForwardContext ctx{Mode::train, cfg.seed, step++};
      Var<T> probs = forward(model, tape.constant(gather_batch<T>(ds, chunk)), ctx);
      Var<T> loss = compute_loss(cfg.loss, probs, labels, stats);
      tape.backward(loss);
      opt.step(params);
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(chunk.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    std::tie(rec.val_loss, rec.val_oa) = detail::loss_and_oa(model, ds, val_idx, cfg.loss, stats, cfg.batch_size);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (rec.val_oa > result.best_val_oa) {
      result.best_val_oa = rec.val_oa;
      result.best_epoch = epoch;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
    }
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  return result;
}

}  // namespace hgf
