#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgfnet/error.hpp"

namespace hgf {

// Rows are true classes, columns predictions; class ids are 1-based.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : classes(k), counts(k * k, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[(truth - 1) * classes + (pred - 1)]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[(truth - 1) * classes + (pred - 1)]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 1; p <= classes; ++p) s += at(truth, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t t = 1; t <= classes; ++t) s += at(t, pred);
    return s;
  }

  std::vector<std::vector<std::uint64_t>> rows() const {
    std::vector<std::vector<std::uint64_t>> out(classes);
    for (std::size_t t = 0; t < classes; ++t)
      out[t].assign(counts.begin() + static_cast<std::ptrdiff_t>(t * classes),
                    counts.begin() + static_cast<std::ptrdiff_t>((t + 1) * classes));
    return out;
  }
};

inline ConfusionMatrix confusion(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred,
                                 std::size_t classes) {
  if (truth.size() != pred.size()) throw DataError("label and prediction counts differ");
  ConfusionMatrix cm(classes);
  const auto k = static_cast<std::int32_t>(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 1 || truth[i] > k || pred[i] < 1 || pred[i] > k) {
      throw DataError("label outside 1.." + std::to_string(classes) + " at sample " + std::to_string(i));
    }
    cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i])) += 1;
  }
  return cm;
}

struct Scores {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<std::optional<double>> per_class;  // empty for classes absent from the truth
};

inline Scores scores(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("cannot score an empty confusion matrix");
  const double n = static_cast<double>(total);
  Scores s;
  std::uint64_t trace = 0;
  double pe = 0.0, aa_sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t i = 1; i <= cm.classes; ++i) {
    trace += cm.at(i, i);
    const std::uint64_t row = cm.row_sum(i);
    pe += static_cast<double>(row) * static_cast<double>(cm.col_sum(i));
    if (row > 0) {
      const double acc = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
      s.per_class.emplace_back(acc);
      aa_sum += acc;
      ++defined;
    } else {
      s.per_class.emplace_back(std::nullopt);
    }
  }
  s.oa = static_cast<double>(trace) / n;
  s.aa = aa_sum / static_cast<double>(defined);
  pe /= n * n;
  if (pe == 1.0) {
    s.kappa = trace == total ? 1.0 : 0.0;
  } else {
    s.kappa = (s.oa - pe) / (1.0 - pe);
  }
  return s;
}

inline nlohmann::json metrics_json(const Scores& s, const ConfusionMatrix& cm) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& p : s.per_class) per.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  return {{"oa", s.oa}, {"aa", s.aa}, {"kappa", s.kappa}, {"per_class", per}, {"confusion", cm.rows()}};
}

}  // namespace hgf
