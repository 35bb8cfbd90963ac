#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgfnet/error.hpp"
#include "hgfnet/random.hpp"
#include "hgfnet/tensor.hpp"

namespace hgf {

// A hyperspectral scene. Values are band-major (band, row, column); gt is
// row-major with 0 = unlabeled and 1..classes = class ids.
struct HsiCube {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> values;
  std::vector<std::int32_t> gt;
  std::vector<double> wavelengths;

  double value(std::size_t band, std::size_t row, std::size_t col) const {
    return values[(band * height + row) * width + col];
  }
  double& value(std::size_t band, std::size_t row, std::size_t col) {
    return values[(band * height + row) * width + col];
  }
  std::int32_t label(std::size_t row, std::size_t col) const { return gt[row * width + col]; }

  void validate() const {
    if (values.size() != bands * height * width) throw FormatError("cube values do not match extents");
    if (gt.size() != height * width) throw FormatError("ground truth does not match spatial extents");
    for (std::int32_t g : gt) {
      if (g < 0 || static_cast<std::size_t>(g) > classes) {
        throw FormatError("ground-truth id " + std::to_string(g) + " outside 0.." + std::to_string(classes));
      }
    }
    if (!wavelengths.empty() && wavelengths.size() != bands) {
      throw FormatError("wavelength list does not match band count");
    }
  }
};

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!os) throw FormatError("failed writing " + path.string());
}

}  // namespace detail

// Reads a JSON header plus raw little-endian f32 data and i32 ground truth.
// File names in the header resolve relative to the header's directory.
inline HsiCube load_cube(const std::string& header_path) {
  namespace fs = std::filesystem;
  const auto text = detail::read_file(header_path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cube header " + header_path + ": " + e.what());
  }
  HsiCube cube;
  std::string data_file, gt_file;
  try {
    cube.bands = h.at("bands").get<std::size_t>();
    cube.height = h.at("height").get<std::size_t>();
    cube.width = h.at("width").get<std::size_t>();
    cube.classes = h.at("classes").get<std::size_t>();
    if (h.at("dtype").get<std::string>() != "f32") throw FormatError("cube dtype must be \"f32\"");
    data_file = h.at("data_file").get<std::string>();
    gt_file = h.at("gt_file").get<std::string>();
    if (h.contains("wavelengths")) cube.wavelengths = h.at("wavelengths").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cube header " + header_path + ": " + e.what());
  }
  const fs::path dir = fs::path(header_path).parent_path();
  const auto raw = detail::read_file(dir / data_file);
  const std::size_t n = cube.bands * cube.height * cube.width;
  if (raw.size() != n * sizeof(float)) {
    throw FormatError("data file holds " + std::to_string(raw.size()) + " bytes, expected " +
                      std::to_string(n * sizeof(float)));
  }
  std::vector<float> vals(n);
  std::memcpy(vals.data(), raw.data(), raw.size());
  cube.values.assign(vals.begin(), vals.end());
  const auto graw = detail::read_file(dir / gt_file);
  const std::size_t npix = cube.height * cube.width;
  if (graw.size() != npix * sizeof(std::int32_t)) {
    throw FormatError("gt file holds " + std::to_string(graw.size()) + " bytes, expected " +
                      std::to_string(npix * sizeof(std::int32_t)));
  }
  cube.gt.resize(npix);
  std::memcpy(cube.gt.data(), graw.data(), graw.size());
  cube.validate();
  return cube;
}

// Writes header + raw files next to each other. Values are narrowed to f32.
inline void save_cube(const HsiCube& cube, const std::string& header_path) {
  namespace fs = std::filesystem;
  cube.validate();
  const fs::path header(header_path);
  const std::string stem = header.stem().string();
  const std::string data_file = stem + ".f32";
  const std::string gt_file = stem + ".gt.i32";
  nlohmann::json h{{"bands", cube.bands},   {"height", cube.height},   {"width", cube.width},
                   {"dtype", "f32"},        {"data_file", data_file}, {"gt_file", gt_file},
                   {"classes", cube.classes}};
  if (!cube.wavelengths.empty()) h["wavelengths"] = cube.wavelengths;
  const std::vector<float> vals(cube.values.begin(), cube.values.end());
  detail::write_file(header.parent_path() / data_file, vals.data(), vals.size() * sizeof(float));
  detail::write_file(header.parent_path() / gt_file, cube.gt.data(), cube.gt.size() * sizeof(std::int32_t));
  const std::string text = h.dump(2) + "\n";
  detail::write_file(header, text.data(), text.size());
}

// Per-band standardization to mean 0, population std 1; constant bands to 0.
inline HsiCube normalize_cube(HsiCube cube) {
  const std::size_t plane = cube.height * cube.width;
  for (std::size_t b = 0; b < cube.bands; ++b) {
    double* v = cube.values.data() + b * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += v[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (v[i] - mean) * (v[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(plane));
    const bool constant = std::all_of(v, v + plane, [&](double x) { return x == v[0]; });
    for (std::size_t i = 0; i < plane; ++i) v[i] = constant || sd == 0.0 ? 0.0 : (v[i] - mean) / sd;
  }
  return cube;
}

inline HsiCube band_subsample(const HsiCube& cube, std::size_t stride) {
  if (stride < 1) throw ConfigError("band stride must be >= 1");
  HsiCube out = cube;
  const std::size_t plane = cube.height * cube.width;
  out.bands = (cube.bands + stride - 1) / stride;
  out.values.clear();
  out.wavelengths.clear();
  for (std::size_t b = 0; b < cube.bands; b += stride) {
    out.values.insert(out.values.end(), cube.values.begin() + static_cast<std::ptrdiff_t>(b * plane),
                      cube.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * plane));
    if (!cube.wavelengths.empty()) out.wavelengths.push_back(cube.wavelengths[b]);
  }
  return out;
}

enum class Split : std::uint8_t { unassigned, train, val, test };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct PixelCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

// Labeled patches [N, 1, bands, patch, patch] with provenance.
struct PatchDataset {
  Tensor<float> patches;
  std::vector<std::int32_t> labels;
  std::vector<PixelCoord> coords;
  std::vector<Split> split;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t bands() const { return patches.rank() == 5 ? patches.dim(2) : 0; }
  std::size_t patch() const { return patches.rank() == 5 ? patches.dim(3) : 0; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }
};

// Reflects an index into [0, n) without repeating the edge sample.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (m == 1) return 0;
  const std::ptrdiff_t period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

// One patch [bands, patch, patch] centred on (row, col).
inline void copy_patch(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t patch, float* out) {
  const auto r = static_cast<std::ptrdiff_t>(patch / 2);
  for (std::size_t b = 0; b < cube.bands; ++b) {
    for (std::ptrdiff_t dr = -r; dr <= r; ++dr) {
      const std::size_t sr = reflect_index(static_cast<std::ptrdiff_t>(row) + dr, cube.height);
      for (std::ptrdiff_t dc = -r; dc <= r; ++dc) {
        const std::size_t sc = reflect_index(static_cast<std::ptrdiff_t>(col) + dc, cube.width);
        *out++ = static_cast<float>(cube.value(b, sr, sc));
      }
    }
  }
}

inline void validate_patch_size(const HsiCube& cube, std::size_t patch) {
  if (patch == 0 || patch % 2 == 0) throw ConfigError("patch extent must be odd, got " + std::to_string(patch));
  const std::size_t limit = 2 * std::min(cube.height, cube.width) - 1;
  if (patch > limit) {
    throw ConfigError("patch " + std::to_string(patch) + " exceeds mirror-padding limit " + std::to_string(limit));
  }
}

// One patch per labeled pixel, in row-major pixel order.
inline PatchDataset extract_patches(const HsiCube& cube, std::size_t patch) {
  validate_patch_size(cube, patch);
  PatchDataset ds;
  ds.classes = cube.classes;
  for (std::size_t r = 0; r < cube.height; ++r)
    for (std::size_t c = 0; c < cube.width; ++c)
      if (cube.label(r, c) > 0) {
        ds.labels.push_back(cube.label(r, c));
        ds.coords.push_back({r, c});
      }
  const std::size_t per = cube.bands * patch * patch;
  ds.patches = Tensor<float>(Shape{ds.labels.size(), 1, cube.bands, patch, patch});
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    copy_patch(cube, ds.coords[i].row, ds.coords[i].col, patch, ds.patches.data().data() + i * per);
  }
  ds.split.assign(ds.labels.size(), Split::unassigned);
  return ds;
}

struct SplitSpec {
  double train = 0.25;
  double val = 0.25;
  double test = 0.50;
  std::uint64_t seed = 0;
};

// Stratified split: per class, shuffle, floor fractions for train and val,
// rest to test, then promote one test sample into any empty train/val bucket.
inline PatchDataset split(PatchDataset ds, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::int32_t max_label = 0;
  for (std::int32_t l : ds.labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] < 1) throw DataError("patch label must be >= 1");
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  for (std::size_t c = 1; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    const std::size_t n = idx.size();
    if (n < 3) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(n) + " samples; at least 3 needed");
    }
    Rng rng(mix_seed(spec.seed, c));
    rng.shuffle(std::span<std::size_t>(idx));
    std::size_t n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
    std::size_t n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n) + 1e-9));
    if (n_train == 0) n_train = 1;
    if (n_val == 0) n_val = 1;
    for (std::size_t k = 0; k < n; ++k) {
      ds.split[idx[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    }
  }
  return ds;
}

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t bands = 20;
  std::size_t height = 64;
  std::size_t width = 64;
  double imbalance_ratio = 1.0;
  double noise_std = 0.3;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"classes", s.classes},
                     {"bands", s.bands},
                     {"height", s.height},
                     {"width", s.width},
                     {"imbalance_ratio", s.imbalance_ratio},
                     {"noise_std", s.noise_std},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  const SyntheticSpec d;
  s.classes = j.value("classes", d.classes);
  s.bands = j.value("bands", d.bands);
  s.height = j.value("height", d.height);
  s.width = j.value("width", d.width);
  s.imbalance_ratio = j.value("imbalance_ratio", d.imbalance_ratio);
  s.noise_std = j.value("noise_std", d.noise_std);
  s.seed = j.value("seed", d.seed);
}

// Target pixel count per class: a geometric series from most to least
// frequent with overall ratio `imbalance_ratio`.
inline std::vector<double> synthetic_class_targets(const SyntheticSpec& spec) {
  const double total = static_cast<double>(spec.height * spec.width);
  const double step = std::pow(spec.imbalance_ratio, 1.0 / static_cast<double>(spec.classes - 1));
  std::vector<double> w(spec.classes);
  double sum = 0.0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    w[c] = std::pow(step, -static_cast<double>(c));
    sum += w[c];
  }
  for (auto& v : w) v = v / sum * total;
  return w;
}

// Desk-scale scene: per-class sinusoidal spectral signatures, a seeded power
// diagram (weighted Voronoi) over one site per class whose weights are tuned
// to hit the geometric area targets, plus iid Gaussian noise. Fully labeled.
inline HsiCube synthesize_cube(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic cube needs at least 2 classes");
  if (!(spec.imbalance_ratio >= 1.0)) throw ConfigError("imbalance_ratio must be >= 1");
  if (spec.bands == 0 || spec.height == 0 || spec.width == 0) throw ConfigError("synthetic extents must be positive");
  if (!(spec.noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  const auto targets = synthetic_class_targets(spec);
  if (targets.back() < 1.0) throw ConfigError("impossible area allocation: rarest class gets < 1 pixel");

  Rng rng(mix_seed(spec.seed, 0x53594e));
  const std::size_t K = spec.classes, H = spec.height, W = spec.width;
  std::vector<double> sy(K), sx(K);
  for (std::size_t c = 0; c < K; ++c) {
    sy[c] = rng.uniform(0.0, static_cast<double>(H));
    sx[c] = rng.uniform(0.0, static_cast<double>(W));
  }

  auto assign = [&](const std::vector<double>& weight, std::vector<std::int32_t>& gt, std::vector<double>& area) {
    std::fill(area.begin(), area.end(), 0.0);
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t col = 0; col < W; ++col) {
        double best = 0.0;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < K; ++c) {
          const double dy = static_cast<double>(r) + 0.5 - sy[c];
          const double dx = static_cast<double>(col) + 0.5 - sx[c];
          const double d = dy * dy + dx * dx - weight[c];
          if (c == 0 || d < best) {
            best = d;
            arg = c;
          }
        }
        gt[r * W + col] = static_cast<std::int32_t>(arg + 1);
        area[arg] += 1.0;
      }
    }
  };

  std::vector<double> weight(K, 0.0), area(K);
  std::vector<std::int32_t> gt(H * W), best_gt;
  double best_err = 1e300;
  double eta = 1.0;
  for (int iter = 0; iter < 600; ++iter) {
    assign(weight, gt, area);
    double err = 0.0;
    for (std::size_t c = 0; c < K; ++c) err = std::max(err, std::abs(area[c] - targets[c]) / targets[c]);
    if (err < best_err) {
      best_err = err;
      best_gt = gt;
    }
    if (err < 0.01) break;
    for (std::size_t c = 0; c < K; ++c) weight[c] += eta * (targets[c] - area[c]);
    eta *= 0.995;
  }
  std::vector<double> final_area(K, 0.0);
  for (std::int32_t g : best_gt) final_area[static_cast<std::size_t>(g - 1)] += 1.0;
  for (double a : final_area)
    if (a < 1.0) throw ConfigError("impossible area allocation: a class received no pixels");

  // Signatures: 2-4 random-phase sinusoids over the band axis.
  std::vector<std::vector<double>> signature(K, std::vector<double>(spec.bands, 0.0));
  for (std::size_t c = 0; c < K; ++c) {
    const std::size_t terms = 2 + static_cast<std::size_t>(rng.below(3));
    for (std::size_t t = 0; t < terms; ++t) {
      const double amp = rng.uniform(0.5, 1.5);
      const double freq = rng.uniform(0.5, 3.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t b = 0; b < spec.bands; ++b) {
        signature[c][b] += amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(b) /
                                              static_cast<double>(spec.bands) + phase);
      }
    }
  }

  HsiCube cube;
  cube.bands = spec.bands;
  cube.height = H;
  cube.width = W;
  cube.classes = K;
  cube.gt = std::move(best_gt);
  cube.values.resize(spec.bands * H * W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t col = 0; col < W; ++col) {
      const auto c = static_cast<std::size_t>(cube.gt[r * W + col] - 1);
      for (std::size_t b = 0; b < spec.bands; ++b) {
        const double noise = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
        // Stored at f32 precision so a saved cube reloads bit-exactly.
        cube.value(b, r, col) = static_cast<double>(static_cast<float>(signature[c][b] + noise));
      }
    }
  }
  return cube;
}

}  // namespace hgf
