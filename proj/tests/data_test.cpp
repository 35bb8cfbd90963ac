#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace hgf;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("hgf_data_test_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

template <typename T>
void write_raw(const fs::path& p, const std::vector<T>& v) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

void write_header(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  os << j.dump();
}

nlohmann::json tiny_header() {
  return {{"bands", 2}, {"height", 2}, {"width", 2}, {"dtype", "f32"},
          {"data_file", "c.f32"}, {"gt_file", "c.gt"}, {"classes", 2}};
}

// Labeled n-sample dataset with the given per-class counts (labels only).
PatchDataset labels_only(const std::vector<std::size_t>& counts) {
  PatchDataset ds;
  ds.classes = counts.size();
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) ds.labels.push_back(static_cast<std::int32_t>(c + 1));
  ds.coords.resize(ds.labels.size());
  ds.split.assign(ds.labels.size(), Split::unassigned);
  ds.patches = Tensor<float>(Shape{ds.labels.size(), 1, 1, 1, 1});
  return ds;
}

std::array<std::size_t, 3> split_counts(const PatchDataset& ds, std::int32_t label) {
  std::array<std::size_t, 3> n{0, 0, 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != label) continue;
    if (ds.split[i] == Split::train) ++n[0];
    if (ds.split[i] == Split::val) ++n[1];
    if (ds.split[i] == Split::test) ++n[2];
  }
  return n;
}

}  // namespace

TEST(LoadCube, ByteArithmeticAndErrors) {
  TempDir dir;
  write_header(dir / "c.json", tiny_header());
  write_raw(dir / "c.f32", std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  write_raw(dir / "c.gt", std::vector<std::int32_t>{1, 2, 0, 1});
  EXPECT_EQ(fs::file_size(dir / "c.f32"), 32u);
  EXPECT_EQ(fs::file_size(dir / "c.gt"), 16u);
  const auto cube = load_cube((dir / "c.json").string());
  EXPECT_EQ(cube.value(1, 0, 1), 6.0);
  EXPECT_EQ(cube.label(1, 1), 1);

  write_raw(dir / "c.f32", std::vector<float>{1, 2, 3, 4, 5, 6, 7});
  EXPECT_THROW(load_cube((dir / "c.json").string()), FormatError);
  write_raw(dir / "c.f32", std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  write_raw(dir / "c.gt", std::vector<std::int32_t>{1, 3, 0, 1});
  EXPECT_THROW(load_cube((dir / "c.json").string()), FormatError);
  write_raw(dir / "c.gt", std::vector<std::int32_t>{1, 2, 0});
  EXPECT_THROW(load_cube((dir / "c.json").string()), FormatError);
  write_raw(dir / "c.gt", std::vector<std::int32_t>{1, 2, 0, 1});

  auto h = tiny_header();
  h["dtype"] = "f64";
  write_header(dir / "bad.json", h);
  EXPECT_THROW(load_cube((dir / "bad.json").string()), FormatError);
  h = tiny_header();
  h.erase("gt_file");
  write_header(dir / "bad.json", h);
  EXPECT_THROW(load_cube((dir / "bad.json").string()), FormatError);
  {
    std::ofstream os(dir / "bad.json");
    os << "{not json";
  }
  EXPECT_THROW(load_cube((dir / "bad.json").string()), FormatError);
  EXPECT_THROW(load_cube((dir / "missing.json").string()), FormatError);
}

TEST(SaveCube, RoundTripIsBitExact) {
  TempDir dir;
  auto cube = synthesize_cube(SyntheticSpec{3, 6, 8, 9, 2.0, 0.2, 4});
  cube.wavelengths = {400, 450, 500, 550, 600, 650};
  save_cube(cube, (dir / "scene.json").string());
  EXPECT_TRUE(fs::exists(dir / "scene.f32"));
  EXPECT_TRUE(fs::exists(dir / "scene.gt.i32"));
  const auto back = load_cube((dir / "scene.json").string());
  EXPECT_EQ(back.values, cube.values);
  EXPECT_EQ(back.gt, cube.gt);
  EXPECT_EQ(back.wavelengths, cube.wavelengths);
  EXPECT_EQ(back.classes, 3u);
}

TEST(Normalize, HandCases) {
  HsiCube c;
  c.bands = 2;
  c.height = 1;
  c.width = 2;
  c.classes = 1;
  c.values = {5, 5, 1, 3};
  c.gt = {1, 1};
  const auto n = normalize_cube(c);
  EXPECT_EQ(n.values, (std::vector<double>{0, 0, -1, 1}));
  EXPECT_EQ(n.gt, c.gt);
}

TEST(Normalize, Idempotent) {
  auto cube = synthesize_cube(SyntheticSpec{3, 5, 10, 10, 1.0, 0.5, 2});
  const auto once = normalize_cube(cube);
  const auto twice = normalize_cube(once);
  EXPECT_LT(test::max_abs_diff(once.values, twice.values), 1e-10);
}

TEST(Patches, CountsAndEmpty) {
  HsiCube c;
  c.bands = 2;
  c.height = c.width = 5;
  c.classes = 1;
  c.values.assign(50, 1.0);
  c.gt.assign(25, 1);
  auto ds = extract_patches(c, 3);
  EXPECT_EQ(ds.size(), 25u);
  EXPECT_EQ(ds.patches.shape(), (Shape{25, 1, 2, 3, 3}));
  c.gt.assign(25, 0);
  EXPECT_EQ(extract_patches(c, 3).size(), 0u);
  EXPECT_THROW(extract_patches(c, 4), ConfigError);
  EXPECT_THROW(extract_patches(c, 11), ConfigError);
  EXPECT_NO_THROW(extract_patches(c, 9));
}

TEST(Patches, MirrorReflectionAtCorner) {
  HsiCube c;
  c.bands = 1;
  c.height = 4;
  c.width = 4;
  c.classes = 1;
  for (std::size_t i = 0; i < 16; ++i) c.values.push_back(static_cast<double>(i));
  c.gt.assign(16, 1);
  const auto ds = extract_patches(c, 5);
  // Reflection without edge repeat: index -1 -> 1, -2 -> 2.
  const std::size_t rows[] = {2, 1, 0, 1, 2};
  const std::size_t cols[] = {2, 1, 0, 1, 2};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(ds.patches.at({0, 0, 0, i, j}), rows[i] * 4.0 + cols[j]);
  EXPECT_EQ(reflect_index(-1, 4), 1u);
  EXPECT_EQ(reflect_index(4, 4), 2u);
  EXPECT_EQ(reflect_index(-3, 1), 0u);
}

TEST(Patches, CentreMatchesCoords) {
  const auto cube = synthesize_cube(SyntheticSpec{3, 4, 12, 10, 1.0, 0.3, 5});
  const auto ds = extract_patches(cube, 5);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t b = 0; b < cube.bands; ++b)
      ASSERT_EQ(ds.patches.at({i, 0, b, 2, 2}), static_cast<float>(cube.value(b, ds.coords[i].row, ds.coords[i].col)));
}

TEST(Split, HandCounts) {
  auto ds = split(labels_only({40, 10, 3}), SplitSpec{});
  EXPECT_EQ(split_counts(ds, 1), (std::array<std::size_t, 3>{10, 10, 20}));
  EXPECT_EQ(split_counts(ds, 2), (std::array<std::size_t, 3>{2, 2, 6}));
  EXPECT_EQ(split_counts(ds, 3), (std::array<std::size_t, 3>{1, 1, 1}));
  EXPECT_THROW(split(labels_only({10, 2}), SplitSpec{}), DataError);
  EXPECT_THROW(split(labels_only({10}), SplitSpec{0.5, 0.5, 0.5, 0}), ConfigError);
}

TEST(Split, FractionsPartitionAndDeterminism) {
  Rng rng(1);
  std::vector<std::size_t> counts;
  for (int c = 0; c < 8; ++c) counts.push_back(3 + rng.below(200));
  const auto a = split(labels_only(counts), SplitSpec{0.25, 0.25, 0.5, 9});
  const auto b = split(labels_only(counts), SplitSpec{0.25, 0.25, 0.5, 9});
  const auto other = split(labels_only(counts), SplitSpec{0.25, 0.25, 0.5, 10});
  EXPECT_EQ(a.split, b.split);
  EXPECT_NE(a.split, other.split);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto n = split_counts(a, static_cast<std::int32_t>(c + 1));
    const double total = static_cast<double>(counts[c]);
    EXPECT_EQ(n[0] + n[1] + n[2], counts[c]);
    EXPECT_GE(n[0] / total, 0.25 - 1.0 / total);
    EXPECT_LE(n[0] / total, 0.25 + 1.0 / total);
    EXPECT_GE(n[0], 1u);
    EXPECT_GE(n[1], 1u);
    EXPECT_GE(n[2], 1u);
  }
  for (Split s : a.split) EXPECT_NE(s, Split::unassigned);
  EXPECT_EQ(parse_split("val"), Split::val);
  EXPECT_THROW(parse_split("dev"), ConfigError);
}

TEST(Synthetic, BalancedAreas) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    SyntheticSpec spec;
    spec.seed = seed;
    const auto cube = synthesize_cube(spec);
    std::vector<double> area(spec.classes, 0.0);
    for (auto g : cube.gt) area[static_cast<std::size_t>(g - 1)] += 1;
    const double equal = 64.0 * 64.0 / 4.0;
    for (double a : area) EXPECT_NEAR(a, equal, 0.1 * equal) << "seed " << seed;
  }
}

TEST(Synthetic, ImbalancedAreasFollowTargets) {
  SyntheticSpec spec;
  spec.classes = 5;
  spec.imbalance_ratio = 50.0;
  const auto targets = synthetic_class_targets(spec);
  EXPECT_NEAR(targets.front() / targets.back(), 50.0, 1e-9);
  const auto cube = synthesize_cube(spec);
  std::vector<double> area(5, 0.0);
  for (auto g : cube.gt) area[static_cast<std::size_t>(g - 1)] += 1;
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(area[c], targets[c], 0.1 * targets[c]) << "class " << c + 1;
}

TEST(Synthetic, NoiselessAndDeterministic) {
  SyntheticSpec spec{3, 8, 16, 16, 1.0, 0.0, 6};
  const auto cube = synthesize_cube(spec);
  std::vector<std::vector<double>> sig(3);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      auto& s = sig[static_cast<std::size_t>(cube.label(r, c) - 1)];
      std::vector<double> spectrum;
      for (std::size_t b = 0; b < 8; ++b) spectrum.push_back(cube.value(b, r, c));
      if (s.empty()) s = spectrum;
      EXPECT_EQ(spectrum, s);
    }
  const auto again = synthesize_cube(spec);
  EXPECT_EQ(again.values, cube.values);
  EXPECT_EQ(again.gt, cube.gt);
  spec.seed = 7;
  EXPECT_NE(synthesize_cube(spec).values, cube.values);
}

TEST(Synthetic, NearestSignatureOracleIsPerfect) {
  SyntheticSpec spec;
  spec.noise_std = 0.0;
  spec.seed = 3;
  const auto cube = synthesize_cube(spec);
  const std::size_t K = spec.classes, B = spec.bands, plane = spec.height * spec.width;
  // Signatures taken from the first pixel of each class.
  std::vector<std::vector<double>> sig(K);
  for (std::size_t i = 0; i < plane; ++i) {
    auto& s = sig[static_cast<std::size_t>(cube.gt[i] - 1)];
    if (s.empty())
      for (std::size_t b = 0; b < B; ++b) s.push_back(cube.values[b * plane + i]);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < K; ++k) {
      double d = 0;
      for (std::size_t b = 0; b < B; ++b) d += (cube.values[b * plane + i] - sig[k][b]) * (cube.values[b * plane + i] - sig[k][b]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += static_cast<std::int32_t>(best + 1) == cube.gt[i];
  }
  EXPECT_EQ(correct, plane);
}

TEST(Synthetic, Errors) {
  EXPECT_THROW(synthesize_cube(SyntheticSpec{1, 4, 8, 8, 1.0, 0.1, 0}), ConfigError);
  EXPECT_THROW(synthesize_cube(SyntheticSpec{3, 4, 8, 8, 0.5, 0.1, 0}), ConfigError);
  EXPECT_THROW(synthesize_cube(SyntheticSpec{3, 4, 2, 2, 1000.0, 0.1, 0}), ConfigError);
}

TEST(BandSubsample, CountsAndWavelengths) {
  auto cube = synthesize_cube(SyntheticSpec{2, 20, 4, 4, 1.0, 0.1, 1});
  for (std::size_t b = 0; b < 20; ++b) cube.wavelengths.push_back(400.0 + 10.0 * b);
  EXPECT_EQ(band_subsample(cube, 1).values, cube.values);
  const auto s = band_subsample(cube, 4);
  EXPECT_EQ(s.bands, 5u);
  EXPECT_EQ(s.wavelengths, (std::vector<double>{400, 440, 480, 520, 560}));
  for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(s.value(b, 2, 3), cube.value(4 * b, 2, 3));
  EXPECT_EQ(band_subsample(cube, 3).bands, 7u);
  EXPECT_THROW(band_subsample(cube, 0), ConfigError);
}
