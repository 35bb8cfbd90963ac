#include <filesystem>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace hgf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.bands = 4;
  c.patch_h = 5;
  c.patch_w = 5;
  c.stem_channels = {2, 2, 2};
  c.num_blocks = 1;
  c.head_widths = {8};
  c.num_classes = 3;
  c.seed = 11;
  return c;
}

template <typename T>
Tensor<T> run_eval(HgfnetModel<T>& m, const Tensor<T>& x) {
  Tape<T> tape(false);
  return forward(m, tape.constant(x), ForwardContext{}).value();
}

std::vector<double> flatten_params(HgfnetModel<double>& m) {
  std::vector<double> all;
  for (auto* p : m.parameters()) all.insert(all.end(), p->value.storage().begin(), p->value.storage().end());
  return all;
}

}  // namespace

TEST(Build, HeadExtentFollowsFeatureMap) {
  ModelConfig c;
  c.bands = 20;
  c.num_classes = 5;
  EXPECT_EQ(c.flat_features(), 51840u);
  const auto m = build<float>(c);
  EXPECT_EQ(m.head.front().in_features(), 51840u);
  EXPECT_EQ(m.head.back().out_features(), 5u);
  EXPECT_EQ(m.stem.size(), 3u);
  EXPECT_EQ(m.blocks.size(), 4u);
}

TEST(Build, SeedDeterminesParameters) {
  auto c = tiny_config();
  c.seed = 7;
  auto a = build<double>(c), b = build<double>(c);
  EXPECT_EQ(flatten_params(a), flatten_params(b));
  c.seed = 8;
  auto d = build<double>(c);
  EXPECT_NE(flatten_params(a), flatten_params(d));
}

TEST(Build, InitializationRanges) {
  auto m = build<double>(tiny_config());
  const auto& w = m.head.front().weight.value;
  const double s = std::sqrt(6.0 / (200 + 8));
  for (double v : w.storage()) EXPECT_LE(std::abs(v), s);
  for (double v : m.head.front().bias.value.storage()) EXPECT_EQ(v, 0.0);
  for (double v : m.blocks[0].mask.re.value.storage()) EXPECT_EQ(v, 1.0);
}

TEST(Build, InvalidConfigs) {
  auto bad = [](auto edit) {
    auto c = tiny_config();
    edit(c);
    EXPECT_THROW(build<double>(c), ConfigError);
  };
  bad([](ModelConfig& c) { c.num_blocks = 0; });
  bad([](ModelConfig& c) { c.head_widths.clear(); });
  bad([](ModelConfig& c) { c.num_classes = 1; });
  bad([](ModelConfig& c) { c.stem_kernel = 4; });
  bad([](ModelConfig& c) { c.bands = 0; });
  bad([](ModelConfig& c) { c.dropout = 1.0; });
  bad([](ModelConfig& c) { c.ffn_ratio = 0.5; });
}

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config();
  c.transform_mode = TransformMode::spft;
  c.mask_mode = MaskMode::binary;
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW((nlohmann::json{{"transform_mode", "nope"}}.get<ModelConfig>()), ConfigError);
  EXPECT_THROW((nlohmann::json{{"bands", "x"}}.get<ModelConfig>()), ConfigError);
}

TEST(Forward, ShapeRowSumsAndDeterminism) {
  Rng rng(1);
  for (auto mode : {TransformMode::sft, TransformMode::spft, TransformMode::ssft}) {
    auto c = tiny_config();
    c.transform_mode = mode;
    auto m = build<double>(c);
    const auto x = test::randn({3, 1, 4, 5, 5}, rng);
    const auto y = run_eval(m, x);
    ASSERT_EQ(y.shape(), (Shape{3, 3}));
    for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(y[3 * r] + y[3 * r + 1] + y[3 * r + 2], 1.0, 1e-9);
    EXPECT_EQ(run_eval(m, x).storage(), y.storage());
  }
  auto m = build<double>(tiny_config());
  EXPECT_THROW(run_eval(m, Tensor<double>(Shape{1, 1, 4, 5, 4})), ShapeError);
  EXPECT_THROW(run_eval(m, Tensor<double>(Shape{1, 2, 4, 5, 5})), ShapeError);
}

TEST(Forward, BatchPermutationPermutesOutputs) {
  Rng rng(2);
  auto m = build<double>(tiny_config());
  const auto x = test::randn({4, 1, 4, 5, 5}, rng);
  const std::size_t per = 100;
  const std::size_t perm[] = {2, 0, 3, 1};
  Tensor<double> xp(x.shape());
  for (std::size_t i = 0; i < 4; ++i)
    std::copy_n(x.storage().begin() + perm[i] * per, per, xp.storage().begin() + i * per);
  const auto y = run_eval(m, x), yp = run_eval(m, xp);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(yp[i * 3 + k], y[perm[i] * 3 + k], 1e-14);
}

TEST(Forward, TrainModeDropoutIsSeeded) {
  Rng rng(3);
  auto c = tiny_config();
  c.dropout = 0.5;
  auto m = build<double>(c);
  const auto x = test::randn({2, 1, 4, 5, 5}, rng);
  auto run = [&](std::uint64_t step) {
    Tape<double> tape(false);
    return forward(m, tape.constant(x), ForwardContext{Mode::train, 9, step}).value().storage();
  };
  EXPECT_EQ(run(1), run(1));
  EXPECT_NE(run(1), run(2));
}

TEST(Forward, EndToEndGradientCheck) {
  Rng rng(4);
  auto c = tiny_config();
  c.dropout = 0.2;
  auto m = build<double>(c);
  // Non-identity masks and nonzero biases exercise every path.
  for (auto* p : m.parameters())
    if (p->name.find("bias") != std::string::npos || p->name.find("mask") != std::string::npos)
      for (auto& v : p->value.storage()) v += 0.3 * rng.normal();
  const auto x = test::randn({2, 1, 4, 5, 5}, rng);
  const auto w = test::signed_weights({2, 3}, rng);
  auto loss = [&](Tape<double>& t) {
    auto probs = forward(m, t.constant(x), ForwardContext{Mode::train, 5, 3});
    return test::project(log(probs), w);
  };
  // Every scalar of the first conv weight, a strided subset elsewhere.
  auto r = test::grad_check({&m.stem[0].weight}, loss);
  EXPECT_TRUE(r.ok()) << r.worst << " at " << r.where;
  auto params = m.parameters();
  r = test::grad_check(params, loss, 6);
  EXPECT_TRUE(r.ok()) << r.worst << " at " << r.where;
}

TEST(ParameterCount, HandTotals) {
  Rng rng(5);
  EXPECT_EQ(parameter_count(detail::make_linear<double>("l", 3, 2, rng)), 8u);
  auto m = build<double>(tiny_config());
  // stem 56 + 110 + 110, block mask 2*200 + ffn 12 + 10, head 1608 + 27
  EXPECT_EQ(parameter_count(m), 276u + 422u + 1635u);
  auto wide = tiny_config();
  wide.head_widths = {16};
  auto mw = build<double>(wide);
  EXPECT_GT(parameter_count(mw), parameter_count(m));
  auto bin = tiny_config();
  bin.mask_mode = MaskMode::binary;
  auto mb = build<double>(bin);
  EXPECT_EQ(parameter_count(mb), parameter_count(m) - 400u);
}

TEST(Precision, FloatAndDoubleAgree) {
  Rng rng(6);
  auto md = build<double>(tiny_config());
  auto mf = build<float>(tiny_config());
  const auto x = test::randn({3, 1, 4, 5, 5}, rng);
  const auto yd = run_eval(md, x);
  const auto yf = run_eval(mf, x.cast<float>());
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-3);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "hgf_model_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.bin").string();
  Rng rng(7);
  auto m = build<double>(tiny_config());
  for (auto* p : m.parameters())
    for (auto& v : p->value.storage()) v = rng.normal();
  save_checkpoint(path, m, nlohmann::json{{"note", "x"}});
  nlohmann::json meta;
  auto back = load_checkpoint<double>(path, &meta);
  EXPECT_EQ(flatten_params(back), flatten_params(m));
  EXPECT_EQ(meta["note"], "x");
  EXPECT_EQ(meta["model"].get<ModelConfig>().num_classes, 3u);
  EXPECT_THROW(load_checkpoint<float>(path), FormatError);

  // Truncation and garbage are rejected.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  EXPECT_THROW(load_checkpoint<double>(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint<double>(path), FormatError);
  EXPECT_THROW(load_checkpoint<double>((dir / "missing.bin").string()), FormatError);
  std::filesystem::remove_all(dir);
}
