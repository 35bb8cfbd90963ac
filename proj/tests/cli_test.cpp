#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace hgf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Result run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("HGF_THREADS=1 '") + HGF_CLI_PATH + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

nlohmann::json tiny_run_config(const std::string& output_dir) {
  return {{"data",
           {{"synthetic",
             {{"classes", 3}, {"bands", 6}, {"height", 12}, {"width", 12}, {"imbalance_ratio", 1.0}, {"noise_std", 0.1},
              {"seed", 5}}},
            {"patch", 3}}},
          {"model", {{"stem_channels", {2, 2, 2}}, {"num_blocks", 1}, {"head_widths", {16}}}},
          {"training", {{"epochs", 8}, {"batch_size", 16}, {"lr", 3e-3}, {"seed", 1}}},
          {"output_dir", output_dir}};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  os << j.dump(2);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("hgf_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    write_json(root_ / "run.json", tiny_run_config("run"));
    train_ = run_cli("train --config " + q(root_ / "run.json"), root_);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  static Result train_;
};

fs::path Cli::root_;
Result Cli::train_;

}  // namespace

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(train_.code, 0) << train_.err;
  const fs::path run = root_ / "run";
  for (const char* f : {"checkpoint.bin", "epochs.jsonl", "metrics.json", "metadata.json", "cube.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto summary = nlohmann::json::parse(train_.out);
  EXPECT_TRUE(summary.contains("test_oa"));

  std::ifstream lines(run / "epochs.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto e = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "train_loss", "val_loss", "val_oa", "wall_ms"}) EXPECT_TRUE(e.contains(key));
    ++n;
  }
  EXPECT_EQ(n, 8u);

  const auto meta = nlohmann::json::parse(slurp(run / "metadata.json"));
  for (const char* key : {"config", "git_describe", "seed", "wall_ms", "parameter_count", "epochs", "metrics"})
    EXPECT_TRUE(meta.contains(key)) << key;
  EXPECT_EQ(meta["config"]["training"]["weight_decay"], 1e-6);
  EXPECT_EQ(meta["config"]["model"]["bands"], 6);

  const auto metrics = nlohmann::json::parse(slurp(run / "metrics.json"));
  EXPECT_EQ(metrics["test"]["per_class"].size(), 3u);
  for (const char* key : {"oa", "aa", "kappa", "confusion"}) EXPECT_TRUE(metrics["test"].contains(key));
}

TEST_F(Cli, RefusesToClobber) {
  ASSERT_EQ(train_.code, 0);
  const auto before = slurp(root_ / "run" / "checkpoint.bin");
  const auto r = run_cli("train --config " + q(root_ / "run.json"), root_);
  EXPECT_EQ(r.code, 64);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "UsageError");
  EXPECT_EQ(slurp(root_ / "run" / "checkpoint.bin"), before);
}

TEST_F(Cli, OverwriteReproducesRun) {
  ASSERT_EQ(train_.code, 0);
  const auto ckpt = slurp(root_ / "run" / "checkpoint.bin");
  const auto metrics = slurp(root_ / "run" / "metrics.json");
  const auto r = run_cli("train --overwrite --config " + q(root_ / "run.json"), root_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(root_ / "run" / "checkpoint.bin"), ckpt);
  EXPECT_EQ(slurp(root_ / "run" / "metrics.json"), metrics);
}

TEST_F(Cli, EvalReportsTableAndJson) {
  ASSERT_EQ(train_.code, 0);
  const auto ckpt = q(root_ / "run" / "checkpoint.bin"), cube = q(root_ / "run" / "cube.json");
  const auto val = run_cli("eval --checkpoint " + ckpt + " --data " + cube + " --split val --report " +
                               q(root_ / "val.json"),
                           root_);
  ASSERT_EQ(val.code, 0) << val.err;
  EXPECT_NE(val.out.find("Class"), std::string::npos);
  EXPECT_NE(val.out.find("Kappa"), std::string::npos);
  EXPECT_NE(val.out.find("OA"), std::string::npos);
  EXPECT_NE(val.out.find("AA"), std::string::npos);
  const auto val_report = nlohmann::json::parse(slurp(root_ / "val.json"));
  EXPECT_EQ(val_report["per_class"].size(), 3u);
  EXPECT_EQ(val_report["split"], "val");

  const auto train = run_cli("eval --checkpoint " + ckpt + " --data " + cube + " --split train --report " +
                                 q(root_ / "train.json"),
                             root_);
  ASSERT_EQ(train.code, 0) << train.err;
  const auto train_report = nlohmann::json::parse(slurp(root_ / "train.json"));
  EXPECT_GE(train_report["oa"].get<double>(), val_report["oa"].get<double>() - 0.05);
  // Eval of the stored split matches the training-time metrics.
  const auto metrics = nlohmann::json::parse(slurp(root_ / "run" / "metrics.json"));
  EXPECT_EQ(val_report["oa"], metrics["val"]["oa"]);
}

TEST_F(Cli, ExitCodes) {
  ASSERT_EQ(train_.code, 0);
  const auto ckpt = q(root_ / "run" / "checkpoint.bin"), cube = q(root_ / "run" / "cube.json");
  auto r = run_cli("eval --checkpoint " + ckpt + " --data " + cube + " --split dev", root_);
  EXPECT_EQ(r.code, 64);
  r = run_cli("frobnicate", root_);
  EXPECT_EQ(r.code, 64);
  r = run_cli("eval --checkpoint " + ckpt, root_);
  EXPECT_EQ(r.code, 64);

  r = run_cli("eval --checkpoint " + ckpt + " --data " + q(root_ / "nope.json"), root_);
  EXPECT_EQ(r.code, 2);
  const auto err = nlohmann::json::parse(r.err);
  EXPECT_EQ(err["error"], "FormatError");

  auto missing = tiny_run_config("missing_run");
  missing["data"].erase("synthetic");
  missing["data"]["cube"] = "absent.json";
  write_json(root_ / "missing.json", missing);
  r = run_cli("train --config " + q(root_ / "missing.json"), root_);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "FormatError");

  auto bad = tiny_run_config("bad_run");
  bad["training"]["loss"] = "hinge";
  write_json(root_ / "bad.json", bad);
  r = run_cli("train --config " + q(root_ / "bad.json"), root_);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "ConfigError");

  // A cube whose band count disagrees with the checkpoint.
  auto other = synthesize_cube(SyntheticSpec{3, 5, 12, 12, 1.0, 0.1, 2});
  save_cube(other, (root_ / "other.json").string());
  r = run_cli("eval --checkpoint " + ckpt + " --data " + q(root_ / "other.json"), root_);
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, PredictMapWritesPaletteImage) {
  ASSERT_EQ(train_.code, 0);
  // Unlabel a block of pixels so the map has black regions.
  auto cube = load_cube((root_ / "run" / "cube.json").string());
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) cube.gt[r * cube.width + c] = 0;
  save_cube(cube, (root_ / "holes.json").string());
  const auto ckpt = q(root_ / "run" / "checkpoint.bin");

  auto r = run_cli("predict-map --checkpoint " + ckpt + " --data " + q(root_ / "holes.json") + " --out-dir " +
                       q(root_ / "map"),
                   root_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto img = read_ppm((root_ / "map" / "prediction.ppm").string());
  EXPECT_EQ(img.width, 12u);
  EXPECT_EQ(img.height, 12u);
  EXPECT_EQ(slurp(root_ / "map" / "prediction.ppm").rfind("P6\n12 12\n255\n", 0), 0u);
  EXPECT_EQ(img.at(0, 0), (Rgb{0, 0, 0}));
  EXPECT_NE(img.at(8, 8), (Rgb{0, 0, 0}));
  const auto raster = slurp(root_ / "map" / "prediction.i32");
  EXPECT_EQ(raster.size(), 12u * 12u * 4u);
  std::int32_t first;
  std::memcpy(&first, raster.data(), 4);
  EXPECT_EQ(first, 0);

  r = run_cli("predict-map --checkpoint " + ckpt + " --data " + q(root_ / "holes.json") + " --out-dir " +
                  q(root_ / "map"),
              root_);
  EXPECT_EQ(r.code, 64);
  r = run_cli("predict-map --full-scene --overwrite --checkpoint " + ckpt + " --data " + q(root_ / "holes.json") +
                  " --out-dir " + q(root_ / "map"),
              root_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto full = read_ppm((root_ / "map" / "prediction.ppm").string());
  for (std::size_t i = 0; i < 144; ++i) EXPECT_NE(full.at(i / 12, i % 12), (Rgb{0, 0, 0}));
}

TEST(Palette, GroundTruthRenderingHasKPlusOneColours) {
  for (std::size_t K : {2u, 4u, 7u, 16u}) {
    auto cube = synthesize_cube(SyntheticSpec{K, 3, 24, 24, 1.0, 0.1, 3});
    cube.gt[0] = 0;
    const auto img = render_labels(cube.gt, 24, 24, K);
    std::set<Rgb> colours;
    for (std::size_t i = 0; i < 24 * 24; ++i) colours.insert(img.at(i / 24, i % 24));
    EXPECT_EQ(colours.size(), K + 1);
    EXPECT_EQ(class_color(0, K), (Rgb{0, 0, 0}));
    EXPECT_EQ(class_color(1, K), (Rgb{255, 0, 0}));
  }
}

TEST(Palette, PpmRoundTrip) {
  const fs::path p = fs::temp_directory_path() / ("hgf_ppm_" + std::to_string(::getpid()) + ".ppm");
  std::vector<std::int32_t> raster{0, 1, 2, 3, 3, 2};
  const auto img = render_labels(raster, 2, 3, 3);
  write_ppm(p.string(), img);
  const auto back = read_ppm(p.string());
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  fs::remove(p);
}

TEST(Ablate, EmitsFiveCellTable) {
  const fs::path root = fs::temp_directory_path() / ("hgf_ablate_test_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  auto cfg = tiny_run_config("abl");
  cfg["training"]["epochs"] = 2;
  write_json(root / "run.json", cfg);
  const auto r = run_cli("ablate --seeds 1 --config " + q(root / "run.json"), root);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* col : {"SpFT", "SFT", "SSFT", "SFL", "AFL", "Kappa", "OA", "AA", "n/a"})
    EXPECT_NE(r.out.find(col), std::string::npos) << col;
  const auto j = nlohmann::json::parse(slurp(root / "abl" / "ablation.json"));
  EXPECT_EQ(j["seeds"], 1);
  EXPECT_EQ(j["cells"].size(), 5u);
  for (const auto& [name, cell] : j["cells"].items()) {
    for (const char* m : {"kappa", "oa", "aa"}) {
      const double v = cell["median"][m].get<double>();
      EXPECT_GE(v, m == std::string("kappa") ? -1.0 : 0.0) << name;
      EXPECT_LE(v, 1.0) << name;
    }
  }
  // AFL weights follow class frequencies; SFL weights are uniform.
  EXPECT_EQ(j["cells"]["SFL"]["loss"], "sfl");
  EXPECT_EQ(j["cells"]["AFL"]["loss"], "afl");
  for (double a : j["cells"]["SFL"]["class_stats"]["alpha"].get<std::vector<double>>()) EXPECT_EQ(a, 1.0);
  EXPECT_TRUE(j.contains("ordering_oa"));
  fs::remove_all(root);
}
