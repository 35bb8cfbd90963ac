#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgfnet/pipeline.hpp"

#ifndef HGF_GIT_DESCRIBE
#define HGF_GIT_DESCRIBE ""
#endif

namespace {

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral classifier with 3D-conv stem and global frequency filter blocks"};
  app.require_subcommand(1);

  hgf::RunOptions opt;
  opt.git_describe = HGF_GIT_DESCRIBE;
  opt.log = &std::cerr;

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("--config", config_path, "Run config path")->required();
  train->add_flag("--overwrite", opt.overwrite, "Replace existing outputs");

  std::string checkpoint, data, split_name = "test", report;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on one split of a cube");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", data, "Cube header path")->required();
  eval->add_option("--split", split_name, "train|val|test");
  eval->add_option("--report", report, "Also write the metrics JSON here");

  hgf::MapOptions map_opt;
  auto* pmap = app.add_subcommand("predict-map", "Render a classification map as PPM plus an i32 raster");
  pmap->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  pmap->add_option("--data", data, "Cube header path")->required();
  pmap->add_flag("--full-scene", map_opt.full_scene, "Classify unlabeled pixels too");
  pmap->add_option("--out-dir", map_opt.out_dir, "Output directory (default: next to the checkpoint)");
  pmap->add_flag("--overwrite", map_opt.overwrite, "Replace existing outputs");

  std::size_t seeds = 3;
  auto* abl = app.add_subcommand("ablate", "Run the transform/loss ablation matrix");
  abl->add_option("--config", config_path, "Base run config path")->required();
  abl->add_option("--seeds", seeds, "Seeds per cell (median is reported)");
  abl->add_flag("--overwrite", opt.overwrite, "Replace existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("UsageError", e.what());
    return 64;
  }

  try {
    if (*train) {
      const hgf::RunConfig cfg = hgf::load_run_config(config_path);
      std::cout << hgf::cmd_train(cfg, opt).dump() << std::endl;
    } else if (*eval) {
      hgf::Split which;
      try {
        which = hgf::parse_split(split_name);
      } catch (const hgf::ConfigError& e) {
        throw hgf::UsageError(e.what());
      }
      const nlohmann::json metrics = hgf::cmd_eval(checkpoint, data, which, std::cout);
      if (!report.empty()) {
        std::ofstream os(report);
        if (!os) throw hgf::FormatError("cannot write " + report);
        os << metrics.dump(2) << "\n";
      }
      std::cout << metrics.dump() << std::endl;
    } else if (*pmap) {
      std::cout << hgf::cmd_predict_map(checkpoint, data, map_opt).dump() << std::endl;
    } else if (*abl) {
      const hgf::RunConfig cfg = hgf::load_run_config(config_path);
      const hgf::AblationResult r = hgf::cmd_ablate(cfg, seeds, opt);
      std::cout << hgf::format_ablation_table(r);
      std::cout << "ordering (median OA): " << r.detail["ordering_oa"].get<std::string>() << "\n";
      std::cout << r.detail.dump() << std::endl;
    }
  } catch (const hgf::Error& e) {
    report_error(e.kind_name(), e.what());
    return hgf::exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("InternalError", e.what());
    return 1;
  }
  return 0;
}
