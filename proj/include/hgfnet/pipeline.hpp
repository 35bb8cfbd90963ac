#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgfnet/data.hpp"
#include "hgfnet/image.hpp"
#include "hgfnet/metrics.hpp"
#include "hgfnet/model.hpp"
#include "hgfnet/training.hpp"

namespace hgf {

struct DataSection {
  std::string cube;  // header path; empty when synthetic
  std::optional<SyntheticSpec> synthetic;
  std::size_t patch = 9;
  std::size_t band_stride = 1;
  SplitSpec split;
};

struct TrainingSection {
  TrainConfig train;
  double gamma_base = 2.0;
  double gamma_scale = 2.0;
  double sfl_alpha = 1.0;
  double sfl_gamma = 2.0;
  std::string dtype = "f32";
};

struct RunConfig {
  DataSection data;
  ModelConfig model;
  TrainingSection training;
  std::string output_dir;
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

template <typename Fn>
void config_guard(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace detail

// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "data" && key != "model" && key != "training" && key != "output_dir") {
      throw ConfigError("unknown run config key '" + key + "'");
    }
  }
  RunConfig c;
  detail::config_guard("data", [&] {
    const auto& d = j.at("data");
    const bool has_cube = d.contains("cube"), has_syn = d.contains("synthetic");
    if (has_cube == has_syn) throw ConfigError("data needs exactly one of \"cube\" or \"synthetic\"");
    if (has_cube) c.data.cube = detail::resolve(base_dir, d.at("cube").get<std::string>());
    if (has_syn) c.data.synthetic = d.at("synthetic").get<SyntheticSpec>();
    c.data.patch = d.value("patch", c.data.patch);
    c.data.band_stride = d.value("band_stride", c.data.band_stride);
    c.data.split.seed = d.value("split_seed", c.data.split.seed);
    if (d.contains("split")) {
      const auto& s = d.at("split");
      c.data.split.train = s.value("train", c.data.split.train);
      c.data.split.val = s.value("val", c.data.split.val);
      c.data.split.test = s.value("test", c.data.split.test);
    }
  });
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  detail::config_guard("training", [&] {
    const nlohmann::json t = j.value("training", nlohmann::json::object());
    auto& tr = c.training;
    tr.train.epochs = t.value("epochs", tr.train.epochs);
    tr.train.batch_size = t.value("batch_size", tr.train.batch_size);
    tr.train.adam.lr = t.value("lr", tr.train.adam.lr);
    tr.train.adam.weight_decay = t.value("weight_decay", tr.train.adam.weight_decay);
    tr.train.loss = parse_loss_kind(t.value("loss", to_string(tr.train.loss)));
    tr.train.seed = t.value("seed", tr.train.seed);
    tr.gamma_base = t.value("gamma_base", tr.gamma_base);
    tr.gamma_scale = t.value("gamma_scale", tr.gamma_scale);
    tr.sfl_alpha = t.value("sfl_alpha", tr.sfl_alpha);
    tr.sfl_gamma = t.value("sfl_gamma", tr.sfl_gamma);
    tr.dtype = t.value("dtype", tr.dtype);
  });
  if (c.training.dtype != "f32" && c.training.dtype != "f64") throw ConfigError("training.dtype must be f32 or f64");
  if (c.training.train.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (c.training.train.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (!(c.training.train.adam.lr >= 0.0)) throw ConfigError("training.lr must be >= 0");
  if (!(c.training.train.adam.weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (c.data.band_stride < 1) throw ConfigError("data.band_stride must be >= 1");
  detail::config_guard("output_dir", [&] {
    c.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string("run")));
  });
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

inline nlohmann::json run_config_json(const RunConfig& c, bool with_output_dir = true) {
  nlohmann::json data{{"patch", c.data.patch},
                      {"band_stride", c.data.band_stride},
                      {"split_seed", c.data.split.seed},
                      {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}}};
  if (c.data.synthetic) {
    data["synthetic"] = *c.data.synthetic;
  } else {
    data["cube"] = c.data.cube;
  }
  const auto& t = c.training;
  nlohmann::json j{{"data", data},
                   {"model", c.model},
                   {"training",
                    {{"epochs", t.train.epochs},
                     {"batch_size", t.train.batch_size},
                     {"lr", t.train.adam.lr},
                     {"weight_decay", t.train.adam.weight_decay},
                     {"loss", to_string(t.train.loss)},
                     {"seed", t.train.seed},
                     {"gamma_base", t.gamma_base},
                     {"gamma_scale", t.gamma_scale},
                     {"sfl_alpha", t.sfl_alpha},
                     {"sfl_gamma", t.sfl_gamma},
                     {"dtype", t.dtype}}}};
  if (with_output_dir) j["output_dir"] = c.output_dir;
  return j;
}

// Subsampled then standardized, in that order, for training and eval alike.
inline HsiCube preprocess_cube(const HsiCube& raw, std::size_t band_stride) {
  return normalize_cube(band_subsample(raw, band_stride));
}

struct PreparedData {
  HsiCube raw;
  HsiCube cube;
  PatchDataset ds;
};

inline PreparedData prepare_data(const DataSection& d) {
  PreparedData p;
  p.raw = d.synthetic ? synthesize_cube(*d.synthetic) : load_cube(d.cube);
  p.cube = preprocess_cube(p.raw, d.band_stride);
  p.ds = split(extract_patches(p.cube, d.patch), d.split);
  return p;
}

// The model's data-dependent extents and seed come from the data and run.
inline ModelConfig resolve_model(const RunConfig& c, const HsiCube& cube) {
  ModelConfig m = c.model;
  m.bands = cube.bands;
  m.patch_h = m.patch_w = c.data.patch;
  m.num_classes = cube.classes;
  m.seed = c.training.train.seed;
  m.validate();
  return m;
}

inline std::vector<std::int32_t> labels_of(const PatchDataset& ds, std::span<const std::size_t> idx) {
  std::vector<std::int32_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

inline ClassStats loss_stats(const TrainingSection& t, std::span<const std::int32_t> train_labels,
                             std::size_t classes) {
  // Computed for every loss so an empty class surfaces before training.
  ClassStats adaptive = class_stats(train_labels, classes, t.gamma_base, t.gamma_scale);
  if (t.train.loss == LossKind::afl) return adaptive;
  ClassStats s = t.train.loss == LossKind::sfl ? uniform_stats(classes, t.sfl_alpha, t.sfl_gamma)
                                               : uniform_stats(classes, 1.0, 0.0);
  s.counts = adaptive.counts;
  return s;
}

struct Evaluation {
  ConfusionMatrix cm;
  Scores scores;
};

template <typename T>
Evaluation evaluate(HgfnetModel<T>& model, const PatchDataset& ds, Split which) {
  const auto idx = ds.indices(which);
  if (idx.empty()) throw DataError("evaluation split is empty");
  const auto pred = predict(model, ds, idx);
  Evaluation e;
  e.cm = confusion(labels_of(ds, idx), pred.labels, ds.classes);
  e.scores = scores(e.cm);
  return e;
}

template <typename T>
struct TrainedRun {
  HgfnetModel<T> model;
  FitResult fit;
  ClassStats stats;
  Evaluation val;
  Evaluation test;
  std::size_t parameters = 0;
};

template <typename T>
TrainedRun<T> train_model(const RunConfig& c, const PreparedData& data, std::ostream* log = nullptr) {
  TrainedRun<T> run{build<T>(resolve_model(c, data.cube)), {}, {}, {}, {}, 0};
  const auto train_idx = data.ds.indices(Split::train);
  const auto val_idx = data.ds.indices(Split::val);
  run.stats = loss_stats(c.training, labels_of(data.ds, train_idx), data.cube.classes);
  run.parameters = parameter_count(run.model);
  const std::size_t total = c.training.train.epochs;
  run.fit = fit(run.model, data.ds, train_idx, val_idx, run.stats, c.training.train, [&](const EpochRecord& r) {
    if (log) {
      *log << "epoch " << r.epoch << "/" << total << " train_loss=" << r.train_loss << " val_loss=" << r.val_loss
           << " val_oa=" << r.val_oa << " ms=" << static_cast<long long>(r.wall_ms) << "\n";
      log->flush();
    }
  });
  run.val = evaluate(run.model, data.ds, Split::val);
  run.test = evaluate(run.model, data.ds, Split::test);
  return run;
}

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + tmp.string());
    os << text;
    if (!os) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void refuse_clobber(const std::vector<std::filesystem::path>& outputs, bool overwrite) {
  if (overwrite) return;
  for (const auto& p : outputs) {
    if (std::filesystem::exists(p)) {
      throw UsageError("refusing to overwrite " + p.string() + " (pass --overwrite)");
    }
  }
}

inline std::string pct(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << 100.0 * fraction;
  return os.str();
}

}  // namespace detail

struct RunOptions {
  bool overwrite = false;
  std::string git_describe;
  std::ostream* log = nullptr;
};

inline const char* kCheckpointFile = "checkpoint.bin";
inline const char* kEpochsFile = "epochs.jsonl";
inline const char* kMetricsFile = "metrics.json";
inline const char* kMetadataFile = "metadata.json";
inline const char* kCubeFile = "cube.json";

inline nlohmann::json split_metrics(const Evaluation& e) { return metrics_json(e.scores, e.cm); }

template <typename T>
nlohmann::json train_impl(const RunConfig& c, const RunOptions& opt) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(c.output_dir);
  std::vector<fs::path> outputs{dir / kCheckpointFile, dir / kEpochsFile, dir / kMetricsFile, dir / kMetadataFile};
  if (c.data.synthetic) outputs.push_back(dir / kCubeFile);
  detail::refuse_clobber(outputs, opt.overwrite);
  const PreparedData data = prepare_data(c.data);
  fs::create_directories(dir);
  if (c.data.synthetic) save_cube(data.raw, (dir / kCubeFile).string());

  TrainedRun<T> run = train_model<T>(c, data, opt.log);
  RunConfig resolved = c;
  resolved.model = run.model.config;

  nlohmann::json meta{{"run", run_config_json(resolved, false)},
                      {"best_epoch", run.fit.best_epoch},
                      {"class_stats", stats_json(run.stats)}};
  save_checkpoint((dir / (std::string(kCheckpointFile) + ".tmp")).string(), run.model, meta);
  fs::rename(dir / (std::string(kCheckpointFile) + ".tmp"), dir / kCheckpointFile);

  std::string lines;
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& r : run.fit.epochs) {
    lines += to_json(r).dump() + "\n";
    epochs.push_back(to_json(r));
  }
  detail::write_text_atomic(dir / kEpochsFile, lines);

  nlohmann::json metrics{{"best_epoch", run.fit.best_epoch},
                         {"best_val_oa", run.fit.best_val_oa},
                         {"val", split_metrics(run.val)},
                         {"test", split_metrics(run.test)}};
  detail::write_text_atomic(dir / kMetricsFile, metrics.dump(2) + "\n");

  const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json metadata{{"config", run_config_json(resolved)},
                          {"git_describe", opt.git_describe},
                          {"seed", c.training.train.seed},
                          {"wall_ms", wall_ms},
                          {"parameter_count", run.parameters},
                          {"class_stats", stats_json(run.stats)},
                          {"split_sizes",
                           {{"train", data.ds.indices(Split::train).size()},
                            {"val", data.ds.indices(Split::val).size()},
                            {"test", data.ds.indices(Split::test).size()}}},
                          {"epochs", epochs},
                          {"metrics", metrics}};
  detail::write_text_atomic(dir / kMetadataFile, metadata.dump(2) + "\n");

  return {{"output_dir", dir.string()},
          {"best_epoch", run.fit.best_epoch},
          {"val_oa", run.val.scores.oa},
          {"test_oa", run.test.scores.oa},
          {"test_aa", run.test.scores.aa},
          {"test_kappa", run.test.scores.kappa},
          {"wall_ms", wall_ms}};
}

inline nlohmann::json cmd_train(const RunConfig& c, const RunOptions& opt = {}) {
  return c.training.dtype == "f64" ? train_impl<double>(c, opt) : train_impl<float>(c, opt);
}

// Per-class table (percentages, 4 decimals) followed by kappa, OA and AA.
inline std::string format_class_table(const Scores& s, const std::string& column = "HGFNet") {
  std::ostringstream os;
  os << std::left << std::setw(8) << "Class" << column << "\n";
  for (std::size_t i = 0; i < s.per_class.size(); ++i) {
    os << std::left << std::setw(8) << (i + 1) << (s.per_class[i] ? detail::pct(*s.per_class[i]) : "n/a") << "\n";
  }
  os << std::left << std::setw(8) << "Kappa" << detail::pct(s.kappa) << "\n";
  os << std::left << std::setw(8) << "OA" << detail::pct(s.oa) << "\n";
  os << std::left << std::setw(8) << "AA" << detail::pct(s.aa) << "\n";
  return os.str();
}

// Rebuilds the training-time patch set for `cube_path` using the data
// settings stored in the checkpoint.
inline PatchDataset checkpoint_dataset(const nlohmann::json& meta, const ModelConfig& model,
                                       const std::string& cube_path, HsiCube* cube_out = nullptr) {
  RunConfig run;
  detail::config_guard("checkpoint", [&] {
    const auto& d = meta.at("run").at("data");
    run.data.patch = d.at("patch").get<std::size_t>();
    run.data.band_stride = d.at("band_stride").get<std::size_t>();
    run.data.split.seed = d.at("split_seed").get<std::uint64_t>();
    run.data.split.train = d.at("split").at("train").get<double>();
    run.data.split.val = d.at("split").at("val").get<double>();
    run.data.split.test = d.at("split").at("test").get<double>();
  });
  HsiCube cube = preprocess_cube(load_cube(cube_path), run.data.band_stride);
  if (cube.bands != model.bands) {
    throw ConfigError("cube has " + std::to_string(cube.bands) + " bands after stride, model expects " +
                      std::to_string(model.bands));
  }
  if (cube.classes != model.num_classes) {
    throw ConfigError("cube declares " + std::to_string(cube.classes) + " classes, model has " +
                      std::to_string(model.num_classes));
  }
  if (run.data.patch != model.patch_h || run.data.patch != model.patch_w) {
    throw ConfigError("checkpoint patch settings are inconsistent");
  }
  PatchDataset ds = split(extract_patches(cube, run.data.patch), run.data.split);
  if (cube_out) *cube_out = std::move(cube);
  return ds;
}

template <typename T>
nlohmann::json eval_impl(const std::string& checkpoint, const std::string& cube_path, Split which,
                         std::ostream& out) {
  nlohmann::json meta;
  HgfnetModel<T> model = load_checkpoint<T>(checkpoint, &meta);
  const PatchDataset ds = checkpoint_dataset(meta, model.config, cube_path);
  const Evaluation e = evaluate(model, ds, which);
  out << format_class_table(e.scores);
  nlohmann::json report = split_metrics(e);
  report["split"] = which == Split::train ? "train" : which == Split::val ? "val" : "test";
  report["samples"] = e.cm.total();
  return report;
}

inline nlohmann::json cmd_eval(const std::string& checkpoint, const std::string& cube_path, Split which,
                               std::ostream& out) {
  const nlohmann::json meta = read_checkpoint_meta(checkpoint);
  return meta.value("dtype", std::string("f32")) == "f64" ? eval_impl<double>(checkpoint, cube_path, which, out)
                                                         : eval_impl<float>(checkpoint, cube_path, which, out);
}

struct MapOptions {
  bool full_scene = false;
  std::string out_dir;  // defaults to the checkpoint's directory
  bool overwrite = false;
};

inline const char* kRasterFile = "prediction.i32";
inline const char* kPpmFile = "prediction.ppm";

template <typename T>
nlohmann::json predict_map_impl(const std::string& checkpoint, const std::string& cube_path, const MapOptions& mo) {
  namespace fs = std::filesystem;
  const fs::path dir = mo.out_dir.empty() ? fs::absolute(checkpoint).parent_path() : fs::path(mo.out_dir);
  detail::refuse_clobber({dir / kRasterFile, dir / kPpmFile}, mo.overwrite);
  nlohmann::json meta;
  HgfnetModel<T> model = load_checkpoint<T>(checkpoint, &meta);
  HsiCube cube;
  checkpoint_dataset(meta, model.config, cube_path, &cube);
  const std::size_t patch = model.config.patch_h;

  std::vector<PixelCoord> coords;
  for (std::size_t r = 0; r < cube.height; ++r)
    for (std::size_t c = 0; c < cube.width; ++c)
      if (mo.full_scene || cube.label(r, c) > 0) coords.push_back({r, c});

  const FlushDenormals ftz;
  std::vector<std::int32_t> raster(cube.height * cube.width, 0);
  const std::size_t per = cube.bands * patch * patch;
  constexpr std::size_t kBatch = 64;
  std::vector<float> buf(kBatch * per);
  for (std::size_t start = 0; start < coords.size(); start += kBatch) {
    const std::size_t n = std::min(kBatch, coords.size() - start);
    for (std::size_t i = 0; i < n; ++i) copy_patch(cube, coords[start + i].row, coords[start + i].col, patch, buf.data() + i * per);
    Tensor<T> batch(Shape{n, 1, cube.bands, patch, patch}, std::vector<T>(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n * per)));
    Predictions pred;
    predict_batch(model, std::move(batch), pred);
    for (std::size_t i = 0; i < n; ++i) raster[coords[start + i].row * cube.width + coords[start + i].col] = pred.labels[i];
  }
  fs::create_directories(dir);
  detail::write_file(dir / kRasterFile, raster.data(), raster.size() * sizeof(std::int32_t));
  write_ppm((dir / kPpmFile).string(), render_labels(raster, cube.height, cube.width, cube.classes));
  return {{"raster", (dir / kRasterFile).string()},
          {"ppm", (dir / kPpmFile).string()},
          {"height", cube.height},
          {"width", cube.width},
          {"classified", coords.size()}};
}

inline nlohmann::json cmd_predict_map(const std::string& checkpoint, const std::string& cube_path,
                                      const MapOptions& mo = {}) {
  const nlohmann::json meta = read_checkpoint_meta(checkpoint);
  return meta.value("dtype", std::string("f32")) == "f64" ? predict_map_impl<double>(checkpoint, cube_path, mo)
                                                         : predict_map_impl<float>(checkpoint, cube_path, mo);
}

struct AblationCell {
  std::string name;
  TransformMode transform;
  LossKind loss;
};

// SpFT/SFT/SSFT use the configured loss; SFL and AFL fix SSFT.
inline std::vector<AblationCell> ablation_cells(LossKind base) {
  return {{"SpFT", TransformMode::spft, base},
          {"SFT", TransformMode::sft, base},
          {"SSFT", TransformMode::ssft, base},
          {"SFL", TransformMode::ssft, LossKind::sfl},
          {"AFL", TransformMode::ssft, LossKind::afl}};
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationResult {
  std::vector<std::string> cells;
  std::vector<double> kappa, oa, aa;
  nlohmann::json detail;
};

inline std::string format_ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "Metric";
  for (const char* n : {"MHSA", "Wavelets", "GFNet"}) os << std::setw(10) << n;
  for (const auto& n : r.cells) os << std::setw(10) << n;
  os << "\n";
  auto row = [&](const char* name, const std::vector<double>& v) {
    os << std::left << std::setw(8) << name;
    for (int i = 0; i < 3; ++i) os << std::setw(10) << "n/a";
    for (double x : v) os << std::setw(10) << detail::pct(x);
    os << "\n";
  };
  row("Kappa", r.kappa);
  row("OA", r.oa);
  row("AA", r.aa);
  return os.str();
}

inline std::size_t cell_index(const AblationResult& r, const std::string& name) {
  return static_cast<std::size_t>(std::find(r.cells.begin(), r.cells.end(), name) - r.cells.begin());
}

// "SSFT > SFT > SpFT" style ranking by median OA (stable on ties).
inline std::string transform_ordering(const AblationResult& r) {
  std::vector<std::string> names{"SSFT", "SFT", "SpFT"};
  std::stable_sort(names.begin(), names.end(), [&](const std::string& a, const std::string& b) {
    return r.oa[cell_index(r, a)] > r.oa[cell_index(r, b)];
  });
  std::string out = names[0];
  for (std::size_t i = 1; i < names.size(); ++i) {
    out += r.oa[cell_index(r, names[i - 1])] == r.oa[cell_index(r, names[i])] ? " = " : " > ";
    out += names[i];
  }
  return out;
}

template <typename T>
AblationResult ablate_impl(const RunConfig& base, std::size_t seeds, const RunOptions& opt) {
  if (seeds < 1) throw ConfigError("ablation needs at least one seed");
  const PreparedData data = prepare_data(base.data);
  const auto cells = ablation_cells(base.training.train.loss);
  AblationResult result;
  result.detail = nlohmann::json{{"seeds", seeds}, {"base", run_config_json(base, false)}, {"cells", nlohmann::json::object()}};
  std::vector<std::pair<std::pair<TransformMode, LossKind>, std::size_t>> done;
  for (const auto& cell : cells) {
    result.cells.push_back(cell.name);
    const auto key = std::make_pair(cell.transform, cell.loss);
    const auto hit = std::find_if(done.begin(), done.end(), [&](const auto& d) { return d.first == key; });
    if (hit != done.end()) {
      const std::size_t src = hit->second;
      result.kappa.push_back(result.kappa[src]);
      result.oa.push_back(result.oa[src]);
      result.aa.push_back(result.aa[src]);
      nlohmann::json shared = result.detail["cells"][result.cells[src]];
      shared["same_as"] = result.cells[src];
      result.detail["cells"][cell.name] = shared;
      continue;
    }
    std::vector<double> k, o, a;
    nlohmann::json runs = nlohmann::json::array();
    nlohmann::json stats;
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig c = base;
      c.model.transform_mode = cell.transform;
      c.training.train.loss = cell.loss;
      c.training.train.seed = base.training.train.seed + s;
      if (opt.log) *opt.log << "ablation " << cell.name << " seed " << c.training.train.seed << "\n";
      TrainedRun<T> run = train_model<T>(c, data, opt.log);
      k.push_back(run.test.scores.kappa);
      o.push_back(run.test.scores.oa);
      a.push_back(run.test.scores.aa);
      stats = stats_json(run.stats);
      runs.push_back({{"seed", c.training.train.seed},
                      {"best_epoch", run.fit.best_epoch},
                      {"kappa", run.test.scores.kappa},
                      {"oa", run.test.scores.oa},
                      {"aa", run.test.scores.aa}});
    }
    result.kappa.push_back(median(k));
    result.oa.push_back(median(o));
    result.aa.push_back(median(a));
    result.detail["cells"][cell.name] = {{"transform", to_string(cell.transform)},
                                         {"loss", to_string(cell.loss)},
                                         {"class_stats", stats},
                                         {"runs", runs},
                                         {"median", {{"kappa", result.kappa.back()}, {"oa", result.oa.back()}, {"aa", result.aa.back()}}}};
    done.emplace_back(key, result.cells.size() - 1);
  }
  result.detail["ordering_oa"] = transform_ordering(result);
  return result;
}

inline const char* kAblationFile = "ablation.json";

inline AblationResult cmd_ablate(const RunConfig& base, std::size_t seeds, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  const fs::path dir(base.output_dir);
  detail::refuse_clobber({dir / kAblationFile}, opt.overwrite);
  AblationResult r = base.training.dtype == "f64" ? ablate_impl<double>(base, seeds, opt)
                                                  : ablate_impl<float>(base, seeds, opt);
  fs::create_directories(dir);
  nlohmann::json out = r.detail;
  out["git_describe"] = opt.git_describe;
  detail::write_text_atomic(dir / kAblationFile, out.dump(2) + "\n");
  return r;
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::data:
    case ErrorKind::format: return 2;
    case ErrorKind::config: return 3;
    case ErrorKind::usage: return 64;
    default: return 1;
  }
}

}  // namespace hgf
