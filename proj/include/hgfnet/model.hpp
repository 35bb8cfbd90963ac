#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgfnet/autodiff.hpp"
#include "hgfnet/gfnet.hpp"
#include "hgfnet/layers.hpp"
#include "hgfnet/random.hpp"

namespace hgf {

enum class HeadActivation { relu, gelu };

struct ModelConfig {
  std::size_t bands = 0;
  std::size_t patch_h = 9;
  std::size_t patch_w = 9;
  std::vector<std::size_t> stem_channels{8, 16, 32};
  std::size_t stem_kernel = 3;
  std::size_t num_blocks = 4;
  TransformMode transform_mode = TransformMode::ssft;
  MaskMode mask_mode = MaskMode::learnable;
  double mask_keep = 0.5;  // binary low-pass box fraction per transformed axis
  double ffn_ratio = 2.0;
  std::vector<std::size_t> head_widths{256, 128};
  HeadActivation head_activation = HeadActivation::relu;
  double dropout = 0.1;
  double norm_eps = 1e-5;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  std::size_t features() const { return stem_channels.empty() ? 0 : stem_channels.back(); }
  std::size_t ffn_hidden() const {
    return static_cast<std::size_t>(std::llround(ffn_ratio * static_cast<double>(features())));
  }
  std::size_t flat_features() const { return features() * bands * patch_h * patch_w; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (bands == 0 || patch_h == 0 || patch_w == 0) fail("bands and patch extents must be positive");
    if (stem_channels.empty()) fail("stem_channels must name at least one layer");
    for (std::size_t c : stem_channels)
      if (c == 0) fail("stem channel counts must be positive");
    if (stem_kernel == 0 || stem_kernel % 2 == 0) fail("stem_kernel must be odd");
    if (num_blocks < 1) fail("num_blocks must be >= 1");
    if (head_widths.empty()) fail("head_widths must be nonempty");
    for (std::size_t w : head_widths)
      if (w == 0) fail("head widths must be positive");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (!(ffn_ratio >= 1.0)) fail("ffn_ratio must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(mask_keep > 0.0 && mask_keep <= 1.0)) fail("mask_keep must lie in (0, 1]");
    if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"bands", c.bands},
                     {"patch_h", c.patch_h},
                     {"patch_w", c.patch_w},
                     {"stem_channels", c.stem_channels},
                     {"stem_kernel", c.stem_kernel},
                     {"num_blocks", c.num_blocks},
                     {"transform_mode", to_string(c.transform_mode)},
                     {"mask_mode", to_string(c.mask_mode)},
                     {"mask_keep", c.mask_keep},
                     {"ffn_ratio", c.ffn_ratio},
                     {"head_widths", c.head_widths},
                     {"head_activation", c.head_activation == HeadActivation::relu ? "relu" : "gelu"},
                     {"dropout", c.dropout},
                     {"norm_eps", c.norm_eps},
                     {"num_classes", c.num_classes},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  try {
    c.bands = j.value("bands", d.bands);
    c.patch_h = j.value("patch_h", d.patch_h);
    c.patch_w = j.value("patch_w", d.patch_w);
    c.stem_channels = j.value("stem_channels", d.stem_channels);
    c.stem_kernel = j.value("stem_kernel", d.stem_kernel);
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.transform_mode = parse_transform_mode(j.value("transform_mode", to_string(d.transform_mode)));
    c.mask_mode = parse_mask_mode(j.value("mask_mode", to_string(d.mask_mode)));
    c.mask_keep = j.value("mask_keep", d.mask_keep);
    c.ffn_ratio = j.value("ffn_ratio", d.ffn_ratio);
    c.head_widths = j.value("head_widths", d.head_widths);
    const std::string act = j.value("head_activation", std::string("relu"));
    if (act == "relu") {
      c.head_activation = HeadActivation::relu;
    } else if (act == "gelu") {
      c.head_activation = HeadActivation::gelu;
    } else {
      throw ConfigError("unknown head_activation '" + act + "'");
    }
    c.dropout = j.value("dropout", d.dropout);
    c.norm_eps = j.value("norm_eps", d.norm_eps);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

template <typename T>
struct HgfnetModel {
  ModelConfig config;
  std::vector<Conv3dLayer<T>> stem;
  std::vector<GfnetBlock<T>> blocks;
  std::vector<LinearLayer<T>> head;  // hidden layers then the classifier
  std::vector<DropoutState> head_dropout;

  // Trainable parameters in a fixed order (checkpoint and optimizer order).
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& c : stem) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    }
    for (auto& b : blocks) {
      if (b.mask.mode == MaskMode::learnable) {
        out.push_back(&b.mask.re);
        out.push_back(&b.mask.im);
      }
      out.push_back(&b.ffn_in.weight);
      out.push_back(&b.ffn_in.bias);
      out.push_back(&b.ffn_out.weight);
      out.push_back(&b.ffn_out.bias);
    }
    for (auto& l : head) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
};

namespace detail {

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-s, s));
  return t;
}

template <typename T>
LinearLayer<T> make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  LinearLayer<T> l;
  l.weight = Parameter<T>(name + ".weight", glorot<T>(Shape{out, in}, in, out, rng));
  l.bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{out}));
  return l;
}

}  // namespace detail

// Glorot-uniform weights from the seeded stream, zero biases, identity or
// low-pass masks. Same config (including seed) gives bit-identical weights.
template <typename T>
HgfnetModel<T> build(const ModelConfig& config) {
  config.validate();
  HgfnetModel<T> model;
  model.config = config;
  Rng rng(mix_seed(config.seed, 0x48474621));
  const std::size_t k = config.stem_kernel;
  const std::size_t k3 = k * k * k;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < config.stem_channels.size(); ++i) {
    const std::size_t f = config.stem_channels[i];
    Conv3dLayer<T> c;
    const std::string name = "stem." + std::to_string(i);
    c.weight = Parameter<T>(name + ".weight", detail::glorot<T>(Shape{f, cin, k, k, k}, cin * k3, f * k3, rng));
    c.bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{f}));
    model.stem.push_back(std::move(c));
    cin = f;
  }
  const std::size_t d = config.features();
  const std::size_t dh = config.ffn_hidden();
  const Shape map_shape{d, config.bands, config.patch_h, config.patch_w};
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    GfnetBlock<T> b;
    const std::string name = "block." + std::to_string(i);
    b.mask = mask_init<T>(map_shape, config.mask_mode, config.transform_mode, config.mask_keep, name + ".mask");
    b.ffn_in = detail::make_linear<T>(name + ".ffn_in", d, dh, rng);
    b.ffn_out = detail::make_linear<T>(name + ".ffn_out", dh, d, rng);
    b.dropout = DropoutState{config.dropout, 100 + i};
    b.mode = config.transform_mode;
    b.eps = static_cast<T>(config.norm_eps);
    model.blocks.push_back(std::move(b));
  }
  std::size_t in = config.flat_features();
  for (std::size_t j = 0; j < config.head_widths.size(); ++j) {
    model.head.push_back(detail::make_linear<T>("head." + std::to_string(j), in, config.head_widths[j], rng));
    model.head_dropout.push_back(DropoutState{config.dropout, 200 + j});
    in = config.head_widths[j];
  }
  model.head.push_back(detail::make_linear<T>("head." + std::to_string(config.head_widths.size()), in,
                                              config.num_classes, rng));
  return model;
}

// Class probabilities [B, K] for x [B, 1, bands, patch_h, patch_w].
template <typename T>
Var<T> forward(HgfnetModel<T>& model, Var<T> x, const ForwardContext& ctx) {
  const ModelConfig& c = model.config;
  const Shape expect{x.shape().empty() ? 0 : x.shape()[0], 1, c.bands, c.patch_h, c.patch_w};
  if (x.shape() != expect) {
    throw ShapeError("model expects input [B,1," + std::to_string(c.bands) + "," + std::to_string(c.patch_h) +
                     "," + std::to_string(c.patch_w) + "], got " + shape_str(x.shape()));
  }
  Tape<T>& tape = *x.tape;
  Var<T> h = x;
  for (auto& layer : model.stem) h = gelu(conv3d(tape, layer, h));
  for (auto& block : model.blocks) h = gfnet_block_forward(block, h, ctx);
  const std::size_t batch = x.shape()[0];
  h = reshape(h, Shape{batch, c.flat_features()});
  for (std::size_t j = 0; j + 1 < model.head.size(); ++j) {
    h = linear(tape, model.head[j], h);
    h = c.head_activation == HeadActivation::relu ? relu(h) : gelu(h);
    h = dropout(model.head_dropout[j], h, ctx);
  }
  return softmax(linear(tape, model.head.back(), h));
}

// Scalar parameter count; a complex mask entry counts as two.
template <typename T>
std::size_t parameter_count(HgfnetModel<T>& model) {
  std::size_t n = 0;
  for (auto* p : model.parameters()) n += p->value.size();
  return n;
}

template <typename T>
std::size_t parameter_count(const LinearLayer<T>& layer) {
  return layer.weight.value.size() + layer.bias.value.size();
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   "HGFCKPT1" | u64 json_len | json | u32 n_params |
//   n x (u32 name_len | name | u8 dtype (1=f32, 2=f64) | u32 rank | u64 dims[rank] | LE scalars)

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'H', 'G', 'F', 'C', 'K', 'P', 'T', '1'};

namespace detail {

template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 1 : 2;
}

}  // namespace detail

// `meta` must hold the model config under "model"; anything else is carried
// verbatim.
template <typename T>
void save_checkpoint(const std::string& path, HgfnetModel<T>& model, nlohmann::json meta) {
  meta["model"] = model.config;
  meta["dtype"] = dtype_name<T>();
  const std::string text = meta.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write checkpoint " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_pod<std::uint8_t>(os, detail::dtype_code<T>());
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) detail::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data().data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(T)));
  }
  if (!os) throw FormatError("failed writing checkpoint " + path);
}

inline nlohmann::json read_checkpoint_meta(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint: " + path);
  }
  const auto len = detail::read_pod<std::uint64_t>(is);
  if (len > (1u << 26)) throw FormatError("checkpoint header too large");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw FormatError("checkpoint truncated");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

inline nlohmann::json read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint_meta(is, path);
}

template <typename T>
HgfnetModel<T> load_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  nlohmann::json meta = read_checkpoint_meta(is, path);
  if (!meta.contains("model")) throw FormatError("checkpoint lacks a model config");
  HgfnetModel<T> model = build<T>(meta.at("model").get<ModelConfig>());
  const auto params = model.parameters();
  const auto count = detail::read_pod<std::uint32_t>(is);
  if (count != params.size()) throw FormatError("checkpoint parameter count does not match its config");
  for (Parameter<T>* p : params) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p->name) throw FormatError("checkpoint parameter '" + name + "' out of order");
    if (detail::read_pod<std::uint8_t>(is) != detail::dtype_code<T>()) {
      throw FormatError("checkpoint dtype differs from requested " + std::string(dtype_name<T>()));
    }
    const auto rank = detail::read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
    if (shape != p->value.shape()) throw FormatError("checkpoint shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(p->value.data().data()), static_cast<std::streamsize>(p->value.size() * sizeof(T)));
    if (!is) throw FormatError("checkpoint truncated in " + name);
  }
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

}  // namespace hgf
