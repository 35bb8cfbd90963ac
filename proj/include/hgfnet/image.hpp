#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hgfnet/error.hpp"

namespace hgf {

using Rgb = std::array<std::uint8_t, 3>;

// Class 0 is black; class k in 1..K gets the fully saturated hue (k-1)/K.
inline Rgb class_color(std::int32_t k, std::size_t classes) {
  if (k <= 0 || classes == 0) return {0, 0, 0};
  const double h = 6.0 * static_cast<double>(k - 1) / static_cast<double>(classes);
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  auto q = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  switch (sector) {
    case 0: return {255, q(f), 0};
    case 1: return {q(1.0 - f), 255, 0};
    case 2: return {0, 255, q(f)};
    case 3: return {0, q(1.0 - f), 255};
    case 4: return {q(f), 0, 255};
    default: return {255, 0, q(1.0 - f)};
  }
}

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  Rgb at(std::size_t row, std::size_t col) const {
    const std::size_t i = 3 * (row * width + col);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

inline RgbImage render_labels(std::span<const std::int32_t> raster, std::size_t height, std::size_t width,
                              std::size_t classes) {
  if (raster.size() != height * width) throw ShapeError("label raster does not match its extents");
  RgbImage img{width, height, std::vector<std::uint8_t>(3 * raster.size())};
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const Rgb c = class_color(raster[i], classes);
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw FormatError("failed writing " + path);
}

// Binary P6 with maxval 255; '#' comments in the header are skipped.
inline RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    int ch;
    while ((ch = is.get()) != EOF) {
      if (ch == '#') {
        while ((ch = is.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(static_cast<char>(ch));
    }
    return t;
  };
  if (token() != "P6") throw FormatError(path + " is not a binary PPM");
  RgbImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError(path + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed PPM header");
  }
  img.pixels.resize(3 * img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw FormatError(path + ": truncated pixel data");
  return img;
}

}  // namespace hgf
