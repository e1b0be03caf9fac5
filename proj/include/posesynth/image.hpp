#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "posesynth/errors.hpp"

namespace posesynth {

/// Interleaved (row, column, channel) raster.
template <typename T>
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> pixels;

  Raster() = default;
  Raster(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }

  bool same_shape(const Raster& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  bool operator==(const Raster&) const = default;
};

using Rgb8 = Raster<std::uint8_t>;
/// Real-valued image; the value range is a property of the call site
/// ([0,1] for reference metrics, [0,255] for Brenner grayscale).
using ImageF = Raster<double>;

template <typename T>
Raster<T> flip_horizontal(const Raster<T>& img) {
  Raster<T> out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

/// Half-pixel-centre bilinear resampling with edge clamping. Interpolates as
/// a + f (b - a) so constant regions stay exactly constant.
ImageF resize_bilinear(const ImageF& src, int out_height, int out_width);

ImageF to_real(const Rgb8& img);
/// Rounds and clamps to [0, 255] after scaling by `scale`.
Rgb8 to_rgb8(const ImageF& img, double scale = 1.0);

/// PNG codec (8-bit gray, RGB or RGBA input; output always 3-channel RGB).
Rgb8 decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const Rgb8& img);
Rgb8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8& img);

/// Tiles equally sized images row-major into one sheet.
Rgb8 make_grid(const std::vector<Rgb8>& tiles, int columns);

}  // namespace posesynth
