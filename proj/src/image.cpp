#include "posesynth/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <png.h>

namespace posesynth {

ImageF resize_bilinear(const ImageF& src, int out_height, int out_width) {
  if (src.height < 1 || src.width < 1 || out_height < 1 || out_width < 1) {
    throw Error(ErrorCode::ShapeError, "resize needs non-empty source and target");
  }
  if (src.height == out_height && src.width == out_width) return src;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in_size, int out_size) {
    std::vector<Tap> out(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    for (int i = 0; i < out_size; ++i) {
      double pos = (i + 0.5) * scale - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(in_size - 1));
      const int lo = static_cast<int>(std::floor(pos));
      const int hi = std::min(lo + 1, in_size - 1);
      out[static_cast<std::size_t>(i)] = {lo, hi, pos - lo};
    }
    return out;
  };
  const auto ty = taps(src.height, out_height);
  const auto tx = taps(src.width, out_width);

  ImageF out(out_height, out_width, src.channels);
  for (int y = 0; y < out_height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < src.channels; ++c) {
        const double v00 = src.at(a.lo, b.lo, c), v01 = src.at(a.lo, b.hi, c);
        const double v10 = src.at(a.hi, b.lo, c), v11 = src.at(a.hi, b.hi, c);
        const double top = v00 + b.frac * (v01 - v00);
        const double bottom = v10 + b.frac * (v11 - v10);
        out.at(y, x, c) = top + a.frac * (bottom - top);
      }
    }
  }
  return out;
}

ImageF to_real(const Rgb8& img) {
  ImageF out(img.height, img.width, img.channels);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

Rgb8 to_rgb8(const ImageF& img, double scale) {
  Rgb8 out(img.height, img.width, img.channels);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(), [scale](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::round(v * scale), 0.0, 255.0));
  });
  return out;
}

Rgb8 decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::IoError, std::string("png decode: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Rgb8 out(static_cast<int>(image.height), static_cast<int>(image.width), 3);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::IoError, std::string("png decode: ") + image.message);
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const Rgb8& img) {
  if (img.channels != 3) throw Error(ErrorCode::ChannelError, "png encoder expects 3 channels");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, std::string("png encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

Rgb8 read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

void write_png(const std::filesystem::path& path, const Rgb8& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Rgb8 make_grid(const std::vector<Rgb8>& tiles, int columns) {
  if (tiles.empty()) return {};
  const int th = tiles.front().height, tw = tiles.front().width, tc = tiles.front().channels;
  columns = std::max(1, std::min(columns, static_cast<int>(tiles.size())));
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  Rgb8 out(rows * th, columns * tw, tc);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (!tiles[i].same_shape(tiles.front())) throw Error(ErrorCode::ShapeError, "grid tiles differ in shape");
    const int oy = static_cast<int>(i) / columns * th;
    const int ox = static_cast<int>(i) % columns * tw;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < tc; ++c) out.at(oy + y, ox + x, c) = tiles[i].at(y, x, c);
  }
  return out;
}

}  // namespace posesynth
