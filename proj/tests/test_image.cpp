#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "posesynth/image.hpp"
#include "posesynth/tensor_image.hpp"
#include "test_util.hpp"

using namespace posesynth;
using fixture::temp_dir;

namespace {

Rgb8 random_rgb8(std::mt19937_64& rng, int h, int w) {
  std::uniform_int_distribution<int> u(0, 255);
  Rgb8 img(h, w, 3);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(u(rng));
  return img;
}

}  // namespace

TEST(ImagePng, RoundTripIsLossless) {
  std::mt19937_64 rng(1);
  const Rgb8 img = random_rgb8(rng, 17, 23);
  EXPECT_EQ(decode_png(encode_png(img)), img);
  const auto path = temp_dir("png") / "x.png";
  write_png(path, img);
  EXPECT_EQ(read_png(path), img);
}

TEST(ImagePng, EncodingIsDeterministic) {
  std::mt19937_64 rng(2);
  const Rgb8 img = random_rgb8(rng, 32, 32);
  EXPECT_EQ(encode_png(img), encode_png(img));
}

TEST(ImagePng, CorruptInputIsRejected) {
  EXPECT_ERROR_CODE(decode_png({1, 2, 3, 4}), ErrorCode::IoError);
  EXPECT_ERROR_CODE(read_png("/nonexistent/file.png"), ErrorCode::IoError);
}

TEST(ImageResize, IdentityAndConstant) {
  std::mt19937_64 rng(3);
  const ImageF src = to_real(random_rgb8(rng, 9, 7));
  EXPECT_EQ(resize_bilinear(src, 9, 7), src);
  const ImageF flat(10, 10, 3, 42.0);
  const ImageF out = resize_bilinear(flat, 4, 13);
  for (double v : out.pixels) EXPECT_EQ(v, 42.0);
}

TEST(ImageResize, DownsampleByTwoAveragesPairs) {
  ImageF src(1, 4, 1);
  for (int x = 0; x < 4; ++x) src.at(0, x) = x * 10.0;
  const ImageF out = resize_bilinear(src, 1, 2);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 25.0);
}

TEST(ImageConvert, Rgb8RoundTripAndClamp) {
  std::mt19937_64 rng(4);
  const Rgb8 img = random_rgb8(rng, 5, 6);
  EXPECT_EQ(to_rgb8(to_real(img)), img);
  ImageF wild(1, 2, 3);
  wild.at(0, 0, 0) = -5.0;
  wild.at(0, 1, 0) = 300.0;
  const Rgb8 clamped = to_rgb8(wild);
  EXPECT_EQ(clamped.at(0, 0, 0), 0);
  EXPECT_EQ(clamped.at(0, 1, 0), 255);
}

TEST(ImageConvert, TensorLayoutAndModelSpace) {
  ImageF img(2, 3, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i) / 17.0;
  const auto t = to_tensor(img);
  EXPECT_EQ(t.sizes(), (std::vector<std::int64_t>{3, 2, 3}));
  EXPECT_FLOAT_EQ(t[2][1][0].item<float>(), static_cast<float>(img.at(1, 0, 2)));
  const ImageF back = from_tensor(t);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-6);

  const auto model = torch::tensor({-1.0f, 0.0f, 1.0f}).reshape({3, 1, 1});
  const ImageF unit = model_to_unit(model);
  EXPECT_DOUBLE_EQ(unit.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(unit.at(0, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(unit.at(0, 0, 2), 1.0);
  const Rgb8 rgb = model_to_rgb8(model);
  EXPECT_EQ(rgb.at(0, 0, 0), 0);
  EXPECT_EQ(rgb.at(0, 0, 2), 255);
}

TEST(ImageGrid, TilesRowMajor) {
  Rgb8 a(2, 2, 3, 10), b(2, 2, 3, 20), c(2, 2, 3, 30);
  const Rgb8 g = make_grid({a, b, c}, 2);
  EXPECT_EQ(g.height, 4);
  EXPECT_EQ(g.width, 4);
  EXPECT_EQ(g.at(0, 0), 10);
  EXPECT_EQ(g.at(0, 3), 20);
  EXPECT_EQ(g.at(3, 1), 30);
}
