#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "oracles.hpp"
#include "posesynth/metrics.hpp"
#include "test_util.hpp"

using namespace posesynth;

namespace {

ImageF constant(int h, int w, int c, double v) {
  ImageF img(h, w, c);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

ImageF random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageF img(h, w, c);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

/// A smooth image plus noise so SSIM lands well inside (-1, 1).
ImageF noisy_copy(std::mt19937_64& rng, const ImageF& src, double amount) {
  std::normal_distribution<double> n(0.0, amount);
  ImageF out = src;
  for (double& v : out.pixels) v = std::clamp(v + n(rng), 0.0, 1.0);
  return out;
}

std::vector<std::vector<double>> as_rows(const ImageF& gray) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(gray.height), std::vector<double>(static_cast<std::size_t>(gray.width)));
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = gray.at(y, x);
  return rows;
}

}  // namespace

TEST(MetricsSsim, IdenticalImagesScoreOne) {
  std::mt19937_64 rng(1);
  const ImageF a = random_image(rng, 32, 32, 3);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  SsimOptions global;
  global.global = true;
  EXPECT_NEAR(ssim(a, a, global), 1.0, 1e-12);
}

TEST(MetricsSsim, Symmetric) {
  std::mt19937_64 rng(2);
  const ImageF a = random_image(rng, 24, 24, 3), b = random_image(rng, 24, 24, 3);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
}

TEST(MetricsSsim, ConstantQuarterVsThreeQuarters) {
  const double expected = (2 * 0.1875 + 1e-4) / (0.0625 + 0.5625 + 1e-4);
  EXPECT_NEAR(ssim(constant(16, 16, 3, 0.25), constant(16, 16, 3, 0.75)), expected, 1e-12);
  EXPECT_NEAR(expected, 0.6003, 5e-4);
  SsimOptions global;
  global.global = true;
  EXPECT_NEAR(ssim(constant(16, 16, 1, 0.25), constant(16, 16, 1, 0.75), global), expected, 1e-12);
}

TEST(MetricsSsim, ShapeChecks) {
  EXPECT_ERROR_CODE(ssim(constant(16, 16, 3, 0), constant(16, 15, 3, 0)), ErrorCode::ShapeError);
  EXPECT_ERROR_CODE(ssim(constant(8, 8, 3, 0), constant(8, 8, 3, 0)), ErrorCode::ShapeError);
}

TEST(MetricsSsim, MatchesReferenceImplementation) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const ImageF a = random_image(rng, 64, 64, 3);
    const ImageF b = i % 2 ? random_image(rng, 64, 64, 3) : noisy_copy(rng, a, 0.1);
    ASSERT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-4);
  }
}

TEST(MetricsPsnr, Examples) {
  EXPECT_TRUE(std::isinf(psnr(constant(4, 4, 3, 0.3), constant(4, 4, 3, 0.3))));
  EXPECT_DOUBLE_EQ(psnr(constant(4, 4, 3, 0.0), constant(4, 4, 3, 1.0)), 0.0);
  EXPECT_NEAR(psnr(constant(4, 4, 3, 0.5), constant(4, 4, 3, 0.6)), 20.0, 1e-9);
  EXPECT_ERROR_CODE(psnr(constant(4, 4, 3, 0), constant(4, 4, 1, 0)), ErrorCode::ShapeError);
}

TEST(MetricsPsnr, MatchesReferenceImplementation) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const ImageF a = random_image(rng, 64, 64, 3), b = noisy_copy(rng, a, 0.05 * (i + 1));
    ASSERT_NEAR(psnr(a, b), oracle::psnr(a, b), 1e-4);
  }
}

TEST(MetricsPsnr, UniformErrorRelatesToL1) {
  for (double e : {0.01, 0.1, 0.25, 0.5}) {
    const ImageF a = constant(8, 8, 3, 0.2), b = constant(8, 8, 3, 0.2 + e);
    EXPECT_NEAR(psnr(a, b), -20.0 * std::log10(l1_distance(a, b)), 1e-9);
  }
}

TEST(MetricsGray, Examples) {
  EXPECT_DOUBLE_EQ(to_grayscale(constant(1, 1, 3, 1.0)).pixels[0], 255.0);
  EXPECT_DOUBLE_EQ(to_grayscale(constant(1, 1, 3, 0.0)).pixels[0], 0.0);
  ImageF green(1, 1, 3);
  green.at(0, 0, 1) = 1.0;
  EXPECT_NEAR(to_grayscale(green).pixels[0], 149.685, 1e-9);
  EXPECT_ERROR_CODE(to_grayscale(constant(2, 2, 1, 0)), ErrorCode::ChannelError);
}

TEST(MetricsBrenner, ConstantAndRamp) {
  EXPECT_EQ(brenner(constant(256, 256, 1, 77.0)), 0.0);
  ImageF ramp(256, 256, 1);
  for (int h = 0; h < 256; ++h)
    for (int w = 0; w < 256; ++w) ramp.at(h, w) = h;
  EXPECT_EQ(brenner(ramp), 260096.0);
  EXPECT_EQ(brenner(ramp), oracle::brenner256(as_rows(ramp)));
}

TEST(MetricsBrenner, SizeIsEnforced) {
  EXPECT_ERROR_CODE(brenner(constant(64, 64, 1, 0.0)), ErrorCode::ShapeError);
  EXPECT_ERROR_CODE(brenner(constant(256, 255, 1, 0.0)), ErrorCode::ShapeError);
  ImageF ramp(64, 64, 1);
  for (int h = 0; h < 64; ++h)
    for (int w = 0; w < 64; ++w) ramp.at(h, w) = h;
  EXPECT_EQ(brenner_general(ramp), 62.0 * 64.0 * 4.0);
}

TEST(MetricsBrenner, MatchesBruteForceExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  for (int i = 0; i < 50; ++i) {
    ImageF g(256, 256, 1);
    for (double& v : g.pixels) v = u(rng);
    ASSERT_EQ(brenner(g), oracle::brenner256(as_rows(g)));
  }
}

TEST(MetricsBrenner, HorizontalFlipInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  for (int i = 0; i < 5; ++i) {
    ImageF g(256, 256, 1);
    for (double& v : g.pixels) v = std::round(u(rng));
    ASSERT_EQ(brenner(g), brenner(flip_horizontal(g)));
  }
}

TEST(MetricsEvaluate, SinglePerfectPair) {
  std::mt19937_64 rng(7);
  const ImageF ref = random_image(rng, 16, 16, 3);
  const EvalReport r = evaluate({{"coarse", {ref}}}, {ref});
  const auto& m = r.variants.at("coarse");
  EXPECT_EQ(r.sample_count, 1u);
  EXPECT_NEAR(m.ssim, 1.0, 1e-12);
  EXPECT_EQ(m.psnr_infinite, 1u);
  EXPECT_EQ(m.l1, 0.0);
  EXPECT_EQ(m.brenner, brenner_general(to_grayscale(ref)));
}

TEST(MetricsEvaluate, MeanOfPsnr) {
  const ImageF ref = constant(16, 16, 3, 0.5);
  const ImageF ten = constant(16, 16, 3, 0.5 + 1.0 / std::sqrt(10.0));     // MSE 0.1 -> 10 dB
  const ImageF twenty = constant(16, 16, 3, 0.6);                           // MSE 0.01 -> 20 dB
  const EvalReport r = evaluate({{"coarse", {ten, twenty}}}, {ref, ref});
  EXPECT_NEAR(r.variants.at("coarse").psnr, 15.0, 1e-9);
}

TEST(MetricsEvaluate, ErrorsAndLayout) {
  const ImageF a = constant(16, 16, 3, 0.5);
  EXPECT_ERROR_CODE(evaluate({{"coarse", {a}}}, {a, a}), ErrorCode::AlignmentError);
  EXPECT_ERROR_CODE(evaluate({{"coarse", {}}}, {}), ErrorCode::EmptyDataset);

  const EvalReport r = evaluate({{"coarse", {a}}, {"refined_pl", {a}}, {"refined_wo_pl", {a}}}, {constant(16, 16, 3, 0.4)});
  const std::string table = r.to_table();
  for (const char* row : {"SSIM", "PSNR", "L1", "Brenner"}) EXPECT_NE(table.find(row), std::string::npos) << table;
  for (const char* col : {"coarse", "refined_pl", "refined_wo_pl"}) EXPECT_NE(table.find(col), std::string::npos);
}

TEST(MetricsEvaluate, JsonRoundTripAndSchema) {
  std::mt19937_64 rng(8);
  const ImageF ref = random_image(rng, 16, 16, 3);
  EvalReport r = evaluate({{"coarse", {ref, random_image(rng, 16, 16, 3)}}}, {ref, ref});
  r.config_hash = "abc";
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("sample_count"), 2);
  EXPECT_EQ(j.at("config_hash"), "abc");
  for (const char* key : {"ssim", "psnr", "l1", "brenner", "psnr_infinite"}) EXPECT_TRUE(j.at("variants").at("coarse").contains(key));
  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.sample_count, r.sample_count);
  EXPECT_EQ(back.variants.at("coarse").ssim, r.variants.at("coarse").ssim);
  EXPECT_EQ(back.variants.at("coarse").psnr_infinite, 1u);
}

TEST(MetricsEvaluate, PermutationStable) {
  std::mt19937_64 rng(9);
  std::vector<ImageF> imgs, refs;
  for (int i = 0; i < 12; ++i) {
    refs.push_back(random_image(rng, 16, 16, 3));
    imgs.push_back(noisy_copy(rng, refs.back(), 0.1));
  }
  const EvalReport base = evaluate({{"coarse", imgs}}, refs);
  std::vector<std::size_t> order(imgs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<ImageF> si, sr;
    for (auto k : order) {
      si.push_back(imgs[k]);
      sr.push_back(refs[k]);
    }
    const auto& m = evaluate({{"coarse", si}}, sr).variants.at("coarse");
    const auto& b = base.variants.at("coarse");
    EXPECT_NEAR(m.ssim, b.ssim, 1e-12);
    EXPECT_NEAR(m.psnr, b.psnr, 1e-12);
    EXPECT_NEAR(m.l1, b.l1, 1e-12);
    EXPECT_NEAR(m.brenner, b.brenner, 1e-12);
  }
}
