#include "posesynth/tensor_image.hpp"

#include <algorithm>

namespace posesynth {

torch::Tensor to_tensor(const ImageF& img) {
  auto hwc = torch::empty({img.height, img.width, img.channels}, torch::kFloat64);
  std::copy(img.pixels.begin(), img.pixels.end(), hwc.data_ptr<double>());
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

ImageF from_tensor(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw Error(ErrorCode::ShapeError, "expected a (C, H, W) tensor");
  const auto hwc = chw.detach().to(torch::kCPU).to(torch::kFloat64).permute({1, 2, 0}).contiguous();
  ImageF out(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)));
  std::copy_n(hwc.data_ptr<double>(), out.pixels.size(), out.pixels.begin());
  return out;
}

ImageF model_to_unit(const torch::Tensor& chw) {
  ImageF out = from_tensor(chw);
  for (double& v : out.pixels) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
  return out;
}

Rgb8 model_to_rgb8(const torch::Tensor& chw) { return to_rgb8(model_to_unit(chw), 255.0); }

torch::Tensor pose_batch(std::span<const Pose> poses) {
  auto out = torch::empty({static_cast<int64_t>(poses.size()), static_cast<int64_t>(Pose::kFlatSize)}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto flat = poses[i].flatten();
    for (std::size_t j = 0; j < flat.size(); ++j) acc[static_cast<int64_t>(i)][static_cast<int64_t>(j)] = static_cast<float>(flat[j]);
  }
  return out;
}

}  // namespace posesynth
