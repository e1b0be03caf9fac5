#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "posesynth/image.hpp"
#include "posesynth/pose.hpp"

namespace posesynth {

/// (H, W, C) raster -> (C, H, W) float32 tensor, values unchanged.
torch::Tensor to_tensor(const ImageF& img);
/// (C, H, W) tensor -> raster, values unchanged.
ImageF from_tensor(const torch::Tensor& chw);

/// Model space [-1, 1] -> metric space [0, 1].
ImageF model_to_unit(const torch::Tensor& chw);
/// Model space [-1, 1] -> 8-bit RGB.
Rgb8 model_to_rgb8(const torch::Tensor& chw);

/// (B, 7) float32 tensor of flattened poses.
torch::Tensor pose_batch(std::span<const Pose> poses);

}  // namespace posesynth
