#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "posesynth/checkpoint.hpp"
#include "posesynth/dataset.hpp"
#include "posesynth/pose.hpp"
#include "posesynth/training.hpp"

namespace posesynth {

/// Stage-1 generator layout. The default is the full 256 x 256 network:
/// F2048-F1024-UC512-UC256-UC256-UC256-UC256-UC256-UC128-UC64-C3.
struct GenNetConfig {
  std::vector<std::int64_t> fc_dims{2048, 1024};
  std::vector<std::int64_t> upsample_channels{512, 256, 256, 256, 256, 256, 128, 64};
  double dropout_p = 0.2;
  bool use_batchnorm = true;
  std::int64_t output_size = 256;

  /// Reduced widths and a 64 x 64 output (6 upsample blocks) for desk-scale runs.
  static GenNetConfig small();

  /// Throws ConfigError unless 2^(number of upsample blocks) == output_size,
  /// every width is positive and dropout_p is in [0, 1).
  void validate() const;

  nlohmann::json to_json() const;
  static GenNetConfig from_json(const nlohmann::json& j);
  bool operator==(const GenNetConfig&) const = default;
};

/// FC stack expands the pose along channels to (B, C, 1, 1); each upsample
/// block doubles the spatial size (nearest x2, 3x3 conv, BN, ReLU); a 1x1 conv
/// plus tanh produces RGB in [-1, 1].
class GenNetImpl : public torch::nn::Module {
 public:
  explicit GenNetImpl(GenNetConfig config);

  /// (B, 7) -> (B, 3, S, S).
  torch::Tensor forward(const torch::Tensor& poses);

  const GenNetConfig& config() const { return config_; }
  std::int64_t normalization_parameter_count() const;

 private:
  GenNetConfig config_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(GenNet);

/// Mean absolute elementwise difference; ShapeError on mismatch.
torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Pose/image tensors for a sample list, read through `loader` (and therefore
/// recorded in its access log) and resized to `size`.
struct TensorDataset {
  torch::Tensor poses;   // (N, 7)
  torch::Tensor images;  // (N, 3, size, size), model space
};
TensorDataset load_tensors(const std::vector<SceneSample>& samples, const ImageLoader& loader, std::int64_t size);

/// Adam on the L1 objective. Emits a checkpoint of kind "gennet".
/// `resume_from`, when given, restores parameters, optimizer state and the
/// step counter before continuing.
Checkpoint train_gennet(const std::vector<SceneSample>& train, const ImageLoader& loader, const TrainHparams& hparams,
                        const GenNetConfig& config, const TrainingSink& sink = {},
                        const Checkpoint* resume_from = nullptr);

/// Rebuilds an eval-mode network from a checkpoint (CheckpointError when the
/// kind, config or tensors do not match).
GenNet load_gennet(const Checkpoint& ckpt);
Checkpoint gennet_checkpoint(const GenNet& model, std::int64_t step, std::uint64_t seed);

/// Eval-mode forward without gradients. Returns (3, S, S) in [-1, 1].
torch::Tensor gennet_infer(const GenNet& model, const Pose& pose);
/// Batched variant, (B, 3, S, S).
torch::Tensor gennet_infer(const GenNet& model, std::span<const Pose> poses);

}  // namespace posesynth
