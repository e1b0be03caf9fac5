#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "posesynth/checkpoint.hpp"
#include "posesynth/dataset.hpp"
#include "posesynth/gennet.hpp"
#include "posesynth/training.hpp"

namespace posesynth {

// ---------------------------------------------------------------------------
// Perceptual feature extractor
// ---------------------------------------------------------------------------

/// VGG16 trunk up to relu4_3. Channel widths are 64/128/256/512 divided by
/// `width_divisor`. Weights come from `weights_path` (named-tensor archive with
/// the same parameter names) when set, otherwise from a fixed seeded random
/// draw; either way they are frozen.
struct FeatureExtractorConfig {
  std::int64_t width_divisor = 1;
  std::int64_t in_channels = 3;
  std::uint64_t seed = 1234;
  std::string weights_path;
  /// Map [-1, 1] inputs to ImageNet-normalized [0, 1] before the first conv
  /// (only applies to 3-channel inputs).
  bool normalize_input = true;

  nlohmann::json to_json() const;
  static FeatureExtractorConfig from_json(const nlohmann::json& j);
  bool operator==(const FeatureExtractorConfig&) const = default;
};

class FeatureExtractorImpl : public torch::nn::Module {
 public:
  static constexpr std::array<const char*, 4> kTapNames{"relu1_2", "relu2_2", "relu3_3", "relu4_3"};

  explicit FeatureExtractorImpl(FeatureExtractorConfig config);

  /// Activations at the four taps, in tap order.
  std::vector<torch::Tensor> forward(torch::Tensor images);

  std::array<std::int64_t, 4> tap_channels() const;
  const FeatureExtractorConfig& config() const { return config_; }

 private:
  FeatureExtractorConfig config_;
  std::vector<torch::nn::Sequential> blocks_;
};
TORCH_MODULE(FeatureExtractor);

// ---------------------------------------------------------------------------
// Perceptual losses
// ---------------------------------------------------------------------------

/// G[c, c'] = sum_{h,w} f[c,h,w] f[c',h,w] / (C H W). Accepts (C, H, W) or a
/// batch (B, C, H, W) and returns (C, C) or (B, C, C).
torch::Tensor gram_matrix(const torch::Tensor& features);

/// Sum over taps of squared Frobenius distances between Gram matrices
/// (averaged over the batch).
torch::Tensor style_loss_from_taps(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);
/// (1 / (C H W)) ||a - b||^2 on one tap (averaged over the batch).
torch::Tensor content_loss_from_tap(const torch::Tensor& a, const torch::Tensor& b);

torch::Tensor style_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureExtractor& fx);
/// Uses the second tap (relu2_2).
torch::Tensor content_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureExtractor& fx);

// ---------------------------------------------------------------------------
// Refiner networks
// ---------------------------------------------------------------------------

enum class GanLossKind { Vanilla, LSGAN };

struct RefineConfig {
  double lambda1 = 100.0;
  double lambda2 = 5e4;
  double lambda3 = 10.0;
  std::int64_t image_size = 256;
  /// Number of stride-2 levels; 2^num_downs == image_size (1x1 bottleneck).
  std::int64_t num_downs = 8;
  std::int64_t ngf = 64;
  std::int64_t ndf = 64;
  std::int64_t discriminator_layers = 3;
  GanLossKind gan_loss = GanLossKind::Vanilla;
  FeatureExtractorConfig extractor;

  /// 64 x 64 variant with narrow networks for desk-scale runs.
  static RefineConfig small();

  void validate() const;
  bool perceptual() const { return lambda2 > 0.0 || lambda3 > 0.0; }
  /// Same configuration with the style and content weights zeroed.
  RefineConfig without_perceptual() const;

  nlohmann::json to_json() const;
  static RefineConfig from_json(const nlohmann::json& j);
};

/// Channel bookkeeping for one decoder level of the U-Net: the decoder output
/// is concatenated with the mirrored encoder output.
struct SkipLevel {
  std::int64_t decoder_channels = 0;
  std::int64_t encoder_channels = 0;
  std::int64_t concat_channels = 0;
  std::int64_t spatial = 0;
};

/// pix2pix-style U-Net: num_downs stride-2 4x4 convs (LeakyReLU 0.2, BN except
/// outermost/innermost) mirrored by transposed convs (ReLU, BN, tanh on the
/// output). Widths start at ngf and double up to 8 * ngf. No dropout.
class UnetGeneratorImpl : public torch::nn::Module {
 public:
  explicit UnetGeneratorImpl(const RefineConfig& config);

  torch::Tensor forward(const torch::Tensor& x);
  /// Forward pass that also reports every skip concatenation, outermost last.
  torch::Tensor forward_traced(const torch::Tensor& x, std::vector<SkipLevel>& trace);

  /// Encoder width at each level.
  const std::vector<std::int64_t>& encoder_widths() const { return widths_; }

 private:
  std::vector<std::int64_t> widths_;
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::Sequential> up_;  // up_[k] produces the input of level k
};
TORCH_MODULE(UnetGenerator);

/// 70x70 PatchGAN over channel-concatenated (condition, candidate) images.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const RefineConfig& config);

  /// Raw logits, (B, 1, P, P); 30 x 30 for 256 x 256 inputs.
  torch::Tensor forward(const torch::Tensor& condition, const torch::Tensor& candidate);

 private:
  torch::nn::Sequential model_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Adversarial loss against a constant real/fake target for every patch.
torch::Tensor gan_loss(const torch::Tensor& logits, bool target_is_real, GanLossKind kind);

struct ObjectiveTerms {
  torch::Tensor adversarial;  // generator's adversarial term
  torch::Tensor l1;
  torch::Tensor style;
  torch::Tensor content;
  torch::Tensor generator;      // adversarial + l1 * lambda1 + style * lambda2 + content * lambda3
  torch::Tensor discriminator;  // 0.5 * (real-vs-1 + fake-vs-0)
};

/// Generator terms only; perceptual terms are skipped (zero) when their
/// weight is zero.
ObjectiveTerms generator_objective(const torch::Tensor& coarse, const torch::Tensor& refined, const torch::Tensor& real,
                                   PatchDiscriminator& d, FeatureExtractor& fx, const RefineConfig& config);
torch::Tensor discriminator_objective(const torch::Tensor& coarse, const torch::Tensor& refined,
                                      const torch::Tensor& real, PatchDiscriminator& d, GanLossKind kind);
/// Both losses for one (coarse, refined, real) triple. The condition image is
/// the coarse image; the discriminator sees `refined` detached.
ObjectiveTerms refiner_objective(const torch::Tensor& coarse, const torch::Tensor& refined, const torch::Tensor& real,
                                 PatchDiscriminator& d, FeatureExtractor& fx, const RefineConfig& config);

// ---------------------------------------------------------------------------
// Training / inference
// ---------------------------------------------------------------------------

struct Refiner {
  UnetGenerator generator{nullptr};
  PatchDiscriminator discriminator{nullptr};
  RefineConfig config;
};

Refiner build_refiner(const RefineConfig& config);

/// Alternating 1:1 discriminator / generator Adam steps on coarse images from
/// the frozen GenNet. Metadata records the stage-1 tensors hash and the
/// variant label ("refined_pl" or "refined_wo_pl").
Checkpoint train_refinenet(const Checkpoint& gennet_ckpt, const std::vector<SceneSample>& train,
                           const ImageLoader& loader, const RefineConfig& config, const TrainHparams& hparams,
                           const TrainingSink& sink = {});

/// Eval-mode generator restored from a refinenet checkpoint.
UnetGenerator load_refiner(const Checkpoint& ckpt);
RefineConfig refine_config_of(const Checkpoint& ckpt);

/// (3, S, S) or (B, 3, S, S) coarse -> refined, no gradients, deterministic.
torch::Tensor refine_infer(const UnetGenerator& generator, const torch::Tensor& coarse);

std::string to_string(GanLossKind kind);
GanLossKind parse_gan_loss(const std::string& name);

}  // namespace posesynth
