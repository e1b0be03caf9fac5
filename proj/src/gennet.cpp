#include "posesynth/gennet.hpp"

#include <cmath>

#include "posesynth/optim_state.hpp"
#include "posesynth/tensor_image.hpp"

namespace posesynth {

namespace nn = torch::nn;

GenNetConfig GenNetConfig::small() {
  GenNetConfig c;
  c.fc_dims = {256, 128};
  c.upsample_channels = {64, 64, 64, 64, 32, 32};
  c.output_size = 64;
  return c;
}

void GenNetConfig::validate() const {
  if (fc_dims.empty()) throw Error(ErrorCode::ConfigError, "GenNet needs at least one FC layer");
  if (upsample_channels.empty()) throw Error(ErrorCode::ConfigError, "GenNet needs at least one upsample block");
  for (auto d : fc_dims)
    if (d < 1) throw Error(ErrorCode::ConfigError, "FC widths must be positive");
  for (auto c : upsample_channels)
    if (c < 1) throw Error(ErrorCode::ConfigError, "upsample channels must be positive");
  if (upsample_channels.size() >= 31 || (std::int64_t{1} << upsample_channels.size()) != output_size) {
    throw Error(ErrorCode::ConfigError, std::to_string(upsample_channels.size()) +
                                            " upsample blocks cannot produce output size " + std::to_string(output_size));
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorCode::ConfigError, "dropout_p must be in [0, 1)");
}

nlohmann::json GenNetConfig::to_json() const {
  return {{"fc_dims", fc_dims},
          {"upsample_channels", upsample_channels},
          {"dropout_p", dropout_p},
          {"use_batchnorm", use_batchnorm},
          {"output_size", output_size}};
}

GenNetConfig GenNetConfig::from_json(const nlohmann::json& j) {
  GenNetConfig c;
  try {
    c.fc_dims = j.value("fc_dims", c.fc_dims);
    c.upsample_channels = j.value("upsample_channels", c.upsample_channels);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.use_batchnorm = j.value("use_batchnorm", c.use_batchnorm);
    c.output_size = j.value("output_size", c.output_size);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("gennet config: ") + e.what());
  }
  c.validate();
  return c;
}

GenNetImpl::GenNetImpl(GenNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const bool bn = config_.use_batchnorm;

  nn::Sequential encoder;
  std::int64_t in = static_cast<std::int64_t>(Pose::kFlatSize);
  for (auto width : config_.fc_dims) {
    encoder->push_back(nn::Linear(nn::LinearOptions(in, width).bias(false)));
    if (bn) encoder->push_back(nn::BatchNorm1d(width));
    encoder->push_back(nn::ReLU());
    encoder->push_back(nn::Dropout(config_.dropout_p));
    in = width;
  }
  encoder_ = register_module("encoder", encoder);

  nn::Sequential decoder;
  for (auto channels : config_.upsample_channels) {
    decoder->push_back(nn::Upsample(
        nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    decoder->push_back(nn::Conv2d(nn::Conv2dOptions(in, channels, 3).stride(1).padding(1).bias(!bn)));
    if (bn) decoder->push_back(nn::BatchNorm2d(channels));
    decoder->push_back(nn::ReLU());
    in = channels;
  }
  decoder->push_back(nn::Conv2d(nn::Conv2dOptions(in, 3, 1)));
  decoder->push_back(nn::Tanh());
  decoder_ = register_module("decoder", decoder);
}

torch::Tensor GenNetImpl::forward(const torch::Tensor& poses) {
  if (poses.dim() != 2 || poses.size(1) != static_cast<std::int64_t>(Pose::kFlatSize)) {
    throw Error(ErrorCode::ShapeError, "GenNet expects (B, 7) pose vectors");
  }
  auto h = encoder_->forward(poses);
  h = h.view({h.size(0), h.size(1), 1, 1});
  return decoder_->forward(h);
}

std::int64_t GenNetImpl::normalization_parameter_count() const {
  std::int64_t count = 0;
  for (const auto& m : modules(/*include_self=*/false)) {
    if (m->name().find("Norm") == std::string::npos) continue;
    for (const auto& p : m->parameters(false)) count += p.numel();
    for (const auto& b : m->buffers(false)) count += b.numel();
  }
  return count;
}

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw Error(ErrorCode::ShapeError, "l1_loss: prediction and target shapes differ");
  return (pred - target).abs().mean();
}

TensorDataset load_tensors(const std::vector<SceneSample>& samples, const ImageLoader& loader, std::int64_t size) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to load");
  std::vector<Pose> poses;
  std::vector<torch::Tensor> images;
  for (const auto& s : samples) {
    poses.push_back(s.pose);
    images.push_back(to_tensor(preprocess_image(loader.load(s), static_cast<int>(size))));
  }
  return {pose_batch(poses), torch::stack(images)};
}

Checkpoint gennet_checkpoint(const GenNet& model, std::int64_t step, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.kind = "gennet";
  ckpt.config = model->config().to_json();
  ckpt.step = step;
  ckpt.seed = seed;
  append_module_state(ckpt, *model, "model.");
  return ckpt;
}

GenNet load_gennet(const Checkpoint& ckpt) {
  if (ckpt.kind != "gennet") throw Error(ErrorCode::CheckpointError, "expected a gennet checkpoint, got '" + ckpt.kind + "'");
  GenNetConfig config;
  try {
    config = GenNetConfig::from_json(ckpt.config);
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointError, "gennet checkpoint config: " + e.detail());
  }
  GenNet model(config);
  restore_module_state(*model, ckpt, "model.");
  model->eval();
  return model;
}

torch::Tensor gennet_infer(const GenNet& model, std::span<const Pose> poses) {
  torch::NoGradGuard no_grad;
  GenNet m = model;
  if (m->is_training()) throw Error(ErrorCode::CheckpointError, "gennet_infer needs an eval-mode model");
  return m->forward(pose_batch(poses));
}

torch::Tensor gennet_infer(const GenNet& model, const Pose& pose) {
  return gennet_infer(model, std::span<const Pose>(&pose, 1))[0];
}

Checkpoint train_gennet(const std::vector<SceneSample>& train, const ImageLoader& loader, const TrainHparams& hp,
                        const GenNetConfig& config, const TrainingSink& sink, const Checkpoint* resume_from) {
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "GenNet training set is empty");
  if (hp.batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  config.validate();
  if (config.use_batchnorm && train.size() < 2) {
    throw Error(ErrorCode::ConfigError, "batch norm needs at least 2 training samples");
  }

  seed_everything(hp.seed);
  GenNet model(config);
  init_weights(*model);
  torch::optim::Adam optimizer(model->parameters(),
                               torch::optim::AdamOptions(hp.lr).betas(std::make_tuple(hp.beta1, hp.beta2)));
  std::int64_t step = 0;
  if (resume_from != nullptr) {
    if (!(GenNetConfig::from_json(resume_from->config) == config)) {
      throw Error(ErrorCode::CheckpointError, "resume checkpoint was trained with a different GenNet config");
    }
    restore_module_state(*model, *resume_from, "model.");
    restore_adam_state(optimizer, *model, *resume_from, "optimizer.");
    step = resume_from->step;
    // Re-seed so the continuation does not replay the dropout masks of step 0.
    torch::manual_seed(hp.seed + static_cast<std::uint64_t>(step));
  }

  const TensorDataset data = load_tensors(train, loader, config.output_size);
  const auto n = static_cast<std::int64_t>(train.size());
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(epoch_batches(n, hp.batch_size, hp.seed, 0).size());
  const std::int64_t total_steps = hp.max_steps > 0 ? hp.max_steps : hp.epochs * steps_per_epoch;

  auto make_checkpoint = [&](std::int64_t at_step) {
    Checkpoint ckpt = gennet_checkpoint(model, at_step, hp.seed);
    append_adam_state(ckpt, optimizer, *model, "optimizer.");
    ckpt.metadata["hparams"] = hp.to_json();
    return ckpt;
  };

  // A fixed set of training poses rendered at every snapshot.
  const std::int64_t preview_count = std::min<std::int64_t>(n, 8);
  const torch::Tensor preview_poses = data.poses.slice(0, 0, preview_count);
  const torch::Tensor preview_targets = data.images.slice(0, 0, preview_count);

  model->train();
  while (step < total_steps) {
    const std::int64_t epoch = step / steps_per_epoch;
    const auto batches = epoch_batches(n, hp.batch_size, hp.seed, epoch);
    double epoch_loss = 0.0;
    std::int64_t epoch_batches_run = 0;
    for (std::size_t b = static_cast<std::size_t>(step % steps_per_epoch); b < batches.size() && step < total_steps; ++b) {
      const auto idx = torch::tensor(batches[b], torch::kInt64);
      optimizer.zero_grad();
      const auto pred = model->forward(data.poses.index_select(0, idx));
      const auto loss = posesynth::l1_loss(pred, data.images.index_select(0, idx));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw Error(ErrorCode::DivergenceError, "non-finite GenNet loss at step " + std::to_string(step));
      }
      loss.backward();
      optimizer.step();
      ++step;
      epoch_loss += value;
      ++epoch_batches_run;

      if (hp.checkpoint_every > 0 && step % hp.checkpoint_every == 0 && sink.on_checkpoint) {
        sink.on_checkpoint(make_checkpoint(step));
      }
      if (hp.snapshot_every > 0 && step % hp.snapshot_every == 0 && sink.on_snapshot) {
        model->eval();
        torch::Tensor preview;
        {
          torch::NoGradGuard no_grad;
          preview = model->forward(preview_poses);
        }
        model->train();
        std::vector<Rgb8> tiles;
        for (std::int64_t i = 0; i < preview_count; ++i) tiles.push_back(model_to_rgb8(preview[i]));
        for (std::int64_t i = 0; i < preview_count; ++i) tiles.push_back(model_to_rgb8(preview_targets[i]));
        sink.on_snapshot(step, make_grid(tiles, static_cast<int>(preview_count)));
      }
    }
    if (epoch_batches_run > 0 && sink.on_epoch) sink.on_epoch(epoch, step, epoch_loss / static_cast<double>(epoch_batches_run));
  }

  model->eval();
  return make_checkpoint(step);
}

}  // namespace posesynth
