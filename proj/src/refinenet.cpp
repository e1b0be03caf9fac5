#include "posesynth/refinenet.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "posesynth/optim_state.hpp"
#include "posesynth/tensor_image.hpp"

namespace posesynth {

namespace nn = torch::nn;

namespace {

constexpr std::array<std::int64_t, 4> kVggWidths{64, 128, 256, 512};
constexpr std::array<int, 4> kVggConvs{2, 2, 3, 3};

nn::Conv2d conv4x4(std::int64_t in, std::int64_t out, std::int64_t stride, bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(stride).padding(1).bias(bias));
}

nn::ConvTranspose2d up4x4(std::int64_t in, std::int64_t out, bool bias) {
  return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(bias));
}

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

void set_requires_grad(nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureExtractor

nlohmann::json FeatureExtractorConfig::to_json() const {
  return {{"width_divisor", width_divisor},
          {"in_channels", in_channels},
          {"seed", seed},
          {"weights_path", weights_path},
          {"normalize_input", normalize_input}};
}

FeatureExtractorConfig FeatureExtractorConfig::from_json(const nlohmann::json& j) {
  FeatureExtractorConfig c;
  c.width_divisor = j.value("width_divisor", c.width_divisor);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.seed = j.value("seed", c.seed);
  c.weights_path = j.value("weights_path", c.weights_path);
  c.normalize_input = j.value("normalize_input", c.normalize_input);
  return c;
}

FeatureExtractorImpl::FeatureExtractorImpl(FeatureExtractorConfig config) : config_(std::move(config)) {
  if (config_.width_divisor < 1 || config_.in_channels < 1) {
    throw Error(ErrorCode::ConfigError, "feature extractor widths must be positive");
  }
  std::int64_t in = config_.in_channels;
  for (std::size_t b = 0; b < kVggWidths.size(); ++b) {
    const std::int64_t width = std::max<std::int64_t>(1, kVggWidths[b] / config_.width_divisor);
    nn::Sequential block;
    if (b > 0) block->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2).ceil_mode(true)));
    for (int c = 0; c < kVggConvs[b]; ++c) {
      block->push_back(nn::Conv2d(nn::Conv2dOptions(in, width, 3).padding(1)));
      block->push_back(nn::ReLU());
      in = width;
    }
    blocks_.push_back(register_module("block" + std::to_string(b + 1), block));
  }

  torch::NoGradGuard no_grad;
  if (!config_.weights_path.empty()) {
    restore_module_state(*this, Checkpoint::load(config_.weights_path), "model.");
  } else {
    // He-normal draw from a private generator so the extractor is identical
    // regardless of the global seed.
    auto gen = at::detail::createCPUGenerator(config_.seed);
    for (auto& item : named_parameters()) {
      auto& p = item.value();
      if (p.dim() == 4) {
        const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
        p.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      } else {
        p.zero_();
      }
    }
  }
  set_requires_grad(*this, false);
  eval();
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward(torch::Tensor x) {
  if (x.dim() == 3) x = x.unsqueeze(0);
  if (x.size(1) != config_.in_channels) throw Error(ErrorCode::ShapeError, "feature extractor channel mismatch");
  if (config_.normalize_input && config_.in_channels == 3) {
    const auto opts = x.options();
    const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    const auto stdev = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    x = ((x + 1.0) * 0.5 - mean) / stdev;
  }
  std::vector<torch::Tensor> taps;
  for (auto& block : blocks_) {
    x = block->forward(x);
    taps.push_back(x);
  }
  return taps;
}

std::array<std::int64_t, 4> FeatureExtractorImpl::tap_channels() const {
  std::array<std::int64_t, 4> out{};
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = std::max<std::int64_t>(1, kVggWidths[b] / config_.width_divisor);
  return out;
}

// ---------------------------------------------------------------------------
// Perceptual losses

torch::Tensor gram_matrix(const torch::Tensor& features) {
  if (features.dim() == 3) return gram_matrix(features.unsqueeze(0))[0];
  if (features.dim() != 4) throw Error(ErrorCode::ShapeError, "gram_matrix expects (C,H,W) or (B,C,H,W)");
  const auto b = features.size(0), c = features.size(1), h = features.size(2), w = features.size(3);
  const auto flat = features.reshape({b, c, h * w});
  return torch::bmm(flat, flat.transpose(1, 2)) / static_cast<double>(c * h * w);
}

torch::Tensor style_loss_from_taps(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorCode::ShapeError, "style loss needs matching tap lists");
  torch::Tensor total;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j].sizes() != b[j].sizes()) throw Error(ErrorCode::ShapeError, "style loss tap shapes differ");
    const auto ga = gram_matrix(a[j].dim() == 3 ? a[j].unsqueeze(0) : a[j]);
    const auto gb = gram_matrix(b[j].dim() == 3 ? b[j].unsqueeze(0) : b[j]);
    const auto term = (ga - gb).pow(2).sum({1, 2}).mean();
    total = j == 0 ? term : total + term;
  }
  return total;
}

torch::Tensor content_loss_from_tap(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw Error(ErrorCode::ShapeError, "content loss tap shapes differ");
  // Mean over C*H*W per sample, then over the batch: one overall mean.
  return (a - b).pow(2).mean();
}

torch::Tensor style_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureExtractor& fx) {
  if (img_a.sizes() != img_b.sizes()) throw Error(ErrorCode::ShapeError, "style loss image shapes differ");
  return style_loss_from_taps(fx->forward(img_a), fx->forward(img_b));
}

torch::Tensor content_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureExtractor& fx) {
  if (img_a.sizes() != img_b.sizes()) throw Error(ErrorCode::ShapeError, "content loss image shapes differ");
  return content_loss_from_tap(fx->forward(img_a)[1], fx->forward(img_b)[1]);
}

// ---------------------------------------------------------------------------
// Config

RefineConfig RefineConfig::small() {
  RefineConfig c;
  c.image_size = 64;
  c.num_downs = 6;
  c.ngf = 16;
  c.ndf = 16;
  c.extractor.width_divisor = 8;
  return c;
}

void RefineConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw Error(ErrorCode::ConfigError, "loss weights must be >= 0");
  if (ngf < 1 || ndf < 1) throw Error(ErrorCode::ConfigError, "refiner widths must be positive");
  if (num_downs < 2 || num_downs >= 31 || (std::int64_t{1} << num_downs) != image_size) {
    throw Error(ErrorCode::ConfigError, "U-Net needs 2^num_downs == image_size (num_downs >= 2)");
  }
  if (discriminator_layers < 1) throw Error(ErrorCode::ConfigError, "discriminator needs at least one layer");
  if ((image_size >> discriminator_layers) < 4) {
    throw Error(ErrorCode::ConfigError, "image too small for the discriminator depth");
  }
}

RefineConfig RefineConfig::without_perceptual() const {
  RefineConfig c = *this;
  c.lambda2 = 0.0;
  c.lambda3 = 0.0;
  return c;
}

std::string to_string(GanLossKind kind) { return kind == GanLossKind::Vanilla ? "vanilla" : "lsgan"; }

GanLossKind parse_gan_loss(const std::string& name) {
  if (name == "vanilla") return GanLossKind::Vanilla;
  if (name == "lsgan") return GanLossKind::LSGAN;
  throw Error(ErrorCode::ConfigError, "gan_loss must be 'vanilla' or 'lsgan'");
}

nlohmann::json RefineConfig::to_json() const {
  return {{"lambda1", lambda1},
          {"lambda2", lambda2},
          {"lambda3", lambda3},
          {"image_size", image_size},
          {"num_downs", num_downs},
          {"ngf", ngf},
          {"ndf", ndf},
          {"discriminator_layers", discriminator_layers},
          {"gan_loss", to_string(gan_loss)},
          {"extractor", extractor.to_json()}};
}

RefineConfig RefineConfig::from_json(const nlohmann::json& j) {
  RefineConfig c;
  try {
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.lambda3 = j.value("lambda3", c.lambda3);
    c.image_size = j.value("image_size", c.image_size);
    c.num_downs = j.value("num_downs", c.num_downs);
    c.ngf = j.value("ngf", c.ngf);
    c.ndf = j.value("ndf", c.ndf);
    c.discriminator_layers = j.value("discriminator_layers", c.discriminator_layers);
    c.gan_loss = parse_gan_loss(j.value("gan_loss", std::string("vanilla")));
    if (j.contains("extractor")) c.extractor = FeatureExtractorConfig::from_json(j.at("extractor"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("refine config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Networks

UnetGeneratorImpl::UnetGeneratorImpl(const RefineConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.num_downs);
  for (std::size_t k = 0; k < n; ++k) widths_.push_back(config.ngf * std::min<std::int64_t>(std::int64_t{1} << std::min<std::size_t>(k, 3), 8));

  for (std::size_t k = 0; k < n; ++k) {
    nn::Sequential down;
    if (k == 0) {
      down->push_back(conv4x4(3, widths_[0], 2, false));
    } else {
      down->push_back(leaky());
      down->push_back(conv4x4(widths_[k - 1], widths_[k], 2, false));
      if (k + 1 < n) down->push_back(nn::BatchNorm2d(widths_[k]));
    }
    down_.push_back(register_module("down" + std::to_string(k), down));
  }
  up_.resize(n);
  for (std::size_t k = n; k-- > 0;) {
    nn::Sequential up;
    up->push_back(nn::ReLU());
    if (k == 0) {
      up->push_back(up4x4(2 * widths_[0], 3, true));
      up->push_back(nn::Tanh());
    } else {
      const std::int64_t in = k + 1 == n ? widths_[k] : 2 * widths_[k];
      up->push_back(up4x4(in, widths_[k - 1], false));
      up->push_back(nn::BatchNorm2d(widths_[k - 1]));
    }
    up_[k] = register_module("up" + std::to_string(k), up);
  }
}

torch::Tensor UnetGeneratorImpl::forward_traced(const torch::Tensor& x, std::vector<SkipLevel>& trace) {
  if (x.dim() != 4 || x.size(1) != 3) throw Error(ErrorCode::ShapeError, "U-Net expects (B, 3, S, S) input");
  const std::size_t n = down_.size();
  std::vector<torch::Tensor> enc(n);
  enc[0] = down_[0]->forward(x);
  for (std::size_t k = 1; k < n; ++k) enc[k] = down_[k]->forward(enc[k - 1]);

  torch::Tensor h = enc[n - 1];
  for (std::size_t k = n - 1; k >= 1; --k) {
    const auto dec = up_[k]->forward(h);
    h = torch::cat({enc[k - 1], dec}, 1);
    trace.push_back({dec.size(1), enc[k - 1].size(1), h.size(1), h.size(2)});
  }
  return up_[0]->forward(h);
}

torch::Tensor UnetGeneratorImpl::forward(const torch::Tensor& x) {
  std::vector<SkipLevel> trace;
  return forward_traced(x, trace);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const RefineConfig& config) {
  config.validate();
  nn::Sequential seq;
  seq->push_back(conv4x4(6, config.ndf, 2, true));
  seq->push_back(leaky());
  std::int64_t mult = 1;
  for (std::int64_t layer = 1; layer < config.discriminator_layers; ++layer) {
    const std::int64_t prev = mult;
    mult = std::min<std::int64_t>(std::int64_t{1} << layer, 8);
    seq->push_back(conv4x4(config.ndf * prev, config.ndf * mult, 2, false));
    seq->push_back(nn::BatchNorm2d(config.ndf * mult));
    seq->push_back(leaky());
  }
  const std::int64_t prev = mult;
  mult = std::min<std::int64_t>(std::int64_t{1} << config.discriminator_layers, 8);
  seq->push_back(conv4x4(config.ndf * prev, config.ndf * mult, 1, false));
  seq->push_back(nn::BatchNorm2d(config.ndf * mult));
  seq->push_back(leaky());
  seq->push_back(conv4x4(config.ndf * mult, 1, 1, true));
  model_ = register_module("model", seq);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& condition, const torch::Tensor& candidate) {
  if (condition.sizes() != candidate.sizes()) throw Error(ErrorCode::ShapeError, "discriminator inputs differ in shape");
  return model_->forward(torch::cat({condition, candidate}, 1));
}

Refiner build_refiner(const RefineConfig& config) {
  config.validate();
  return {UnetGenerator(config), PatchDiscriminator(config), config};
}

// ---------------------------------------------------------------------------
// Objective

torch::Tensor gan_loss(const torch::Tensor& logits, bool target_is_real, GanLossKind kind) {
  const auto target = target_is_real ? torch::ones_like(logits) : torch::zeros_like(logits);
  if (kind == GanLossKind::LSGAN) return torch::mse_loss(logits, target);
  return torch::binary_cross_entropy_with_logits(logits, target);
}

ObjectiveTerms generator_objective(const torch::Tensor& coarse, const torch::Tensor& refined, const torch::Tensor& real,
                                   PatchDiscriminator& d, FeatureExtractor& fx, const RefineConfig& config) {
  ObjectiveTerms t;
  t.adversarial = gan_loss(d->forward(coarse, refined), true, config.gan_loss);
  t.l1 = posesynth::l1_loss(refined, real);
  t.style = torch::zeros({}, refined.options());
  t.content = torch::zeros({}, refined.options());
  if (config.perceptual()) {
    if (!fx) throw Error(ErrorCode::ConfigError, "perceptual loss weights set but no feature extractor");
    const auto fa = fx->forward(refined);
    std::vector<torch::Tensor> fb;
    {
      torch::NoGradGuard no_grad;
      fb = fx->forward(real);
    }
    if (config.lambda2 > 0.0) t.style = style_loss_from_taps(fa, fb);
    if (config.lambda3 > 0.0) t.content = content_loss_from_tap(fa[1], fb[1]);
  }
  t.generator = t.adversarial + config.lambda1 * t.l1 + config.lambda2 * t.style + config.lambda3 * t.content;
  return t;
}

torch::Tensor discriminator_objective(const torch::Tensor& coarse, const torch::Tensor& refined,
                                      const torch::Tensor& real, PatchDiscriminator& d, GanLossKind kind) {
  const auto real_loss = gan_loss(d->forward(coarse, real), true, kind);
  const auto fake_loss = gan_loss(d->forward(coarse, refined.detach()), false, kind);
  return 0.5 * (real_loss + fake_loss);
}

ObjectiveTerms refiner_objective(const torch::Tensor& coarse, const torch::Tensor& refined, const torch::Tensor& real,
                                 PatchDiscriminator& d, FeatureExtractor& fx, const RefineConfig& config) {
  ObjectiveTerms t = generator_objective(coarse, refined, real, d, fx, config);
  t.discriminator = discriminator_objective(coarse, refined, real, d, config.gan_loss);
  return t;
}

// ---------------------------------------------------------------------------
// Training / inference

RefineConfig refine_config_of(const Checkpoint& ckpt) {
  if (ckpt.kind != "refinenet") {
    throw Error(ErrorCode::CheckpointError, "expected a refinenet checkpoint, got '" + ckpt.kind + "'");
  }
  try {
    return RefineConfig::from_json(ckpt.config);
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointError, "refinenet checkpoint config: " + e.detail());
  }
}

UnetGenerator load_refiner(const Checkpoint& ckpt) {
  UnetGenerator g(refine_config_of(ckpt));
  restore_module_state(*g, ckpt, "generator.");
  g->eval();
  return g;
}

torch::Tensor refine_infer(const UnetGenerator& generator, const torch::Tensor& coarse) {
  torch::NoGradGuard no_grad;
  UnetGenerator g = generator;
  if (g->is_training()) throw Error(ErrorCode::CheckpointError, "refine_infer needs an eval-mode generator");
  if (coarse.dim() == 3) return g->forward(coarse.unsqueeze(0))[0];
  return g->forward(coarse);
}

Checkpoint train_refinenet(const Checkpoint& gennet_ckpt, const std::vector<SceneSample>& train,
                           const ImageLoader& loader, const RefineConfig& config, const TrainHparams& hp,
                           const TrainingSink& sink) {
  if (gennet_ckpt.kind != "gennet") throw Error(ErrorCode::CheckpointError, "stage 2 needs a gennet checkpoint");
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "RefineNet training set is empty");
  if (hp.batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  config.validate();

  GenNet gennet = load_gennet(gennet_ckpt);
  set_requires_grad(*gennet, false);
  const std::string frozen_before = gennet_checkpoint(gennet, 0, 0).tensors_hash();
  if (gennet->config().output_size != config.image_size) {
    throw Error(ErrorCode::ConfigError, "refiner image_size differs from the GenNet output size");
  }

  const TensorDataset data = load_tensors(train, loader, config.image_size);
  torch::Tensor coarse_all;
  {
    std::vector<torch::Tensor> chunks;
    const auto n = data.poses.size(0);
    for (std::int64_t start = 0; start < n; start += 32) {
      torch::NoGradGuard no_grad;
      chunks.push_back(gennet->forward(data.poses.slice(0, start, std::min(n, start + 32))));
    }
    coarse_all = torch::cat(chunks);
  }

  seed_everything(hp.seed);
  Refiner refiner = build_refiner(config);
  init_weights(*refiner.generator);
  init_weights(*refiner.discriminator);
  FeatureExtractor fx{nullptr};
  if (config.perceptual()) fx = FeatureExtractor(config.extractor);

  const auto adam = torch::optim::AdamOptions(hp.lr).betas(std::make_tuple(hp.beta1, hp.beta2));
  torch::optim::Adam opt_g(refiner.generator->parameters(), adam);
  torch::optim::Adam opt_d(refiner.discriminator->parameters(), adam);

  const auto n = data.poses.size(0);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(epoch_batches(n, hp.batch_size, hp.seed, 0).size());
  const std::int64_t total_steps = hp.max_steps > 0 ? hp.max_steps : hp.epochs * steps_per_epoch;
  const std::int64_t preview_count = std::min<std::int64_t>(n, 4);

  auto make_checkpoint = [&](std::int64_t at_step) {
    Checkpoint ckpt;
    ckpt.kind = "refinenet";
    ckpt.config = config.to_json();
    ckpt.step = at_step;
    ckpt.seed = hp.seed;
    append_module_state(ckpt, *refiner.generator, "generator.");
    append_module_state(ckpt, *refiner.discriminator, "discriminator.");
    append_adam_state(ckpt, opt_g, *refiner.generator, "optimizer_g.");
    append_adam_state(ckpt, opt_d, *refiner.discriminator, "optimizer_d.");
    ckpt.metadata["label"] = config.perceptual() ? "refined_pl" : "refined_wo_pl";
    ckpt.metadata["stage1_tensors_hash"] = gennet_ckpt.tensors_hash();
    ckpt.metadata["stage1_config_hash"] = gennet_ckpt.config_hash();
    ckpt.metadata["hparams"] = hp.to_json();
    return ckpt;
  };

  refiner.generator->train();
  refiner.discriminator->train();
  std::int64_t step = 0;
  while (step < total_steps) {
    const std::int64_t epoch = step / steps_per_epoch;
    double epoch_loss = 0.0;
    std::int64_t batches_run = 0;
    for (const auto& batch : epoch_batches(n, hp.batch_size, hp.seed, epoch)) {
      if (step >= total_steps) break;
      const auto idx = torch::tensor(batch, torch::kInt64);
      const auto coarse = coarse_all.index_select(0, idx);
      const auto real = data.images.index_select(0, idx);
      const auto refined = refiner.generator->forward(coarse);

      set_requires_grad(*refiner.discriminator, true);
      opt_d.zero_grad();
      const auto d_loss = discriminator_objective(coarse, refined, real, refiner.discriminator, config.gan_loss);
      d_loss.backward();
      opt_d.step();

      set_requires_grad(*refiner.discriminator, false);
      opt_g.zero_grad();
      const auto terms = generator_objective(coarse, refined, real, refiner.discriminator, fx, config);
      terms.generator.backward();
      opt_g.step();

      const double g_value = terms.generator.item<double>();
      if (!std::isfinite(g_value) || !std::isfinite(d_loss.item<double>())) {
        throw Error(ErrorCode::DivergenceError, "non-finite RefineNet loss at step " + std::to_string(step));
      }
      ++step;
      epoch_loss += g_value;
      ++batches_run;

      if (hp.checkpoint_every > 0 && step % hp.checkpoint_every == 0 && sink.on_checkpoint) {
        sink.on_checkpoint(make_checkpoint(step));
      }
      if (hp.snapshot_every > 0 && step % hp.snapshot_every == 0 && sink.on_snapshot) {
        refiner.generator->eval();
        const auto preview_coarse = coarse_all.slice(0, 0, preview_count);
        torch::Tensor preview;
        {
          torch::NoGradGuard no_grad;
          preview = refiner.generator->forward(preview_coarse);
        }
        refiner.generator->train();
        std::vector<Rgb8> tiles;
        for (std::int64_t i = 0; i < preview_count; ++i) tiles.push_back(model_to_rgb8(preview_coarse[i]));
        for (std::int64_t i = 0; i < preview_count; ++i) tiles.push_back(model_to_rgb8(preview[i]));
        for (std::int64_t i = 0; i < preview_count; ++i) tiles.push_back(model_to_rgb8(data.images[i]));
        sink.on_snapshot(step, make_grid(tiles, static_cast<int>(preview_count)));
      }
    }
    if (batches_run > 0 && sink.on_epoch) sink.on_epoch(epoch, step, epoch_loss / static_cast<double>(batches_run));
  }
  refiner.generator->eval();
  refiner.discriminator->eval();

  if (gennet_checkpoint(gennet, 0, 0).tensors_hash() != frozen_before) {
    throw Error(ErrorCode::CheckpointError, "GenNet parameters changed during RefineNet training");
  }

  return make_checkpoint(step);
}

}  // namespace posesynth
