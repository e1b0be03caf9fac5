#include <algorithm>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "posesynth/gennet.hpp"
#include "posesynth/toy_scene.hpp"
#include "test_util.hpp"

using namespace posesynth;

namespace {

GenNetConfig tiny_config() {
  GenNetConfig c;
  c.fc_dims = {32, 16};
  c.upsample_channels = {8, 8, 8, 8};
  c.output_size = 16;
  return c;
}

std::vector<SceneSample> toy_samples(int n) {
  const ToySceneSpec spec = make_toy_scene(7, 5, 16);
  return toy_dataset(spec, n, 1, 3).train;
}

TrainHparams quick_hparams(std::int64_t steps) {
  TrainHparams hp;
  hp.lr = 1e-3;
  hp.batch_size = 4;
  hp.max_steps = steps;
  hp.seed = 5;
  hp.snapshot_every = 0;
  return hp;
}

std::int64_t linear_weight_numel(torch::nn::Module& m, std::int64_t in, std::int64_t out) {
  for (const auto& sub : m.modules(false)) {
    if (auto* lin = sub->as<torch::nn::Linear>()) {
      if (lin->options.in_features() == in && lin->options.out_features() == out) {
        EXPECT_FALSE(lin->options.bias());
        return lin->weight.numel();
      }
    }
  }
  return -1;
}

}  // namespace

TEST(GenNetConfig, DefaultsAndValidation) {
  const GenNetConfig c;
  EXPECT_EQ(c.fc_dims, (std::vector<std::int64_t>{2048, 1024}));
  EXPECT_EQ(c.upsample_channels.size(), 8u);
  EXPECT_EQ(c.output_size, 256);
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(GenNetConfig::small().validate());

  GenNetConfig bad = c;
  bad.output_size = 128;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::ConfigError);
  bad = c;
  bad.dropout_p = 1.0;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::ConfigError);
  bad = c;
  bad.upsample_channels[3] = 0;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(GenNet{bad}, ErrorCode::ConfigError);
}

TEST(GenNetConfig, JsonRoundTrip) {
  GenNetConfig c = GenNetConfig::small();
  c.dropout_p = 0.1;
  c.use_batchnorm = false;
  EXPECT_EQ(GenNetConfig::from_json(c.to_json()), c);
}

TEST(GenNetArchitecture, FullSizeShapesAndCounts) {
  torch::manual_seed(0);
  GenNet model(GenNetConfig{});
  EXPECT_EQ(linear_weight_numel(*model, 7, 2048), 14336);
  EXPECT_EQ(linear_weight_numel(*model, 2048, 1024), 2097152);
  model->eval();
  torch::NoGradGuard no_grad;
  const auto out = model->forward(torch::randn({1, 7}));
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 3, 256, 256}));
  EXPECT_LE(out.max().item<float>(), 1.0f);
  EXPECT_GE(out.min().item<float>(), -1.0f);
}

TEST(GenNetArchitecture, SpatialSizeDoublesPerBlock) {
  for (int blocks = 2; blocks <= 6; ++blocks) {
    GenNetConfig c = tiny_config();
    c.upsample_channels.assign(static_cast<std::size_t>(blocks), 4);
    c.output_size = std::int64_t{1} << blocks;
    GenNet model(c);
    model->eval();
    torch::NoGradGuard no_grad;
    EXPECT_EQ(model->forward(torch::zeros({2, 7})).size(2), c.output_size);
  }
}

TEST(GenNetArchitecture, NoBatchNormMeansNoNormalizationParameters) {
  GenNetConfig c = tiny_config();
  EXPECT_GT(GenNet(c)->normalization_parameter_count(), 0);
  c.use_batchnorm = false;
  EXPECT_EQ(GenNet(c)->normalization_parameter_count(), 0);
  for (const auto& m : GenNet(c)->modules(false)) EXPECT_EQ(m->name().find("Norm"), std::string::npos);
}

TEST(GenNetLoss, Examples) {
  const auto a = torch::randn({2, 3, 4, 4});
  EXPECT_EQ(posesynth::l1_loss(a, a).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(posesynth::l1_loss(torch::ones({2, 3, 4, 4}), -torch::ones({2, 3, 4, 4})).item<double>(), 2.0);
  EXPECT_NEAR(posesynth::l1_loss(a + 0.5, a).item<double>(), 0.5, 1e-6);
  EXPECT_ERROR_CODE(posesynth::l1_loss(a, torch::zeros({2, 3, 4, 5})), ErrorCode::ShapeError);
}

TEST(GenNetLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  const auto target = torch::randn({2, 2, 3}, torch::kFloat64);
  // Keep every element at least 0.1 away from its target so |.| is smooth.
  auto offset = torch::rand({2, 2, 3}, torch::kFloat64) * 0.9 + 0.1;
  offset = offset * (torch::randint(0, 2, {2, 2, 3}, torch::kFloat64) * 2 - 1);
  const auto pred = (target + offset).requires_grad_(true);
  posesynth::l1_loss(pred, target).backward();
  const auto numeric = oracle::numeric_gradient(
      [&](const torch::Tensor& p) { return posesynth::l1_loss(p, target).item<double>(); }, pred.detach());
  const double rel = ((pred.grad() - numeric).abs().max() / numeric.abs().max()).item<double>();
  EXPECT_LT(rel, 1e-4);
}

TEST(GenNetTraining, ZeroEpochsReturnsInitialization) {
  TrainHparams hp = quick_hparams(0);
  hp.epochs = 0;
  std::int64_t epochs_logged = 0;
  TrainingSink sink;
  sink.on_epoch = [&](std::int64_t, std::int64_t, double) { ++epochs_logged; };
  const Checkpoint ckpt = train_gennet(toy_samples(4), ImageLoader{}, hp, tiny_config(), sink);
  EXPECT_EQ(ckpt.step, 0);
  EXPECT_EQ(epochs_logged, 0);

  seed_everything(hp.seed);
  GenNet fresh(tiny_config());
  init_weights(*fresh);
  GenNet loaded = load_gennet(ckpt);
  const auto a = fresh->named_parameters(), b = loaded->named_parameters();
  for (const auto& p : a) EXPECT_TRUE(torch::equal(p.value(), b[p.key()])) << p.key();
}

TEST(GenNetTraining, Errors) {
  EXPECT_ERROR_CODE(train_gennet({}, ImageLoader{}, quick_hparams(1), tiny_config()), ErrorCode::EmptyDataset);
  TrainHparams hp = quick_hparams(4);
  hp.lr = std::numeric_limits<double>::infinity();
  EXPECT_ERROR_CODE(train_gennet(toy_samples(4), ImageLoader{}, hp, tiny_config()), ErrorCode::DivergenceError);
}

TEST(GenNetTraining, SeededRunsAreIdentical) {
  const auto samples = toy_samples(6);
  auto run = [&] {
    std::vector<double> losses;
    TrainingSink sink;
    sink.on_epoch = [&](std::int64_t, std::int64_t, double loss) { losses.push_back(loss); };
    const Checkpoint ckpt = train_gennet(samples, ImageLoader{}, quick_hparams(12), tiny_config(), sink);
    return std::make_pair(losses, ckpt.tensors_hash());
  };
  const auto first = run(), second = run();
  EXPECT_EQ(first.first.size(), 6u);
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}

TEST(GenNetTraining, LossDecreasesOnAFixedSet) {
  std::vector<double> losses;
  TrainingSink sink;
  sink.on_epoch = [&](std::int64_t, std::int64_t, double loss) { losses.push_back(loss); };
  GenNetConfig c = tiny_config();
  c.dropout_p = 0.0;
  train_gennet(toy_samples(8), ImageLoader{}, quick_hparams(200), c, sink);
  ASSERT_GE(losses.size(), 2u);
  EXPECT_LT(losses.back(), 0.7 * losses.front());
}

TEST(GenNetTraining, ResumeContinuesFromCheckpoint) {
  const auto samples = toy_samples(6);
  const Checkpoint first = train_gennet(samples, ImageLoader{}, quick_hparams(4), tiny_config());
  EXPECT_EQ(first.step, 4);
  EXPECT_TRUE(std::any_of(first.tensors.begin(), first.tensors.end(),
                          [](const auto& t) { return t.first.rfind("optimizer.", 0) == 0; }));
  const Checkpoint resumed = train_gennet(samples, ImageLoader{}, quick_hparams(8), tiny_config(), {}, &first);
  EXPECT_EQ(resumed.step, 8);
  EXPECT_NE(resumed.tensors_hash(), first.tensors_hash());

  GenNetConfig other = tiny_config();
  other.dropout_p = 0.0;
  EXPECT_ERROR_CODE(train_gennet(samples, ImageLoader{}, quick_hparams(8), other, {}, &first), ErrorCode::CheckpointError);
}

TEST(GenNetInference, EvalModeIsDeterministic) {
  const Checkpoint ckpt = train_gennet(toy_samples(4), ImageLoader{}, quick_hparams(3), tiny_config());
  const GenNet model = load_gennet(ckpt);
  const Pose pose = toy_samples(4)[1].pose;
  const auto a = gennet_infer(model, pose), b = gennet_infer(model, pose);
  EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_LE(a.abs().max().item<float>(), 1.0f);
}

TEST(GenNetInference, MismatchedCheckpointIsRejected) {
  Checkpoint ckpt = train_gennet(toy_samples(4), ImageLoader{}, quick_hparams(1), tiny_config());
  ckpt.tensors.erase(std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                 [](const auto& t) { return t.first.rfind("model.", 0) == 0; }));
  EXPECT_ERROR_CODE(load_gennet(ckpt), ErrorCode::CheckpointError);
  Checkpoint wrong_kind = ckpt;
  wrong_kind.kind = "refinenet";
  EXPECT_ERROR_CODE(load_gennet(wrong_kind), ErrorCode::CheckpointError);
}
