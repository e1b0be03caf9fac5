#include <filesystem>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "posesynth/checkpoint.hpp"
#include "test_util.hpp"

using namespace posesynth;
using fixture::temp_dir;

TEST(CheckpointFormat, RoundTripPreservesEverything) {
  Checkpoint ckpt;
  ckpt.kind = "gennet";
  ckpt.config = {{"a", 1}, {"b", {1, 2}}};
  ckpt.step = 42;
  ckpt.seed = 9;
  ckpt.metadata["note"] = "hello";
  ckpt.tensors.emplace_back("w", torch::randn({3, 4}));
  ckpt.tensors.emplace_back("d", torch::randn({2}, torch::kFloat64));
  ckpt.tensors.emplace_back("n", torch::tensor({7}, torch::kInt64));
  const auto stem = temp_dir("ckpt") / "model";
  ckpt.save(stem);
  EXPECT_TRUE(Checkpoint::exists(stem));

  const Checkpoint back = Checkpoint::load(stem);
  EXPECT_EQ(back.kind, "gennet");
  EXPECT_EQ(back.config, ckpt.config);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.metadata.at("note"), "hello");
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].first, ckpt.tensors[i].first);
    EXPECT_TRUE(torch::equal(back.tensors[i].second, ckpt.tensors[i].second));
  }
  EXPECT_EQ(back.tensors_hash(), ckpt.tensors_hash());
  EXPECT_EQ(back.config_hash(), ckpt.config_hash());
}

TEST(CheckpointFormat, HashesTrackContent) {
  Checkpoint a;
  a.tensors.emplace_back("w", torch::zeros({2, 2}));
  Checkpoint b = a;
  b.tensors[0].second = torch::zeros({2, 2});
  EXPECT_EQ(a.tensors_hash(), b.tensors_hash());
  b.tensors[0].second[0][0] = 1e-7f;
  EXPECT_NE(a.tensors_hash(), b.tensors_hash());
  EXPECT_EQ(json_hash(nlohmann::json{{"a", 1}, {"b", 2}}), json_hash(nlohmann::json::parse(R"({"b":2,"a":1})")));
}

TEST(CheckpointFormat, MissingOrCorruptFiles) {
  const auto dir = temp_dir("ckpt_bad");
  EXPECT_FALSE(Checkpoint::exists(dir / "nothing"));
  EXPECT_ERROR_CODE(Checkpoint::load(dir / "nothing"), ErrorCode::CheckpointError);

  Checkpoint ckpt;
  ckpt.kind = "gennet";
  ckpt.tensors.emplace_back("w", torch::ones({4}));
  ckpt.save(dir / "m");
  std::filesystem::resize_file(dir / "m.ckpt", 12);
  EXPECT_ERROR_CODE(Checkpoint::load(dir / "m"), ErrorCode::CheckpointError);
}

TEST(CheckpointModuleState, RestoreRejectsMismatches) {
  torch::nn::Linear a(3, 2), b(3, 2), wrong(4, 2);
  Checkpoint ckpt;
  append_module_state(ckpt, *a, "m.");
  restore_module_state(*b, ckpt, "m.");
  EXPECT_TRUE(torch::equal(a->weight, b->weight));
  EXPECT_ERROR_CODE(restore_module_state(*wrong, ckpt, "m."), ErrorCode::CheckpointError);
  EXPECT_ERROR_CODE(restore_module_state(*b, ckpt, "other."), ErrorCode::CheckpointError);
}
