// Command-line front end: dataset generation, both training stages,
// evaluation, trajectory rendering, nearest-pose lookup and the HTTP service.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "posesynth/experiment.hpp"
#include "posesynth/service.hpp"
#include "posesynth/synthesis.hpp"

using namespace posesynth;

namespace {

int fail(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << "\n";
  return code == "UsageError" ? 64 : 1;
}

ExperimentConfig load_config(const std::string& path, const std::string& output_override) {
  ExperimentConfig c = ExperimentConfig::load(path);
  if (!output_override.empty()) c.output_dir = output_override;
  return c;
}

void report_done(Experiment& exp, const char* stage) {
  std::cout << stage << " finished; artifacts in " << exp.output_dir().string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-conditioned two-stage view synthesis"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output-dir", output_dir, "override the config's output directory");
  };

  // toy-gen
  auto* toy = app.add_subcommand("toy-gen", "render the procedural toy dataset to disk");
  std::string toy_out, toy_config_out;
  std::uint64_t toy_seed = 7, toy_pose_seed = 11;
  int toy_train = 200, toy_test = 50, toy_size = 64, toy_primitives = 5;
  toy->add_option("--out", toy_out, "dataset directory")->required();
  toy->add_option("--seed", toy_seed, "scene layout seed");
  toy->add_option("--pose-seed", toy_pose_seed, "camera pose sampler seed");
  toy->add_option("--train", toy_train, "training views");
  toy->add_option("--test", toy_test, "held-out views");
  toy->add_option("--size", toy_size, "image size in pixels");
  toy->add_option("--primitives", toy_primitives, "number of objects");
  toy->add_option("--config-out", toy_config_out, "also write an experiment config that trains on this dataset");

  // training / eval
  auto* train1 = app.add_subcommand("train-gennet", "stage 1: train GenNet");
  add_config(train1);
  bool resume = false;
  train1->add_flag("--resume", resume, "continue from the latest checkpoint in the output directory");

  auto* train2 = app.add_subcommand("train-refinenet", "stage 2: train RefineNet on the frozen GenNet");
  add_config(train2);
  bool no_perceptual = false;
  train2->add_flag("--no-perceptual", no_perceptual, "drop the style and content losses");

  auto* eval = app.add_subcommand("eval", "evaluate every trained variant on the test split");
  add_config(eval);
  bool eval_train = false, global_ssim = false;
  eval->add_flag("--train-split", eval_train, "evaluate on the training split instead");
  eval->add_flag("--global-ssim", global_ssim, "single-window SSIM instead of 11x11 Gaussian windows");

  // inference
  std::string ckpt_dir, stage_name = "coarse";
  auto* traj = app.add_subcommand("trajectory", "render a keypose trajectory frame by frame");
  std::string traj_path, traj_out;
  traj->add_option("--checkpoint-dir", ckpt_dir, "experiment output directory")->required();
  traj->add_option("--trajectory", traj_path, "trajectory JSON")->required()->check(CLI::ExistingFile);
  traj->add_option("--out", traj_out, "frame directory")->required();
  traj->add_option("--stage", stage_name, "coarse or refined");

  auto* near = app.add_subcommand("nearest", "training poses closest to a query pose");
  std::string pose_text;
  std::size_t k = 3;
  double alpha = 1.0;
  near->add_option("--checkpoint-dir", ckpt_dir, "experiment output directory")->required();
  near->add_option("--pose", pose_text, "x,y,z,qw,qx,qy,qz")->required();
  near->add_option("-k", k, "number of neighbours");
  near->add_option("--alpha", alpha, "rotation weight in the pose distance");

  auto* srv = app.add_subcommand("serve", "HTTP inference service");
  std::string host = "127.0.0.1";
  int port = 8080;
  ServiceOptions service_options;
  srv->add_option("--checkpoint-dir", ckpt_dir, "experiment output directory")->required();
  srv->add_option("--host", host, "bind address");
  srv->add_option("--port", port, "port");
  srv->add_option("--max-in-flight", service_options.max_in_flight, "concurrent inferences");
  srv->add_option("--cors-origin", service_options.cors_origin, "Access-Control-Allow-Origin value");
  srv->add_option("--scene-name", service_options.scene_name, "name reported by scene-info");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what());
  }

  try {
    if (*toy) {
      ToySceneSpec spec = make_toy_scene(toy_seed, toy_primitives, toy_size);
      const DatasetSplit split = toy_dataset(spec, toy_train, toy_test, toy_pose_seed);
      materialize_dataset(split, toy_out);
      std::ofstream(std::filesystem::path(toy_out) / "toy_scene.json") << toy_scene_to_json(spec) << "\n";
      if (!toy_config_out.empty()) {
        ExperimentConfig c = ExperimentConfig::toy_default();
        c.dataset.kind = "cambridge";
        c.dataset.root = std::filesystem::absolute(toy_out).string();
        c.dataset.pose_files = {"poses.txt"};
        c.dataset.test_sequences = {"toy_test"};
        if (toy_size != c.gennet.output_size) {
          throw Error(ErrorCode::ConfigError, "--config-out supports the 64 px small networks only; edit the config for other sizes");
        }
        c.save(toy_config_out);
      }
      std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test views to "
                << toy_out << "\n";
    } else if (*train1) {
      Experiment exp(load_config(config_path, output_dir));
      ExperimentLock lock(exp.output_dir());
      const Checkpoint ckpt = exp.run_stage1(resume);
      std::cout << "stage 1: " << ckpt.step << " steps\n";
      report_done(exp, "stage 1");
    } else if (*train2) {
      Experiment exp(load_config(config_path, output_dir));
      ExperimentLock lock(exp.output_dir());
      const Checkpoint ckpt = exp.run_stage2(!no_perceptual);
      std::cout << "stage 2 (" << ckpt.metadata.value("label", "") << "): " << ckpt.step << " steps\n";
      report_done(exp, "stage 2");
    } else if (*eval) {
      ExperimentConfig c = load_config(config_path, output_dir);
      if (global_ssim) c.global_ssim = true;
      Experiment exp(c);
      ExperimentLock lock(exp.output_dir());
      const EvalReport report = exp.run_eval(eval_train ? EvalSet::Train : EvalSet::Test);
      std::cout << report.to_table() << "\n" << report.to_json() << "\n";
    } else if (*traj) {
      std::ifstream in(traj_path);
      std::stringstream text;
      text << in.rdbuf();
      const TrajectorySpec spec = parse_trajectory_json(text.str());
      const Trajectory t = interpolate_trajectory(spec.keyposes, spec.frames_per_segment);
      const Synthesizer synth = Synthesizer::load(ckpt_dir);
      const auto files = render_trajectory(synth, t, parse_stage(stage_name), traj_out);
      std::cout << "wrote " << files.size() << " frames to " << traj_out << "\n";
    } else if (*near) {
      const Synthesizer synth = Synthesizer::load(ckpt_dir);
      if (synth.train_samples().empty()) throw Error(ErrorCode::EmptyDataset, "no train_poses.txt in " + ckpt_dir);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& n : nearest_poses(parse_pose_text(pose_text), synth.train_samples(), k, alpha)) {
        out.push_back({{"index", n.index}, {"distance", n.distance}, {"image_ref", synth.train_samples()[n.index].image_ref}});
      }
      std::cout << out.dump(2) << "\n";
    } else if (*srv) {
      serve(ckpt_dir, host, port, service_options);
    }
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.detail());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
  return 0;
}
