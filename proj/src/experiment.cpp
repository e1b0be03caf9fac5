#include "posesynth/experiment.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <fstream>
#include <set>

#include "posesynth/tensor_image.hpp"

namespace posesynth {

namespace fs = std::filesystem;

namespace {

constexpr int kThumbnailSize = 64;

template <typename T>
T field(const nlohmann::json& j, const char* key, const T& fallback) {
  try {
    return j.value(key, fallback);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw Error(ErrorCode::ConfigError, "unknown key '" + item.key() + "' in " + where);
  }
}

/// Rejects keys that the default serialization of the section does not have,
/// descending into nested objects.
void reject_unknown_like(const nlohmann::json& j, const nlohmann::json& defaults, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) throw Error(ErrorCode::ConfigError, "unknown key '" + item.key() + "' in " + where);
    const auto& d = defaults.at(item.key());
    if (d.is_object() && item.value().is_object()) reject_unknown_like(item.value(), d, where + "." + item.key());
  }
}

std::string frame_name(const char* pattern, std::int64_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, static_cast<long long>(index));
  return buf;
}

/// Writes loss rows and sample grids for one training stage.
TrainingSink stage_sink(const fs::path& dir, const std::string& experiment_hash, bool append,
                        const fs::path& latest_stem) {
  fs::create_directories(dir / "samples");
  const auto csv = dir / "loss.csv";
  if (!append || !fs::exists(csv)) {
    std::ofstream out(csv);
    out << "# experiment_hash=" << experiment_hash << "\nepoch,step,loss\n";
  }
  nlohmann::json manifest = {{"experiment_hash", experiment_hash}};
  std::ofstream(dir / "samples" / "manifest.json") << manifest.dump(2) << "\n";

  TrainingSink sink;
  sink.on_epoch = [csv](std::int64_t epoch, std::int64_t step, double loss) {
    std::ofstream out(csv, std::ios::app);
    out << epoch << ',' << step << ',' << loss << '\n';
  };
  sink.on_snapshot = [dir](std::int64_t step, const Rgb8& grid) {
    write_png(dir / "samples" / frame_name("step_%06lld.png", step), grid);
  };
  if (!latest_stem.empty()) {
    sink.on_checkpoint = [latest_stem, experiment_hash](const Checkpoint& ckpt) {
      Checkpoint copy = ckpt;
      copy.metadata["experiment_hash"] = experiment_hash;
      copy.save(latest_stem);
    };
  }
  return sink;
}

void require_hash(const Checkpoint& ckpt, const std::string& expected, const fs::path& stem) {
  const std::string found = ckpt.metadata.value("experiment_hash", std::string());
  if (found != expected) {
    throw Error(ErrorCode::ConfigError, stem.string() + " belongs to experiment " + (found.empty() ? "<none>" : found) +
                                            ", not " + expected);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

nlohmann::json DatasetConfig::to_json() const {
  return {{"kind", kind},
          {"root", root},
          {"pose_files", pose_files},
          {"test_sequences", test_sequences},
          {"quat_order", to_string(quat_order)},
          {"toy", nlohmann::json::parse(toy_scene_to_json(toy))},
          {"toy_train", toy_train},
          {"toy_test", toy_test},
          {"toy_pose_seed", toy_pose_seed}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"kind", "root", "pose_files", "test_sequences", "quat_order", "toy", "toy_train", "toy_test",
                     "toy_pose_seed"},
                 "dataset");
  DatasetConfig c;
  c.kind = field(j, "kind", c.kind);
  c.root = field(j, "root", c.root);
  c.pose_files = field(j, "pose_files", c.pose_files);
  c.test_sequences = field(j, "test_sequences", c.test_sequences);
  c.quat_order = parse_quat_order(field(j, "quat_order", to_string(c.quat_order)));
  if (j.contains("toy")) c.toy = toy_scene_from_json(j.at("toy").dump());
  c.toy_train = field(j, "toy_train", c.toy_train);
  c.toy_test = field(j, "toy_test", c.toy_test);
  c.toy_pose_seed = field(j, "toy_pose_seed", c.toy_pose_seed);
  return c;
}

ExperimentConfig ExperimentConfig::toy_default() {
  ExperimentConfig c;
  c.dataset.kind = "toy";
  c.gennet = GenNetConfig::small();
  // 200 views are too few for dropout to help; it only slows convergence.
  c.gennet.dropout_p = 0.0;
  c.refine = RefineConfig::small();
  // The default style weight is sized for pretrained VGG activations; Gram
  // differences from the seeded random extractor are far larger and would
  // swamp the L1 term.
  c.refine.lambda2 = 1.0;
  c.stage1.lr = 1e-3;
  c.stage1.batch_size = 16;
  c.stage1.max_steps = 2000;
  c.stage2.lr = 2e-4;
  c.stage2.batch_size = 16;
  c.stage2.max_steps = 1200;
  c.seed = 1;
  c.output_dir = "runs/toy";
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"dataset", dataset.to_json()},
          {"gennet", gennet.to_json()},
          {"refine", refine.to_json()},
          {"stage1", stage1.to_json()},
          {"stage2", stage2.to_json()},
          {"global_ssim", global_ssim},
          {"seed", seed},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"dataset", "gennet", "refine", "stage1", "stage2", "global_ssim", "seed", "output_dir"},
                 "experiment config");
  ExperimentConfig c;
  if (j.contains("gennet")) reject_unknown_like(j.at("gennet"), c.gennet.to_json(), "gennet");
  if (j.contains("refine")) reject_unknown_like(j.at("refine"), c.refine.to_json(), "refine");
  if (j.contains("stage1")) reject_unknown_like(j.at("stage1"), c.stage1.to_json(), "stage1");
  if (j.contains("stage2")) reject_unknown_like(j.at("stage2"), c.stage2.to_json(), "stage2");
  if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
  if (j.contains("gennet")) c.gennet = GenNetConfig::from_json(j.at("gennet"));
  if (j.contains("refine")) c.refine = RefineConfig::from_json(j.at("refine"));
  try {
    if (j.contains("stage1")) c.stage1 = TrainHparams::from_json(j.at("stage1"), c.stage1);
    if (j.contains("stage2")) c.stage2 = TrainHparams::from_json(j.at("stage2"), c.stage2);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("hparams: ") + e.what());
  }
  c.global_ssim = field(j, "global_ssim", c.global_ssim);
  c.seed = field(j, "seed", c.seed);
  c.output_dir = field(j, "output_dir", c.output_dir);
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output_dir");
  return json_hash(j);
}

void ExperimentConfig::validate() const {
  gennet.validate();
  refine.validate();
  if (gennet.output_size != refine.image_size) {
    throw Error(ErrorCode::ConfigError, "gennet.output_size and refine.image_size must match");
  }
  if (dataset.kind == "toy") {
    if (dataset.toy_train < 1 || dataset.toy_test < 1) throw Error(ErrorCode::ConfigError, "toy split sizes must be >= 1");
    return;
  }
  if (dataset.kind != "cambridge" && dataset.kind != "sevenscenes") {
    throw Error(ErrorCode::ConfigError, "dataset.kind must be toy, cambridge or sevenscenes");
  }
  if (dataset.root.empty() || !fs::is_directory(dataset.root)) {
    throw Error(ErrorCode::ConfigError, "dataset root '" + dataset.root + "' does not exist");
  }
  if (dataset.kind == "cambridge") {
    if (dataset.pose_files.empty()) throw Error(ErrorCode::ConfigError, "cambridge dataset needs pose_files");
    for (const auto& f : dataset.pose_files) {
      if (!fs::exists(fs::path(dataset.root) / f)) throw Error(ErrorCode::ConfigError, "pose file '" + f + "' not found");
    }
  }
  if (dataset.test_sequences.empty()) throw Error(ErrorCode::ConfigError, "dataset.test_sequences is empty");
}

// ---------------------------------------------------------------------------
// Lock

ExperimentLock::ExperimentLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw Error(ErrorCode::IoError, "cannot create " + path_.string());
    long holder = 0;
    std::ifstream(path_) >> holder;
    if (holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM)) {
      throw Error(ErrorCode::ConfigError, dir.string() + " is locked by process " + std::to_string(holder));
    }
    fs::remove(path_);  // stale
  }
  throw Error(ErrorCode::ConfigError, "could not lock " + dir.string());
}

ExperimentLock::~ExperimentLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Dataset

DatasetSplit load_dataset(const DatasetConfig& config) {
  if (config.kind == "toy") return toy_dataset(config.toy, config.toy_train, config.toy_test, config.toy_pose_seed);
  std::vector<SceneSample> samples;
  if (config.kind == "cambridge") {
    for (const auto& f : config.pose_files) {
      auto part = read_pose_list(fs::path(config.root) / f, config.quat_order);
      samples.insert(samples.end(), part.begin(), part.end());
    }
  } else if (config.kind == "sevenscenes") {
    samples = load_sevenscenes(config.root);
  } else {
    throw Error(ErrorCode::ConfigError, "unknown dataset kind '" + config.kind + "'");
  }
  return make_split(samples, {config.test_sequences.begin(), config.test_sequences.end()});
}

// ---------------------------------------------------------------------------
// Experiment

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) { config_.validate(); }

const DatasetSplit& Experiment::split() {
  if (!split_) split_ = load_dataset(config_.dataset);
  return *split_;
}

ImageLoader Experiment::loader() const {
  return ImageLoader(config_.dataset.kind == "toy" ? fs::path() : fs::path(config_.dataset.root), log_);
}

void Experiment::write_access_log(const std::string& phase) const {
  std::ofstream out(output_dir() / ("access_" + phase + ".tsv"));
  for (const auto& e : log_->entries()) {
    if (e.phase == phase) out << e.phase << '\t' << e.image_ref << '\n';
  }
}

fs::path Experiment::stage1_stem() const { return output_dir() / "stage1" / "gennet"; }

fs::path Experiment::stage2_stem(bool perceptual) const {
  return output_dir() / (perceptual ? "stage2_pl" : "stage2_wo_pl") / "refinenet";
}

Checkpoint Experiment::run_stage1(bool resume) {
  const auto& data = split();
  const auto dir = output_dir() / "stage1";
  fs::create_directories(dir);
  config_.save(output_dir() / "config.json");
  const std::string hash = config_.hash();

  std::optional<Checkpoint> resume_from;
  if (resume) {
    for (const auto& stem : {dir / "gennet_latest", stage1_stem()}) {
      if (!Checkpoint::exists(stem)) continue;
      Checkpoint c = Checkpoint::load(stem);
      require_hash(c, hash, stem);
      if (!resume_from || c.step > resume_from->step) resume_from = std::move(c);
    }
  }

  TrainHparams hp = config_.stage1;
  hp.seed = config_.seed;
  const TrainingSink sink = stage_sink(dir, hash, resume_from.has_value(), dir / "gennet_latest");

  log_->set_phase("stage1");
  const ImageLoader images = loader();
  Checkpoint ckpt = train_gennet(data.train, images, hp, config_.gennet, sink, resume_from ? &*resume_from : nullptr);
  ckpt.metadata["experiment_hash"] = hash;
  ckpt.save(stage1_stem());

  write_pose_list(dir / "train_poses.txt", data.train);
  fs::create_directories(dir / "thumbnails");
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const ImageF small = resize_bilinear(to_real(images.load(data.train[i])), kThumbnailSize, kThumbnailSize);
    write_png(dir / "thumbnails" / frame_name("%05lld.png", static_cast<std::int64_t>(i)), to_rgb8(small));
  }
  log_->set_phase("idle");
  write_access_log("stage1");
  return ckpt;
}

Checkpoint Experiment::run_stage2(bool perceptual) {
  const auto stem1 = stage1_stem();
  if (!Checkpoint::exists(stem1)) {
    throw Error(ErrorCode::CheckpointError, "stage 2 needs a stage-1 checkpoint at " + stem1.string());
  }
  const std::string hash = config_.hash();
  const Checkpoint stage1 = Checkpoint::load(stem1);
  require_hash(stage1, hash, stem1);

  const auto& data = split();
  const auto dir = stage2_stem(perceptual).parent_path();
  const TrainingSink sink = stage_sink(dir, hash, false, dir / "refinenet_latest");
  TrainHparams hp = config_.stage2;
  hp.seed = config_.seed + 1;
  const RefineConfig rc = perceptual ? config_.refine : config_.refine.without_perceptual();

  log_->set_phase(perceptual ? "stage2_pl" : "stage2_wo_pl");
  Checkpoint ckpt = train_refinenet(stage1, data.train, loader(), rc, hp, sink);
  log_->set_phase("idle");
  ckpt.metadata["experiment_hash"] = hash;
  ckpt.metadata["label"] = perceptual ? "refined_pl" : "refined_wo_pl";
  ckpt.save(stage2_stem(perceptual));
  write_access_log(perceptual ? "stage2_pl" : "stage2_wo_pl");
  return ckpt;
}

EvalReport Experiment::run_eval(EvalSet set) {
  const std::string hash = config_.hash();
  const auto stem1 = stage1_stem();
  if (!Checkpoint::exists(stem1)) throw Error(ErrorCode::CheckpointError, "no stage-1 checkpoint at " + stem1.string());
  const Checkpoint stage1 = Checkpoint::load(stem1);
  require_hash(stage1, hash, stem1);
  const GenNet gennet = load_gennet(stage1);

  std::vector<std::pair<std::string, UnetGenerator>> refiners;
  for (bool perceptual : {true, false}) {
    const auto stem = stage2_stem(perceptual);
    if (!Checkpoint::exists(stem)) continue;
    const Checkpoint c = Checkpoint::load(stem);
    require_hash(c, hash, stem);
    if (c.metadata.value("stage1_tensors_hash", std::string()) != stage1.tensors_hash()) {
      throw Error(ErrorCode::CheckpointError, stem.string() + " was trained on a different stage-1 checkpoint");
    }
    refiners.emplace_back(perceptual ? "refined_pl" : "refined_wo_pl", load_refiner(c));
  }

  const auto& samples = set == EvalSet::Test ? split().test : split().train;
  log_->set_phase("eval");
  const TensorDataset data = load_tensors(samples, loader(), config_.gennet.output_size);
  log_->set_phase("idle");

  std::map<std::string, std::vector<ImageF>> variants;
  std::vector<ImageF> refs;
  const auto n = data.poses.size(0);
  for (std::int64_t start = 0; start < n; start += 16) {
    torch::NoGradGuard no_grad;
    const auto end = std::min(n, start + 16);
    GenNet g = gennet;
    const auto coarse = g->forward(data.poses.slice(0, start, end));
    std::vector<std::pair<std::string, torch::Tensor>> outputs{{"coarse", coarse}};
    for (const auto& [label, refiner] : refiners) outputs.emplace_back(label, refine_infer(refiner, coarse));
    for (std::int64_t i = 0; i < end - start; ++i) {
      refs.push_back(model_to_unit(data.images[start + i]));
      for (const auto& [label, batch] : outputs) variants[label].push_back(model_to_unit(batch[i]));
    }
  }

  SsimOptions opts;
  opts.global = config_.global_ssim;
  EvalReport report = evaluate(variants, refs, opts);
  report.config_hash = hash;
  const std::string suffix = set == EvalSet::Test ? "" : "_train";
  std::ofstream(output_dir() / ("eval_report" + suffix + ".json")) << report.to_json() << "\n";
  std::ofstream(output_dir() / ("eval_report" + suffix + ".txt")) << report.to_table();
  write_access_log("eval");
  return report;
}

}  // namespace posesynth
