#include "posesynth/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace posesynth {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& tok, double& value) {
  const char* first = tok.data();
  const char* last = first + tok.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, value);
  return res.ec == std::errc() && res.ptr == last && std::isfinite(value);
}

std::string first_component(const std::string& ref) {
  const auto pos = ref.find_first_of("/\\");
  return pos == std::string::npos ? std::string() : ref.substr(0, pos);
}

}  // namespace

QuatOrder parse_quat_order(const std::string& name) {
  if (name == "wxyz") return QuatOrder::WXYZ;
  if (name == "xyzw") return QuatOrder::XYZW;
  throw Error(ErrorCode::ConfigError, "quat_order must be 'wxyz' or 'xyzw', got '" + name + "'");
}

std::string to_string(QuatOrder order) { return order == QuatOrder::WXYZ ? "wxyz" : "xyzw"; }

std::vector<SceneSample> parse_pose_list(std::istream& in, QuatOrder order) {
  std::vector<SceneSample> out;
  std::string line;
  int line_no = 0;
  bool in_header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;

    std::array<double, 7> v{};
    bool numeric = tokens.size() == 8;
    for (std::size_t i = 0; numeric && i < 7; ++i) numeric = parse_double(tokens[i + 1], v[i]);

    if (in_header && !numeric) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (!numeric) {
      throw Error(ErrorCode::ParseError, where + ": expected '<image> x y z q q q q', got '" + line + "'");
    }
    in_header = false;

    const Quaternion q = order == QuatOrder::WXYZ ? Quaternion{v[3], v[4], v[5], v[6]}
                                                  : Quaternion{v[6], v[3], v[4], v[5]};
    SceneSample s;
    s.image_ref = tokens[0];
    try {
      s.pose = Pose({v[0], v[1], v[2]}, q);
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.detail());
    }
    s.sequence_id = first_component(s.image_ref);
    if (s.sequence_id.empty()) throw Error(ErrorCode::ParseError, where + ": image path has no sequence directory");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, "pose list contains no data lines");
  return out;
}

std::vector<SceneSample> read_pose_list(const std::filesystem::path& path, QuatOrder order) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open pose list " + path.string());
  return parse_pose_list(in, order);
}

void write_pose_list(const std::filesystem::path& path, const std::vector<SceneSample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "posesynth pose list\n";
  out << "ImageFile, Camera Position [X Y Z W P Q R]\n\n";
  for (const auto& s : samples) out << s.image_ref << ' ' << format_pose(s.pose) << '\n';
}

Pose parse_matrix_pose(std::istream& in) {
  std::array<double, 16> m{};
  std::string tok;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(in >> tok) || !parse_double(tok, m[i])) {
      throw Error(ErrorCode::ParseError, "pose matrix needs 16 reals, failed at entry " + std::to_string(i));
    }
  }
  constexpr double kTol = 1e-4;
  if (std::abs(m[12]) > kTol || std::abs(m[13]) > kTol || std::abs(m[14]) > kTol || std::abs(m[15] - 1.0) > kTol) {
    throw Error(ErrorCode::InvalidRotation, "last row of pose matrix is not (0, 0, 0, 1)");
  }
  const Mat3 r{{{m[0], m[1], m[2]}, {m[4], m[5], m[6]}, {m[8], m[9], m[10]}}};
  return Pose({m[3], m[7], m[11]}, matrix_to_quat(r));
}

std::vector<SceneSample> load_sevenscenes(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, "not a directory: " + root.string());
  std::vector<fs::path> pose_files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.ends_with(".pose.txt")) pose_files.push_back(entry.path());
  }
  std::sort(pose_files.begin(), pose_files.end());

  std::vector<SceneSample> out;
  for (const auto& p : pose_files) {
    std::ifstream in(p);
    SceneSample s;
    try {
      s.pose = parse_matrix_pose(in);
    } catch (const Error& e) {
      throw Error(e.code(), p.string() + ": " + e.detail());
    }
    auto stem = p.filename().string();
    stem.resize(stem.size() - std::string(".pose.txt").size());
    s.image_ref = fs::relative(p.parent_path() / (stem + ".color.png"), root).generic_string();
    s.sequence_id = first_component(s.image_ref);
    if (s.sequence_id.empty()) throw Error(ErrorCode::ParseError, p.string() + ": pose file outside a sequence dir");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, "no *.pose.txt files under " + root.string());
  return out;
}

ImageF preprocess_image(const Rgb8& raster, int size) {
  if (raster.channels != 3) {
    throw Error(ErrorCode::ChannelError, "expected 3 channels, got " + std::to_string(raster.channels));
  }
  if (raster.height < 1 || raster.width < 1) throw Error(ErrorCode::ShapeError, "empty image");
  ImageF out = resize_bilinear(to_real(raster), size, size);
  for (double& v : out.pixels) v = v / 127.5 - 1.0;
  return out;
}

DatasetSplit make_split(const std::vector<SceneSample>& samples, const std::set<std::string>& test_sequences) {
  std::set<std::string> observed;
  for (const auto& s : samples) observed.insert(s.sequence_id);
  for (const auto& name : test_sequences) {
    if (!observed.contains(name)) throw Error(ErrorCode::UnknownSequence, "no sequence named '" + name + "'");
  }
  DatasetSplit split;
  for (const auto& s : samples) (test_sequences.contains(s.sequence_id) ? split.test : split.train).push_back(s);
  if (split.train.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  if (split.test.empty()) throw Error(ErrorCode::EmptySplit, "test split is empty");
  return split;
}

void AccessLog::set_phase(std::string phase) {
  std::lock_guard lock(mutex_);
  phase_ = std::move(phase);
}

std::string AccessLog::phase() const {
  std::lock_guard lock(mutex_);
  return phase_;
}

void AccessLog::record(const std::string& image_ref) {
  std::lock_guard lock(mutex_);
  entries_.push_back({phase_, image_ref});
}

std::vector<AccessLog::Entry> AccessLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::vector<std::string> AccessLog::touched(const std::string& phase, const std::vector<std::string>& refs) const {
  std::set<std::string> wanted(refs.begin(), refs.end());
  std::set<std::string> hit;
  std::lock_guard lock(mutex_);
  for (const auto& e : entries_) {
    if (e.phase == phase && wanted.contains(e.image_ref)) hit.insert(e.image_ref);
  }
  return {hit.begin(), hit.end()};
}

void AccessLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::lock_guard lock(mutex_);
  for (const auto& e : entries_) out << e.phase << '\t' << e.image_ref << '\n';
}

Rgb8 ImageLoader::load(const SceneSample& sample) const {
  if (log_) log_->record(sample.image_ref);
  if (sample.raster) return *sample.raster;
  return read_png(root_ / sample.image_ref);
}

}  // namespace posesynth
