#include "posesynth/service.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "posesynth/checkpoint.hpp"

namespace posesynth {

namespace {

constexpr double kQuaternionNormTolerance = 1e-3;

HttpReply json_reply(int status, const nlohmann::json& body) {
  HttpReply r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpReply error_reply(int status, const std::string& code, const std::string& field, const std::string& message) {
  nlohmann::json body = {{"error", code}, {"message", message}};
  if (!field.empty()) body["field"] = field;
  return json_reply(status, body);
}

HttpReply not_ready() { return error_reply(503, "NotReady", "", "models are still loading"); }

HttpReply png_reply(std::vector<std::uint8_t> bytes) {
  HttpReply r;
  r.content_type = "image/png";
  r.body.assign(bytes.begin(), bytes.end());
  return r;
}

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

/// Reads a fixed-length numeric array; returns false when absent or malformed.
template <std::size_t N>
bool read_array(const nlohmann::json& doc, const char* key, std::array<double, N>& out) {
  if (!doc.contains(key) || !doc.at(key).is_array() || doc.at(key).size() != N) return false;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& v = doc.at(key)[i];
    if (!v.is_number()) return false;
    out[i] = v.get<double>();
    if (!std::isfinite(out[i])) return false;
  }
  return true;
}

struct SlotGuard {
  explicit SlotGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
  std::counting_semaphore<>& sem;
};

}  // namespace

InferenceService::InferenceService(ServiceOptions options)
    : options_(std::move(options)), in_flight_(std::max<std::ptrdiff_t>(1, options_.max_in_flight)) {}

void InferenceService::set_synthesizer(std::shared_ptr<const Synthesizer> synth) {
  std::lock_guard lock(synth_mutex_);
  synth_ = std::move(synth);
}

std::shared_ptr<const Synthesizer> InferenceService::current() const {
  std::lock_guard lock(synth_mutex_);
  return synth_;
}

bool InferenceService::ready() const { return current() != nullptr; }

HttpReply InferenceService::synthesize(const std::string& body) {
  const auto synth = current();
  if (!synth) return not_ready();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return error_reply(400, "ParseError", "body", e.what());
  }
  if (!doc.is_object()) return error_reply(400, "ParseError", "body", "request must be a JSON object");

  std::array<double, 3> t{};
  std::array<double, 4> q{};
  if (!read_array(doc, "translation", t)) return error_reply(400, "ParseError", "translation", "expected 3 finite numbers");
  if (!read_array(doc, "quaternion", q)) return error_reply(400, "ParseError", "quaternion", "expected 4 finite numbers (w, x, y, z)");
  const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (std::abs(norm - 1.0) > kQuaternionNormTolerance) {
    return error_reply(400, "DegenerateRotation", "quaternion", "quaternion norm " + format_number(norm) + " is not 1");
  }
  Stage stage = Stage::Coarse;
  try {
    stage = parse_stage(doc.value("stage", std::string("coarse")));
  } catch (const std::exception& e) {
    return error_reply(400, "ConfigError", "stage", "stage must be 'coarse' or 'refined'");
  }
  if (doc.contains("format") && doc.at("format") != "png") return error_reply(400, "ConfigError", "format", "only png is supported");
  if (stage == Stage::Refined && !synth->has_refiner()) {
    return error_reply(400, "CheckpointError", "stage", "no RefineNet checkpoint is loaded");
  }

  const Pose pose(Vec3{t[0], t[1], t[2]}, Quaternion{q[0], q[1], q[2], q[3]});
  Rgb8 image;
  {
    SlotGuard slot(in_flight_);
    image = synth->synthesize(pose, stage);
  }
  HttpReply r = png_reply(encode_png(image));
  std::string echo;
  for (double v : {t[0], t[1], t[2], q[0], q[1], q[2], q[3]}) {
    if (!echo.empty()) echo.push_back(' ');
    echo += format_number(v);
  }
  r.headers["X-Pose"] = echo;
  r.headers["X-Stage"] = to_string(stage);
  r.headers["X-Config-Hash"] = synth->config_hash();
  return r;
}

HttpReply InferenceService::trajectory(const std::string& body) {
  const auto synth = current();
  if (!synth) return not_ready();

  Stage stage = Stage::Coarse;
  TrajectorySpec spec;
  try {
    const auto doc = nlohmann::json::parse(body);
    if (!doc.is_object()) return error_reply(400, "ParseError", "body", "request must be a JSON object");
    stage = parse_stage(doc.value("stage", std::string("coarse")));
    spec = parse_trajectory_json(body);
  } catch (const nlohmann::json::exception& e) {
    return error_reply(400, "ParseError", "body", e.what());
  } catch (const Error& e) {
    const std::string field = e.code() == ErrorCode::ConfigError ? "stage" : "keyposes";
    return error_reply(400, std::string(to_string(e.code())), field, e.detail());
  }
  if (stage == Stage::Refined && !synth->has_refiner()) {
    return error_reply(400, "CheckpointError", "stage", "no RefineNet checkpoint is loaded");
  }

  Trajectory traj;
  try {
    traj = interpolate_trajectory(spec.keyposes, spec.frames_per_segment);
  } catch (const Error& e) {
    const std::string field = e.code() == ErrorCode::InsufficientKeyposes ? "keyposes" : "frames_per_segment";
    return error_reply(400, std::string(to_string(e.code())), field, e.detail());
  }

  const std::string id = fnv1a_hex(body + "|" + synth->config_hash());
  std::vector<std::vector<std::uint8_t>> frames;
  frames.reserve(traj.poses.size());
  for (const auto& pose : traj.poses) {
    SlotGuard slot(in_flight_);
    frames.push_back(encode_png(synth->synthesize(pose, stage)));
  }

  nlohmann::json urls = nlohmann::json::array();
  char name[32];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
    urls.push_back("/api/v1/trajectory/" + id + "/" + name);
  }
  {
    std::lock_guard lock(cache_mutex_);
    std::erase_if(trajectories_, [&](const auto& entry) { return entry.first == id; });
    trajectories_.emplace_back(id, std::move(frames));
    while (trajectories_.size() > std::max<std::size_t>(1, options_.trajectory_cache)) trajectories_.erase(trajectories_.begin());
  }
  HttpReply r = json_reply(200, {{"id", id}, {"frame_count", urls.size()}, {"stage", to_string(stage)}, {"frames", urls}});
  r.headers["X-Config-Hash"] = synth->config_hash();
  return r;
}

HttpReply InferenceService::trajectory_frame(const std::string& id, std::size_t index) {
  std::lock_guard lock(cache_mutex_);
  for (const auto& [key, frames] : trajectories_) {
    if (key != id) continue;
    if (index >= frames.size()) return error_reply(404, "NotFound", "frame", "frame index out of range");
    return png_reply(frames[index]);
  }
  return error_reply(404, "NotFound", "id", "unknown or expired trajectory");
}

HttpReply InferenceService::scene_info() {
  const auto synth = current();
  if (!synth) return not_ready();
  nlohmann::json info = {{"scene", options_.scene_name},
                         {"config_hash", synth->config_hash()},
                         {"image_size", synth->image_size()},
                         {"refined_available", synth->has_refiner()},
                         {"train_count", synth->train_samples().size()},
                         {"nearest_available", !synth->train_samples().empty()}};
  if (!synth->train_samples().empty()) {
    Vec3 lo = synth->train_samples().front().pose.translation();
    Vec3 hi = lo;
    for (const auto& s : synth->train_samples()) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], s.pose.translation()[a]);
        hi[a] = std::max(hi[a], s.pose.translation()[a]);
      }
    }
    info["bbox"] = {{"min", lo}, {"max", hi}};
  } else {
    info["bbox"] = nullptr;
  }
  return json_reply(200, info);
}

HttpReply InferenceService::nearest(const std::map<std::string, std::string>& query) {
  const auto synth = current();
  if (!synth) return not_ready();
  if (synth->train_samples().empty()) return error_reply(404, "NotFound", "", "no training poses were loaded");

  std::size_t k = 3;
  if (auto it = query.find("k"); it != query.end()) {
    long long v = 0;
    const auto res = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (res.ec != std::errc() || res.ptr != it->second.data() + it->second.size() || v < 1) {
      return error_reply(400, "ParseError", "k", "k must be a positive integer");
    }
    k = static_cast<std::size_t>(v);
  }
  double alpha = 1.0;
  if (auto it = query.find("alpha"); it != query.end()) {
    try {
      alpha = std::stod(it->second);
    } catch (const std::exception&) {
      return error_reply(400, "ParseError", "alpha", "alpha must be a number");
    }
  }
  const auto it = query.find("pose");
  if (it == query.end()) return error_reply(400, "ParseError", "pose", "missing pose=x,y,z,qw,qx,qy,qz");
  Pose pose;
  try {
    pose = parse_pose_text(it->second);
  } catch (const Error& e) {
    return error_reply(400, std::string(to_string(e.code())), "pose", e.detail());
  }

  nlohmann::json results = nlohmann::json::array();
  for (const auto& n : nearest_poses(pose, synth->train_samples(), k, alpha)) {
    const auto& s = synth->train_samples()[n.index];
    const auto flat = s.pose.flatten();
    nlohmann::json item = {{"index", n.index},
                           {"distance", n.distance},
                           {"image_ref", s.image_ref},
                           {"pose", std::vector<double>(flat.begin(), flat.end())}};
    item["thumbnail_url"] = synth->thumbnail_dir().empty() ? nlohmann::json(nullptr)
                                                           : nlohmann::json("/api/v1/thumbnail/" + std::to_string(n.index) + ".png");
    results.push_back(item);
  }
  return json_reply(200, {{"k", k}, {"results", results}});
}

HttpReply InferenceService::thumbnail(std::size_t index) {
  const auto synth = current();
  if (!synth) return not_ready();
  if (synth->thumbnail_dir().empty() || index >= synth->train_samples().size()) {
    return error_reply(404, "NotFound", "index", "no thumbnail for that index");
  }
  char name[32];
  std::snprintf(name, sizeof(name), "%05zu.png", index);
  const auto path = synth->thumbnail_dir() / name;
  if (!std::filesystem::exists(path)) return error_reply(404, "NotFound", "index", "thumbnail missing on disk");
  return png_reply(encode_png(read_png(path)));
}

void InferenceService::mount(httplib::Server& server) {
  auto send = [this](httplib::Response& res, HttpReply reply) {
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
    res.set_header("Access-Control-Expose-Headers", "X-Pose, X-Stage, X-Config-Hash");
    res.set_content(std::move(reply.body), reply.content_type);
  };
  server.Options(R"(/api/v1/.*)", [this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Post("/api/v1/synthesize", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, synthesize(req.body));
  });
  server.Post("/api/v1/trajectory", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, trajectory(req.body));
  });
  server.Get(R"(/api/v1/trajectory/([0-9a-f]+)/frame_(\d+)\.png)",
             [this, send](const httplib::Request& req, httplib::Response& res) {
               send(res, trajectory_frame(req.matches[1], std::stoul(req.matches[2])));
             });
  server.Get("/api/v1/scene-info", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, scene_info());
  });
  server.Get("/api/v1/nearest", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    send(res, nearest(query));
  });
  server.Get(R"(/api/v1/thumbnail/(\d+)\.png)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, thumbnail(std::stoul(req.matches[1])));
  });
}

void serve(const std::filesystem::path& experiment_dir, const std::string& host, int port, ServiceOptions options) {
  InferenceService service(options);
  httplib::Server server;
  service.mount(server);
  // Bind first so clients see 503 rather than connection errors while the
  // checkpoints load.
  if (!server.bind_to_port(host, port)) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  std::thread loader([&] {
    try {
      service.set_synthesizer(std::make_shared<Synthesizer>(Synthesizer::load(experiment_dir)));
      std::cerr << "serving " << experiment_dir.string() << " on " << host << ":" << port << "\n";
    } catch (const Error& e) {
      std::cerr << nlohmann::json{{"error", std::string(to_string(e.code()))}, {"message", e.detail()}}.dump() << "\n";
      server.wait_until_ready();
      server.stop();
    }
  });
  server.listen_after_bind();
  loader.join();
}

}  // namespace posesynth
