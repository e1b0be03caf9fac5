#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include "posesynth/synthesis.hpp"

namespace httplib {
class Server;
}

namespace posesynth {

struct ServiceOptions {
  /// Concurrent inferences allowed; further requests wait.
  std::ptrdiff_t max_in_flight = 2;
  std::string cors_origin = "*";
  /// Trajectory frame sets kept for GET retrieval.
  std::size_t trajectory_cache = 8;
  std::string scene_name = "scene";
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// REST front end for a Synthesizer. Handlers are plain functions of the
/// request so they can be exercised without a socket; `mount` wires them to
/// an httplib server.
///
///   POST /api/v1/synthesize                      -> image/png
///   POST /api/v1/trajectory                      -> {"id", "frame_count", "frames": [url...]}
///   GET  /api/v1/trajectory/<id>/frame_NNNNN.png -> image/png
///   GET  /api/v1/scene-info                      -> JSON
///   GET  /api/v1/nearest?k=3&pose=x,y,z,w,qx,qy,qz -> JSON
///   GET  /api/v1/thumbnail/<index>.png           -> image/png
class InferenceService {
 public:
  explicit InferenceService(ServiceOptions options = {});

  /// Publishes the models; until then every model route answers 503.
  void set_synthesizer(std::shared_ptr<const Synthesizer> synth);
  bool ready() const;

  HttpReply synthesize(const std::string& body);
  HttpReply trajectory(const std::string& body);
  HttpReply trajectory_frame(const std::string& id, std::size_t index);
  HttpReply scene_info();
  HttpReply nearest(const std::map<std::string, std::string>& query);
  HttpReply thumbnail(std::size_t index);

  void mount(httplib::Server& server);

 private:
  std::shared_ptr<const Synthesizer> current() const;

  ServiceOptions options_;
  std::shared_ptr<const Synthesizer> synth_;
  mutable std::mutex synth_mutex_;
  std::counting_semaphore<> in_flight_;

  std::mutex cache_mutex_;
  std::vector<std::pair<std::string, std::vector<std::vector<std::uint8_t>>>> trajectories_;
};

/// Loads an experiment directory and serves it until the process is stopped.
void serve(const std::filesystem::path& experiment_dir, const std::string& host, int port, ServiceOptions options = {});

}  // namespace posesynth
