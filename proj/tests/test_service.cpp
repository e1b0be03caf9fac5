#include <future>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "posesynth/service.hpp"

using namespace posesynth;
using nlohmann::json;

namespace {

std::shared_ptr<const Synthesizer> loaded() {
  static const auto synth = std::make_shared<const Synthesizer>(Synthesizer::load(fixture::trained_tiny_experiment()));
  return synth;
}

std::unique_ptr<InferenceService> ready_service() {
  auto s = std::make_unique<InferenceService>();
  s->set_synthesizer(loaded());
  return s;
}

std::string pose_request(const Pose& p, const std::string& stage = "coarse") {
  const auto& t = p.translation();
  const auto& q = p.rotation();
  return json{{"translation", {t[0], t[1], t[2]}}, {"quaternion", {q.w, q.x, q.y, q.z}}, {"stage", stage}}.dump();
}

Rgb8 decode(const HttpReply& r) { return decode_png({r.body.begin(), r.body.end()}); }

}  // namespace

TEST(ServiceRoutes, NotReadyBeforeLoad) {
  InferenceService s;
  EXPECT_FALSE(s.ready());
  EXPECT_EQ(s.synthesize(R"({"translation":[0,0,0],"quaternion":[1,0,0,0]})").status, 503);
  EXPECT_EQ(s.scene_info().status, 503);
  EXPECT_EQ(s.trajectory("{}").status, 503);
  EXPECT_EQ(s.nearest({}).status, 503);
}

TEST(ServiceSynthesize, ReturnsDeterministicPng) {
  auto service = ready_service();
  InferenceService& s = *service;
  const std::string body = R"({"translation":[0,0,0],"quaternion":[1,0,0,0],"stage":"coarse"})";
  const HttpReply a = s.synthesize(body), b = s.synthesize(body);
  ASSERT_EQ(a.status, 200) << a.body;
  EXPECT_EQ(a.content_type, "image/png");
  EXPECT_EQ(a.body, b.body);
  const Rgb8 img = decode(a);
  EXPECT_EQ(img.height, loaded()->image_size());
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(a.headers.at("X-Pose"), "0 0 0 1 0 0 0");
  EXPECT_EQ(a.headers.at("X-Stage"), "coarse");
  EXPECT_EQ(a.headers.at("X-Config-Hash"), loaded()->config_hash());
}

TEST(ServiceSynthesize, EchoesRequestValuesExactly) {
  auto service = ready_service();
  InferenceService& s = *service;
  const HttpReply r = s.synthesize(R"({"translation":[0.1,-2.5,3e-7],"quaternion":[0.7071067811865476,0,0.7071067811865476,0]})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.headers.at("X-Pose"), "0.1 -2.5 3e-07 0.7071067811865476 0 0.7071067811865476 0");
}

TEST(ServiceSynthesize, MatchesDirectInference) {
  auto service = ready_service();
  InferenceService& s = *service;
  const Pose p = loaded()->train_samples()[3].pose;
  for (const char* stage : {"coarse", "refined"}) {
    const HttpReply r = s.synthesize(pose_request(p, stage));
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(decode(r), loaded()->synthesize(p, parse_stage(stage)));
  }
}

TEST(ServiceSynthesize, BadRequestsNameTheField) {
  auto service = ready_service();
  InferenceService& s = *service;
  auto field_of = [&](const std::string& body) {
    const HttpReply r = s.synthesize(body);
    EXPECT_EQ(r.status, 400) << body;
    return json::parse(r.body).value("field", "");
  };
  EXPECT_EQ(field_of(R"({"translation":[0,0,0],"quaternion":[0,0,0,0]})"), "quaternion");
  EXPECT_EQ(field_of(R"({"translation":[0,0,0],"quaternion":[2,0,0,0]})"), "quaternion");
  EXPECT_EQ(field_of(R"({"translation":[0,0,0],"quaternion":[1,0,0]})"), "quaternion");
  EXPECT_EQ(field_of(R"({"translation":[0,0],"quaternion":[1,0,0,0]})"), "translation");
  EXPECT_EQ(field_of(R"({"translation":[0,0,"x"],"quaternion":[1,0,0,0]})"), "translation");
  EXPECT_EQ(field_of(R"({"translation":[0,0,0],"quaternion":[1,0,0,0],"stage":"fine"})"), "stage");
  EXPECT_EQ(field_of(R"({"translation":[0,0,0],"quaternion":[1,0,0,0],"format":"jpeg"})"), "format");
  EXPECT_EQ(field_of("{not json"), "body");
  EXPECT_EQ(field_of("[1,2]"), "body");
}

TEST(ServiceTrajectory, FramesMatchSingleShotSynthesis) {
  auto service = ready_service();
  InferenceService& s = *service;
  const auto& train = loaded()->train_samples();
  TrajectorySpec spec{{train[0].pose, train[5].pose}, 1};
  json doc = json::parse(trajectory_to_json(spec));
  doc["stage"] = "refined";
  const HttpReply r = s.trajectory(doc.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  const json out = json::parse(r.body);
  EXPECT_EQ(out.at("frame_count"), 2);
  ASSERT_EQ(out.at("frames").size(), 2u);
  const std::string id = out.at("id");
  EXPECT_EQ(out.at("frames")[1], "/api/v1/trajectory/" + id + "/frame_00001.png");
  for (std::size_t i = 0; i < 2; ++i) {
    const HttpReply frame = s.trajectory_frame(id, i);
    ASSERT_EQ(frame.status, 200);
    EXPECT_EQ(frame.body, s.synthesize(pose_request(spec.keyposes[i], "refined")).body);
  }
  EXPECT_EQ(s.trajectory_frame(id, 2).status, 404);
  EXPECT_EQ(s.trajectory_frame("beef", 0).status, 404);
}

TEST(ServiceTrajectory, TooFewKeyposesIs400) {
  auto service = ready_service();
  InferenceService& s = *service;
  TrajectorySpec spec{{loaded()->train_samples()[0].pose}, 3};
  const HttpReply r = s.trajectory(trajectory_to_json(spec));
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(json::parse(r.body).value("field", ""), "keyposes");
  EXPECT_EQ(s.trajectory(R"({"keyposes":[],"frames_per_segment":1})").status, 400);
}

TEST(ServiceSceneInfo, BoundingBoxEnclosesTrainingPoses) {
  auto service = ready_service();
  InferenceService& s = *service;
  const HttpReply r = s.scene_info();
  ASSERT_EQ(r.status, 200);
  const json info = json::parse(r.body);
  EXPECT_EQ(info.at("config_hash"), loaded()->config_hash());
  const Checkpoint stage1 = Checkpoint::load(fixture::trained_tiny_experiment() / "stage1/gennet");
  EXPECT_EQ(info.at("config_hash"), stage1.metadata.at("experiment_hash"));
  EXPECT_EQ(info.at("refined_available"), true);
  EXPECT_EQ(info.at("train_count"), 12);
  const auto lo = info.at("bbox").at("min").get<std::vector<double>>();
  const auto hi = info.at("bbox").at("max").get<std::vector<double>>();
  for (const auto& sample : loaded()->train_samples()) {
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_LE(lo[a], sample.pose.translation()[a]);
      EXPECT_GE(hi[a], sample.pose.translation()[a]);
    }
  }
}

TEST(ServiceNearest, ResultsAndThumbnails) {
  auto service = ready_service();
  InferenceService& s = *service;
  const Pose p = loaded()->train_samples()[7].pose;
  const auto flat = p.flatten();
  std::string text;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%s%.17g", i ? "," : "", flat[i]);
    text += buf;
  }
  const HttpReply r = s.nearest({{"k", "2"}, {"pose", text}});
  ASSERT_EQ(r.status, 200) << r.body;
  const json out = json::parse(r.body);
  ASSERT_EQ(out.at("results").size(), 2u);
  EXPECT_EQ(out.at("results")[0].at("index"), 7);
  EXPECT_NEAR(out.at("results")[0].at("distance").get<double>(), 0.0, 1e-9);
  EXPECT_EQ(out.at("results")[0].at("thumbnail_url"), "/api/v1/thumbnail/7.png");
  const HttpReply thumb = s.thumbnail(7);
  ASSERT_EQ(thumb.status, 200);
  EXPECT_EQ(decode(thumb).channels, 3);
  EXPECT_EQ(s.thumbnail(999).status, 404);
  EXPECT_EQ(s.nearest({{"k", "0"}, {"pose", text}}).status, 400);
  EXPECT_EQ(s.nearest({{"k", "1"}}).status, 400);
}

TEST(ServiceHttp, MountedRoutesAnswerOverTheWire) {
  auto service = ready_service();
  InferenceService& s = *service;
  httplib::Server server;
  s.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const std::string body = R"({"translation":[0,0,0],"quaternion":[1,0,0,0]})";
  auto a = client.Post("/api/v1/synthesize", body, "application/json");
  auto b = client.Post("/api/v1/synthesize", body, "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  EXPECT_EQ(a->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(a->get_header_value("X-Pose"), "0 0 0 1 0 0 0");
  auto bad = client.Post("/api/v1/synthesize", R"({"translation":[0,0,0],"quaternion":[0,0,0,0]})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto info = client.Get("/api/v1/scene-info");
  ASSERT_TRUE(info);
  EXPECT_EQ(info->status, 200);

  // Concurrent identical requests share the read-only models.
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 4; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Post("/api/v1/synthesize", body, "application/json");
      return r ? r->body : std::string();
    }));
  }
  for (auto& f : futures) EXPECT_EQ(f.get(), a->body);

  server.stop();
  thread.join();
}
