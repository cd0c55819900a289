#include "fixtures.hpp"
#include "trajvid/checkpoint.hpp"
#include "trajvid/service.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

using namespace trajvid;
using namespace trajvid::testing;

namespace {

Model<float> small_model() {
  ModelConfig c;
  c.dim = 16;
  c.depth = 1;
  c.heads = 2;
  Model<float> m(c);
  m.randomize(4, 0.3);
  return m;
}

std::string png_bytes(const Image& im) {
  const auto v = encode_png(im);
  return {v.begin(), v.end()};
}

Image gray64() { return scene_preset_frame("gray", {64, 64}); }

nlohmann::json request(const std::string& first_frame, int steps = 2, std::uint64_t seed = 1) {
  return {{"triplet", triplet_to_json(two_track_triplet())}, {"first_frame", first_frame}, {"steps", steps},
          {"seed", seed}};
}

struct Fixture : ::testing::Test {
  TempDir dir{"svc"};
  ServiceConfig cfg() const {
    ServiceConfig c;
    c.data_dir = dir.path;
    c.max_asset_bytes = 64 * 1024;
    return c;
  }
};

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status;
  }
  return 0;
}

}  // namespace

TEST_F(Fixture, UploadIsContentAddressed) {
  Service s(cfg(), small_model());
  const auto a = s.assets().upload(png_bytes(gray64()));
  EXPECT_EQ(a.size(), 64u);
  EXPECT_EQ(s.assets().upload(png_bytes(gray64())), a);
  EXPECT_EQ(a, sha256_hex(png_bytes(gray64())));
  EXPECT_TRUE(s.assets().image(a).has_value());
  EXPECT_EQ(status_of([&] { s.assets().upload("GIF89a...."); }), 415);
  EXPECT_EQ(status_of([&] { s.assets().upload("\x89PNG\r\n\x1a\nbroken"); }), 415);
  EXPECT_EQ(status_of([&] { s.assets().upload(std::string(64 * 1024 + 1, 'x')); }), 413);
  EXPECT_FALSE(s.assets().get("../../etc/passwd").has_value());
}

TEST_F(Fixture, SubmitIsIdempotent) {
  Service s(cfg(), small_model());
  const auto ff = s.assets().upload(png_bytes(gray64()));
  const auto [v1, c1] = s.submit(request(ff), "k1");
  EXPECT_TRUE(c1);
  EXPECT_EQ(v1["status"], "queued");
  const auto [v2, c2] = s.submit(request(ff), "k1");
  EXPECT_FALSE(c2);
  EXPECT_EQ(v2["job_id"], v1["job_id"]);
  EXPECT_EQ(s.jobs().size(), 1u);
  EXPECT_EQ(status_of([&] { s.submit(request(ff, 3), "k1"); }), 409);
  // no key: always a new job
  EXPECT_NE(s.submit(request(ff)).first["job_id"], v1["job_id"]);
  // key in the body
  auto body = request(ff);
  body["idempotency_key"] = "k2";
  EXPECT_EQ(s.submit(body).first["job_id"], s.submit(body).first["job_id"]);
}

TEST_F(Fixture, SubmitRejectsBadRequests) {
  Service s(cfg(), small_model());
  const auto ff = s.assets().upload(png_bytes(gray64()));
  EXPECT_EQ(status_of([&] { s.submit(nlohmann::json::array()); }), 400);
  EXPECT_EQ(status_of([&] { s.submit({{"first_frame", ff}}); }), 400);
  auto bad = request(ff);
  bad["triplet"]["tracks"][0]["visibility"][0] = 2;
  try {
    s.submit(bad);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 400);
  }
  auto both = request(ff);
  both["scene_preset"] = "gray";
  EXPECT_EQ(status_of([&] { s.submit(both); }), 400);
  EXPECT_EQ(status_of([&] { s.submit(request(std::string(64, 'a'))); }), 404);
  auto steps = request(ff, 0);
  EXPECT_EQ(status_of([&] { s.submit(steps); }), 400);
  EXPECT_EQ(status_of([&] { s.status("job_nope"); }), 404);
  EXPECT_EQ(status_of([&] { s.result("job_nope"); }), 404);
}

TEST_F(Fixture, InvalidTripletBodyCarriesReport) {
  Service s(cfg(), small_model());
  auto tr = two_track_triplet();
  tr.bboxes.erase("obj1_kp0");
  nlohmann::json body = {{"triplet", triplet_to_json(tr)}, {"scene_preset", "gray"}};
  try {
    s.submit(body);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 400);
    ASSERT_TRUE(e.body.contains("violations"));
    EXPECT_FALSE(e.body["violations"].empty());
  }
}

TEST_F(Fixture, JobRunsToDoneWithFrameManifest) {
  Service s(cfg(), small_model());
  const auto ff = s.assets().upload(png_bytes(gray64()));
  const auto id = s.submit(request(ff)).first["job_id"].get<std::string>();
  EXPECT_EQ(status_of([&] { s.result(id); }), 409);
  auto j = s.jobs().claim(std::atomic<bool>{false});
  ASSERT_TRUE(j);
  EXPECT_EQ(s.status(id)["status"], "running");
  s.execute(*j);
  const auto v = s.status(id);
  EXPECT_EQ(v["status"], "done");
  EXPECT_EQ(v["progress"], 1.0);
  const auto m = s.result(id);
  EXPECT_EQ(m["num_frames"], 16);
  EXPECT_EQ(m["format"], "png-frames");
  ASSERT_EQ(m["frames"].size(), 16u);
  for (const auto& f : m["frames"]) EXPECT_TRUE(s.assets().image(f.get<std::string>()).has_value());
}

TEST_F(Fixture, ModelMismatchFailsTheJob) {
  Service s(cfg(), small_model());
  auto tr = two_track_triplet(12);
  const nlohmann::json body = {{"triplet", triplet_to_json(tr)}, {"scene_preset", "checker"}};
  const auto id = s.submit(body).first["job_id"].get<std::string>();
  s.execute(*s.jobs().claim(std::atomic<bool>{false}));
  const auto v = s.status(id);
  EXPECT_EQ(v["status"], "failed");
  EXPECT_NE(v["error_msg"].get<std::string>().find("does not match"), std::string::npos);
  EXPECT_THROW(s.jobs().finish(id, "x"), std::logic_error);
}

TEST_F(Fixture, RestartRequeuesRunningJobs) {
  std::string id_run, id_done;
  {
    Service s(cfg(), small_model());
    id_done = s.submit({{"triplet", triplet_to_json(two_track_triplet())}, {"scene_preset", "gray"}, {"steps", 1}})
                  .first["job_id"];
    s.execute(*s.jobs().claim(std::atomic<bool>{false}));
    id_run = s.submit({{"triplet", triplet_to_json(two_track_triplet())}, {"scene_preset", "gray"}, {"steps", 1}},
                      "again")
                 .first["job_id"];
    s.jobs().claim(std::atomic<bool>{false});
    EXPECT_EQ(s.status(id_run)["status"], "running");
  }
  Service s(cfg(), small_model());
  EXPECT_EQ(s.status(id_done)["status"], "done");
  EXPECT_EQ(s.status(id_run)["status"], "queued");
  EXPECT_EQ(s.status(id_run)["progress"], 0.0);
  // the counter survives, ids stay unique
  const auto fresh = s.submit({{"triplet", triplet_to_json(two_track_triplet())}, {"scene_preset", "gray"}});
  EXPECT_NE(fresh.first["job_id"], id_run);
  EXPECT_NE(fresh.first["job_id"], id_done);
  // the idempotency key is remembered across restarts
  EXPECT_EQ(s.submit({{"triplet", triplet_to_json(two_track_triplet())}, {"scene_preset", "gray"}, {"steps", 1}},
                     "again")
                .first["job_id"],
            id_run);
}

TEST_F(Fixture, WorkersDrainTheQueue) {
  Service s(cfg(), small_model());
  s.start();
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i)
    ids.push_back(s.submit({{"triplet", triplet_to_json(two_track_triplet())},
                            {"scene_preset", "gray"},
                            {"steps", 1},
                            {"seed", i}})
                      .first["job_id"]);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
  for (const auto& id : ids)
    while (s.status(id)["status"] != "done" && std::chrono::steady_clock::now() < deadline)
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
  for (const auto& id : ids) EXPECT_EQ(s.status(id)["status"], "done");
  s.stop();
}

TEST_F(Fixture, ServiceMatchesCliOutput) {
  const auto model = small_model();
  save_checkpoint(dir.path / "m.tvc", model);
  const auto tr = two_track_triplet();
  std::ofstream(dir.path / "t.json") << emit_triplet(tr);
  write_png(dir.path / "first.png", gray64());
  const std::string cmd = std::string(TRAJVID_CLI) + " generate --triplet " + (dir.path / "t.json").string() +
                          " --first-frame " + (dir.path / "first.png").string() + " --checkpoint " +
                          (dir.path / "m.tvc").string() + " --steps 3 --seed 5 --out " + (dir.path / "cli").string() +
                          " > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);

  ServiceConfig c = cfg();
  c.data_dir = dir.path / "store";
  Service s(c, load_checkpoint(dir.path / "m.tvc").model);
  const auto ff = s.assets().upload(png_bytes(gray64()));
  const auto id = s.submit(request(ff, 3, 5)).first["job_id"].get<std::string>();
  s.execute(*s.jobs().claim(std::atomic<bool>{false}));
  const auto m = s.result(id);
  ASSERT_EQ(m["frames"].size(), 16u);
  for (int f = 0; f < 16; ++f) {
    const auto cli = read_file_bytes(dir.path / "cli" / frame_filename(f));
    const auto blob = s.assets().get(m["frames"][f].get<std::string>());
    ASSERT_TRUE(blob);
    EXPECT_EQ(std::string(cli.begin(), cli.end()), blob->bytes) << "frame " << f;
  }
}

TEST_F(Fixture, HttpRoutes) {
  Service s(cfg(), small_model());
  httplib::Server srv;
  install_routes(srv, s);
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto r = cli.Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  r = cli.Get("/config");
  EXPECT_EQ(nlohmann::json::parse(r->body)["channel_contract"], kChannelContract);

  r = cli.Post("/assets", png_bytes(gray64()), "image/png");
  ASSERT_EQ(r->status, 201);
  const auto asset = nlohmann::json::parse(r->body)["asset_id"].get<std::string>();
  EXPECT_EQ(cli.Get("/assets/" + asset)->body, png_bytes(gray64()));
  EXPECT_EQ(cli.Get("/assets/" + std::string(64, '0'))->status, 404);
  EXPECT_EQ(cli.Post("/assets", "plain text", "text/plain")->status, 415);
  EXPECT_EQ(cli.Post("/assets", std::string(64 * 1024 + 10, 'x'), "image/png")->status, 413);

  EXPECT_EQ(cli.Post("/jobs/generate", "{not json", "application/json")->status, 400);
  const httplib::Headers key{{"Idempotency-Key", "abc"}};
  r = cli.Post("/jobs/generate", key, request(asset).dump(), "application/json");
  ASSERT_EQ(r->status, 202);
  const auto id = nlohmann::json::parse(r->body)["job_id"].get<std::string>();
  r = cli.Post("/jobs/generate", key, request(asset).dump(), "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(nlohmann::json::parse(r->body)["job_id"], id);
  EXPECT_EQ(cli.Post("/jobs/generate", key, request(asset, 4).dump(), "application/json")->status, 409);

  EXPECT_EQ(cli.Get("/jobs/" + id)->status, 200);
  EXPECT_EQ(cli.Get("/jobs/" + id + "/result")->status, 409);
  EXPECT_EQ(cli.Get("/jobs/job_missing")->status, 404);

  s.execute(*s.jobs().claim(std::atomic<bool>{false}));
  r = cli.Get("/jobs/" + id + "/result");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(nlohmann::json::parse(r->body)["frames"].size(), 16u);

  srv.stop();
  th.join();
}

TEST(Service, DataDirFromEnvironment) {
  ::setenv("CANVAS_DATA_DIR", "/tmp/somewhere", 1);
  EXPECT_EQ(resolve_data_dir("fallback"), std::filesystem::path("/tmp/somewhere"));
  ::unsetenv("CANVAS_DATA_DIR");
  EXPECT_EQ(resolve_data_dir("fallback"), std::filesystem::path("fallback"));
}
