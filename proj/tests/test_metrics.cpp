#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "oracle_check.hpp"
#include "trajvid/bench.hpp"
#include "trajvid/metrics.hpp"

using namespace trajvid;
using namespace trajvid::testing;

namespace {

TrajectoryTrack track(std::vector<Point2f> pts, std::vector<std::uint8_t> vis) {
  return {"t", false, std::move(pts), std::move(vis)};
}

Image flat(int w, int h, Rgb c) {
  Image im(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) im.set(x, y, c);
  return im;
}

}  // namespace

TEST(ObjMC, ConstantOffsetIsFive) {
  std::vector<Point2f> a, b;
  for (int f = 0; f < 8; ++f) {
    a.push_back({2.f * f, 10.f});
    b.push_back({2.f * f + 3.f, 14.f});
  }
  const auto v = objmc(track(a, std::vector<std::uint8_t>(8, 1)), track(b, std::vector<std::uint8_t>(8, 1)));
  ASSERT_TRUE(v.defined);
  EXPECT_NEAR(v.value, 5.0, 1e-6);
}

TEST(ObjMC, SymmetricAndTranslationInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-30.f, 30.f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2f> a, b, a2, b2;
    for (int f = 0; f < 6; ++f) {
      a.push_back({u(rng), u(rng)});
      b.push_back({u(rng), u(rng)});
      a2.push_back({a.back().x + 7.f, a.back().y - 3.f});
      b2.push_back({b.back().x + 7.f, b.back().y - 3.f});
    }
    const std::vector<std::uint8_t> va{1, 1, 0, 1, 1, 1}, vb{1, 0, 1, 1, 1, 1};
    const double ab = objmc(track(a, va), track(b, vb)).value;
    EXPECT_NEAR(ab, objmc(track(b, vb), track(a, va)).value, 1e-9);
    EXPECT_NEAR(ab, objmc(track(a2, va), track(b2, vb)).value, 1e-4);
  }
}

TEST(ObjMC, OnlyJointlyVisibleFrames) {
  const auto g = track({{0, 0}, {100, 100}, {0, 0}}, {1, 0, 1});
  const auto r = track({{3, 4}, {0, 0}, {6, 8}}, {1, 1, 1});
  EXPECT_NEAR(objmc(g, r).value, 7.5, 1e-9);
  EXPECT_FALSE(objmc(track({{0, 0}}, {0}), track({{0, 0}}, {1})).defined);
  EXPECT_THROW(objmc(g, track({{0, 0}}, {1})), MetricError);
}

TEST(AppearanceRate, HandCase) {
  const auto v = appearance_rate({1, 0, 1, 1, 0}, {1, 1, 1, 0, 0});
  ASSERT_TRUE(v.defined);
  EXPECT_NEAR(v.value, 2.0 / 3.0, 1e-9);
  EXPECT_FALSE(appearance_rate({1, 1}, {0, 0}).defined);
  EXPECT_THROW(appearance_rate({1}, {1, 1}), MetricError);
}

TEST(Consistency, IdenticalFramesScoreOne) {
  const auto clip = render_scene([] {
    SceneSpec s;
    SceneObject o;
    o.color = kObjectPalette[2].rgb;
    o.motion = MotionPath::line({20.f, 20.f}, {20.f, 20.f});
    s.objects = {o};
    return s;
  }());
  const std::vector<Image> frames(4, clip.frames[0]);
  const auto masks = foreground_cells(clip.triplet);
  const auto r = consistency(frames, {masks.begin(), masks.begin() + 4});
  EXPECT_NEAR(r.subject.value, 1.0, 1e-12);
  EXPECT_NEAR(r.background.value, 1.0, 1e-12);
}

TEST(Consistency, BlackToWhiteHandValue) {
  // black pools to (0 x12, 1 x4) and white to (2 x12, 1 x4) after the +1 shift
  const std::vector<Image> frames{flat(16, 16, {0, 0, 0}), flat(16, 16, {255, 255, 255})};
  const std::vector<std::vector<char>> masks(2, std::vector<char>(4, 0));
  const auto r = consistency(frames, masks);
  EXPECT_FALSE(r.subject.defined);
  ASSERT_TRUE(r.background.defined);
  EXPECT_NEAR(r.background.value, 2.0 / std::sqrt(52.0), 1e-6);
}

TEST(Consistency, RecolorLowersSubjectOnly) {
  std::vector<Image> frames(2, flat(16, 16, {100, 100, 100}));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      frames[0].set(x, y, {250, 0, 0});
      frames[1].set(x, y, {0, 0, 250});
    }
  const std::vector<std::vector<char>> masks(2, std::vector<char>{1, 0, 0, 0});
  const auto r = consistency(frames, masks);
  EXPECT_LT(r.subject.value, 0.9);
  EXPECT_NEAR(r.background.value, 1.0, 1e-12);
}

TEST(Consistency, Errors) {
  const std::vector<Image> one{flat(16, 16, {})};
  EXPECT_THROW(consistency(one, {{0, 0, 0, 0}}), MetricError);
  const std::vector<Image> two(2, flat(16, 16, {}));
  EXPECT_THROW(consistency(two, {{0, 0, 0, 0}}), MetricError);
  EXPECT_THROW(consistency(two, {{0, 0}, {0, 0}}), MetricError);
}

TEST(OracleTracker, FindsSquareCenter) {
  Image im = flat(32, 32, {128, 128, 128});
  for (int y = 10; y < 18; ++y)
    for (int x = 4; x < 12; ++x) im.set(x, y, {230, 40, 40});
  const auto ob = locate_object(im, {230, 40, 40}, Shape::kSquare, 8);
  ASSERT_TRUE(ob.found);
  EXPECT_EQ(ob.pixels, 64);
  EXPECT_NEAR(ob.centroid.x, 8.f, 1e-5);
  EXPECT_NEAR(ob.centroid.y, 14.f, 1e-5);
  EXPECT_FLOAT_EQ(ob.center.x, 8.f);
  EXPECT_FLOAT_EQ(ob.center.y, 14.f);
  EXPECT_FALSE(locate_object(im, {0, 0, 255}, Shape::kSquare, 8).found);
}

TEST(OracleTracker, AgreesWithGeneratorOnClips) {
  const auto a = oracle_agreement(10, 77);
  EXPECT_GT(a.compared, 100);
  EXPECT_LT(a.mean_error, 1.0);
  EXPECT_EQ(a.visibility_mismatches, 0);
}

TEST(OracleTracker, AmbiguousOrUnknownColorThrows) {
  auto tr = two_track_triplet();
  tr.captions["obj1_kp0"].subject_hint = "red square";
  EXPECT_THROW(oracle_track(std::vector<Image>(16, Image(64, 64)), tr), MetricError);
  tr.captions["obj1_kp0"].subject_hint = "mauve square";
  EXPECT_THROW(oracle_track(std::vector<Image>(16, Image(64, 64)), tr), MetricError);
}

TEST(Assignment, GroundTruthIsCorrectAndSwappedCaptionsAreWrong) {
  const auto clip = make_swap_clip(3, 0);
  EXPECT_TRUE(validate_triplet(clip.triplet).ok());
  EXPECT_DOUBLE_EQ(assignment_accuracy(clip.frames, clip.triplet).value, 1.0);
  auto tr = clip.triplet;
  const auto c0 = tr.captions.at("obj0_kp0"), c1 = tr.captions.at("obj1_kp0");
  for (auto& [id, c] : tr.captions) {
    if (id.rfind("obj0_", 0) == 0) c = c1;
    if (id.rfind("obj1_", 0) == 0) c = c0;
  }
  EXPECT_DOUBLE_EQ(assignment_accuracy(clip.frames, tr).value, 0.0);
}

TEST(SwapBenchmark, ObjectsEnterFromOffscreenAndDifferOnlyInColor) {
  for (int i = 0; i < 5; ++i) {
    const auto clip = make_swap_clip(9, i);
    ASSERT_EQ(clip.ground_truth.size(), 2u);
    EXPECT_EQ(clip.ground_truth[0].shape, clip.ground_truth[1].shape);
    EXPECT_EQ(clip.ground_truth[0].size, clip.ground_truth[1].size);
    EXPECT_NE(clip.ground_truth[0].color, clip.ground_truth[1].color);
    EXPECT_TRUE(has_entry_or_exit(clip.triplet));
    for (const auto* t : clip.triplet.foreground_sorted()) EXPECT_FALSE(t->visible(0)) << t->track_id;
    const auto& a = clip.triplet.captions.at("obj0_kp0").text;
    const auto& b = clip.triplet.captions.at("obj1_kp0").text;
    EXPECT_NE(a, b);
    EXPECT_EQ(a.substr(a.find(' ', 4)), b.substr(b.find(' ', 4)));
  }
}

TEST(Evaluate, BypassScoresStoredFramesAsNearPerfect) {
  TempDir d("eval_bypass");
  DatasetOptions o;
  o.n = 6;
  o.seed = 8;
  make_dataset(d.path, o);
  EvalOptions eo;
  eo.bypass_sampling = true;
  const auto rep = evaluate(nullptr, d.path, eo);
  EXPECT_EQ(rep.cases.size(), load_manifest(d.path).clips.size());
  EXPECT_LT(rep.objmc().value, 1.0);
  EXPECT_DOUBLE_EQ(rep.appearance_rate().value, 1.0);
  EXPECT_GT(rep.background_consistency().value, 0.9);
  const auto j = to_json(rep);
  EXPECT_EQ(j["schema_version"], "1");
  EXPECT_EQ(j["cases"].size(), rep.cases.size());
}

TEST(Evaluate, SamplesOneCasePerClip) {
  TempDir d("eval_model");
  make_swap_benchmark(d.path, 3, 1);
  ModelConfig mc;
  mc.dim = 16;
  mc.depth = 1;
  mc.heads = 2;
  Model<float> m(mc);
  m.init(0);
  EvalOptions eo;
  eo.steps = 1;
  eo.assignment = true;
  const auto rep = evaluate(&m, d.path, eo);
  ASSERT_EQ(rep.cases.size(), 3u);
  for (const auto& c : rep.cases) {
    EXPECT_TRUE(c.entry_exit);
    EXPECT_TRUE(c.assignment_accuracy.defined);
  }
  EXPECT_EQ(rep.assignment_accuracy().count, 3);
}

TEST(Evaluate, Errors) {
  TempDir d("eval_err");
  EXPECT_THROW(evaluate(nullptr, d.path / "missing"), MetricError);
  std::ofstream(d.path / "manifest.json") << manifest_to_json({}).dump();
  EvalOptions eo;
  eo.bypass_sampling = true;
  try {
    evaluate(nullptr, d.path, eo);
    FAIL();
  } catch (const MetricError& e) {
    EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos);
  }
  make_swap_benchmark(d.path / "b", 1, 1);
  EXPECT_THROW(evaluate(nullptr, d.path / "b"), MetricError);
  ModelConfig mc;
  mc.dim = 16;
  mc.depth = 1;
  mc.heads = 2;
  mc.grid.height = 32;
  Model<float> m(mc);
  EXPECT_THROW(evaluate(&m, d.path / "b"), MetricError);
}

TEST(Evaluate, LatentSampleFrames) {
  EXPECT_EQ(latent_sample_frames(LatentGrid{}), (std::vector<int>{0, 1, 5, 9, 13}));
}
