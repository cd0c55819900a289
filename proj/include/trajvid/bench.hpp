#pragma once

// Benchmark builders. The swap benchmark has two same-shape objects entering
// from off-screen on the same heading with identical motion phrases, so only
// the color word in each caption tells them apart.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "trajvid/synthgen.hpp"

namespace trajvid {

inline ClipRecord make_swap_clip(std::uint64_t seed, int index, FrameSize fs = {64, 64}, int num_frames = 16) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(index), 0x5a17u};
  std::mt19937_64 rng(sq);
  std::uniform_int_distribution<int> size_d(6, 7), shape_d(0, 2), heading_d(0, 3), gray(70, 170);
  std::uniform_int_distribution<int> travel_d(40, 56);

  SceneSpec spec;
  spec.frame_size = fs;
  spec.num_frames = num_frames;
  spec.seed = rng();
  const auto g = static_cast<std::uint8_t>(gray(rng));
  spec.background.a = {g, g, g};

  std::vector<std::size_t> colors(kObjectPalette.size());
  std::iota(colors.begin(), colors.end(), 0);
  std::shuffle(colors.begin(), colors.end(), rng);
  const int size = 2 * size_d(rng);
  const Shape shape = kAllShapes[static_cast<std::size_t>(shape_d(rng))];
  const int heading = heading_d(rng);
  // lanes at least size + 12 apart, order random
  const int gap = size + 12;
  int lane_a = std::uniform_int_distribution<int>(10, 54 - gap)(rng);
  int lane_b = std::uniform_int_distribution<int>(lane_a + gap, 54)(rng);
  if (rng() & 1) std::swap(lane_a, lane_b);
  const float travel = static_cast<float>(travel_d(rng));
  const float start = -(size / 2.f + 2.f);  // fully outside at frame 0

  for (int i = 0; i < 2; ++i) {
    const float lane = static_cast<float>(i == 0 ? lane_a : lane_b);
    Point2f a, b;
    switch (heading) {
      case 0: a = {start, lane}; b = {start + travel, lane}; break;                          // right
      case 1: a = {fs.width - start, lane}; b = {fs.width - start - travel, lane}; break;    // left
      case 2: a = {lane, start}; b = {lane, start + travel}; break;                          // down
      default: a = {lane, fs.height - start}; b = {lane, fs.height - start - travel}; break;  // up
    }
    SceneObject o;
    o.shape = shape;
    o.size = size;
    o.color = kObjectPalette[colors[static_cast<std::size_t>(i)]].rgb;
    o.motion = MotionPath::line(a, b);
    spec.objects.push_back(o);
  }
  spec.background_points = 2;
  return render_scene(spec);
}

// Writes `n` swap cases in dataset layout.
inline DatasetManifest make_swap_benchmark(const std::filesystem::path& out_dir, int n, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "swap_%05d", i);
    const auto clip = make_swap_clip(seed, i);
    write_clip(out_dir, buf, clip, {}, false);
    m.clips.push_back({buf, motion_score(clip.triplet.tracks), clip.triplet.num_frames, clip.triplet.frame_size});
  }
  std::ofstream(out_dir / "manifest.json", std::ios::trunc) << manifest_to_json(m).dump(2) << "\n";
  return m;
}

}  // namespace trajvid
