#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "trajvid/triplet.hpp"

namespace trajvid::testing {

// Two-object triplet on a 64x64, 16-frame canvas: obj0 moves right and is
// always visible, obj1 enters from the left at frame 4.
inline MultimodalTriplet two_track_triplet(int T = 16) {
  MultimodalTriplet tr;
  tr.frame_size = {64, 64};
  tr.num_frames = T;
  TrajectoryTrack a{"obj0_kp0", false, {}, {}};
  TrajectoryTrack b{"obj1_kp0", false, {}, {}};
  for (int f = 0; f < T; ++f) {
    a.points.push_back({10.f + 2.f * f, 20.f});
    a.visibility.push_back(1);
    const float bx = -8.f + 4.f * f;
    b.points.push_back({bx, 44.f});
    b.visibility.push_back(bx >= 0.f ? 1 : 0);
  }
  tr.tracks = {a, b};
  tr.bboxes["obj0_kp0"] = {10.f, 20.f, 12.f, 12.f};
  tr.bboxes["obj1_kp0"] = {-8.f, 44.f, 10.f, 10.f};
  tr.captions["obj0_kp0"] = {"the red circle moves right", "the red circle"};
  tr.captions["obj1_kp0"] = {"the blue square moves right", "the blue square"};
  return tr;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("trajvid_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace trajvid::testing
