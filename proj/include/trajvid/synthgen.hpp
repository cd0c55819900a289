#pragma once

// Synthetic multi-object clips with exact ground-truth tracks, and the
// curation steps applied to them: motion scoring and filtering, crop-based
// entry/exit augmentation, reference extraction, trajectory overlays and
// on-disk dataset generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <map>
#include <numeric>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajvid/image.hpp"
#include "trajvid/raster.hpp"
#include "trajvid/triplet.hpp"
#include "trajvid/vocabulary.hpp"

namespace trajvid {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scene description

enum class PathKind { kLine, kArc, kBezier };
enum class SpeedProfile { kConstant, kEaseInOut, kAccelerate, kDecelerate };

struct MotionPath {
  PathKind kind = PathKind::kLine;
  // line: [start, end]; bezier: [start, control, end]; arc: [center]
  std::vector<Point2f> points;
  float radius = 0.f;        // arc only
  float angle_start = 0.f;   // arc only, radians
  float angle_end = 0.f;     // arc only, radians
  SpeedProfile profile = SpeedProfile::kConstant;

  static MotionPath line(Point2f a, Point2f b, SpeedProfile p = SpeedProfile::kConstant) {
    MotionPath m;
    m.kind = PathKind::kLine;
    m.points = {a, b};
    m.profile = p;
    return m;
  }
  static MotionPath bezier(Point2f a, Point2f ctrl, Point2f b, SpeedProfile p = SpeedProfile::kConstant) {
    MotionPath m;
    m.kind = PathKind::kBezier;
    m.points = {a, ctrl, b};
    m.profile = p;
    return m;
  }
  static MotionPath arc(Point2f center, float radius, float a0, float a1,
                        SpeedProfile p = SpeedProfile::kConstant) {
    MotionPath m;
    m.kind = PathKind::kArc;
    m.points = {center};
    m.radius = radius;
    m.angle_start = a0;
    m.angle_end = a1;
    m.profile = p;
    return m;
  }

  // Position at normalized time u in [0, 1].
  Point2f at(double u) const {
    double s = u;
    switch (profile) {
      case SpeedProfile::kConstant: break;
      case SpeedProfile::kEaseInOut: s = u * u * (3.0 - 2.0 * u); break;
      case SpeedProfile::kAccelerate: s = u * u; break;
      case SpeedProfile::kDecelerate: s = 1.0 - (1.0 - u) * (1.0 - u); break;
    }
    switch (kind) {
      case PathKind::kLine: {
        const auto& a = points.at(0);
        const auto& b = points.at(1);
        return {static_cast<float>(a.x + s * (b.x - a.x)), static_cast<float>(a.y + s * (b.y - a.y))};
      }
      case PathKind::kBezier: {
        const auto& a = points.at(0);
        const auto& c = points.at(1);
        const auto& b = points.at(2);
        const double w0 = (1 - s) * (1 - s), w1 = 2 * s * (1 - s), w2 = s * s;
        return {static_cast<float>(w0 * a.x + w1 * c.x + w2 * b.x),
                static_cast<float>(w0 * a.y + w1 * c.y + w2 * b.y)};
      }
      case PathKind::kArc: {
        const auto& c = points.at(0);
        const double ang = angle_start + s * (angle_end - angle_start);
        return {static_cast<float>(c.x + radius * std::cos(ang)),
                static_cast<float>(c.y + radius * std::sin(ang))};
      }
    }
    return {};
  }
};

struct SceneObject {
  Shape shape = Shape::kCircle;
  Rgb color;
  int size = 12;  // diameter / side length in pixels
  MotionPath motion;
  std::string caption_template = "the {color} {shape} {motion}";
};

struct Background {
  enum class Kind { kSolid, kChecker } kind = Kind::kSolid;
  Rgb a{128, 128, 128};
  Rgb b{100, 100, 100};
  int cell = 8;

  Rgb at(int x, int y) const {
    if (kind == Kind::kSolid) return a;
    return ((x / cell) + (y / cell)) % 2 == 0 ? a : b;
  }
};

struct SceneSpec {
  FrameSize frame_size{64, 64};
  int num_frames = 16;
  std::vector<SceneObject> objects;
  Background background;
  std::uint64_t seed = 0;
  int background_points = 2;
};

struct ObjectTruth {
  std::string object_id;
  Shape shape;
  Rgb color;
  int size;
  std::vector<Point2f> centers;  // analytic path snapped to the pixel grid
};

struct ClipRecord {
  std::vector<Image> frames;
  MultimodalTriplet triplet;
  std::vector<ObjectTruth> ground_truth;
  double motion_score = 0.0;
};

// ---------------------------------------------------------------------------
// Scores and filtering

// Mean over tracks of the summed displacement between consecutive frames
// whose endpoints are both visible.
inline double motion_score(const std::vector<TrajectoryTrack>& tracks, bool foreground_only = false) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& t : tracks) {
    if (foreground_only && t.is_background) continue;
    double acc = 0.0;
    for (std::size_t f = 1; f < t.points.size(); ++f) {
      if (t.visibility[f] != 1 || t.visibility[f - 1] != 1) continue;
      acc += std::hypot(static_cast<double>(t.points[f].x) - t.points[f - 1].x,
                        static_cast<double>(t.points[f].y) - t.points[f - 1].y);
    }
    total += acc;
    ++count;
  }
  if (count == 0) throw SynthError("motion_score needs at least one track");
  return total / static_cast<double>(count);
}

inline std::vector<ClipRecord> filter_clips(std::vector<ClipRecord> clips, double threshold) {
  if (threshold < 0.0) throw SynthError("threshold must be >= 0");
  std::vector<ClipRecord> kept;
  for (auto& c : clips)
    if (c.motion_score >= threshold) kept.push_back(std::move(c));
  return kept;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::vector<Point2f> snapped_centers(const MotionPath& m, int num_frames) {
  std::vector<Point2f> out;
  for (int f = 0; f < num_frames; ++f) {
    const auto p = m.at(static_cast<double>(f) / (num_frames - 1));
    out.push_back({std::round(p.x), std::round(p.y)});
  }
  return out;
}

inline std::string motion_phrase(const MotionPath& m, int num_frames) {
  const auto a = m.at(0.0);
  const auto b = m.at(1.0);
  const double dx = b.x - a.x, dy = b.y - a.y;
  (void)num_frames;
  std::string horiz = std::abs(dx) >= 4.0 ? (dx > 0 ? "right" : "left") : "";
  std::string vert = std::abs(dy) >= 4.0 ? (dy > 0 ? "down" : "up") : "";
  if (horiz.empty() && vert.empty()) return "stays still";
  const std::string verb = m.kind == PathKind::kLine ? "moves" : "curves";
  std::string dir = horiz.empty() ? vert : vert.empty() ? horiz : vert + " and " + horiz;
  std::string out = verb + " " + dir;
  if (m.profile == SpeedProfile::kAccelerate) out += " and speeds up";
  if (m.profile == SpeedProfile::kDecelerate) out += " and slows down";
  return out;
}

inline std::string fill_template(std::string tpl, const std::map<std::string, std::string>& vars) {
  for (const auto& [k, v] : vars) {
    const std::string key = "{" + k + "}";
    for (auto pos = tpl.find(key); pos != std::string::npos; pos = tpl.find(key, pos + v.size()))
      tpl.replace(pos, key.size(), v);
  }
  return tpl;
}

// Lloyd's k-means over 2D points with k-means++ seeding.
inline std::vector<Point2f> kmeans(const std::vector<Point2f>& pts, int k, std::mt19937_64& rng) {
  k = std::min<int>(k, static_cast<int>(pts.size()));
  std::vector<Point2f> centers;
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  centers.push_back(pts[pick(rng)]);
  auto d2 = [](const Point2f& a, const Point2f& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
  };
  while (static_cast<int>(centers.size()) < k) {
    std::vector<double> w(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = 1e300;
      for (const auto& c : centers) best = std::min(best, d2(pts[i], c));
      w[i] = best;
    }
    std::discrete_distribution<std::size_t> dd(w.begin(), w.end());
    centers.push_back(pts[dd(rng)]);
  }
  std::vector<int> assign(pts.size(), 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (d2(pts[i], centers[c]) < d2(pts[i], centers[best])) best = c;
      if (best != assign[i]) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<double> sx(k, 0.0), sy(k, 0.0), n(k, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sx[assign[i]] += pts[i].x;
      sy[assign[i]] += pts[i].y;
      n[assign[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (n[c] > 0) centers[c] = {static_cast<float>(sx[c] / n[c]), static_cast<float>(sy[c] / n[c])};
    if (!changed && iter > 0) break;
  }
  return centers;
}

}  // namespace detail

// Renders the scene. Object centers follow the analytic path snapped to
// integer pixel corners; each object gets 1-3 keypoints from k-means over
// its mask. Keypoint visibility is "inside the closed frame rectangle".
inline ClipRecord render_scene(const SceneSpec& spec) {
  const auto& fs = spec.frame_size;
  if (fs.width <= 0 || fs.height <= 0) throw SynthError("frame size must be positive");
  if (spec.num_frames < 2) throw SynthError("num_frames must be >= 2");
  if (spec.objects.empty() || spec.objects.size() > 6) throw SynthError("scene needs 1 to 6 objects");
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    if (o.size <= 0 || o.size > std::min(fs.width, fs.height))
      throw SynthError("object " + std::to_string(i) + " does not fit the frame");
    for (std::size_t j = 0; j < i; ++j)
      if (spec.objects[j].color == o.color) throw SynthError("object colors must be pairwise distinct");
  }

  std::mt19937_64 rng(spec.seed);
  const int T = spec.num_frames;
  ClipRecord clip;
  clip.triplet.frame_size = fs;
  clip.triplet.num_frames = T;

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    clip.ground_truth.push_back(
        {"obj" + std::to_string(i), o.shape, o.color, o.size, detail::snapped_centers(o.motion, T)});
  }

  // Frames: background, then objects in list order (later draws on top).
  for (int f = 0; f < T; ++f) {
    Image img(fs.width, fs.height);
    for (int y = 0; y < fs.height; ++y)
      for (int x = 0; x < fs.width; ++x) img.set(x, y, spec.background.at(x, y));
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      const auto& c = clip.ground_truth[i].centers[static_cast<std::size_t>(f)];
      fill_shape(img, spec.objects[i].shape, spec.objects[i].size, c.x, c.y, spec.objects[i].color);
    }
    clip.frames.push_back(std::move(img));
  }

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    const auto& gt = clip.ground_truth[i];
    const auto mask = shape_mask_offsets(o.shape, o.size);
    std::uniform_int_distribution<int> kdist(1, 3);
    const auto keypoints = detail::kmeans(mask, kdist(rng), rng);
    const std::string subject = std::string("the ") + color_name(o.color) + " " + shape_name(o.shape);
    const std::string text = detail::fill_template(
        o.caption_template,
        {{"color", color_name(o.color)}, {"shape", shape_name(o.shape)},
         {"motion", detail::motion_phrase(o.motion, T)}});
    const BBox box{gt.centers[0].x, gt.centers[0].y, static_cast<float>(o.size), static_cast<float>(o.size)};
    for (std::size_t k = 0; k < keypoints.size(); ++k) {
      TrajectoryTrack t;
      t.track_id = gt.object_id + "_kp" + std::to_string(k);
      for (int f = 0; f < T; ++f) {
        const auto& c = gt.centers[static_cast<std::size_t>(f)];
        const Point2f p{c.x + keypoints[k].x, c.y + keypoints[k].y};
        t.points.push_back(p);
        t.visibility.push_back(fs.contains(p.x, p.y) ? 1 : 0);
      }
      clip.triplet.bboxes[t.track_id] = box;
      clip.triplet.captions[t.track_id] = {text, subject};
      clip.triplet.tracks.push_back(std::move(t));
    }
  }

  // Static background points outside every first-frame object box.
  std::uniform_real_distribution<float> ux(0.5f, fs.width - 0.5f), uy(0.5f, fs.height - 0.5f);
  int placed = 0;
  for (int attempt = 0; attempt < 200 && placed < spec.background_points; ++attempt) {
    const Point2f p{std::floor(ux(rng)) + 0.5f, std::floor(uy(rng)) + 0.5f};
    bool inside = false;
    for (const auto& gt : clip.ground_truth) {
      const float h = gt.size / 2.f + 1.f;
      if (std::abs(p.x - gt.centers[0].x) <= h && std::abs(p.y - gt.centers[0].y) <= h) inside = true;
    }
    if (inside) continue;
    TrajectoryTrack t;
    t.track_id = "bg" + std::to_string(placed++);
    t.is_background = true;
    t.points.assign(static_cast<std::size_t>(T), p);
    t.visibility.assign(static_cast<std::size_t>(T), 1);
    clip.triplet.tracks.push_back(std::move(t));
  }

  clip.motion_score = motion_score(clip.triplet.tracks);
  return clip;
}

// ---------------------------------------------------------------------------
// Crop augmentation

struct CropRect {
  int x = 0, y = 0, w = 0, h = 0;
};

// Crops frames and re-expresses all geometry in crop space. A point is
// visible only if it was visible and lies in the closed crop rectangle,
// which turns objects outside the first cropped frame into entry tracks.
// Boxes keep their dimensions (only the center moves), so an entering
// object's coverage size survives. Returns nullopt when no foreground track
// is visible in any frame.
inline std::optional<ClipRecord> crop_augment(const ClipRecord& clip, const CropRect& r) {
  const auto& fs = clip.triplet.frame_size;
  if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > fs.width || r.y + r.h > fs.height)
    throw SynthError("crop rectangle must be non-empty and inside the frame");

  ClipRecord out;
  out.triplet = clip.triplet;
  out.triplet.frame_size = {r.w, r.h};
  const float ox = static_cast<float>(r.x), oy = static_cast<float>(r.y);
  for (const auto& f : clip.frames) out.frames.push_back(f.crop(r.x, r.y, r.w, r.h));
  out.ground_truth = clip.ground_truth;
  for (auto& gt : out.ground_truth)
    for (auto& c : gt.centers) c = {c.x - ox, c.y - oy};

  bool any_fg = false;
  for (auto& t : out.triplet.tracks) {
    for (std::size_t f = 0; f < t.points.size(); ++f) {
      auto& p = t.points[f];
      p = {p.x - ox, p.y - oy};
      const bool vis = t.visibility[f] == 1 && out.triplet.frame_size.contains(p.x, p.y);
      t.visibility[f] = vis ? 1 : 0;
      if (vis && !t.is_background) any_fg = true;
    }
  }
  if (!any_fg) return std::nullopt;

  for (auto& [id, b] : out.triplet.bboxes) b = {b.cx - ox, b.cy - oy, b.w, b.h};
  std::vector<ReferencePlacement> refs;
  for (auto r2 : out.triplet.references) {
    r2.target_bbox.cx -= ox;
    r2.target_bbox.cy -= oy;
    const TrajectoryTrack* bound = r2.track_id ? out.triplet.find_track(*r2.track_id) : nullptr;
    if (r2.target_bbox.intersects(out.triplet.frame_size) || (bound && bound->first_visible() >= 1))
      refs.push_back(std::move(r2));
  }
  out.triplet.references = std::move(refs);
  out.motion_score = motion_score(out.triplet.tracks);
  return out;
}

// ---------------------------------------------------------------------------
// Reference extraction

struct MildAffine {
  float dx = 0.f, dy = 0.f;
  float scale = 1.f;
  float rotation_deg = 0.f;
};

// Bounding extent of a w x h rectangle scaled by s and rotated by theta.
inline std::pair<double, double> transformed_extent(double w, double h, double s, double rotation_deg) {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::abs(std::cos(th)), sn = std::abs(std::sin(th));
  return {s * (w * c + h * sn), s * (w * sn + h * c)};
}

// Crops `bbox` from `frame`, scales and rotates it about its center onto a
// transparent canvas, and records where it lands after translation. The
// placement carries rotation 0 because the rotation is baked into pixels.
inline std::pair<Image, ReferencePlacement> extract_reference(const Image& frame, const BBox& bbox,
                                                              const MildAffine& affine) {
  if (!(affine.scale >= 0.5f && affine.scale <= 2.0f)) throw SynthError("scale outside [0.5, 2]");
  if (!(std::abs(affine.rotation_deg) <= 30.f)) throw SynthError("rotation outside [-30, 30] degrees");
  if (!(std::abs(affine.dx) <= 0.25f * frame.width()) || !(std::abs(affine.dy) <= 0.25f * frame.height()))
    throw SynthError("translation exceeds a quarter of the frame");
  const int x0 = static_cast<int>(std::lround(bbox.cx - bbox.w / 2.f));
  const int y0 = static_cast<int>(std::lround(bbox.cy - bbox.h / 2.f));
  const int w = static_cast<int>(std::lround(bbox.w));
  const int h = static_cast<int>(std::lround(bbox.h));
  if (w <= 0 || h <= 0 || x0 < 0 || y0 < 0 || x0 + w > frame.width() || y0 + h > frame.height())
    throw SynthError("bbox lies outside the frame");

  const Image src = frame.crop(x0, y0, w, h);
  const auto [ew, eh] = transformed_extent(w, h, affine.scale, affine.rotation_deg);
  const int out_w = std::max(1, static_cast<int>(std::ceil(ew - 1e-6)));
  const int out_h = std::max(1, static_cast<int>(std::ceil(eh - 1e-6)));
  Image ref(out_w, out_h, {0, 0, 0, 0});
  const double th = affine.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  for (int v = 0; v < out_h; ++v)
    for (int u = 0; u < out_w; ++u) {
      const double px = u + 0.5 - out_w / 2.0, py = v + 0.5 - out_h / 2.0;
      const double lx = (c * px - s * py) / affine.scale + w / 2.0;
      const double ly = (s * px + c * py) / affine.scale + h / 2.0;
      if (lx < 0.0 || ly < 0.0 || lx >= w || ly >= h) continue;
      std::memcpy(ref.px(u, v), src.px(static_cast<int>(lx), static_cast<int>(ly)), 4);
    }

  ReferencePlacement place;
  place.target_bbox = {static_cast<float>(x0 + w / 2.0 + affine.dx), static_cast<float>(y0 + h / 2.0 + affine.dy),
                       static_cast<float>(out_w), static_cast<float>(out_h)};
  place.rotation = 0.f;
  return {std::move(ref), std::move(place)};
}

// ---------------------------------------------------------------------------
// Trajectory overlay

// Foreground tracks grouped by subject; each group draws in one palette
// color. Segments between two visible frames up to the current frame are
// drawn as lines, the current visible point as a 3x3 dot.
inline std::vector<Image> render_trajectory_overlay(const ClipRecord& clip) {
  std::map<std::string, std::size_t> group_color;
  for (const auto* t : clip.triplet.foreground_sorted()) {
    const auto& subj = clip.triplet.captions.at(t->track_id).subject_hint;
    if (!group_color.count(subj)) {
      const auto idx = group_color.size();
      group_color[subj] = idx;
    }
  }
  std::vector<Image> out = clip.frames;
  for (std::size_t f = 0; f < out.size(); ++f) {
    for (const auto* t : clip.triplet.foreground_sorted()) {
      const auto color =
          kOverlayPalette[group_color.at(clip.triplet.captions.at(t->track_id).subject_hint) % kOverlayPalette.size()];
      for (std::size_t k = 1; k <= f; ++k) {
        if (!t->visible(static_cast<int>(k)) || !t->visible(static_cast<int>(k - 1))) continue;
        const int ax = static_cast<int>(std::floor(t->points[k - 1].x));
        const int ay = static_cast<int>(std::floor(t->points[k - 1].y));
        const int bx = static_cast<int>(std::floor(t->points[k].x));
        const int by = static_cast<int>(std::floor(t->points[k].y));
        if (ax == bx && ay == by) continue;
        draw_line(out[f], ax, ay, bx, by, color);
      }
      if (t->visible(static_cast<int>(f)))
        draw_dot(out[f], static_cast<int>(std::floor(t->points[f].x)),
                 static_cast<int>(std::floor(t->points[f].y)), color);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random scene sampling and dataset layout

struct SceneSampler {
  FrameSize canvas{96, 96};
  FrameSize crop{64, 64};
  int num_frames = 16;
  int min_objects = 1;
  int max_objects = 3;
  int min_size = 10;
  int max_size = 16;
};

namespace detail {

inline bool paths_overlap(const std::vector<ObjectTruth>& objs, std::size_t a, std::size_t b) {
  const auto& A = objs[a];
  const auto& B = objs[b];
  const float gap = (A.size + B.size) / 2.f + 2.f;
  for (std::size_t f = 0; f < A.centers.size(); ++f)
    if (std::abs(A.centers[f].x - B.centers[f].x) < gap && std::abs(A.centers[f].y - B.centers[f].y) < gap)
      return true;
  return false;
}

}  // namespace detail

// Samples a scene whose objects never overlap (so every object stays fully
// observable) and moves enough to leave a crop window now and then.
inline SceneSpec sample_scene(std::mt19937_64& rng, const SceneSampler& s) {
  std::uniform_int_distribution<int> nobj(s.min_objects, s.max_objects);
  std::uniform_int_distribution<int> size(s.min_size / 2, s.max_size / 2);
  std::uniform_int_distribution<int> shape(0, 2);
  std::uniform_int_distribution<int> profile(0, 3);
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<float> unit(0.f, 1.f);

  for (int attempt = 0; attempt < 200; ++attempt) {
    SceneSpec spec;
    spec.frame_size = s.canvas;
    spec.num_frames = s.num_frames;
    spec.seed = rng();
    std::uniform_int_distribution<int> gray(70, 170);
    spec.background.a = Rgb{static_cast<std::uint8_t>(gray(rng)), 0, 0};
    spec.background.a.g = spec.background.a.b = spec.background.a.r;
    if (unit(rng) < 0.3f) {
      spec.background.kind = Background::Kind::kChecker;
      const int d = unit(rng) < 0.5f ? 24 : -24;
      const auto v = static_cast<std::uint8_t>(std::clamp(spec.background.a.r + d, 40, 200));
      spec.background.b = {v, v, v};
      spec.background.cell = unit(rng) < 0.5f ? 4 : 8;
    }

    std::vector<std::size_t> colors(kObjectPalette.size());
    std::iota(colors.begin(), colors.end(), 0);
    std::shuffle(colors.begin(), colors.end(), rng);
    const int n = nobj(rng);
    const float W = static_cast<float>(s.canvas.width), H = static_cast<float>(s.canvas.height);
    for (int i = 0; i < n; ++i) {
      SceneObject o;
      o.shape = kAllShapes[static_cast<std::size_t>(shape(rng))];
      o.color = kObjectPalette[colors[static_cast<std::size_t>(i)]].rgb;
      o.size = 2 * size(rng);
      const float m = o.size / 2.f + 1.f;
      auto rnd_pt = [&] { return Point2f{m + unit(rng) * (W - 2 * m), m + unit(rng) * (H - 2 * m)}; };
      Point2f a = rnd_pt(), b = rnd_pt();
      for (int k = 0; k < 20 && std::hypot(a.x - b.x, a.y - b.y) < 28.f; ++k) b = rnd_pt();
      const auto prof = static_cast<SpeedProfile>(profile(rng));
      const int kd = kind(rng);
      if (kd <= 3) {
        o.motion = MotionPath::line(a, b, prof);
      } else {
        const Point2f ctrl = rnd_pt();
        o.motion = MotionPath::bezier(a, ctrl, b, prof);
      }
      spec.objects.push_back(std::move(o));
    }
    std::vector<ObjectTruth> objs;
    for (const auto& o : spec.objects)
      objs.push_back({"", o.shape, o.color, o.size, detail::snapped_centers(o.motion, spec.num_frames)});
    bool ok = true;
    for (std::size_t i = 0; i < objs.size() && ok; ++i)
      for (std::size_t j = 0; j < i && ok; ++j)
        if (detail::paths_overlap(objs, i, j)) ok = false;
    if (ok) return spec;
  }
  throw SynthError("could not sample a non-overlapping scene");
}

struct DatasetOptions {
  int n = 10;
  std::uint64_t seed = 0;
  double motion_threshold = 2.0;
  bool foreground_only_score = false;
  bool write_overlay = false;
  SceneSampler sampler;
};

struct ManifestEntry {
  std::string clip_id;
  double motion_score = 0.0;
  int num_frames = 0;
  FrameSize frame_size;
};

struct DatasetManifest {
  std::vector<ManifestEntry> clips;
};

inline constexpr const char* kManifestSchemaVersion = "1";

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : m.clips)
    clips.push_back({{"clip_id", c.clip_id},
                     {"motion_score", c.motion_score},
                     {"num_frames", c.num_frames},
                     {"frame_size", {c.frame_size.width, c.frame_size.height}}});
  return {{"schema_version", kManifestSchemaVersion}, {"clips", std::move(clips)}};
}

inline DatasetManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw SynthError("no manifest.json under " + root.string());
  const auto j = nlohmann::json::parse(in);
  if (j.at("schema_version").get<std::string>() != kManifestSchemaVersion)
    throw SynthError("unsupported manifest schema_version");
  DatasetManifest m;
  for (const auto& c : j.at("clips"))
    m.clips.push_back({c.at("clip_id").get<std::string>(), c.at("motion_score").get<double>(),
                       c.at("num_frames").get<int>(),
                       {c.at("frame_size")[0].get<int>(), c.at("frame_size")[1].get<int>()}});
  return m;
}

inline std::string frame_filename(int f) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d.png", f);
  return buf;
}

// Writes one clip in dataset layout. References become refs/<k>.png and
// their image_ref is "<clip_id>/refs/<k>".
inline void write_clip(const std::filesystem::path& root, const std::string& clip_id, const ClipRecord& clip,
                       const std::vector<Image>& refs, bool with_overlay) {
  namespace fs = std::filesystem;
  const auto dir = root / clip_id;
  fs::create_directories(dir / "frames");
  for (std::size_t f = 0; f < clip.frames.size(); ++f)
    write_png(dir / "frames" / frame_filename(static_cast<int>(f)), clip.frames[f]);
  if (!refs.empty()) {
    fs::create_directories(dir / "refs");
    for (std::size_t k = 0; k < refs.size(); ++k)
      write_png(dir / "refs" / (std::to_string(k) + ".png"), refs[k]);
  }
  if (with_overlay) {
    fs::create_directories(dir / "overlay");
    const auto ov = render_trajectory_overlay(clip);
    for (std::size_t f = 0; f < ov.size(); ++f) write_png(dir / "overlay" / frame_filename(static_cast<int>(f)), ov[f]);
  }
  std::ofstream(dir / "triplet.json", std::ios::trunc) << emit_triplet(clip.triplet);
}

// Generates one candidate clip for index `i`: sample, render on the larger
// canvas, random-crop, and extract references for objects fully inside the
// first cropped frame.
inline std::pair<ClipRecord, std::vector<Image>> generate_clip(std::uint64_t seed, int index,
                                                               const std::string& clip_id,
                                                               const SceneSampler& sampler) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(sq);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto spec = sample_scene(rng, sampler);
    const auto full = render_scene(spec);
    std::uniform_int_distribution<int> cx(0, sampler.canvas.width - sampler.crop.width);
    std::uniform_int_distribution<int> cy(0, sampler.canvas.height - sampler.crop.height);
    auto cropped = crop_augment(full, {cx(rng), cy(rng), sampler.crop.width, sampler.crop.height});
    if (!cropped) continue;
    std::vector<Image> refs;
    std::set<std::string> done;
    for (const auto* t : cropped->triplet.foreground_sorted()) {
      const auto& subj = cropped->triplet.captions.at(t->track_id).subject_hint;
      if (done.count(subj)) continue;
      done.insert(subj);
      const auto& box = cropped->triplet.bboxes.at(t->track_id);
      if (box.x_min() < 0.f || box.y_min() < 0.f || box.x_max() > sampler.crop.width ||
          box.y_max() > sampler.crop.height)
        continue;
      auto [img, place] = extract_reference(cropped->frames[0], box, {});
      place.image_ref = clip_id + "/refs/" + std::to_string(refs.size());
      place.track_id = t->track_id;
      cropped->triplet.references.push_back(place);
      refs.push_back(std::move(img));
    }
    return {std::move(*cropped), std::move(refs)};
  }
  throw SynthError("could not generate a clip with a visible foreground object");
}

inline DatasetManifest make_dataset(const std::filesystem::path& out_dir, const DatasetOptions& opt) {
  namespace fs = std::filesystem;
  if (opt.n < 1) throw SynthError("dataset size must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw SynthError("cannot create output directory " + out_dir.string());
  {
    std::ofstream probe(out_dir / ".write_probe");
    if (!probe) throw SynthError("output directory is not writable: " + out_dir.string());
  }
  fs::remove(out_dir / ".write_probe", ec);

  DatasetManifest manifest;
  for (int i = 0; i < opt.n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%05d", i);
    auto gen = generate_clip(opt.seed, i, buf, opt.sampler);
    const double score = motion_score(gen.first.triplet.tracks, opt.foreground_only_score);
    if (score < opt.motion_threshold) continue;
    const auto rep = validate_triplet(gen.first.triplet);
    if (!rep.ok()) throw SynthError("generated clip failed validation: " + rep.violations.front().message);
    write_clip(out_dir, buf, gen.first, gen.second, opt.write_overlay);
    manifest.clips.push_back({buf, score, gen.first.triplet.num_frames, gen.first.triplet.frame_size});
  }
  if (manifest.clips.empty()) throw SynthError("dataset empty after filtering");
  std::ofstream(out_dir / "manifest.json", std::ios::trunc) << manifest_to_json(manifest).dump(2) << "\n";
  return manifest;
}

struct LoadedClip {
  std::string clip_id;
  std::vector<Image> frames;
  MultimodalTriplet triplet;
  std::map<std::string, Image> assets;  // image_ref -> reference image
};

inline LoadedClip load_clip(const std::filesystem::path& root, const std::string& clip_id) {
  LoadedClip c;
  c.clip_id = clip_id;
  const auto dir = root / clip_id;
  std::ifstream in(dir / "triplet.json");
  if (!in) throw SynthError("missing triplet.json for " + clip_id);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c.triplet = parse_triplet(text);
  for (int f = 0; f < c.triplet.num_frames; ++f) c.frames.push_back(read_png(dir / "frames" / frame_filename(f)));
  for (const auto& r : c.triplet.references)
    if (!c.assets.count(r.image_ref)) c.assets.emplace(r.image_ref, read_png(root / (r.image_ref + ".png")));
  return c;
}

}  // namespace trajvid
