#pragma once

// Evaluation: a color-keyed oracle tracker for synthetic videos, trajectory
// metrics (ObjMC, appearance rate), feature consistency, and benchmark
// evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajvid/checkpoint.hpp"
#include "trajvid/condition.hpp"
#include "trajvid/image.hpp"
#include "trajvid/raster.hpp"
#include "trajvid/sampler.hpp"
#include "trajvid/synthgen.hpp"
#include "trajvid/triplet.hpp"
#include "trajvid/vocabulary.hpp"

namespace trajvid {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric value that may be undefined (no frames to average over).
struct MetricValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;

  static MetricValue of(double v) { return {v, true}; }
  static MetricValue undefined() { return {}; }
};

inline nlohmann::json to_json(const MetricValue& m) { return m.defined ? nlohmann::json(m.value) : nlohmann::json(); }

// ---------------------------------------------------------------------------
// Oracle tracker

struct TrackerOptions {
  int color_tolerance = 64;  // max per-channel difference
  int min_pixels = 4;
};

inline bool color_match(const Rgb& a, const Rgb& b, int tol) {
  return std::abs(a.r - b.r) <= tol && std::abs(a.g - b.g) <= tol && std::abs(a.b - b.b) <= tol;
}

struct ObjectObservation {
  bool found = false;
  int pixels = 0;
  Point2f centroid;
  Point2f center;  // template-refined object center (integer pixel corner)
};

// Locates one object of known color/shape/size in a frame: centroid of the
// matching pixels, then the integer center whose frame-clipped template best
// overlaps the matched pixels (IoU).
inline ObjectObservation locate_object(const Image& frame, Rgb color, std::optional<Shape> shape, int size,
                                       const TrackerOptions& opt = {}) {
  ObjectObservation ob;
  const int W = frame.width(), H = frame.height();
  std::vector<char> hit(static_cast<std::size_t>(W) * H, 0);
  double sx = 0, sy = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (color_match(frame.rgb(x, y), color, opt.color_tolerance)) {
        hit[static_cast<std::size_t>(y) * W + x] = 1;
        sx += x + 0.5;
        sy += y + 0.5;
        ++ob.pixels;
      }
  if (ob.pixels < opt.min_pixels) return ob;
  ob.found = true;
  ob.centroid = {static_cast<float>(sx / ob.pixels), static_cast<float>(sy / ob.pixels)};
  if (!shape || size <= 0) {
    ob.center = ob.centroid;
    return ob;
  }
  const auto offsets = shape_mask_offsets(*shape, size);
  const int cx0 = static_cast<int>(std::lround(ob.centroid.x)), cy0 = static_cast<int>(std::lround(ob.centroid.y));
  double best = -1.0, best_d = 0.0;
  Point2f best_c = ob.centroid;
  for (int cy = cy0 - size; cy <= cy0 + size; ++cy)
    for (int cx = cx0 - size; cx <= cx0 + size; ++cx) {
      int inter = 0, tmpl = 0;
      for (const auto& o : offsets) {
        const int x = static_cast<int>(std::floor(cx + o.x)), y = static_cast<int>(std::floor(cy + o.y));
        if (x < 0 || y < 0 || x >= W || y >= H) continue;
        ++tmpl;
        inter += hit[static_cast<std::size_t>(y) * W + x];
      }
      if (tmpl == 0) continue;
      const double iou = static_cast<double>(inter) / (tmpl + ob.pixels - inter);
      const double d = std::hypot(cx - ob.centroid.x, cy - ob.centroid.y);
      if (iou > best + 1e-12 || (std::abs(iou - best) <= 1e-12 && d < best_d)) {
        best = iou;
        best_d = d;
        best_c = {static_cast<float>(cx), static_cast<float>(cy)};
      }
    }
  ob.center = best_c;
  return ob;
}

// Tracks every foreground track of the triplet through `frames`. The object
// identity comes from the caption's subject hint; the keypoint's offset from
// the object center is taken from frame 0 of the input track and the bbox.
inline std::map<std::string, TrajectoryTrack> oracle_track(const std::vector<Image>& frames,
                                                           const MultimodalTriplet& tr,
                                                           const TrackerOptions& opt = {}) {
  struct Obj {
    Rgb color;
    std::optional<Shape> shape;
    int size = 0;
    std::vector<ObjectObservation> obs;
  };
  std::map<std::string, Obj> objects;  // subject hint -> object
  std::map<std::string, std::string> subject_of;
  for (const auto* t : tr.foreground_sorted()) {
    const auto cap = tr.captions.find(t->track_id);
    if (cap == tr.captions.end()) throw MetricError("track " + t->track_id + " has no caption");
    const auto id = parse_subject(cap->second.subject_hint);
    if (!id.color) throw MetricError("track " + t->track_id + " names no known color");
    const auto box = tr.bboxes.find(t->track_id);
    const int size = box == tr.bboxes.end() ? 0 : static_cast<int>(std::lround(std::max(box->second.w, box->second.h)));
    subject_of[t->track_id] = cap->second.subject_hint;
    objects[cap->second.subject_hint] = {*id.color, id.shape, size, {}};
  }
  for (auto a = objects.begin(); a != objects.end(); ++a)
    for (auto b = std::next(a); b != objects.end(); ++b)
      if (a->second.color == b->second.color)
        throw MetricError("ambiguous colors: '" + a->first + "' and '" + b->first + "'");

  for (auto& [hint, o] : objects)
    for (const auto& f : frames) o.obs.push_back(locate_object(f, o.color, o.shape, o.size, opt));

  std::map<std::string, TrajectoryTrack> out;
  for (const auto* t : tr.foreground_sorted()) {
    const auto& o = objects.at(subject_of.at(t->track_id));
    Point2f off{0.f, 0.f};
    const auto box = tr.bboxes.find(t->track_id);
    if (box != tr.bboxes.end() && !t->points.empty())
      off = {t->points[0].x - box->second.cx, t->points[0].y - box->second.cy};
    TrajectoryTrack r;
    r.track_id = t->track_id;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto& ob = o.obs[f];
      const Point2f p{ob.center.x + off.x, ob.center.y + off.y};
      const bool in = ob.found && p.x >= 0.f && p.y >= 0.f && p.x <= frames[f].width() && p.y <= frames[f].height();
      r.points.push_back(ob.found ? p : Point2f{0.f, 0.f});
      r.visibility.push_back(in ? 1 : 0);
    }
    out.emplace(t->track_id, std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory metrics

// Mean distance over frames visible in both tracks.
inline MetricValue objmc(const TrajectoryTrack& gen, const TrajectoryTrack& ref) {
  if (gen.num_frames() != ref.num_frames()) throw MetricError("objmc: track lengths differ");
  double sum = 0.0;
  int n = 0;
  for (int f = 0; f < ref.num_frames(); ++f)
    if (gen.visible(f) && ref.visible(f)) {
      const auto& a = gen.points[static_cast<std::size_t>(f)];
      const auto& b = ref.points[static_cast<std::size_t>(f)];
      sum += std::hypot(static_cast<double>(a.x) - b.x, static_cast<double>(a.y) - b.y);
      ++n;
    }
  return n ? MetricValue::of(sum / n) : MetricValue::undefined();
}

// Fraction of reference-visible frames that are also visible in the
// generated track.
inline MetricValue appearance_rate(const std::vector<std::uint8_t>& gen_v, const std::vector<std::uint8_t>& ref_v) {
  if (gen_v.size() != ref_v.size()) throw MetricError("appearance_rate: lengths differ");
  int den = 0, num = 0;
  for (std::size_t f = 0; f < ref_v.size(); ++f)
    if (ref_v[f]) {
      ++den;
      if (gen_v[f]) ++num;
    }
  return den ? MetricValue::of(static_cast<double>(num) / den) : MetricValue::undefined();
}

// ---------------------------------------------------------------------------
// Consistency

// Per-frame foreground cells (latent grid): cells whose center lies inside
// the coverage box of a visible foreground track.
inline std::vector<std::vector<char>> foreground_cells(const MultimodalTriplet& tr, int stride = 8) {
  const int lh = tr.frame_size.height / stride, lw = tr.frame_size.width / stride;
  std::vector<std::vector<char>> masks(static_cast<std::size_t>(tr.num_frames),
                                       std::vector<char>(static_cast<std::size_t>(lh) * lw, 0));
  for (const auto* t : tr.foreground_sorted()) {
    const auto box = tr.bboxes.find(t->track_id);
    if (box == tr.bboxes.end()) continue;
    for (int f = 0; f < tr.num_frames; ++f) {
      if (!t->visible(f)) continue;
      const auto& p = t->points[static_cast<std::size_t>(f)];
      const double x0 = p.x - box->second.w / 2.0, x1 = p.x + box->second.w / 2.0;
      const double y0 = p.y - box->second.h / 2.0, y1 = p.y + box->second.h / 2.0;
      for (int i = 0; i < lh; ++i)
        for (int j = 0; j < lw; ++j) {
          const double cx = (j + 0.5) * stride, cy = (i + 0.5) * stride;
          if (cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1) masks[static_cast<std::size_t>(f)][static_cast<std::size_t>(i * lw + j)] = 1;
        }
    }
  }
  return masks;
}

struct ConsistencyResult {
  MetricValue subject;
  MetricValue background;
};

// Mean-pooled encoder feature (shifted by +1 so every channel is
// non-negative) over the selected cells; nullopt when none are selected.
inline std::optional<Eigen::VectorXd> pooled_feature(const MatF& latent, const std::vector<char>& cells, bool want) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(latent.cols());
  int n = 0;
  for (Eigen::Index r = 0; r < latent.rows(); ++r)
    if ((cells[static_cast<std::size_t>(r)] != 0) == want) {
      acc += (latent.row(r).cast<double>().array() + 1.0).matrix().transpose();
      ++n;
    }
  if (!n) return std::nullopt;
  return acc / n;
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return std::clamp(a.dot(b) / (na * nb), 0.0, 1.0);
}

// Mean cosine similarity of consecutive frames' pooled features, separately
// over foreground cells and their complement. Features are non-negative so
// the cosine already lies in [0, 1].
inline ConsistencyResult consistency(const std::vector<Image>& frames, const std::vector<std::vector<char>>& masks,
                                     int stride = 8) {
  if (frames.size() < 2) throw MetricError("consistency needs at least two frames");
  if (masks.size() != frames.size()) throw MetricError("one mask per frame required");
  std::vector<MatF> lat;
  for (const auto& f : frames) {
    lat.push_back(encode_frame(f, stride));
    if (masks[lat.size() - 1].size() != static_cast<std::size_t>(lat.back().rows()))
      throw MetricError("mask size does not match the latent grid");
  }
  ConsistencyResult res;
  for (int pass = 0; pass < 2; ++pass) {
    const bool fg = pass == 0;
    double sum = 0.0;
    int n = 0;
    for (std::size_t f = 0; f + 1 < frames.size(); ++f) {
      const auto a = pooled_feature(lat[f], masks[f], fg);
      const auto b = pooled_feature(lat[f + 1], masks[f + 1], fg);
      if (!a || !b) continue;
      sum += cosine(*a, *b);
      ++n;
    }
    (fg ? res.subject : res.background) = n ? MetricValue::of(sum / n) : MetricValue::undefined();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Per-case evaluation

inline bool has_entry_or_exit(const MultimodalTriplet& tr) {
  for (const auto* t : tr.foreground_sorted()) {
    const auto first = t->visibility.front();
    for (auto v : t->visibility)
      if (v != first) return true;
  }
  return false;
}

struct CaseReport {
  std::string case_id;
  bool entry_exit = false;
  MetricValue objmc, appearance_rate, subject_consistency, background_consistency;
  MetricValue assignment_accuracy;
};

inline nlohmann::json to_json(const CaseReport& c) {
  nlohmann::json j = {{"case_id", c.case_id},
                      {"entry_exit", c.entry_exit},
                      {"objmc", to_json(c.objmc)},
                      {"appearance_rate", to_json(c.appearance_rate)},
                      {"subject_consistency", to_json(c.subject_consistency)},
                      {"background_consistency", to_json(c.background_consistency)}};
  if (c.assignment_accuracy.defined) j["assignment_accuracy"] = c.assignment_accuracy.value;
  return j;
}

// For each object (grouped by subject hint), is its tracked path closer to
// its own reference trajectory than to any other object's? Mean distance is
// taken over frames where the reference is visible; an object never found
// counts as wrong.
inline MetricValue assignment_accuracy(const std::vector<Image>& frames, const MultimodalTriplet& tr,
                                       const TrackerOptions& opt = {}) {
  const auto tracked = oracle_track(frames, tr, opt);
  std::map<std::string, const TrajectoryTrack*> rep;  // subject -> first keypoint track
  for (const auto* t : tr.foreground_sorted()) rep.emplace(tr.captions.at(t->track_id).subject_hint, t);
  if (rep.size() < 2) return MetricValue::undefined();
  int correct = 0;
  for (const auto& [subject, own] : rep) {
    const auto& gen = tracked.at(own->track_id);
    // compare centers: remove this object's keypoint offset from gen, add the other's
    auto dist_to = [&](const TrajectoryTrack* ref) {
      const auto& ob = tr.bboxes.at(own->track_id);
      const auto& rb = tr.bboxes.at(ref->track_id);
      const Point2f go{own->points[0].x - ob.cx, own->points[0].y - ob.cy};
      const Point2f ro{ref->points[0].x - rb.cx, ref->points[0].y - rb.cy};
      double s = 0.0;
      int n = 0;
      for (int f = 0; f < ref->num_frames(); ++f) {
        if (!ref->visible(f) || !gen.visible(f)) continue;
        const auto& g = gen.points[static_cast<std::size_t>(f)];
        const auto& r = ref->points[static_cast<std::size_t>(f)];
        s += std::hypot((g.x - go.x) - (r.x - ro.x), (g.y - go.y) - (r.y - ro.y));
        ++n;
      }
      return n ? s / n : std::numeric_limits<double>::infinity();
    };
    const double d_own = dist_to(own);
    bool ok = std::isfinite(d_own);
    for (const auto& [other, ot] : rep)
      if (other != subject && !(d_own < dist_to(ot))) ok = false;
    if (ok) ++correct;
  }
  return MetricValue::of(static_cast<double>(correct) / rep.size());
}

inline CaseReport evaluate_case(const std::string& id, const std::vector<Image>& frames, const MultimodalTriplet& tr,
                                bool with_assignment = false, const TrackerOptions& opt = {}) {
  CaseReport c;
  c.case_id = id;
  c.entry_exit = has_entry_or_exit(tr);
  const auto tracked = oracle_track(frames, tr, opt);
  double om = 0, ar = 0;
  int nom = 0, nar = 0;
  for (const auto* t : tr.foreground_sorted()) {
    const auto& g = tracked.at(t->track_id);
    const auto o = objmc(g, *t);
    if (o.defined) om += o.value, ++nom;
    const auto a = appearance_rate(g.visibility, t->visibility);
    if (a.defined) ar += a.value, ++nar;
  }
  c.objmc = nom ? MetricValue::of(om / nom) : MetricValue::undefined();
  c.appearance_rate = nar ? MetricValue::of(ar / nar) : MetricValue::undefined();
  const auto cons = consistency(frames, foreground_cells(tr));
  c.subject_consistency = cons.subject;
  c.background_consistency = cons.background;
  if (with_assignment) c.assignment_accuracy = assignment_accuracy(frames, tr, opt);
  return c;
}

// ---------------------------------------------------------------------------
// Benchmark evaluation

struct EvalOptions {
  int steps = 10;
  std::uint64_t seed = 0;
  bool bypass_sampling = false;  // score the stored frames instead of samples
  bool assignment = false;
  // Score only frames that a latent frame samples; the others repeat them.
  bool latent_frames_only = true;
  TrackerOptions tracker;
};

// Restricts a video and its triplet to the given frame indices.
inline std::pair<std::vector<Image>, MultimodalTriplet> select_frames(const std::vector<Image>& frames,
                                                                      const MultimodalTriplet& tr,
                                                                      const std::vector<int>& idx) {
  std::vector<Image> f;
  MultimodalTriplet t = tr;
  t.num_frames = static_cast<int>(idx.size());
  for (int i : idx) f.push_back(frames.at(static_cast<std::size_t>(i)));
  for (auto& track : t.tracks) {
    TrajectoryTrack r = track;
    r.points.clear();
    r.visibility.clear();
    for (int i : idx) {
      r.points.push_back(track.points.at(static_cast<std::size_t>(i)));
      r.visibility.push_back(track.visibility.at(static_cast<std::size_t>(i)));
    }
    track = std::move(r);
  }
  return {std::move(f), std::move(t)};
}

inline std::vector<int> latent_sample_frames(const LatentGrid& g) {
  std::vector<int> out;
  for (int k = 0; k < g.latent_frames(); ++k) out.push_back(g.sample_frame(k));
  return out;
}

struct EvalReport {
  std::vector<CaseReport> cases;

  struct Aggregate {
    double value = std::numeric_limits<double>::quiet_NaN();
    int undefined = 0;
    int count = 0;
  };

  template <typename Get, typename Pred>
  Aggregate aggregate(Get get, Pred include) const {
    Aggregate a;
    double s = 0.0;
    for (const auto& c : cases) {
      if (!include(c)) continue;
      const MetricValue m = get(c);
      if (m.defined) {
        s += m.value;
        ++a.count;
      } else {
        ++a.undefined;
      }
    }
    if (a.count) a.value = s / a.count;
    return a;
  }

  Aggregate objmc() const {
    return aggregate([](const CaseReport& c) { return c.objmc; }, [](const CaseReport&) { return true; });
  }
  Aggregate appearance_rate() const {
    return aggregate([](const CaseReport& c) { return c.appearance_rate; }, [](const CaseReport&) { return true; });
  }
  Aggregate appearance_rate_entry_exit() const {
    return aggregate([](const CaseReport& c) { return c.appearance_rate; },
                     [](const CaseReport& c) { return c.entry_exit; });
  }
  Aggregate subject_consistency() const {
    return aggregate([](const CaseReport& c) { return c.subject_consistency; }, [](const CaseReport&) { return true; });
  }
  Aggregate background_consistency() const {
    return aggregate([](const CaseReport& c) { return c.background_consistency; },
                     [](const CaseReport&) { return true; });
  }
  Aggregate assignment_accuracy() const {
    return aggregate([](const CaseReport& c) { return c.assignment_accuracy; }, [](const CaseReport&) { return true; });
  }
};

inline constexpr const char* kEvalSchemaVersion = "1";

inline nlohmann::json to_json(const EvalReport& r) {
  auto val = [](const EvalReport::Aggregate& a) { return a.count ? nlohmann::json(a.value) : nlohmann::json(); };
  const auto om = r.objmc(), ar = r.appearance_rate(), are = r.appearance_rate_entry_exit();
  const auto sc = r.subject_consistency(), bc = r.background_consistency();
  nlohmann::json agg = {{"objmc", val(om)},
                        {"appearance_rate", val(ar)},
                        {"appearance_rate_entry_exit", val(are)},
                        {"subject_consistency", val(sc)},
                        {"background_consistency", val(bc)},
                        {"undefined_counts",
                         {{"objmc", om.undefined},
                          {"appearance_rate", ar.undefined},
                          {"appearance_rate_entry_exit", are.undefined},
                          {"subject_consistency", sc.undefined},
                          {"background_consistency", bc.undefined}}},
                        {"consistency_note", "features from the toy block encoder; not comparable to DINO/CLIP scores"}};
  const auto aa = r.assignment_accuracy();
  if (aa.count) agg["assignment_accuracy"] = aa.value;
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) cases.push_back(to_json(c));
  return {{"schema_version", kEvalSchemaVersion}, {"aggregate", std::move(agg)}, {"cases", std::move(cases)}};
}

// Evaluates every case of a benchmark directory (dataset layout). Without
// bypass, each case is sampled from its first frame and triplet.
inline EvalReport evaluate(const Model<float>* model, const std::filesystem::path& bench, const EvalOptions& opt = {}) {
  if (!std::filesystem::is_directory(bench)) throw MetricError("benchmark directory not found: " + bench.string());
  DatasetManifest manifest;
  try {
    manifest = load_manifest(bench);
  } catch (const SynthError& e) {
    throw MetricError(e.what());
  }
  if (manifest.clips.empty()) throw MetricError("benchmark is empty");
  if (!opt.bypass_sampling && !model) throw MetricError("a model is required unless sampling is bypassed");
  EvalReport rep;
  for (const auto& e : manifest.clips) {
    const auto clip = load_clip(bench, e.clip_id);
    std::vector<Image> frames;
    if (opt.bypass_sampling) {
      frames = clip.frames;
    } else {
      if (!(grid_for(clip.triplet, model->config().grid.spatial_stride, model->config().grid.temporal_stride) ==
            model->config().grid))
        throw MetricError("checkpoint/config mismatch: benchmark grid differs from the model grid");
      frames = sample(*model, clip.triplet, clip.frames.front(), map_lookup(clip.assets), opt.steps, opt.seed).frames;
    }
    if (opt.latent_frames_only) {
      const auto [f, t] = select_frames(frames, clip.triplet, latent_sample_frames(grid_for(clip.triplet)));
      rep.cases.push_back(evaluate_case(e.clip_id, f, t, opt.assignment, opt.tracker));
    } else {
      rep.cases.push_back(evaluate_case(e.clip_id, frames, clip.triplet, opt.assignment, opt.tracker));
    }
  }
  return rep;
}

}  // namespace trajvid
