#pragma once

// Multimodal triplet: per-agent trajectory, first-frame box and caption,
// plus optional reference-image placements.
//
// Coordinates are pixels at native frame resolution, origin top-left,
// x rightward, y downward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace trajvid {

struct Point2f {
  float x = 0.f;
  float y = 0.f;

  friend bool operator==(const Point2f&, const Point2f&) = default;
};

struct FrameSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const FrameSize&, const FrameSize&) = default;

  // Closed rectangle [0, width] x [0, height].
  bool contains(float x, float y) const {
    return x >= 0.f && y >= 0.f && x <= static_cast<float>(width) &&
           y <= static_cast<float>(height);
  }
};

struct TrajectoryTrack {
  std::string track_id;
  bool is_background = false;
  std::vector<Point2f> points;
  std::vector<std::uint8_t> visibility;

  friend bool operator==(const TrajectoryTrack&, const TrajectoryTrack&) = default;

  int num_frames() const { return static_cast<int>(points.size()); }
  bool visible(int t) const { return visibility[static_cast<std::size_t>(t)] == 1; }

  // First frame index with visibility 1, or -1.
  int first_visible() const {
    for (std::size_t t = 0; t < visibility.size(); ++t)
      if (visibility[t] == 1) return static_cast<int>(t);
    return -1;
  }
};

struct BBox {
  float cx = 0.f;
  float cy = 0.f;
  float w = 0.f;
  float h = 0.f;

  friend bool operator==(const BBox&, const BBox&) = default;

  float x_min() const { return cx - w / 2.f; }
  float x_max() const { return cx + w / 2.f; }
  float y_min() const { return cy - h / 2.f; }
  float y_max() const { return cy + h / 2.f; }

  bool intersects(const FrameSize& f) const {
    return x_max() > 0.f && y_max() > 0.f && x_min() < static_cast<float>(f.width) &&
           y_min() < static_cast<float>(f.height);
  }
};

struct Caption {
  std::string text;
  std::string subject_hint;

  friend bool operator==(const Caption&, const Caption&) = default;
};

struct ReferencePlacement {
  std::string image_ref;
  BBox target_bbox;
  float rotation = 0.f;  // degrees, counter-clockwise on screen
  // Optional binding to the track this reference animates (entry events).
  std::optional<std::string> track_id;

  friend bool operator==(const ReferencePlacement&, const ReferencePlacement&) = default;
};

struct MultimodalTriplet {
  std::vector<TrajectoryTrack> tracks;
  std::map<std::string, BBox> bboxes;
  std::map<std::string, Caption> captions;
  std::vector<ReferencePlacement> references;
  FrameSize frame_size;
  int num_frames = 0;

  friend bool operator==(const MultimodalTriplet&, const MultimodalTriplet&) = default;

  const TrajectoryTrack* find_track(const std::string& id) const {
    for (const auto& t : tracks)
      if (t.track_id == id) return &t;
    return nullptr;
  }

  // Foreground tracks sorted by track_id; this is the canonical prompt order.
  std::vector<const TrajectoryTrack*> foreground_sorted() const {
    std::vector<const TrajectoryTrack*> out;
    for (const auto& t : tracks)
      if (!t.is_background) out.push_back(&t);
    std::sort(out.begin(), out.end(),
              [](const auto* a, const auto* b) { return a->track_id < b->track_id; });
    return out;
  }
};

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  kTooFewFrames,
  kLengthMismatch,
  kFrameCountMismatch,
  kBadVisibility,
  kNonFiniteCoordinate,
  kVisibleOutsideFrame,
  kBadBBox,
  kMissingBBox,
  kMissingCaption,
  kEmptyCaption,
  kUnexpectedBBox,
  kUnexpectedCaption,
  kDuplicateTrackId,
  kUnknownTrackRef,
  kBadFrameSize,
  kBadReference,
};

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::kTooFewFrames: return "too_few_frames";
    case ViolationKind::kLengthMismatch: return "length_mismatch";
    case ViolationKind::kFrameCountMismatch: return "frame_count_mismatch";
    case ViolationKind::kBadVisibility: return "bad_visibility";
    case ViolationKind::kNonFiniteCoordinate: return "non_finite_coordinate";
    case ViolationKind::kVisibleOutsideFrame: return "visible_outside_frame";
    case ViolationKind::kBadBBox: return "bad_bbox";
    case ViolationKind::kMissingBBox: return "missing_bbox";
    case ViolationKind::kMissingCaption: return "missing_caption";
    case ViolationKind::kEmptyCaption: return "empty_caption";
    case ViolationKind::kUnexpectedBBox: return "unexpected_bbox";
    case ViolationKind::kUnexpectedCaption: return "unexpected_caption";
    case ViolationKind::kDuplicateTrackId: return "duplicate_track_id";
    case ViolationKind::kUnknownTrackRef: return "unknown_track_ref";
    case ViolationKind::kBadFrameSize: return "bad_frame_size";
    case ViolationKind::kBadReference: return "bad_reference";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  std::string track_id;  // empty when not track-specific
  std::string path;      // JSON-style field path, e.g. tracks[1].visibility
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(ViolationKind k) const {
    return static_cast<std::size_t>(std::count_if(
        violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; }));
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : violations)
      arr.push_back({{"kind", to_string(v.kind)},
                     {"track_id", v.track_id},
                     {"path", v.path},
                     {"message", v.message}});
    return {{"valid", ok()}, {"violations", std::move(arr)}};
  }
};

namespace detail {

inline bool bbox_valid(const BBox& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) && std::isfinite(b.h) &&
         b.w > 0.f && b.h > 0.f;
}

}  // namespace detail

// Never throws; every violated invariant is reported.
inline ValidationReport validate_triplet(const MultimodalTriplet& tr) {
  ValidationReport rep;
  auto add = [&](ViolationKind k, std::string id, std::string path, std::string msg) {
    rep.violations.push_back({k, std::move(id), std::move(path), std::move(msg)});
  };

  if (tr.frame_size.width <= 0 || tr.frame_size.height <= 0)
    add(ViolationKind::kBadFrameSize, "", "frame_size", "frame dimensions must be positive");
  if (tr.num_frames < 2)
    add(ViolationKind::kTooFewFrames, "", "num_frames", "num_frames must be >= 2");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < tr.tracks.size(); ++i) {
    const auto& t = tr.tracks[i];
    const std::string base = "tracks[" + std::to_string(i) + "]";
    if (!ids.insert(t.track_id).second)
      add(ViolationKind::kDuplicateTrackId, t.track_id, base + ".track_id", "duplicate track_id");
    if (t.points.size() != t.visibility.size())
      add(ViolationKind::kLengthMismatch, t.track_id, base + ".visibility",
          "points has " + std::to_string(t.points.size()) + " entries, visibility has " +
              std::to_string(t.visibility.size()));
    if (t.points.size() < 2)
      add(ViolationKind::kTooFewFrames, t.track_id, base + ".points", "track needs >= 2 frames");
    if (static_cast<int>(t.points.size()) != tr.num_frames)
      add(ViolationKind::kFrameCountMismatch, t.track_id, base + ".points",
          "track length " + std::to_string(t.points.size()) + " != num_frames " +
              std::to_string(tr.num_frames));
    for (std::size_t f = 0; f < t.visibility.size(); ++f) {
      if (t.visibility[f] > 1)
        add(ViolationKind::kBadVisibility, t.track_id,
            base + ".visibility[" + std::to_string(f) + "]", "visibility must be 0 or 1");
    }
    const std::size_t n = std::min(t.points.size(), t.visibility.size());
    for (std::size_t f = 0; f < t.points.size(); ++f) {
      const auto& p = t.points[f];
      const std::string ppath = base + ".points[" + std::to_string(f) + "]";
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        add(ViolationKind::kNonFiniteCoordinate, t.track_id, ppath, "coordinate is not finite");
        continue;
      }
      if (f < n && t.visibility[f] == 1 && !tr.frame_size.contains(p.x, p.y))
        add(ViolationKind::kVisibleOutsideFrame, t.track_id, ppath,
            "visible point lies outside the frame");
    }

    const bool has_box = tr.bboxes.count(t.track_id) > 0;
    const bool has_cap = tr.captions.count(t.track_id) > 0;
    if (t.is_background) {
      if (has_box)
        add(ViolationKind::kUnexpectedBBox, t.track_id, "bboxes." + t.track_id,
            "background track must not carry a bbox");
      if (has_cap)
        add(ViolationKind::kUnexpectedCaption, t.track_id, "captions." + t.track_id,
            "background track must not carry a caption");
    } else {
      if (!has_box)
        add(ViolationKind::kMissingBBox, t.track_id, "bboxes." + t.track_id,
            "foreground track has no bbox");
      else if (!detail::bbox_valid(tr.bboxes.at(t.track_id)))
        add(ViolationKind::kBadBBox, t.track_id, "bboxes." + t.track_id,
            "bbox needs finite center and w > 0, h > 0");
      if (!has_cap)
        add(ViolationKind::kMissingCaption, t.track_id, "captions." + t.track_id,
            "foreground track has no caption");
      else if (tr.captions.at(t.track_id).text.empty())
        add(ViolationKind::kEmptyCaption, t.track_id, "captions." + t.track_id + ".text",
            "caption text is empty");
    }
  }
  for (const auto& [id, box] : tr.bboxes)
    if (!ids.count(id))
      add(ViolationKind::kUnknownTrackRef, id, "bboxes." + id, "bbox for unknown track");
  for (const auto& [id, cap] : tr.captions)
    if (!ids.count(id))
      add(ViolationKind::kUnknownTrackRef, id, "captions." + id, "caption for unknown track");

  for (std::size_t i = 0; i < tr.references.size(); ++i) {
    const auto& r = tr.references[i];
    const std::string base = "references[" + std::to_string(i) + "]";
    if (r.image_ref.empty())
      add(ViolationKind::kBadReference, "", base + ".image_ref", "empty image_ref");
    if (!detail::bbox_valid(r.target_bbox)) {
      add(ViolationKind::kBadReference, "", base + ".target_bbox", "invalid target_bbox");
      continue;
    }
    if (!std::isfinite(r.rotation))
      add(ViolationKind::kBadReference, "", base + ".rotation", "rotation is not finite");
    if (r.target_bbox.intersects(tr.frame_size)) continue;
    // Off-screen placement is only meaningful for an object that enters later.
    const TrajectoryTrack* bound = r.track_id ? tr.find_track(*r.track_id) : nullptr;
    if (r.track_id && !bound) {
      add(ViolationKind::kUnknownTrackRef, *r.track_id, base + ".track_id",
          "reference bound to unknown track");
    } else if (!bound || bound->first_visible() < 1) {
      add(ViolationKind::kBadReference, r.track_id.value_or(""), base + ".target_bbox",
          "off-screen reference must be bound to a track that enters after the first frame");
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// JSON schema "1"

inline constexpr const char* kTripletSchemaVersion = "1";

class TripletError : public std::runtime_error {
 public:
  enum class Kind { kVersion, kMalformed, kInvalid };

  TripletError(Kind kind, const std::string& what, ValidationReport report = {})
      : std::runtime_error(what), kind_(kind), report_(std::move(report)) {}

  Kind kind() const { return kind_; }
  const ValidationReport& report() const { return report_; }

 private:
  Kind kind_;
  ValidationReport report_;
};

inline nlohmann::json bbox_to_json(const BBox& b) {
  return {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}};
}

inline nlohmann::json triplet_to_json(const MultimodalTriplet& tr) {
  using nlohmann::json;
  json tracks = json::array();
  for (const auto& t : tr.tracks) {
    json pts = json::array();
    for (const auto& p : t.points) pts.push_back(json::array({p.x, p.y}));
    json vis = json::array();
    for (auto v : t.visibility) vis.push_back(static_cast<int>(v));
    tracks.push_back({{"track_id", t.track_id},
                      {"is_background", t.is_background},
                      {"points", std::move(pts)},
                      {"visibility", std::move(vis)}});
  }
  json boxes = json::object();
  for (const auto& [id, b] : tr.bboxes) boxes[id] = bbox_to_json(b);
  json caps = json::object();
  for (const auto& [id, c] : tr.captions)
    caps[id] = {{"text", c.text}, {"subject_hint", c.subject_hint}};
  json refs = json::array();
  for (const auto& r : tr.references) {
    json jr = {{"image_ref", r.image_ref},
               {"target_bbox", bbox_to_json(r.target_bbox)},
               {"rotation", r.rotation}};
    if (r.track_id) jr["track_id"] = *r.track_id;
    refs.push_back(std::move(jr));
  }
  return {{"schema_version", kTripletSchemaVersion},
          {"frame_size", json::array({tr.frame_size.width, tr.frame_size.height})},
          {"num_frames", tr.num_frames},
          {"tracks", std::move(tracks)},
          {"bboxes", std::move(boxes)},
          {"captions", std::move(caps)},
          {"references", std::move(refs)}};
}

inline std::string emit_triplet(const MultimodalTriplet& tr) {
  return triplet_to_json(tr).dump(2) + "\n";
}

namespace detail {

inline float json_float(const nlohmann::json& j, const std::string& what) {
  if (!j.is_number()) throw TripletError(TripletError::Kind::kMalformed, what + " must be a number");
  return static_cast<float>(j.get<double>());
}

inline BBox json_bbox(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw TripletError(TripletError::Kind::kMalformed, what + " must be an object");
  return {json_float(j.at("cx"), what + ".cx"), json_float(j.at("cy"), what + ".cy"),
          json_float(j.at("w"), what + ".w"), json_float(j.at("h"), what + ".h")};
}

}  // namespace detail

// Parses and validates. Throws TripletError on version mismatch, malformed
// input, or any invariant violation (the report is attached).
inline MultimodalTriplet triplet_from_json(const nlohmann::json& j) {
  using K = TripletError::Kind;
  MultimodalTriplet tr;
  try {
    if (!j.is_object()) throw TripletError(K::kMalformed, "triplet must be a JSON object");
    const auto& ver = j.at("schema_version");
    const std::string v = ver.is_string() ? ver.get<std::string>() : ver.dump();
    if (v != kTripletSchemaVersion)
      throw TripletError(K::kVersion, "unsupported schema_version \"" + v + "\"");

    const auto& fs = j.at("frame_size");
    if (!fs.is_array() || fs.size() != 2 || !fs[0].is_number_integer() || !fs[1].is_number_integer())
      throw TripletError(K::kMalformed, "frame_size must be [width, height] integers");
    tr.frame_size = {fs[0].get<int>(), fs[1].get<int>()};
    if (!j.at("num_frames").is_number_integer())
      throw TripletError(K::kMalformed, "num_frames must be an integer");
    tr.num_frames = j.at("num_frames").get<int>();

    for (const auto& jt : j.at("tracks")) {
      TrajectoryTrack t;
      t.track_id = jt.at("track_id").get<std::string>();
      t.is_background = jt.at("is_background").get<bool>();
      for (const auto& p : jt.at("points")) {
        if (!p.is_array() || p.size() != 2)
          throw TripletError(K::kMalformed, "track " + t.track_id + ": point must be [x, y]");
        t.points.push_back({detail::json_float(p[0], "x"), detail::json_float(p[1], "y")});
      }
      for (const auto& v : jt.at("visibility")) {
        // Only the integers 0 and 1 are accepted; 0.5, true, "1" are rejected.
        if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1))
          throw TripletError(K::kInvalid, "track " + t.track_id + ": visibility must be 0 or 1",
                             ValidationReport{{{ViolationKind::kBadVisibility, t.track_id,
                                                "visibility", "value " + v.dump()}}});
        t.visibility.push_back(static_cast<std::uint8_t>(v.get<int>()));
      }
      tr.tracks.push_back(std::move(t));
    }
    if (j.contains("bboxes"))
      for (const auto& [id, jb] : j.at("bboxes").items())
        tr.bboxes[id] = detail::json_bbox(jb, "bboxes." + id);
    if (j.contains("captions"))
      for (const auto& [id, jc] : j.at("captions").items())
        tr.captions[id] = {jc.at("text").get<std::string>(),
                           jc.value("subject_hint", std::string{})};
    if (j.contains("references"))
      for (const auto& jr : j.at("references")) {
        ReferencePlacement r;
        r.image_ref = jr.at("image_ref").get<std::string>();
        r.target_bbox = detail::json_bbox(jr.at("target_bbox"), "target_bbox");
        r.rotation = jr.contains("rotation") ? detail::json_float(jr.at("rotation"), "rotation") : 0.f;
        if (jr.contains("track_id")) r.track_id = jr.at("track_id").get<std::string>();
        tr.references.push_back(std::move(r));
      }
  } catch (const nlohmann::json::exception& e) {
    throw TripletError(K::kMalformed, std::string("malformed triplet: ") + e.what());
  }

  auto rep = validate_triplet(tr);
  if (!rep.ok())
    throw TripletError(K::kInvalid,
                       "triplet violates invariants (" + std::to_string(rep.violations.size()) +
                           " violations; first: " + rep.violations.front().message + ")",
                       rep);
  return tr;
}

inline MultimodalTriplet parse_triplet(const std::string& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw TripletError(TripletError::Kind::kMalformed, std::string("malformed JSON: ") + e.what());
  }
  return triplet_from_json(j);
}

// ---------------------------------------------------------------------------
// Trajectory timing

class TrackError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Maps user points to frames [start_frame, end_frame] with equal time
// between consecutive points, so spacing sets speed. Frames before start
// repeat the first point, frames after end repeat the last. Visibility is 1
// on [start, end] and taken from `outside_visibility` (length T) elsewhere;
// without it those frames are visible too.
inline TrajectoryTrack resample_track(const std::vector<Point2f>& user_points, int start_frame,
                                      int end_frame, int num_frames,
                                      const std::optional<std::vector<std::uint8_t>>& outside_visibility = {},
                                      std::string track_id = "track", bool is_background = false) {
  if (user_points.size() < 2) throw TrackError("resample_track needs at least 2 user points");
  if (!(0 <= start_frame && start_frame < end_frame && end_frame < num_frames))
    throw TrackError("resample_track needs 0 <= start_frame < end_frame < T");
  if (outside_visibility && static_cast<int>(outside_visibility->size()) != num_frames)
    throw TrackError("outside_visibility must have T entries");

  TrajectoryTrack out;
  out.track_id = std::move(track_id);
  out.is_background = is_background;
  out.points.resize(static_cast<std::size_t>(num_frames));
  out.visibility.resize(static_cast<std::size_t>(num_frames), 1);

  const double segments = static_cast<double>(user_points.size() - 1);
  const double span = static_cast<double>(end_frame - start_frame);
  for (int f = 0; f < num_frames; ++f) {
    Point2f p;
    if (f <= start_frame) {
      p = user_points.front();
    } else if (f >= end_frame) {
      p = user_points.back();
    } else {
      const double s = static_cast<double>(f - start_frame) / span * segments;
      const auto k = std::min(static_cast<std::size_t>(s), user_points.size() - 2);
      const double u = s - static_cast<double>(k);
      const auto& a = user_points[k];
      const auto& b = user_points[k + 1];
      p.x = static_cast<float>(a.x + u * (static_cast<double>(b.x) - a.x));
      p.y = static_cast<float>(a.y + u * (static_cast<double>(b.y) - a.y));
    }
    out.points[static_cast<std::size_t>(f)] = p;
    if ((f < start_frame || f > end_frame) && outside_visibility)
      out.visibility[static_cast<std::size_t>(f)] = (*outside_visibility)[static_cast<std::size_t>(f)] ? 1 : 0;
  }
  return out;
}

}  // namespace trajvid
