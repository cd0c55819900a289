#pragma once

// Conditioning tensors for the generator: block-pooled frame latents,
// Gaussian trajectory heatmap, point feature map, reference pasting and the
// channel-concatenated bundle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajvid/image.hpp"
#include "trajvid/raster.hpp"
#include "trajvid/tensor.hpp"
#include "trajvid/triplet.hpp"

namespace trajvid {

inline constexpr int kLatentChannels = 16;

// Fixed channel layout of the model input; recorded in checkpoints.
inline constexpr const char* kChannelContract =
    "noise[C]|image_latent[C]|mask[1]|heatmap[1]|point_map[C];C=16;encoder=quadpool-v1";

class ConditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Latent frame 0 holds pixel frame 0; latent frame k >= 1 covers pixel
// frames [1 + (k-1)*ts, 1 + k*ts) clipped to T, and samples its first frame.
struct LatentGrid {
  int num_frames = 16;
  int height = 64;
  int width = 64;
  int spatial_stride = 8;
  int temporal_stride = 4;

  int latent_frames() const { return 1 + (num_frames - 1 + temporal_stride - 1) / temporal_stride; }
  int latent_height() const { return height / spatial_stride; }
  int latent_width() const { return width / spatial_stride; }
  int tokens_per_frame() const { return latent_height() * latent_width(); }
  int num_tokens() const { return latent_frames() * tokens_per_frame(); }

  int sample_frame(int k) const { return k == 0 ? 0 : 1 + (k - 1) * temporal_stride; }
  std::pair<int, int> frame_range(int k) const {
    if (k == 0) return {0, 1};
    const int a = sample_frame(k);
    return {a, std::min(a + temporal_stride, num_frames)};
  }
  int token(int k, int i, int j) const { return (k * latent_height() + i) * latent_width() + j; }

  void check() const {
    if (num_frames < 2 || spatial_stride < 2 || spatial_stride % 2 || temporal_stride < 1)
      throw ConditionError("invalid latent grid parameters");
    if (height <= 0 || width <= 0 || height % spatial_stride || width % spatial_stride)
      throw ConditionError("frame dimensions must be divisible by the spatial stride");
  }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

inline LatentGrid grid_for(const MultimodalTriplet& tr, int spatial_stride = 8, int temporal_stride = 4) {
  LatentGrid g{tr.num_frames, tr.frame_size.height, tr.frame_size.width, spatial_stride, temporal_stride};
  g.check();
  return g;
}

// ---------------------------------------------------------------------------
// Toy frame encoder

// Each stride x stride block becomes one latent cell: per quadrant the mean
// RGB mapped to [-1, 1] (12 channels), then per quadrant the luminance
// standard deviation / 64 (4 channels). A cell depends only on its block.
inline MatF encode_frame(const Image& frame, int stride = 8) {
  if (stride < 2 || stride % 2) throw ConditionError("stride must be even and >= 2");
  if (frame.width() % stride || frame.height() % stride)
    throw ConditionError("frame dimensions must be divisible by the spatial stride");
  const int lh = frame.height() / stride, lw = frame.width() / stride, q = stride / 2;
  MatF out(lh * lw, kLatentChannels);
  for (int i = 0; i < lh; ++i)
    for (int j = 0; j < lw; ++j) {
      const int row = i * lw + j;
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          double sum[3] = {0, 0, 0}, lum = 0, lum2 = 0;
          for (int y = 0; y < q; ++y)
            for (int x = 0; x < q; ++x) {
              const auto* p = frame.px(j * stride + qx * q + x, i * stride + qy * q + y);
              for (int c = 0; c < 3; ++c) sum[c] += p[c];
              const double l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
              lum += l;
              lum2 += l * l;
            }
          const double n = static_cast<double>(q * q);
          const int quad = qy * 2 + qx;
          for (int c = 0; c < 3; ++c) out(row, quad * 3 + c) = static_cast<float>(sum[c] / n / 127.5 - 1.0);
          const double var = std::max(0.0, lum2 / n - (lum / n) * (lum / n));
          out(row, 12 + quad) = static_cast<float>(std::sqrt(var) / 64.0);
        }
    }
  return out;
}

// Block un-pooling of one latent frame: every quadrant gets its mean color.
inline Image decode_frame(const MatF& latent, int latent_height, int latent_width, int stride = 8) {
  const int q = stride / 2;
  Image img(latent_width * stride, latent_height * stride);
  for (int i = 0; i < latent_height; ++i)
    for (int j = 0; j < latent_width; ++j) {
      const int row = i * latent_width + j;
      for (int quad = 0; quad < 4; ++quad) {
        Rgb c;
        std::uint8_t v[3];
        for (int k = 0; k < 3; ++k) {
          const double x = std::round((static_cast<double>(latent(row, quad * 3 + k)) + 1.0) * 127.5);
          v[k] = static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
        }
        c = {v[0], v[1], v[2]};
        const int qy = quad / 2, qx = quad % 2;
        for (int y = 0; y < q; ++y)
          for (int x = 0; x < q; ++x) img.set(j * stride + qx * q + x, i * stride + qy * q + y, c);
      }
    }
  return img;
}

// Encodes the sampled pixel frame of every latent frame: (T_l * H_l * W_l, C).
inline MatF encode_video(const std::vector<Image>& frames, const LatentGrid& g) {
  MatF out(g.num_tokens(), kLatentChannels);
  for (int k = 0; k < g.latent_frames(); ++k)
    out.middleRows(k * g.tokens_per_frame(), g.tokens_per_frame()) =
        encode_frame(frames.at(static_cast<std::size_t>(g.sample_frame(k))), g.spatial_stride);
  return out;
}

// Every pixel frame in a latent frame's range repeats that latent frame.
inline std::vector<Image> decode_video(const MatF& latent, const LatentGrid& g) {
  std::vector<Image> frames(static_cast<std::size_t>(g.num_frames));
  for (int k = 0; k < g.latent_frames(); ++k) {
    const MatF block = latent.middleRows(k * g.tokens_per_frame(), g.tokens_per_frame());
    const Image img = decode_frame(block, g.latent_height(), g.latent_width(), g.spatial_stride);
    const auto [a, b] = g.frame_range(k);
    for (int f = a; f < b; ++f) frames[static_cast<std::size_t>(f)] = img;
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Trajectory channels

inline bool point_usable(const TrajectoryTrack& t, int f, const LatentGrid& g) {
  if (f >= t.num_frames() || !t.visible(f)) return false;
  const auto& p = t.points[static_cast<std::size_t>(f)];
  return p.x >= 0.f && p.y >= 0.f && p.x <= g.width && p.y <= g.height;
}

// Latent cell containing a pixel position (right/bottom edges clamp inward).
inline std::pair<int, int> latent_cell(const Point2f& p, const LatentGrid& g) {
  const int j = std::clamp(static_cast<int>(std::floor(p.x / g.spatial_stride)), 0, g.latent_width() - 1);
  const int i = std::clamp(static_cast<int>(std::floor(p.y / g.spatial_stride)), 0, g.latent_height() - 1);
  return {i, j};
}

// Isotropic Gaussian with peak 1 per visible in-frame point, evaluated at
// latent cell centers; overlapping contributions combine by maximum.
inline MatF rasterize_heatmap(const std::vector<TrajectoryTrack>& tracks, const LatentGrid& g, double sigma = 1.5) {
  if (!(sigma > 0.0)) throw ConditionError("heatmap sigma must be positive");
  MatF heat = MatF::Zero(g.num_tokens(), 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& t : tracks)
    for (int k = 0; k < g.latent_frames(); ++k) {
      const int f = g.sample_frame(k);
      if (!point_usable(t, f, g)) continue;
      const auto& p = t.points[static_cast<std::size_t>(f)];
      const double lx = p.x / g.spatial_stride, ly = p.y / g.spatial_stride;
      for (int i = 0; i < g.latent_height(); ++i)
        for (int j = 0; j < g.latent_width(); ++j) {
          const double dx = j + 0.5 - lx, dy = i + 0.5 - ly;
          const auto v = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
          auto& cell = heat(g.token(k, i, j), 0);
          cell = std::max(cell, v);
        }
    }
  return heat;
}

// Copies the frame-0 latent feature under each track's first point to the
// track's cell in every latent frame where it is visible. Tracks not visible
// at frame 0 contribute nothing; on collisions the larger track_id wins.
inline MatF build_point_map(const std::vector<TrajectoryTrack>& tracks, const MatF& first_frame_latent,
                            const LatentGrid& g) {
  if (first_frame_latent.rows() != g.tokens_per_frame() || first_frame_latent.cols() != kLatentChannels)
    throw ConditionError("first-frame latent has the wrong shape");
  std::vector<const TrajectoryTrack*> order;
  for (const auto& t : tracks) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->track_id < b->track_id; });

  MatF map = MatF::Zero(g.num_tokens(), kLatentChannels);
  for (const auto* t : order) {
    if (!point_usable(*t, 0, g)) continue;
    const auto [i0, j0] = latent_cell(t->points[0], g);
    const auto feature = first_frame_latent.row(i0 * g.latent_width() + j0);
    for (int k = 0; k < g.latent_frames(); ++k) {
      const int f = g.sample_frame(k);
      if (!point_usable(*t, f, g)) continue;
      const auto [i, j] = latent_cell(t->points[static_cast<std::size_t>(f)], g);
      map.row(g.token(k, i, j)) = feature;
    }
  }
  return map;
}

using AssetLookup = std::function<const Image*(const std::string&)>;

inline AssetLookup map_lookup(const std::map<std::string, Image>& assets) {
  return [&assets](const std::string& id) -> const Image* {
    const auto it = assets.find(id);
    return it == assets.end() ? nullptr : &it->second;
  };
}

// Alpha-over composite of each reference at its placement, in list order.
inline Image paste_references(const Image& first_frame, const std::vector<ReferencePlacement>& refs,
                              const AssetLookup& assets) {
  Image out = first_frame;
  for (const auto& r : refs) {
    const Image* img = assets ? assets(r.image_ref) : nullptr;
    if (!img) throw ConditionError("missing reference asset '" + r.image_ref + "'");
    composite_reference(out, *img, r.target_bbox, r.rotation);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundle

struct ConditionBundle {
  MatF noise_latent;  // (N, C)
  MatF image_latent;  // (N, C); only latent frame 0 is non-zero
  MatF mask;          // (N, 1)
  MatF heatmap;       // (N, 1)
  MatF point_map;     // (N, C)

  static constexpr int channels(int c) { return 3 * c + 2; }

  // [noise | image_latent | mask | heatmap | point_map]
  MatF concat() const { return concat_with(noise_latent); }

  MatF concat_with(const MatF& x) const {
    const auto n = image_latent.rows();
    const auto c = image_latent.cols();
    MatF out(n, 3 * c + 2);
    out.leftCols(c) = x;
    out.middleCols(c, c) = image_latent;
    out.col(2 * c) = mask.col(0);
    out.col(2 * c + 1) = heatmap.col(0);
    out.rightCols(c) = point_map;
    return out;
  }
};

inline ConditionBundle assemble(const MultimodalTriplet& tr, const Image& first_frame, const MatF& noise,
                                const LatentGrid& g, const AssetLookup& assets = {}, double sigma = 1.5) {
  g.check();
  if (noise.rows() != g.num_tokens() || noise.cols() != kLatentChannels)
    throw ConditionError("noise shape does not match the latent grid");
  if (first_frame.width() != g.width || first_frame.height() != g.height)
    throw ConditionError("first frame size does not match the latent grid");
  const Image pasted = tr.references.empty() ? first_frame : paste_references(first_frame, tr.references, assets);
  const MatF first_latent = encode_frame(pasted, g.spatial_stride);

  ConditionBundle b;
  b.noise_latent = noise;
  b.image_latent = MatF::Zero(g.num_tokens(), kLatentChannels);
  b.image_latent.topRows(g.tokens_per_frame()) = first_latent;
  b.mask = MatF::Zero(g.num_tokens(), 1);
  b.mask.topRows(g.tokens_per_frame()).setOnes();
  b.heatmap = rasterize_heatmap(tr.tracks, g, sigma);
  b.point_map = build_point_map(tr.tracks, first_latent, g);
  return b;
}

}  // namespace trajvid
