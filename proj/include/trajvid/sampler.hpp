#pragma once

// Conditioning assembly from a triplet and Euler sampling of the flow ODE.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "trajvid/attention.hpp"
#include "trajvid/condition.hpp"
#include "trajvid/image.hpp"
#include "trajvid/model.hpp"
#include "trajvid/triplet.hpp"

namespace trajvid {

inline MatF draw_noise(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  MatF out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = n(rng);
  return out;
}

struct PreparedInputs {
  ConditionBundle bundle;
  TextPrompt prompt;
  AttentionBias bias;
};

// Everything the network needs besides x_t. `noise` may be empty, in which
// case the bundle's noise slot is zero.
inline PreparedInputs prepare_inputs(const ModelConfig& cfg, const MultimodalTriplet& tr, const Image& first_frame,
                                     const AssetLookup& assets, const MatF& noise = {}) {
  const auto g = grid_for(tr, cfg.grid.spatial_stride, cfg.grid.temporal_stride);
  if (!(g == cfg.grid)) throw ModelError("triplet grid does not match the model configuration");
  PreparedInputs p;
  const MatF nz = noise.size() ? noise : MatF::Zero(g.num_tokens(), cfg.channels);
  p.bundle = assemble(tr, first_frame, nz, g, assets, cfg.heatmap_sigma);
  const Tokenizer tok;
  p.prompt = caption_spans(tr, tok, cfg.max_text_tokens);
  p.bias = build_bias(tr, g, p.prompt.spans, cfg.attention_w, static_cast<int>(p.prompt.tokens.size()));
  return p;
}

// Writes the clean first-frame latent into latent frame 0.
template <typename S>
void clamp_first_frame(Mat<S>& x, const ConditionBundle& b, const LatentGrid& g) {
  const int n = g.tokens_per_frame();
  x.topRows(n) = b.image_latent.topRows(n).template cast<S>();
}

struct SampleResult {
  MatF latent;
  std::vector<Image> frames;
};

using ProgressFn = std::function<void(int step, int steps)>;

// Euler integration of dx/dt = v(x, t) from noise at t=0 to t=1 with
// uniform steps.
inline SampleResult sample(const Model<float>& model, const MultimodalTriplet& tr, const Image& first_frame,
                           const AssetLookup& assets, int steps, std::uint64_t seed,
                           const ProgressFn& progress = nullptr) {
  if (steps < 1) throw ModelError("steps must be >= 1");
  const auto& cfg = model.config();
  MatF x = draw_noise(cfg.grid.num_tokens(), cfg.channels, seed);
  const auto in = prepare_inputs(cfg, tr, first_frame, assets, x);
  const auto cond = model.prepare(in.bundle, in.prompt.tokens, in.bias);
  clamp_first_frame(x, in.bundle, cfg.grid);
  const float dt = 1.f / static_cast<float>(steps);
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    x += dt * model.forward(x, t, cond);
    clamp_first_frame(x, in.bundle, cfg.grid);
    if (progress) progress(s + 1, steps);
  }
  SampleResult r;
  r.frames = decode_video(x, cfg.grid);
  r.latent = std::move(x);
  return r;
}

}  // namespace trajvid
