#pragma once

// Flow-matching training over a synthetic dataset with Adam and a linear
// warmup.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajvid/checkpoint.hpp"
#include "trajvid/model.hpp"
#include "trajvid/sampler.hpp"
#include "trajvid/synthgen.hpp"

namespace trajvid {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::filesystem::path dataset;
  std::filesystem::path out = "checkpoint.tvc";
  std::filesystem::path loss_csv;  // empty: no CSV
  int batch_size = 8;
  int steps = 1000;
  double lr = 1e-3;
  int warmup = 100;
  std::uint64_t seed = 0;
  LossMode loss = LossMode::kMse;
  double grad_clip = 1.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  // model shape; the grid comes from the dataset
  int dim = 64;
  int depth = 3;
  int heads = 4;
  AttentionMode attention_mode = AttentionMode::kWeighted;
  double attention_w = kDefaultAttentionW;

  void check() const {
    if (steps < 1) throw TrainError("steps must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw TrainError("learning rate must be finite and >= 0");
    if (batch_size < 1) throw TrainError("batch_size must be >= 1");
    if (warmup < 0) throw TrainError("warmup must be >= 0");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.dataset = j.at("dataset").get<std::string>();
  c.out = j.value("out", c.out.string());
  c.loss_csv = j.value("loss_csv", std::string());
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.warmup = j.value("warmup", c.warmup);
  c.seed = j.value("seed", c.seed);
  c.loss = loss_mode_from_string(j.value("loss", std::string("mse")));
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.dim = j.value("dim", c.dim);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.attention_mode = attention_mode_from_string(j.value("attention_mode", std::string("weighted")));
  c.attention_w = j.value("attention_w", c.attention_w);
  return c;
}

// lr_max * min(1, step / warmup), step counted from 1.
inline double warmup_lr(double lr_max, int step, int warmup) {
  if (warmup <= 0 || step >= warmup) return lr_max;
  return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
}

struct TrainExample {
  std::string clip_id;
  MatF x1;  // clean video latent
  PreparedInputs inputs;
};

inline TrainExample make_example(const ModelConfig& cfg, const LoadedClip& clip) {
  TrainExample e;
  e.clip_id = clip.clip_id;
  e.x1 = encode_video(clip.frames, cfg.grid);
  e.inputs = prepare_inputs(cfg, clip.triplet, clip.frames.front(), map_lookup(clip.assets));
  return e;
}

// Reads every clip listed in the manifest. The grid is taken from the first
// clip and written into `cfg`.
inline std::vector<TrainExample> load_examples(const std::filesystem::path& root, ModelConfig& cfg) {
  const auto manifest = load_manifest(root);
  if (manifest.clips.empty()) throw TrainError("dataset is empty: " + root.string());
  std::vector<TrainExample> out;
  out.reserve(manifest.clips.size());
  for (std::size_t i = 0; i < manifest.clips.size(); ++i) {
    const auto clip = load_clip(root, manifest.clips[i].clip_id);
    if (i == 0) cfg.grid = grid_for(clip.triplet, cfg.grid.spatial_stride, cfg.grid.temporal_stride);
    out.push_back(make_example(cfg, clip));
  }
  return out;
}

struct Adam {
  ParamSet<float> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;

  explicit Adam(const ParamSet<float>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void step(ParamSet<float>& p, const ParamSet<float>& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const auto b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    const auto a = static_cast<float>(lr / c1);
    const auto ic2 = static_cast<float>(1.0 / c2);
    const auto e = static_cast<float>(eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& mi = m.tensors[i];
      auto& vi = v.tensors[i];
      const auto& gi = g.tensors[i];
      mi = b1 * mi + (1.f - b1) * gi;
      vi = b2 * vi.array() + (1.f - b2) * gi.array().square();
      p.tensors[i].array() -= a * mi.array() / ((vi.array() * ic2).sqrt() + e);
    }
  }
};

inline double global_norm(const ParamSet<float>& g) {
  double s = 0.0;
  for (const auto& t : g.tensors) s += t.template cast<double>().squaredNorm();
  return std::sqrt(s);
}

struct LossRecord {
  int step;
  double lr;
  double loss;
};

struct TrainResult {
  Model<float> model;
  std::vector<LossRecord> curve;
};

using StepCallback = std::function<void(const LossRecord&)>;

// Loss and gradient of one example at flow time t with noise x0. Latent
// frame 0 of x_t is the clean image latent and is excluded from the loss.
inline double example_loss(const Model<float>& model, const Conditioning<float>& cond, const MatF& x1, const MatF& x0,
                           double t, LossMode mode, ParamSet<float>* grads, double weight = 1.0) {
  const auto& g = model.config().grid;
  const int n0 = g.tokens_per_frame();
  auto fs = fm_interpolate<float>(x0, x1, t);
  fs.x_t.topRows(n0) = x1.topRows(n0);
  Tape<float> tape;
  const MatF pred = model.forward(fs.x_t, t, cond, grads ? &tape : nullptr);
  const auto rows = pred.rows() - n0;
  MatF dtail;
  const double loss = fm_loss<float>(pred.bottomRows(rows), fs.v_t.bottomRows(rows), mode, grads ? &dtail : nullptr);
  if (grads) {
    MatF dout = MatF::Zero(pred.rows(), pred.cols());
    dout.bottomRows(rows) = dtail * static_cast<float>(weight);
    model.backward(tape, cond, dout, *grads);
  }
  return loss;
}

inline TrainResult train(const TrainConfig& tc, const std::vector<TrainExample>& data, ModelConfig mc,
                         const StepCallback& on_step = nullptr) {
  tc.check();
  if (data.empty()) throw TrainError("dataset is empty");
  mc.dim = tc.dim;
  mc.depth = tc.depth;
  mc.heads = tc.heads;
  mc.attention_mode = tc.attention_mode;
  mc.attention_w = tc.attention_w;
  TrainResult res{Model<float>(mc), {}};
  Model<float>& model = res.model;
  model.init(tc.seed);

  std::vector<Conditioning<float>> conds;
  conds.reserve(data.size());
  for (const auto& e : data) {
    // bias support does not depend on w
    AttentionBias bias = e.inputs.bias;
    bias.log_w = std::log(tc.attention_w);
    conds.push_back(model.prepare(e.inputs.bundle, e.inputs.prompt.tokens, bias));
  }

  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::normal_distribution<float> nd(0.f, 1.f);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Adam opt(model.params());
  opt.beta1 = tc.beta1;
  opt.beta2 = tc.beta2;
  opt.eps = tc.adam_eps;
  ParamSet<float> grads = model.params().zeros_like();
  double last_finite = 0.0;

  for (int step = 1; step <= tc.steps; ++step) {
    grads.set_zero();
    double loss = 0.0;
    for (int b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& x1 = data[idx].x1;
      MatF x0(x1.rows(), x1.cols());
      for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = nd(rng);
      const double t = ut(rng);
      loss += example_loss(model, conds[idx], x1, x0, t, tc.loss, &grads, 1.0 / tc.batch_size) / tc.batch_size;
    }
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step << " (last finite loss " << last_finite << ")";
      throw TrainError(os.str());
    }
    last_finite = loss;
    const double gn = global_norm(grads);
    if (tc.grad_clip > 0.0 && gn > tc.grad_clip)
      for (auto& t : grads.tensors) t *= static_cast<float>(tc.grad_clip / gn);
    const double lr = warmup_lr(tc.lr, step, tc.warmup);
    opt.step(model.params(), grads, lr);
    res.curve.push_back({step, lr, loss});
    if (on_step) on_step(res.curve.back());
  }
  return res;
}

inline void write_loss_csv(const std::filesystem::path& p, const std::vector<LossRecord>& curve) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw TrainError("cannot write " + p.string());
  out << "step,lr,loss\n";
  out.precision(9);
  for (const auto& r : curve) out << r.step << "," << r.lr << "," << r.loss << "\n";
}

// Loads the dataset, trains, and writes the checkpoint and loss CSV.
inline TrainResult train(const TrainConfig& tc, const StepCallback& on_step = nullptr) {
  tc.check();
  ModelConfig mc;
  mc.attention_mode = tc.attention_mode;
  mc.attention_w = tc.attention_w;
  const auto data = load_examples(tc.dataset, mc);
  auto res = train(tc, data, mc, on_step);
  CheckpointMeta meta;
  meta.step = tc.steps;
  save_checkpoint(tc.out, res.model, meta);
  if (!tc.loss_csv.empty()) write_loss_csv(tc.loss_csv, res.curve);
  return res;
}

}  // namespace trajvid
