#pragma once

// Toy video diffusion transformer trained by flow matching.
//
// Input tokens are the channel concatenation
//   [x_t | image_latent | mask | heatmap | point_map]
// projected to the model width. Input-projection rows for the heatmap and
// point-map channels start at exactly zero. Each block applies adaptive
// layer-norm modulation from the timestep, self-attention over all video
// tokens, biased cross-attention to caption tokens, and a GELU MLP.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajvid/attention.hpp"
#include "trajvid/condition.hpp"
#include "trajvid/nn.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int channels = kLatentChannels;
  int dim = 64;
  int depth = 3;
  int heads = 4;
  int mlp_ratio = 4;
  int vocab = Tokenizer().size();
  int max_text_tokens = kDefaultMaxTextTokens;
  LatentGrid grid;
  AttentionMode attention_mode = AttentionMode::kWeighted;
  double attention_w = kDefaultAttentionW;
  double heatmap_sigma = 1.5;

  int in_channels() const { return ConditionBundle::channels(channels); }

  void check() const {
    grid.check();
    if (channels != kLatentChannels) throw ModelError("latent channel count is fixed at 16");
    if (dim <= 0 || heads <= 0 || dim % heads) throw ModelError("dim must be divisible by heads");
    if (dim % 16) throw ModelError("dim must be a multiple of 16 for the positional encoding");
    if (depth < 1 || mlp_ratio < 1 || vocab < 3) throw ModelError("invalid model size");
    if (!(attention_w > 0.0)) throw ModelError("attention_w must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"dim", c.dim},
          {"depth", c.depth},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"vocab", c.vocab},
          {"max_text_tokens", c.max_text_tokens},
          {"grid",
           {{"num_frames", c.grid.num_frames},
            {"height", c.grid.height},
            {"width", c.grid.width},
            {"spatial_stride", c.grid.spatial_stride},
            {"temporal_stride", c.grid.temporal_stride}}},
          {"attention_mode", to_string(c.attention_mode)},
          {"attention_w", c.attention_w},
          {"heatmap_sigma", c.heatmap_sigma}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.dim = j.value("dim", c.dim);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.vocab = j.value("vocab", c.vocab);
  c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid.num_frames = g.value("num_frames", c.grid.num_frames);
    c.grid.height = g.value("height", c.grid.height);
    c.grid.width = g.value("width", c.grid.width);
    c.grid.spatial_stride = g.value("spatial_stride", c.grid.spatial_stride);
    c.grid.temporal_stride = g.value("temporal_stride", c.grid.temporal_stride);
  }
  c.attention_mode = attention_mode_from_string(j.value("attention_mode", std::string("weighted")));
  c.attention_w = j.value("attention_w", c.attention_w);
  c.heatmap_sigma = j.value("heatmap_sigma", c.heatmap_sigma);
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat<S>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }
  ParamSet zeros_like() const {
    ParamSet z;
    z.names = names;
    for (const auto& t : tensors) z.tensors.push_back(Mat<S>::Zero(t.rows(), t.cols()));
    return z;
  }
  void set_zero() {
    for (auto& t : tensors) t.setZero();
  }
  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> o;
    o.names = names;
    for (const auto& t : tensors) o.tensors.push_back(t.template cast<T>());
    return o;
  }
  bool operator==(const ParamSet& o) const {
    if (names != o.names || tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].rows() != o.tensors[i].rows() || tensors[i].cols() != o.tensors[i].cols() ||
          tensors[i] != o.tensors[i])
        return false;
    return true;
  }
};

struct BlockLayout {
  int mod_w, mod_b;
  int qkv_w, qkv_b, self_o_w, self_o_b;
  int cross_q_w, cross_q_b, cross_kv_w, cross_kv_b, cross_o_w, cross_o_b;
  int mlp1_w, mlp1_b, mlp2_w, mlp2_b;
};

struct ParamLayout {
  int in_w, in_b, t1_w, t1_b, t2_w, t2_b, embed;
  std::vector<BlockLayout> blocks;
  int final_mod_w, final_mod_b, out_w, out_b;
};

// Per-sample conditioning reused across timesteps.
template <typename S>
struct Conditioning {
  Mat<S> cond;                        // (N, 2C+2): image_latent | mask | heatmap | point_map
  std::vector<int> text;              // caption token ids
  std::optional<Mat<S>> logit_term;   // (N, M) additive cross-attention term
  AttentionBias bias;                 // sparse form, kept for reporting
};

template <typename S>
struct BlockTape {
  Mat<S> h_in;
  RowVec<S> mod;
  nn::LayerNormCache<S> ln1, ln2, ln3;
  Mat<S> a1, qkv, self_o;
  std::vector<AttentionCache<S>> self_heads;
  Mat<S> h1, a2, cq, ckv, cross_o;
  std::vector<AttentionCache<S>> cross_heads;
  Mat<S> h2, a3, m_pre, m_act;
};

template <typename S>
struct Tape {
  Mat<S> input;
  RowVec<S> tfreq, t_pre, t_act, c, cs;
  Mat<S> embed;
  std::vector<BlockTape<S>> blocks;
  Mat<S> h_final, af;
  RowVec<S> fmod;
  nn::LayerNormCache<S> lnf;
};

template <typename S>
class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.check();
    build_layout();
    pos_ = positional_encoding();
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  // Row indices of the input projection that read heatmap / point-map channels.
  std::pair<int, int> trajectory_rows() const { return {2 * cfg_.channels + 1, 3 * cfg_.channels + 2}; }

  // Deterministic initialization. Modulation and output layers start at
  // zero; heatmap/point-map input rows start at zero.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto xavier = [&](Mat<S>& m) {
      const double lim = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(u(rng));
    };
    for (std::size_t i = 0; i < params_.size(); ++i) params_.tensors[i].setZero();
    auto& P = params_.tensors;
    xavier(P[layout_.in_w]);
    const auto [r0, r1] = trajectory_rows();
    P[layout_.in_w].middleRows(r0, r1 - r0).setZero();
    xavier(P[layout_.t1_w]);
    xavier(P[layout_.t2_w]);
    {
      std::normal_distribution<double> n(0.0, 0.5);
      auto& e = P[layout_.embed];
      for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<S>(n(rng));
    }
    for (const auto& b : layout_.blocks) {
      xavier(P[b.qkv_w]);
      xavier(P[b.self_o_w]);
      xavier(P[b.cross_q_w]);
      xavier(P[b.cross_kv_w]);
      xavier(P[b.cross_o_w]);
      xavier(P[b.mlp1_w]);
      xavier(P[b.mlp2_w]);
    }
  }

  // Fills every tensor with N(0, scale); used by gradient checks.
  void randomize(std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& t : params_.tensors)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(n(rng));
  }

  Conditioning<S> prepare(const ConditionBundle& b, const std::vector<int>& text, const AttentionBias& bias) const {
    Conditioning<S> c;
    const int C = cfg_.channels;
    const auto n = b.image_latent.rows();
    if (n != cfg_.grid.num_tokens()) throw ModelError("bundle does not match the model grid");
    Mat<S> cond(n, 2 * C + 2);
    cond.leftCols(C) = b.image_latent.template cast<S>();
    cond.col(C) = b.mask.col(0).template cast<S>();
    cond.col(C + 1) = b.heatmap.col(0).template cast<S>();
    cond.rightCols(C) = b.point_map.template cast<S>();
    c.cond = std::move(cond);
    for (int id : text)
      if (id < 0 || id >= cfg_.vocab) throw ModelError("text token id out of vocabulary range");
    c.text = text;
    c.bias = bias;
    if (!text.empty() && !bias.entries.empty()) {
      if (bias.num_queries != n || bias.num_keys != static_cast<int>(text.size()))
        throw ModelError("attention bias shape does not match tokens");
      c.logit_term = bias.template logit_term<S>(cfg_.attention_mode);
    }
    return c;
  }

  // Predicted velocity (N, C) for x_t at time t.
  Mat<S> forward(const Mat<S>& x_t, double t, const Conditioning<S>& cond, Tape<S>* tape = nullptr) const {
    const int C = cfg_.channels, D = cfg_.dim, H = cfg_.heads, dh = D / H;
    const auto N = static_cast<Eigen::Index>(cfg_.grid.num_tokens());
    if (x_t.rows() != N || x_t.cols() != C || cond.cond.rows() != N) throw ModelError("forward: shape mismatch");
    const auto& P = params_.tensors;
    Tape<S> local;
    Tape<S>& tp = tape ? *tape : local;

    tp.input.resize(N, cfg_.in_channels());
    tp.input.leftCols(C) = x_t;
    tp.input.rightCols(2 * C + 2) = cond.cond;
    Mat<S> h;
    nn::linear<S>(tp.input, P[layout_.in_w], P[layout_.in_b], h);
    h += pos_;

    tp.tfreq = nn::sinusoidal<S>(t * 1000.0, D);
    tp.t_pre = tp.tfreq * P[layout_.t1_w] + P[layout_.t1_b];
    tp.t_act = tp.t_pre.unaryExpr([](S v) { return nn::silu(v); });
    tp.c = tp.t_act * P[layout_.t2_w] + P[layout_.t2_b];
    tp.cs = tp.c.unaryExpr([](S v) { return nn::silu(v); });

    const auto M = static_cast<Eigen::Index>(cond.text.size());
    tp.embed.resize(M, D);
    for (Eigen::Index i = 0; i < M; ++i) tp.embed.row(i) = P[layout_.embed].row(cond.text[static_cast<std::size_t>(i)]);
    const Mat<S>* term = cond.logit_term ? &*cond.logit_term : nullptr;

    tp.blocks.resize(layout_.blocks.size());
    for (std::size_t l = 0; l < layout_.blocks.size(); ++l) {
      const auto& L = layout_.blocks[l];
      auto& bt = tp.blocks[l];
      bt.h_in = h;
      bt.mod = tp.cs * P[L.mod_w] + P[L.mod_b];
      auto seg = [&](int k) { return bt.mod.segment(k * D, D); };

      // self-attention
      bt.a1 = nn::modulate<S>(nn::layer_norm<S>(h, bt.ln1), seg(0), seg(1));
      nn::linear<S>(bt.a1, P[L.qkv_w], P[L.qkv_b], bt.qkv);
      bt.self_o.resize(N, D);
      bt.self_heads.resize(static_cast<std::size_t>(H));
      for (int hd = 0; hd < H; ++hd) {
        const Mat<S> q = bt.qkv.middleCols(hd * dh, dh);
        const Mat<S> k = bt.qkv.middleCols(D + hd * dh, dh);
        const Mat<S> v = bt.qkv.middleCols(2 * D + hd * dh, dh);
        bt.self_o.middleCols(hd * dh, dh) = attention_forward<S>(q, k, v, nullptr, &bt.self_heads[hd]);
      }
      Mat<S> y;
      nn::linear<S>(bt.self_o, P[L.self_o_w], P[L.self_o_b], y);
      h += y;
      bt.h1 = h;

      // cross-attention to captions
      bt.a2 = nn::modulate<S>(nn::layer_norm<S>(h, bt.ln2), seg(2), seg(3));
      if (M > 0) {
        nn::linear<S>(bt.a2, P[L.cross_q_w], P[L.cross_q_b], bt.cq);
        nn::linear<S>(tp.embed, P[L.cross_kv_w], P[L.cross_kv_b], bt.ckv);
        bt.cross_o.resize(N, D);
        bt.cross_heads.resize(static_cast<std::size_t>(H));
        for (int hd = 0; hd < H; ++hd) {
          const Mat<S> q = bt.cq.middleCols(hd * dh, dh);
          const Mat<S> k = bt.ckv.middleCols(hd * dh, dh);
          const Mat<S> v = bt.ckv.middleCols(D + hd * dh, dh);
          bt.cross_o.middleCols(hd * dh, dh) = attention_forward<S>(q, k, v, term, &bt.cross_heads[hd]);
        }
        nn::linear<S>(bt.cross_o, P[L.cross_o_w], P[L.cross_o_b], y);
        h += y;
      }
      bt.h2 = h;

      // MLP
      bt.a3 = nn::modulate<S>(nn::layer_norm<S>(h, bt.ln3), seg(4), seg(5));
      nn::linear<S>(bt.a3, P[L.mlp1_w], P[L.mlp1_b], bt.m_pre);
      bt.m_act = nn::gelu<S>(bt.m_pre);
      nn::linear<S>(bt.m_act, P[L.mlp2_w], P[L.mlp2_b], y);
      h += y;
    }

    tp.h_final = h;
    tp.fmod = tp.cs * P[layout_.final_mod_w] + P[layout_.final_mod_b];
    tp.af = nn::modulate<S>(nn::layer_norm<S>(h, tp.lnf), tp.fmod.segment(0, D), tp.fmod.segment(D, D));
    Mat<S> out;
    nn::linear<S>(tp.af, P[layout_.out_w], P[layout_.out_b], out);
    return out;
  }

  // Accumulates parameter gradients of <dout, forward(...)> into `grads`.
  // Returns the gradient with respect to the concatenated input channels.
  Mat<S> backward(const Tape<S>& tp, const Conditioning<S>& cond, const Mat<S>& dout, ParamSet<S>& grads) const {
    const int D = cfg_.dim, H = cfg_.heads, hw = D / H;
    const auto& P = params_.tensors;
    auto& G = grads.tensors;
    const auto M = static_cast<Eigen::Index>(cond.text.size());

    RowVec<S> dcs = RowVec<S>::Zero(D);
    Mat<S> demb = Mat<S>::Zero(M, D);

    // final layer
    Mat<S> daf = nn::linear_backward<S>(tp.af, P[layout_.out_w], dout, G[layout_.out_w], G[layout_.out_b]);
    RowVec<S> dfmod(2 * D);
    dfmod.segment(0, D) = daf.colwise().sum();
    dfmod.segment(D, D) = (daf.array() * tp.lnf.xhat.array()).colwise().sum();
    Mat<S> dxhat = daf.array().rowwise() * (tp.fmod.segment(D, D).array() + S(1));
    Mat<S> dh = nn::layer_norm_backward<S>(tp.lnf, dxhat);
    G[layout_.final_mod_w].noalias() += tp.cs.transpose() * dfmod;
    G[layout_.final_mod_b].row(0) += dfmod;
    dcs += dfmod * P[layout_.final_mod_w].transpose();

    for (std::size_t li = layout_.blocks.size(); li-- > 0;) {
      const auto& L = layout_.blocks[li];
      const auto& bt = tp.blocks[li];
      RowVec<S> dmod = RowVec<S>::Zero(6 * D);
      auto seg = [&](int k) { return bt.mod.segment(k * D, D); };

      // MLP
      {
        Mat<S> dact = nn::linear_backward<S>(bt.m_act, P[L.mlp2_w], dh, G[L.mlp2_w], G[L.mlp2_b]);
        Mat<S> dpre = nn::gelu_backward<S>(bt.m_pre, dact);
        Mat<S> da3 = nn::linear_backward<S>(bt.a3, P[L.mlp1_w], dpre, G[L.mlp1_w], G[L.mlp1_b]);
        dmod.segment(4 * D, D) = da3.colwise().sum();
        dmod.segment(5 * D, D) = (da3.array() * bt.ln3.xhat.array()).colwise().sum();
        Mat<S> dx = da3.array().rowwise() * (seg(5).array() + S(1));
        dh += nn::layer_norm_backward<S>(bt.ln3, dx);
      }
      // cross-attention
      if (M > 0) {
        Mat<S> dco = nn::linear_backward<S>(bt.cross_o, P[L.cross_o_w], dh, G[L.cross_o_w], G[L.cross_o_b]);
        Mat<S> dcq(bt.cq.rows(), D), dckv(bt.ckv.rows(), 2 * D);
        for (int hd = 0; hd < H; ++hd) {
          const Mat<S> q = bt.cq.middleCols(hd * hw, hw);
          const Mat<S> k = bt.ckv.middleCols(hd * hw, hw);
          const Mat<S> v = bt.ckv.middleCols(D + hd * hw, hw);
          const Mat<S> go = dco.middleCols(hd * hw, hw);
          auto g = attention_backward<S>(q, k, v, bt.cross_heads[hd], go);
          dcq.middleCols(hd * hw, hw) = g.dq;
          dckv.middleCols(hd * hw, hw) = g.dk;
          dckv.middleCols(D + hd * hw, hw) = g.dv;
        }
        demb += nn::linear_backward<S>(tp.embed, P[L.cross_kv_w], dckv, G[L.cross_kv_w], G[L.cross_kv_b]);
        Mat<S> da2 = nn::linear_backward<S>(bt.a2, P[L.cross_q_w], dcq, G[L.cross_q_w], G[L.cross_q_b]);
        dmod.segment(2 * D, D) = da2.colwise().sum();
        dmod.segment(3 * D, D) = (da2.array() * bt.ln2.xhat.array()).colwise().sum();
        Mat<S> dx = da2.array().rowwise() * (seg(3).array() + S(1));
        dh += nn::layer_norm_backward<S>(bt.ln2, dx);
      }
      // self-attention
      {
        Mat<S> dso = nn::linear_backward<S>(bt.self_o, P[L.self_o_w], dh, G[L.self_o_w], G[L.self_o_b]);
        Mat<S> dqkv(bt.qkv.rows(), 3 * D);
        for (int hd = 0; hd < H; ++hd) {
          const Mat<S> q = bt.qkv.middleCols(hd * hw, hw);
          const Mat<S> k = bt.qkv.middleCols(D + hd * hw, hw);
          const Mat<S> v = bt.qkv.middleCols(2 * D + hd * hw, hw);
          const Mat<S> go = dso.middleCols(hd * hw, hw);
          auto g = attention_backward<S>(q, k, v, bt.self_heads[hd], go);
          dqkv.middleCols(hd * hw, hw) = g.dq;
          dqkv.middleCols(D + hd * hw, hw) = g.dk;
          dqkv.middleCols(2 * D + hd * hw, hw) = g.dv;
        }
        Mat<S> da1 = nn::linear_backward<S>(bt.a1, P[L.qkv_w], dqkv, G[L.qkv_w], G[L.qkv_b]);
        dmod.segment(0, D) = da1.colwise().sum();
        dmod.segment(D, D) = (da1.array() * bt.ln1.xhat.array()).colwise().sum();
        Mat<S> dx = da1.array().rowwise() * (seg(1).array() + S(1));
        dh += nn::layer_norm_backward<S>(bt.ln1, dx);
      }
      G[L.mod_w].noalias() += tp.cs.transpose() * dmod;
      G[L.mod_b].row(0) += dmod;
      dcs += dmod * P[L.mod_w].transpose();
    }

    // embeddings
    for (Eigen::Index i = 0; i < M; ++i) G[layout_.embed].row(cond.text[static_cast<std::size_t>(i)]) += demb.row(i);

    // timestep MLP
    RowVec<S> dc = dcs.binaryExpr(tp.c, [](S g, S v) { return g * nn::silu_grad(v); });
    G[layout_.t2_w].noalias() += tp.t_act.transpose() * dc;
    G[layout_.t2_b].row(0) += dc;
    RowVec<S> dact = dc * P[layout_.t2_w].transpose();
    RowVec<S> dpre = dact.binaryExpr(tp.t_pre, [](S g, S v) { return g * nn::silu_grad(v); });
    G[layout_.t1_w].noalias() += tp.tfreq.transpose() * dpre;
    G[layout_.t1_b].row(0) += dpre;

    // input projection
    return nn::linear_backward<S>(tp.input, P[layout_.in_w], dh, G[layout_.in_w], G[layout_.in_b]);
  }

  template <typename T>
  Model<T> cast() const {
    Model<T> m(cfg_);
    m.params() = params_.template cast<T>();
    return m;
  }

 private:
  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    params_.names.push_back(name);
    params_.tensors.push_back(Mat<S>::Zero(rows, cols));
    return static_cast<int>(params_.tensors.size() - 1);
  }

  void build_layout() {
    const int D = cfg_.dim, C = cfg_.channels, Fm = D * cfg_.mlp_ratio;
    layout_.in_w = add("input.weight", cfg_.in_channels(), D);
    layout_.in_b = add("input.bias", 1, D);
    layout_.t1_w = add("time.fc1.weight", D, D);
    layout_.t1_b = add("time.fc1.bias", 1, D);
    layout_.t2_w = add("time.fc2.weight", D, D);
    layout_.t2_b = add("time.fc2.bias", 1, D);
    layout_.embed = add("text.embedding", cfg_.vocab, D);
    for (int l = 0; l < cfg_.depth; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      BlockLayout b{};
      b.mod_w = add(p + "modulation.weight", D, 6 * D);
      b.mod_b = add(p + "modulation.bias", 1, 6 * D);
      b.qkv_w = add(p + "self_attn.qkv.weight", D, 3 * D);
      b.qkv_b = add(p + "self_attn.qkv.bias", 1, 3 * D);
      b.self_o_w = add(p + "self_attn.out.weight", D, D);
      b.self_o_b = add(p + "self_attn.out.bias", 1, D);
      b.cross_q_w = add(p + "cross_attn.q.weight", D, D);
      b.cross_q_b = add(p + "cross_attn.q.bias", 1, D);
      b.cross_kv_w = add(p + "cross_attn.kv.weight", D, 2 * D);
      b.cross_kv_b = add(p + "cross_attn.kv.bias", 1, 2 * D);
      b.cross_o_w = add(p + "cross_attn.out.weight", D, D);
      b.cross_o_b = add(p + "cross_attn.out.bias", 1, D);
      b.mlp1_w = add(p + "mlp.fc1.weight", D, Fm);
      b.mlp1_b = add(p + "mlp.fc1.bias", 1, Fm);
      b.mlp2_w = add(p + "mlp.fc2.weight", Fm, D);
      b.mlp2_b = add(p + "mlp.fc2.bias", 1, D);
      layout_.blocks.push_back(b);
    }
    layout_.final_mod_w = add("final.modulation.weight", D, 2 * D);
    layout_.final_mod_b = add("final.modulation.bias", 1, 2 * D);
    layout_.out_w = add("final.out.weight", D, C);
    layout_.out_b = add("final.out.bias", 1, C);
  }

  // Fixed factorized sin/cos encoding: D/4 channels for the latent frame,
  // 3D/8 for the row, 3D/8 for the column.
  Mat<S> positional_encoding() const {
    const auto& g = cfg_.grid;
    const int D = cfg_.dim, dt = D / 4, dy = 3 * D / 8, dx = D - dt - dy;
    Mat<S> pe(g.num_tokens(), D);
    for (int k = 0; k < g.latent_frames(); ++k)
      for (int i = 0; i < g.latent_height(); ++i)
        for (int j = 0; j < g.latent_width(); ++j) {
          const int r = g.token(k, i, j);
          pe.row(r).segment(0, dt) = nn::sinusoidal<S>(k, dt, 100.0);
          pe.row(r).segment(dt, dy) = nn::sinusoidal<S>(i, dy, 100.0);
          pe.row(r).segment(dt + dy, dx) = nn::sinusoidal<S>(j, dx, 100.0);
        }
    return pe;
  }

  ModelConfig cfg_;
  ParamLayout layout_{};
  ParamSet<S> params_;
  Mat<S> pos_;
};

// ---------------------------------------------------------------------------
// Flow matching

template <typename S>
struct FlowSample {
  Mat<S> x0, x1, x_t, v_t;
  double t = 0.0;
};

template <typename S>
FlowSample<S> fm_interpolate(const Mat<S>& x0, const Mat<S>& x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ModelError("flow time t must lie in [0, 1]");
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw ModelError("x0 and x1 shapes differ");
  const S ts = static_cast<S>(t);
  FlowSample<S> s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.x_t = ts * x1.array() + (S(1) - ts) * x0.array();
  s.v_t = x1 - x0;
  return s;
}

enum class LossMode { kMse, kL1 };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "mse" || s == "l2") return LossMode::kMse;
  if (s == "l1") return LossMode::kL1;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

inline const char* to_string(LossMode m) { return m == LossMode::kMse ? "mse" : "l1"; }

// Mean squared (or absolute) error over all elements; optionally writes
// d loss / d pred.
template <typename S>
S fm_loss(const Mat<S>& pred, const Mat<S>& target, LossMode mode = LossMode::kMse, Mat<S>* grad = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ModelError("fm_loss: shape mismatch");
  const Mat<S> diff = pred - target;
  const auto n = static_cast<S>(diff.size());
  if (mode == LossMode::kMse) {
    if (grad) *grad = diff * (S(2) / n);
    return diff.squaredNorm() / n;
  }
  if (grad) *grad = diff.unaryExpr([n](S v) { return v > S(0) ? S(1) / n : (v < S(0) ? -S(1) / n : S(0)); });
  return diff.cwiseAbs().sum() / n;
}

}  // namespace trajvid
