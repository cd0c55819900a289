#pragma once

// Spatial-aware weighted cross-attention: per-trajectory coverage regions,
// caption token spans, the additive log(w) bias between them, and the
// biased attention kernel (forward and backward).

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajvid/condition.hpp"
#include "trajvid/tensor.hpp"
#include "trajvid/triplet.hpp"
#include "trajvid/vocabulary.hpp"

namespace trajvid {

enum class AttentionMode { kWeighted, kFull, kHard };

inline const char* to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::kWeighted: return "weighted";
    case AttentionMode::kFull: return "full";
    case AttentionMode::kHard: return "hard";
  }
  return "weighted";
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "weighted") return AttentionMode::kWeighted;
  if (s == "full") return AttentionMode::kFull;
  if (s == "hard") return AttentionMode::kHard;
  throw std::invalid_argument("unknown attention mode '" + s + "'");
}

inline constexpr double kDefaultAttentionW = 30.0;

class AttentionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Geometry

struct CoverageRegion {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

inline CoverageRegion coverage_region(const Point2f& p, const BBox& box) {
  return {p.x - box.w / 2.0, p.y - box.h / 2.0, p.x + box.w / 2.0, p.y + box.h / 2.0};
}

// Video tokens of one latent frame whose cell centers lie in the closed
// region after clamping it to the frame. A region that touches the frame but
// holds no cell center selects the single nearest cell.
inline std::vector<int> tokens_in_region(const CoverageRegion& r, const LatentGrid& g, int latent_frame) {
  std::vector<int> out;
  const double x0 = std::max(r.x_min, 0.0), y0 = std::max(r.y_min, 0.0);
  const double x1 = std::min(r.x_max, static_cast<double>(g.width));
  const double y1 = std::min(r.y_max, static_cast<double>(g.height));
  if (!(x0 <= x1 && y0 <= y1)) return out;
  const double s = g.spatial_stride;
  for (int i = 0; i < g.latent_height(); ++i)
    for (int j = 0; j < g.latent_width(); ++j) {
      const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
      if (cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1) out.push_back(g.token(latent_frame, i, j));
    }
  if (out.empty()) {
    // nearest cell center to the clamped region's center; ties -> lowest index
    const double mx = (x0 + x1) / 2.0, my = (y0 + y1) / 2.0;
    double best = std::numeric_limits<double>::infinity();
    int best_tok = 0;
    for (int i = 0; i < g.latent_height(); ++i)
      for (int j = 0; j < g.latent_width(); ++j) {
        const double dx = (j + 0.5) * s - mx, dy = (i + 0.5) * s - my;
        if (dx * dx + dy * dy < best) {
          best = dx * dx + dy * dy;
          best_tok = g.token(latent_frame, i, j);
        }
      }
    out.push_back(best_tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Captions -> tokens

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;

  Tokenizer() : Tokenizer(caption_words()) {}
  explicit Tokenizer(const std::vector<std::string>& words) {
    vocab_ = {"<pad>", "<unk>", "<sep>"};
    for (const auto& w : words)
      if (!index_.count(w) && w.front() != '<') {
        index_[w] = static_cast<int>(vocab_.size());
        vocab_.push_back(w);
      }
  }

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& words() const { return vocab_; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) {
      const auto it = index_.find(w);
      ids.push_back(it == index_.end() ? kUnk : it->second);
    }
    if (ids.empty()) ids.push_back(kUnk);
    return ids;
  }

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> index_;
};

struct CaptionSpan {
  std::string track_id;
  int lo = 0;  // [lo, hi) into the prompt token sequence
  int hi = 0;
};

struct TextPrompt {
  std::vector<int> tokens;
  std::vector<CaptionSpan> spans;
};

inline constexpr int kDefaultMaxTextTokens = 128;

// Captions are joined by a separator token that belongs to no span.
inline TextPrompt caption_spans(const std::vector<std::pair<std::string, Caption>>& captions, const Tokenizer& tok,
                                int max_tokens = kDefaultMaxTextTokens) {
  TextPrompt p;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (i > 0) p.tokens.push_back(Tokenizer::kSep);
    const auto ids = tok.encode(captions[i].second.text);
    const int lo = static_cast<int>(p.tokens.size());
    p.tokens.insert(p.tokens.end(), ids.begin(), ids.end());
    p.spans.push_back({captions[i].first, lo, static_cast<int>(p.tokens.size())});
    if (static_cast<int>(p.tokens.size()) > max_tokens)
      throw AttentionError("caption for track " + captions[i].first + " exceeds the token budget of " +
                           std::to_string(max_tokens));
  }
  return p;
}

// Foreground captions in track_id order.
inline TextPrompt caption_spans(const MultimodalTriplet& tr, const Tokenizer& tok,
                                int max_tokens = kDefaultMaxTextTokens) {
  std::vector<std::pair<std::string, Caption>> caps;
  for (const auto* t : tr.foreground_sorted()) caps.emplace_back(t->track_id, tr.captions.at(t->track_id));
  return caption_spans(caps, tok, max_tokens);
}

// ---------------------------------------------------------------------------
// Bias

// Sparse form of the bias matrix: per trajectory, the video tokens inside its
// coverage (over frames where it is visible) and its caption span. Entries
// are log(w) on (query in set, key in span), zero elsewhere.
struct AttentionBias {
  struct Entry {
    std::string track_id;
    std::vector<int> queries;  // sorted, unique
    int lo = 0, hi = 0;
  };

  double log_w = 0.0;
  int num_queries = 0;
  int num_keys = 0;
  std::vector<Entry> entries;

  template <typename S>
  Mat<S> dense() const {
    Mat<S> b = Mat<S>::Zero(num_queries, num_keys);
    for (const auto& e : entries)
      for (int q : e.queries)
        for (int k = e.lo; k < e.hi; ++k) b(q, k) = static_cast<S>(log_w);
    return b;
  }

  std::vector<char> covered_rows() const {
    std::vector<char> c(static_cast<std::size_t>(num_queries), 0);
    for (const auto& e : entries)
      for (int q : e.queries) c[static_cast<std::size_t>(q)] = 1;
    return c;
  }

  // Additive logit term for a mode; nullopt means no term. Hard mode keeps
  // only qualifying keys for covered queries (others become -inf).
  template <typename S>
  std::optional<Mat<S>> logit_term(AttentionMode mode) const {
    if (mode == AttentionMode::kFull || entries.empty()) return std::nullopt;
    if (mode == AttentionMode::kWeighted) {
      if (log_w == 0.0) return std::nullopt;
      return dense<S>();
    }
    Mat<S> m = Mat<S>::Zero(num_queries, num_keys);
    const auto covered = covered_rows();
    for (int q = 0; q < num_queries; ++q)
      if (covered[static_cast<std::size_t>(q)]) m.row(q).setConstant(-std::numeric_limits<S>::infinity());
    for (const auto& e : entries)
      for (int q : e.queries)
        for (int k = e.lo; k < e.hi; ++k) m(q, k) = S(0);
    return m;
  }
};

inline AttentionBias build_bias(const MultimodalTriplet& tr, const LatentGrid& g, const std::vector<CaptionSpan>& spans,
                                double w, int num_keys = -1) {
  if (!(w > 0.0)) throw AttentionError("bias weight w must be positive");
  AttentionBias bias;
  bias.log_w = std::log(w);
  bias.num_queries = g.num_tokens();
  int max_hi = 0;
  for (const auto& s : spans) max_hi = std::max(max_hi, s.hi);
  bias.num_keys = num_keys >= 0 ? num_keys : max_hi;
  for (const auto& s : spans) {
    const auto* t = tr.find_track(s.track_id);
    if (!t || t->is_background) continue;
    const auto box = tr.bboxes.find(s.track_id);
    if (box == tr.bboxes.end()) continue;
    AttentionBias::Entry e{s.track_id, {}, s.lo, s.hi};
    for (int k = 0; k < g.latent_frames(); ++k) {
      const int f = g.sample_frame(k);
      if (f >= t->num_frames() || !t->visible(f)) continue;
      const auto toks = tokens_in_region(coverage_region(t->points[static_cast<std::size_t>(f)], box->second), g, k);
      e.queries.insert(e.queries.end(), toks.begin(), toks.end());
    }
    std::sort(e.queries.begin(), e.queries.end());
    e.queries.erase(std::unique(e.queries.begin(), e.queries.end()), e.queries.end());
    if (!e.queries.empty()) bias.entries.push_back(std::move(e));
  }
  return bias;
}

// ---------------------------------------------------------------------------
// Kernel

template <typename S>
struct AttentionCache {
  Mat<S> probs;  // (Nq, Nk) softmax weights
};

// softmax(Q K^T / sqrt(D) + term) V for one head.
template <typename S>
Mat<S> attention_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Mat<S>* term,
                         AttentionCache<S>* cache = nullptr) {
  const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
  Mat<S> logits = (q * k.transpose()) * scale;
  if (term) logits += *term;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  Mat<S> out = logits * v;
  if (cache) cache->probs = std::move(logits);
  return out;
}

template <typename S>
struct AttentionGrads {
  Mat<S> dq, dk, dv;
};

template <typename S>
AttentionGrads<S> attention_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const AttentionCache<S>& cache,
                                     const Mat<S>& dout) {
  const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
  const Mat<S>& p = cache.probs;
  AttentionGrads<S> g;
  g.dv = p.transpose() * dout;
  Mat<S> dp = dout * v.transpose();
  const auto rs = (dp.array() * p.array()).rowwise().sum().eval();
  Mat<S> ds = (p.array() * (dp.array().colwise() - rs)).matrix();
  g.dq = (ds * k) * scale;
  g.dk = (ds.transpose() * q) * scale;
  return g;
}

// Single-head biased cross-attention. Optionally returns the weights.
template <typename S>
Mat<S> sawca(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const AttentionBias& bias, AttentionMode mode,
             Mat<S>* weights = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows())
    throw AttentionError("sawca: Q/K/V dimensions do not agree");
  if (!bias.entries.empty() && (bias.num_queries != q.rows() || bias.num_keys != k.rows()))
    throw AttentionError("sawca: bias shape does not match Q/K");
  const auto term = bias.logit_term<S>(mode);
  AttentionCache<S> cache;
  Mat<S> out = attention_forward<S>(q, k, v, term ? &*term : nullptr, &cache);
  if (weights) *weights = std::move(cache.probs);
  return out;
}

}  // namespace trajvid
