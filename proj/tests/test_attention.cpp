#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "trajvid/attention.hpp"

using namespace trajvid;
using trajvid::testing::two_track_triplet;

namespace {

MatD randn(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

MatD plain_attention(const MatD& q, const MatD& k, const MatD& v) {
  MatD s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  for (int r = 0; r < s.rows(); ++r) {
    s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp();
    s.row(r) /= s.row(r).sum();
  }
  return s * v;
}

}  // namespace

TEST(Coverage, RectangleArithmetic) {
  const auto r = coverage_region({10.f, 5.f}, {0.f, 0.f, 4.f, 2.f});
  EXPECT_DOUBLE_EQ(r.x_min, 8.0);
  EXPECT_DOUBLE_EQ(r.y_min, 4.0);
  EXPECT_DOUBLE_EQ(r.x_max, 12.0);
  EXPECT_DOUBLE_EQ(r.y_max, 6.0);
}

TEST(Coverage, CornerPointExtendsOutside) {
  const auto r = coverage_region({0.f, 0.f}, {0.f, 0.f, 10.f, 10.f});
  EXPECT_LT(r.x_min, 0.0);
  EXPECT_LT(r.y_min, 0.0);
}

TEST(Coverage, DegenerateBoxSelectsOneToken) {
  const LatentGrid g;
  const auto toks = tokens_in_region(coverage_region({10.f, 5.f}, {0.f, 0.f, 0.f, 0.f}), g, 2);
  ASSERT_EQ(toks.size(), 1u);
  EXPECT_EQ(toks[0], g.token(2, 0, 1));
}

TEST(TokensInRegion, WholeFrameSelectsEveryToken) {
  const LatentGrid g;
  const auto toks = tokens_in_region({0, 0, 64, 64}, g, 1);
  ASSERT_EQ(toks.size(), 64u);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(toks[i], 64 + i);
}

TEST(TokensInRegion, ClosedTestMatchesEnumeration) {
  const LatentGrid g{16, 32, 32, 8, 4};
  // (8,4,12,6): cell centers are at 4, 12, 20, 28; none has y in [4, 6]
  // except row 0 (y = 4), so x = 12 at row 0 is the only member.
  const auto toks = tokens_in_region({8, 4, 12, 6}, g, 0);
  ASSERT_EQ(toks.size(), 1u);
  EXPECT_EQ(toks[0], g.token(0, 0, 1));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 42);
  for (int rep = 0; rep < 200; ++rep) {
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    CoverageRegion r{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    std::vector<int> brute;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double cx = 8 * j + 4, cy = 8 * i + 4;
        if (cx >= r.x_min && cx <= r.x_max && cy >= r.y_min && cy <= r.y_max) brute.push_back(g.token(0, i, j));
      }
    const auto got = tokens_in_region(r, g, 0);
    if (!brute.empty()) {
      EXPECT_EQ(got, brute);
    } else {
      const bool touches = r.x_max >= 0 && r.y_max >= 0 && r.x_min <= 32 && r.y_min <= 32;
      EXPECT_EQ(got.size(), touches ? 1u : 0u);
    }
  }
}

TEST(TokensInRegion, NoIntersectionIsEmpty) {
  EXPECT_TRUE(tokens_in_region({-20, -20, -5, -5}, LatentGrid{}, 0).empty());
  EXPECT_TRUE(tokens_in_region({70, 10, 80, 20}, LatentGrid{}, 0).empty());
}

// ---------------------------------------------------------------------------

TEST(CaptionSpans, OneCaption) {
  const Tokenizer tok;
  const auto p = caption_spans({{"a", {"the red circle moves right", ""}}}, tok);
  ASSERT_EQ(p.spans.size(), 1u);
  EXPECT_EQ(p.spans[0].lo, 0);
  EXPECT_EQ(p.spans[0].hi, 5);
  EXPECT_EQ(p.tokens.size(), 5u);
}

TEST(CaptionSpans, TwoCaptionsWithSeparator) {
  const Tokenizer tok;
  const auto p = caption_spans({{"a", {"the red circle", ""}}, {"b", {"a blue square moves", ""}}}, tok);
  ASSERT_EQ(p.spans.size(), 2u);
  EXPECT_EQ(p.spans[0].lo, 0);
  EXPECT_EQ(p.spans[0].hi, 3);
  EXPECT_EQ(p.spans[1].lo, 4);
  EXPECT_EQ(p.spans[1].hi, 8);
  EXPECT_EQ(p.tokens[3], Tokenizer::kSep);
}

TEST(CaptionSpans, ZeroCaptions) {
  const auto p = caption_spans(std::vector<std::pair<std::string, Caption>>{}, Tokenizer{});
  EXPECT_TRUE(p.tokens.empty());
  EXPECT_TRUE(p.spans.empty());
}

TEST(CaptionSpans, BudgetExceededThrows) {
  EXPECT_THROW(caption_spans({{"a", {"the red circle moves right", ""}}}, Tokenizer{}, 4), AttentionError);
}

TEST(CaptionSpans, UnknownWordsMapToUnk) {
  const Tokenizer tok;
  const auto ids = tok.encode("The RED zebra!");
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[2], Tokenizer::kUnk);
  EXPECT_EQ(ids, tok.encode("the red zebra"));
}

TEST(CaptionSpans, TripletOrderIsByTrackId) {
  const auto p = caption_spans(two_track_triplet(), Tokenizer{});
  ASSERT_EQ(p.spans.size(), 2u);
  EXPECT_EQ(p.spans[0].track_id, "obj0_kp0");
  EXPECT_EQ(p.spans[1].track_id, "obj1_kp0");
}

// ---------------------------------------------------------------------------

TEST(BuildBias, WeightOneIsZero) {
  const auto tr = two_track_triplet();
  const auto g = grid_for(tr);
  const auto p = caption_spans(tr, Tokenizer{});
  const auto b = build_bias(tr, g, p.spans, 1.0);
  EXPECT_EQ(b.dense<double>().norm(), 0.0);
  EXPECT_FALSE(b.logit_term<double>(AttentionMode::kWeighted).has_value());
}

TEST(BuildBias, WeightThirtyGivesLogThirty) {
  const auto tr = two_track_triplet();
  const auto g = grid_for(tr);
  const auto p = caption_spans(tr, Tokenizer{});
  const auto b = build_bias(tr, g, p.spans, 30.0);
  const MatD d = b.dense<double>();
  EXPECT_NEAR(d.maxCoeff(), 3.4012, 1e-4);
  EXPECT_DOUBLE_EQ(d.maxCoeff(), std::log(30.0));
  for (int q = 0; q < d.rows(); ++q)
    for (int k = 0; k < d.cols(); ++k) EXPECT_TRUE(d(q, k) == 0.0 || d(q, k) == std::log(30.0));
  // separator column never biased
  EXPECT_EQ(d.col(p.spans[0].hi).norm(), 0.0);
}

TEST(BuildBias, InvisibleTrackHasZeroBias) {
  auto tr = two_track_triplet();
  std::fill(tr.tracks[1].visibility.begin(), tr.tracks[1].visibility.end(), 0);
  const auto g = grid_for(tr);
  const auto p = caption_spans(tr, Tokenizer{});
  const MatD d = build_bias(tr, g, p.spans, 30.0).dense<double>();
  EXPECT_EQ(d.middleCols(p.spans[1].lo, p.spans[1].hi - p.spans[1].lo).norm(), 0.0);
  EXPECT_GT(d.middleCols(p.spans[0].lo, p.spans[0].hi - p.spans[0].lo).norm(), 0.0);
}

TEST(BuildBias, EnteringTrackBiasesOnlyVisibleLatentFrames) {
  const auto tr = two_track_triplet();  // obj1 visible from frame 2; sample frames 0,1,5,9,13
  const auto g = grid_for(tr);
  const auto p = caption_spans(tr, Tokenizer{});
  const auto b = build_bias(tr, g, p.spans, 30.0);
  for (const auto& e : b.entries)
    if (e.track_id == "obj1_kp0")
      for (int q : e.queries) EXPECT_GE(q / g.tokens_per_frame(), 2);
}

TEST(BuildBias, NonPositiveWeightThrows) {
  const auto tr = two_track_triplet();
  EXPECT_THROW(build_bias(tr, grid_for(tr), {}, 0.0), AttentionError);
  EXPECT_THROW(build_bias(tr, grid_for(tr), {}, -2.0), AttentionError);
}

// ---------------------------------------------------------------------------

TEST(Sawca, ZeroBiasIsPlainAttention) {
  std::mt19937_64 rng(4);
  const MatD q = randn(7, 8, rng), k = randn(5, 8, rng), v = randn(5, 3, rng);
  AttentionBias b;
  const MatD out = sawca<double>(q, k, v, b, AttentionMode::kWeighted);
  EXPECT_LT((out - plain_attention(q, k, v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sawca, HandExampleOneQueryTwoKeys) {
  MatD q(1, 1), k(2, 1), v(2, 1);
  q << 1;
  k << 0, 1;
  v << 0, 1;
  AttentionBias b;
  b.log_w = std::log(30.0);
  b.num_queries = 1;
  b.num_keys = 2;
  b.entries.push_back({"t", {0}, 1, 2});
  MatD w;
  const MatD out = sawca<double>(q, k, v, b, AttentionMode::kWeighted, &w);
  const double e30 = 30.0 * std::exp(1.0);
  EXPECT_NEAR(w(0, 0), 1.0 / (1.0 + e30), 1e-15);
  EXPECT_NEAR(out(0, 0), e30 / (1.0 + e30), 1e-15);
  EXPECT_NEAR(out(0, 0), 0.98789, 1e-5);
}

TEST(Sawca, UniformRowBiasChangesNothing) {
  std::mt19937_64 rng(5);
  const MatD q = randn(4, 6, rng), k = randn(3, 6, rng), v = randn(3, 2, rng);
  AttentionBias b;
  b.log_w = std::log(1000.0);
  b.num_queries = 4;
  b.num_keys = 3;
  b.entries.push_back({"t", {1, 2}, 0, 3});
  const MatD out = sawca<double>(q, k, v, b, AttentionMode::kWeighted);
  EXPECT_LT((out - plain_attention(q, k, v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sawca, FullModeIgnoresBias) {
  std::mt19937_64 rng(6);
  const MatD q = randn(4, 6, rng), k = randn(3, 6, rng), v = randn(3, 2, rng);
  AttentionBias b;
  b.log_w = std::log(30.0);
  b.num_queries = 4;
  b.num_keys = 3;
  b.entries.push_back({"t", {0}, 1, 2});
  EXPECT_LT((sawca<double>(q, k, v, b, AttentionMode::kFull) - plain_attention(q, k, v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sawca, HardModeZeroesOutsideRegion) {
  std::mt19937_64 rng(7);
  const MatD q = randn(4, 6, rng), k = randn(5, 6, rng), v = randn(5, 2, rng);
  AttentionBias b;
  b.log_w = std::log(30.0);
  b.num_queries = 4;
  b.num_keys = 5;
  b.entries.push_back({"t", {0, 2}, 1, 3});
  MatD w;
  sawca<double>(q, k, v, b, AttentionMode::kHard, &w);
  for (int r : {0, 2}) {
    EXPECT_EQ(w(r, 0), 0.0);
    EXPECT_EQ(w(r, 3), 0.0);
    EXPECT_EQ(w(r, 4), 0.0);
    EXPECT_NEAR(w(r, 1) + w(r, 2), 1.0, 1e-12);
  }
  MatD plain;
  sawca<double>(q, k, v, AttentionBias{}, AttentionMode::kFull, &plain);
  EXPECT_EQ(w.row(1), plain.row(1));
  EXPECT_EQ(w.row(3), plain.row(3));
}

TEST(Sawca, LargeWeightApproachesHard) {
  std::mt19937_64 rng(8);
  const MatD q = randn(6, 4, rng), k = randn(7, 4, rng), v = randn(7, 3, rng);
  AttentionBias b;
  b.num_queries = 6;
  b.num_keys = 7;
  b.entries.push_back({"a", {0, 1}, 0, 3});
  b.entries.push_back({"b", {1, 4}, 4, 7});
  MatD hard, soft;
  sawca<double>(q, k, v, b, AttentionMode::kHard, &hard);
  b.log_w = std::log(1e6);
  sawca<double>(q, k, v, b, AttentionMode::kWeighted, &soft);
  for (int r : {0, 1, 4}) EXPECT_LT((hard.row(r) - soft.row(r)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Sawca, ShapeMismatchThrows) {
  std::mt19937_64 rng(9);
  const MatD q = randn(2, 4, rng), k = randn(3, 5, rng), v = randn(3, 2, rng);
  EXPECT_THROW(sawca<double>(q, k, v, AttentionBias{}, AttentionMode::kFull), AttentionError);
  AttentionBias b;
  b.num_queries = 9;
  b.num_keys = 3;
  b.entries.push_back({"t", {0}, 0, 1});
  const MatD k2 = randn(3, 4, rng);
  EXPECT_THROW(sawca<double>(q, k2, v, b, AttentionMode::kWeighted), AttentionError);
}

TEST(Sawca, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const MatD q = randn(3, 4, rng), k = randn(5, 4, rng), v = randn(5, 2, rng), dout = randn(3, 2, rng);
  MatD term = randn(3, 5, rng);
  AttentionCache<double> cache;
  attention_forward<double>(q, k, v, &term, &cache);
  const auto g = attention_backward<double>(q, k, v, cache, dout);
  auto loss = [&](const MatD& qq, const MatD& kk, const MatD& vv) {
    return (attention_forward<double>(qq, kk, vv, &term).array() * dout.array()).sum();
  };
  const double h = 1e-6;
  auto check = [&](const MatD& x, const MatD& grad, auto f) {
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) {
        MatD p = x, m = x;
        p(i, j) += h;
        m(i, j) -= h;
        EXPECT_NEAR((f(p) - f(m)) / (2 * h), grad(i, j), 1e-7);
      }
  };
  check(q, g.dq, [&](const MatD& x) { return loss(x, k, v); });
  check(k, g.dk, [&](const MatD& x) { return loss(q, x, v); });
  check(v, g.dv, [&](const MatD& x) { return loss(q, k, x); });
}

TEST(AttentionMode, StringRoundTrip) {
  for (auto m : {AttentionMode::kWeighted, AttentionMode::kFull, AttentionMode::kHard})
    EXPECT_EQ(attention_mode_from_string(to_string(m)), m);
  EXPECT_THROW(attention_mode_from_string("soft"), std::invalid_argument);
}
