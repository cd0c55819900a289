#include <gtest/gtest.h>

#include <cmath>

#include "tiny.hpp"
#include "trajvid/model.hpp"
#include "trajvid/sampler.hpp"

using namespace trajvid;
using namespace trajvid::testing;

TEST(ModelConfig, JsonRoundTrip) {
  auto c = tiny_config(AttentionMode::kHard);
  c.attention_w = 12.5;
  c.heatmap_sigma = 2.0;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
}

TEST(ModelConfig, RejectsBadShapes) {
  auto c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.check(), ModelError);
  c = tiny_config();
  c.dim = 24;
  c.heads = 2;
  EXPECT_THROW(c.check(), ModelError);
  c = tiny_config();
  c.attention_w = 0.0;
  EXPECT_THROW(c.check(), ModelError);
}

TEST(ModelInit, TrajectoryRowsAndOutputStartAtZero) {
  Model<float> m(tiny_config());
  m.init(3);
  const auto& P = m.params();
  const auto [r0, r1] = m.trajectory_rows();
  EXPECT_EQ(r0, 33);
  EXPECT_EQ(r1, 50);
  const auto& in_w = P.tensors[m.layout().in_w];
  EXPECT_EQ(in_w.rows(), 50);
  EXPECT_EQ(in_w.middleRows(r0, r1 - r0).norm(), 0.f);
  EXPECT_GT(in_w.topRows(r0).norm(), 0.f);
  EXPECT_EQ(P.tensors[m.layout().out_w].norm(), 0.f);
  for (const auto& b : m.layout().blocks) EXPECT_EQ(P.tensors[b.mod_w].norm(), 0.f);
}

TEST(ModelInit, SameSeedSameParams) {
  Model<float> a(tiny_config()), b(tiny_config()), c(tiny_config());
  a.init(5);
  b.init(5);
  c.init(6);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_FALSE(a.params() == c.params());
}

TEST(ModelForward, Deterministic) {
  Model<float> m(tiny_config());
  m.randomize(1, 0.2);
  const auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  const MatF x = tiny_noise<float>(m.config(), 2);
  const MatF a = m.forward(x, 0.3, cond);
  const MatF b = m.forward(x, 0.3, cond);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rows(), 32);
  EXPECT_EQ(a.cols(), 16);
}

TEST(ModelForward, FreshInitPredictsZero) {
  Model<float> m(tiny_config());
  m.init(0);
  const auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  EXPECT_EQ(m.forward(tiny_noise<float>(m.config(), 2), 0.7, cond).norm(), 0.f);
}

TEST(ModelForward, ZeroTrajectoryRowsIgnoreHeatmapAndPointMap) {
  for (auto mode : {AttentionMode::kFull, AttentionMode::kWeighted}) {
    Model<float> m(tiny_config(mode));
    m.randomize(4, 0.3);
    const auto [r0, r1] = m.trajectory_rows();
    m.params().tensors[m.layout().in_w].middleRows(r0, r1 - r0).setZero();
    auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
    const MatF x = tiny_noise<float>(m.config(), 9);
    const MatF a = m.forward(x, 0.4, cond);
    cond.cond.rightCols(17).setRandom();
    EXPECT_EQ(m.forward(x, 0.4, cond), a);
  }
}

TEST(ModelForward, TrajectoryRowsMatterOnceNonZero) {
  Model<float> m(tiny_config(AttentionMode::kFull));
  m.randomize(4, 0.3);
  auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  const MatF x = tiny_noise<float>(m.config(), 9);
  const MatF a = m.forward(x, 0.4, cond);
  cond.cond.rightCols(17).setRandom();
  EXPECT_NE(m.forward(x, 0.4, cond), a);
}

TEST(ModelForward, ShapeMismatchThrows) {
  Model<float> m(tiny_config());
  m.init(0);
  const auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  EXPECT_THROW(m.forward(MatF::Zero(31, 16), 0.5, cond), ModelError);
}

TEST(ModelPrepare, RejectsOutOfRangeTokens) {
  Model<float> m(tiny_config());
  const auto in = prepare_inputs(m.config(), tiny_triplet(), tiny_frame(), {});
  auto toks = in.prompt.tokens;
  toks[0] = m.config().vocab;
  EXPECT_THROW(m.prepare(in.bundle, toks, in.bias), ModelError);
  toks.pop_back();
  toks[0] = 3;
  EXPECT_THROW(m.prepare(in.bundle, toks, in.bias), ModelError);
}

TEST(ModelPrepare, ModeSelectsLogitTerm) {
  for (auto mode : {AttentionMode::kWeighted, AttentionMode::kFull, AttentionMode::kHard}) {
    Model<float> m(tiny_config(mode));
    const auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
    EXPECT_EQ(cond.logit_term.has_value(), mode != AttentionMode::kFull);
    if (mode == AttentionMode::kHard) EXPECT_TRUE(std::isinf(cond.logit_term->minCoeff()));
  }
}

TEST(ModelCast, DoubleMatchesFloat) {
  Model<float> m(tiny_config());
  m.randomize(8, 0.2);
  const Model<double> d = m.cast<double>();
  const auto cf = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  const auto cd = tiny_conditioning(d, tiny_triplet(), tiny_frame());
  const MatF x = tiny_noise<float>(m.config(), 3);
  const MatF yf = m.forward(x, 0.25, cf);
  const MatD yd = d.forward(x.cast<double>(), 0.25, cd);
  EXPECT_LT((yf.cast<double>() - yd).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(ModelBackward, SpotCheckAgainstFiniteDifferences) {
  Model<double> m(tiny_config());
  m.randomize(21, 0.3);
  const auto cond = tiny_conditioning(m, tiny_triplet(), tiny_frame());
  const MatD x = tiny_noise<double>(m.config(), 5);
  const MatD target = tiny_noise<double>(m.config(), 6);
  auto loss = [&](const Model<double>& mm) { return fm_loss<double>(mm.forward(x, 0.6, cond), target); };
  Tape<double> tape;
  const MatD pred = m.forward(x, 0.6, cond, &tape);
  MatD dpred;
  fm_loss<double>(pred, target, LossMode::kMse, &dpred);
  auto grads = m.params().zeros_like();
  m.backward(tape, cond, dpred, grads);
  std::mt19937_64 rng(2);
  const double h = 1e-5;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params().tensors[i];
    std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
    for (int rep = 0; rep < 2; ++rep) {
      const auto e = pick(rng);
      const double orig = p.data()[e];
      p.data()[e] = orig + h;
      const double lp = loss(m);
      p.data()[e] = orig - h;
      const double lm = loss(m);
      p.data()[e] = orig;
      const double fd = (lp - lm) / (2 * h), an = grads.tensors[i].data()[e];
      EXPECT_NEAR(an, fd, 1e-6 + 1e-4 * std::abs(fd)) << m.params().names[i];
    }
  }
}

// ---------------------------------------------------------------------------

TEST(FlowMatching, Endpoints) {
  const MatD x0 = MatD::Random(4, 3), x1 = MatD::Random(4, 3);
  EXPECT_EQ(fm_interpolate<double>(x0, x1, 0.0).x_t, x0);
  EXPECT_EQ(fm_interpolate<double>(x0, x1, 1.0).x_t, x1);
}

TEST(FlowMatching, Midpoint) {
  const auto s = fm_interpolate<double>(MatD::Zero(2, 2), MatD::Constant(2, 2, 2.0), 0.5);
  EXPECT_EQ(s.x_t, MatD::Constant(2, 2, 1.0));
  EXPECT_EQ(s.v_t, MatD::Constant(2, 2, 2.0));
}

TEST(FlowMatching, Errors) {
  EXPECT_THROW(fm_interpolate<double>(MatD::Zero(2, 2), MatD::Zero(2, 2), 1.5), ModelError);
  EXPECT_THROW(fm_interpolate<double>(MatD::Zero(2, 2), MatD::Zero(2, 3), 0.5), ModelError);
}

TEST(FlowMatching, LossCases) {
  const MatD v = MatD::Random(5, 4);
  EXPECT_EQ(fm_loss<double>(v, v), 0.0);
  const MatD p = v.array() + 1.0;
  EXPECT_DOUBLE_EQ(fm_loss<double>(p, v, LossMode::kMse), 1.0);
  EXPECT_DOUBLE_EQ(fm_loss<double>(p, v, LossMode::kL1), 1.0);
  EXPECT_THROW(fm_loss<double>(v, MatD::Zero(4, 4)), ModelError);
  EXPECT_THROW(loss_mode_from_string("huber"), std::invalid_argument);
}

TEST(FlowMatching, LossGradient) {
  const MatD v = MatD::Random(3, 2), p = MatD::Random(3, 2);
  MatD g;
  fm_loss<double>(p, v, LossMode::kMse, &g);
  const double h = 1e-6;
  for (int i = 0; i < p.size(); ++i) {
    MatD a = p, b = p;
    a.data()[i] += h;
    b.data()[i] -= h;
    EXPECT_NEAR((fm_loss<double>(a, v) - fm_loss<double>(b, v)) / (2 * h), g.data()[i], 1e-8);
  }
}

// ---------------------------------------------------------------------------

TEST(Sampler, OneStepIsOneEulerUpdate) {
  Model<float> m(tiny_config());
  m.randomize(12, 0.2);
  const auto tr = tiny_triplet();
  const auto frame = tiny_frame();
  const auto res = sample(m, tr, frame, {}, 1, 77);
  MatF x0 = draw_noise(32, 16, 77);
  const auto in = prepare_inputs(m.config(), tr, frame, {}, x0);
  clamp_first_frame(x0, in.bundle, m.config().grid);
  const auto cond = m.prepare(in.bundle, in.prompt.tokens, in.bias);
  const MatF expect = x0 + m.forward(x0, 0.0, cond);
  EXPECT_EQ(res.latent.bottomRows(16), expect.bottomRows(16));
  EXPECT_EQ(res.latent.topRows(16), in.bundle.image_latent.topRows(16));
}

TEST(Sampler, SameSeedSameVideo) {
  Model<float> m(tiny_config());
  m.randomize(12, 0.2);
  const auto a = sample(m, tiny_triplet(), tiny_frame(), {}, 3, 5);
  const auto b = sample(m, tiny_triplet(), tiny_frame(), {}, 3, 5);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.frames.size(), 5u);
  const auto c = sample(m, tiny_triplet(), tiny_frame(), {}, 3, 6);
  EXPECT_NE(a.latent, c.latent);
}

TEST(Sampler, UntrainedModelIgnoresTrajectories) {
  Model<float> m(tiny_config());
  m.init(0);
  const auto a = sample(m, tiny_triplet(0.f), tiny_frame(), {}, 4, 5);
  const auto b = sample(m, tiny_triplet(3.f), tiny_frame(), {}, 4, 5);
  EXPECT_EQ(a.latent, b.latent);
}

TEST(Sampler, ProgressReportsEveryStep) {
  Model<float> m(tiny_config());
  m.init(0);
  std::vector<int> seen;
  sample(m, tiny_triplet(), tiny_frame(), {}, 4, 1, [&](int s, int n) {
    EXPECT_EQ(n, 4);
    seen.push_back(s);
  });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4}));
}

TEST(Sampler, GridMismatchAndBadStepsThrow) {
  Model<float> m(tiny_config());
  m.init(0);
  auto tr = tiny_triplet();
  tr.frame_size = {64, 64};
  EXPECT_THROW(sample(m, tr, Image(64, 64), {}, 2, 1), ModelError);
  EXPECT_THROW(sample(m, tiny_triplet(), tiny_frame(), {}, 0, 1), ModelError);
}
