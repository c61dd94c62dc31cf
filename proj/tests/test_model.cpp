#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cad/model.hpp"
#include "oracles.hpp"

using namespace cad;
using namespace cad::model;

namespace {

Mat rowvec(std::initializer_list<double> v) {
  Mat m(1, Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Parameter make_param(const std::string& name, Mat value) {
  Parameter p;
  p.name = name;
  p.value = std::move(value);
  p.zero_grad();
  return p;
}

std::vector<synth::MediaClip> toy_clips() {
  synth::Generator gen(oracle::toy_generator_config());
  return {gen.generate_real(1), gen.inject_misalignment(gen.inject_visual_artifact(gen.generate_real(2), 0.7), 1)};
}

std::vector<synth::MediaClip> default_clips() {
  synth::Generator gen(synth::GeneratorConfig{});
  return {gen.generate_real(1), gen.inject_audio_artifact(gen.generate_real(2), 0.5), gen.inject_misalignment(gen.generate_real(3), 5)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Cross-attention

TEST(Attention, SingleTokenCopiesItsValue) {
  const Mat q = rowvec({0.3, -1.2}), kv = rowvec({2.0, 0.5});
  Mat wv(2, 2);
  wv << 1, 2, 3, 4;
  const auto [out, w] = cross_attention_values(q, kv, Mat::Identity(2, 2), Mat::Identity(2, 2), wv);
  EXPECT_EQ(w(0, 0), 1.0);
  EXPECT_NEAR(out(0, 0), 2.0 * 1 + 0.5 * 2, 1e-15);
  EXPECT_NEAR(out(0, 1), 2.0 * 3 + 0.5 * 4, 1e-15);
}

TEST(Attention, IdenticalKeysGiveUniformRows) {
  Mat q(3, 2), kv(3, 2);
  q << 1, 2, -1, 0, 5, 5;
  kv << 0.4, 0.1, 0.4, 0.1, 0.4, 0.1;
  const auto w = cross_attention_values(q, kv, Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2)).second;
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(w(i, j), 1.0 / 3.0, 1e-15);
}

TEST(Attention, TwoTokenHandComputation) {
  Mat q(2, 2), kv(2, 2);
  q << 1, 0, 0, 2;
  kv << 1, 1, -1, 3;
  // Logits q_i . kv_j / sqrt(2): row 0 -> (1, -1)/sqrt2, row 1 -> (2, 6)/sqrt2.
  const double r = std::sqrt(2.0);
  const double w00 = 1.0 / (1.0 + std::exp(-2.0 / r)), w10 = 1.0 / (1.0 + std::exp(4.0 / r));
  const auto [out, w] = cross_attention_values(q, kv, Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2));
  EXPECT_NEAR(w(0, 0), w00, 1e-14);
  EXPECT_NEAR(w(0, 1), 1 - w00, 1e-14);
  EXPECT_NEAR(w(1, 0), w10, 1e-14);
  EXPECT_NEAR(out(0, 0), w00 * 1 + (1 - w00) * -1, 1e-14);
  EXPECT_NEAR(out(0, 1), w00 * 1 + (1 - w00) * 3, 1e-14);
  EXPECT_NEAR(out(1, 1), w10 * 1 + (1 - w10) * 3, 1e-14);
}

TEST(Attention, DroppingTheScaleChangesOutputs) {
  std::mt19937_64 rng(3);
  const Mat q = random_normal(rng, 4, 6, 1.0), kv = random_normal(rng, 4, 6, 1.0);
  const Mat I = Mat::Identity(6, 6);
  const auto scaled = cross_attention_values(q, kv, I, I, I, true);
  const auto raw = cross_attention_values(q, kv, I, I, I, false);
  EXPECT_GT((scaled.first - raw.first).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Attention, RowsAreDistributionsAndShapesChecked) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat q = random_normal(rng, 5, 3, 2.0), kv = random_normal(rng, 5, 3, 2.0);
    const Mat w = random_normal(rng, 3, 3, 1.0);
    const Mat a = cross_attention_values(q, kv, w, w.transpose(), w).second;
    EXPECT_LE((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
  EXPECT_THROW(cross_attention_values(Mat::Zero(2, 3), Mat::Zero(3, 3), Mat::Identity(3, 3), Mat::Identity(3, 3),
                                      Mat::Identity(3, 3)),
               ArgumentError);
}

// ---------------------------------------------------------------------------
// Alignment KL

TEST(AlignmentKl, WorkedExamples) {
  EXPECT_EQ(alignment_kl_loss(rowvec({0.2, -0.7, 1.5}), rowvec({0.2, -0.7, 1.5})), 0.0);
  EXPECT_NEAR(alignment_kl_loss(rowvec({1, 0}), rowvec({0, 1})), 0.4621, 5e-5);
  EXPECT_NEAR(alignment_kl_loss(rowvec({1, 0}), rowvec({0, 1})), oracle::kl_of_softmax({1, 0}, {0, 1}), 1e-12);
}

TEST(AlignmentKl, RandomInputsMatchOracleAndProperties) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dims(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int T = dims(rng), d = dims(rng) + 1;
    const Mat a = random_normal(rng, T, d, 2.0), b = random_normal(rng, T, d, 2.0);
    const double l = alignment_kl_loss(a, b);
    std::vector<double> pa(static_cast<std::size_t>(d)), pb(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) pa[std::size_t(j)] = a.col(j).mean(), pb[std::size_t(j)] = b.col(j).mean();
    EXPECT_NEAR(l, oracle::kl_of_softmax(pa, pb), 1e-9);
    EXPECT_GE(l, 0.0);
    EXPECT_GT(l, 0.0);  // random pooled vectors are never shifts of one another
    EXPECT_LE(alignment_kl_loss(a, a), 1e-12);
    const double c = std::normal_distribution<double>(0.0, 5.0)(rng);
    EXPECT_NEAR(alignment_kl_loss(a.array() + c, b.array() + c), l, 1e-9);
  }
}

TEST(AlignmentKl, AxisAndPoolingSwitches) {
  Mat a(2, 2), b(2, 2);
  a << 1, 0, 3, 0;
  b << 0, 1, 0, 1;
  LossConfig tok;
  tok.kl_axis = KlAxis::Token;
  // Token axis, pooled: softmax over tokens of the feature means.
  EXPECT_NEAR(alignment_kl_loss(a, b, tok), oracle::kl_of_softmax({0.5, 1.5}, {0.5, 0.5}), 1e-12);
  LossConfig avg;
  avg.kl_pooling = KlPooling::TokenAveraged;
  EXPECT_NEAR(alignment_kl_loss(a, b, avg),
              0.5 * (oracle::kl_of_softmax({1, 0}, {0, 1}) + oracle::kl_of_softmax({3, 0}, {0, 1})), 1e-12);
  LossConfig sym;
  sym.symmetric_kl = true;
  EXPECT_NEAR(alignment_kl_loss(a, b, sym),
              0.5 * (oracle::kl_of_softmax({2, 0}, {0, 1}) + oracle::kl_of_softmax({0, 1}, {2, 0})), 1e-12);
  EXPECT_THROW(alignment_kl_loss(Mat::Zero(2, 3), Mat::Zero(2, 2)), ArgumentError);
}

// ---------------------------------------------------------------------------
// Distillation

TEST(Distillation, WorkedExamples) {
  EXPECT_NEAR(simsiam_distillation_loss(rowvec({1, 2}), rowvec({1, 2}), rowvec({-3, 1}), rowvec({-3, 1})), -1.0, 1e-15);
  EXPECT_NEAR(simsiam_distillation_loss(rowvec({1, 0}), rowvec({0, 4}), rowvec({0, 2}), rowvec({5, 0})), 0.0, 1e-15);
  EXPECT_NEAR(simsiam_distillation_loss(rowvec({1, 0}), rowvec({1, 1}), rowvec({0, 1}), rowvec({1, 0})), -0.3536, 5e-5);
}

TEST(Distillation, BoundedAndSymmetricUnderRoleSwap) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const Mat xv = random_normal(rng, 1, 7, 1.0), za = random_normal(rng, 1, 7, 1.0);
    const Mat xa = random_normal(rng, 1, 7, 1.0), zv = random_normal(rng, 1, 7, 1.0);
    const double l = simsiam_distillation_loss(xv, za, xa, zv);
    EXPECT_GE(l, -1.0);
    EXPECT_LE(l, 1.0);
    EXPECT_NEAR(simsiam_distillation_loss(xa, zv, xv, za), l, 1e-15);
  }
}

TEST(Distillation, ZeroVectorNamesTheSide) {
  try {
    simsiam_distillation_loss(rowvec({1, 0}), rowvec({0, 0}), rowvec({0, 1}), rowvec({1, 0}));
    FAIL() << "expected NormalizationError";
  } catch (const NormalizationError& e) {
    EXPECT_NE(std::string(e.what()).find("audio target"), std::string::npos) << e.what();
  }
  EXPECT_THROW(simsiam_distillation_loss(rowvec({0, 0}), rowvec({1, 0}), rowvec({0, 1}), rowvec({1, 0})),
               NormalizationError);
}

TEST(Distillation, StopGradientBlocksEachTargetSide) {
  std::mt19937_64 rng(10);
  // online = x W_online, target = y W_target for each Dist term separately.
  for (int term = 0; term < 2; ++term) {
    Parameter w_online = make_param("online", random_normal(rng, 4, 4, 1.0));
    Parameter w_target = make_param("target", random_normal(rng, 4, 4, 1.0));
    ad::Tape t;
    const Mat x = random_normal(rng, 1, 4, 1.0), y = random_normal(rng, 1, 4, 1.0);
    Var online = ad::matmul(t.constant(x), t.param(w_online));
    Var target = ad::matmul(t.constant(y), t.param(w_target));
    Var c1 = t.constant(rowvec({1, 0, 0, 0})), c2 = t.constant(rowvec({0, 1, 0, 0}));
    Var loss = term == 0 ? distillation(online, target, c1, c2) : distillation(c1, c2, online, target);
    t.backward(loss);
    EXPECT_EQ(w_target.grad.norm(), 0.0) << "term " << term + 1;
    EXPECT_GT(w_online.grad.norm(), 0.0) << "term " << term + 1;
  }
}

// ---------------------------------------------------------------------------
// Position codes and frame rolling

TEST(Model, PositionCodesAreCircularAndZeroMean) {
  const Mat pe = position_codes(16, 64, 1.0);
  EXPECT_LE(pe.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  const Mat pe2 = position_codes(16, 64, 2.5);
  EXPECT_LE((pe2 - 2.5 * pe).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index t = 0; t < 16; ++t)
    for (Eigen::Index s = t + 1; s < 16; ++s) EXPECT_GT((pe.row(t) - pe.row(s)).norm(), 1e-3);
}

TEST(Model, RollFramesRotatesBothStreams) {
  CadModel m(oracle::toy_model_config());
  const auto c = m.prepare(toy_clips()[0]);
  const auto r = roll_frames(c, 1);
  const auto P = Eigen::Index(m.config().encoder.patches_per_frame());
  EXPECT_EQ(r.inputs.patches.row(P), c.inputs.patches.row(0));
  EXPECT_EQ(r.inputs.residual_patches.row(0), c.inputs.residual_patches.row(3 * P));
  EXPECT_EQ(r.inputs.audio_features.row(1), c.inputs.audio_features.row(0));
  EXPECT_EQ(r.shared_video.row(0), c.shared_video.row(3));
  const auto full = roll_frames(c, 4);
  EXPECT_EQ(full.inputs.patches, c.inputs.patches);
  EXPECT_EQ(full.shared_audio_h1, c.shared_audio_h1);
}

// ---------------------------------------------------------------------------
// Model forward, losses and gradients

TEST(Model, ForwardShapesAndAttentionRows) {
  CadModel m(ModelConfig{});
  const auto clips = default_clips();
  const auto c = m.prepare(clips[0]);
  Tape t;
  const auto r = m.forward(t, c);
  EXPECT_EQ(r.embedding.cols(), 4 * 64);
  EXPECT_EQ(m.embedding_dim(), 256u);
  EXPECT_EQ(r.x_v2a.rows(), 16);
  EXPECT_EQ(r.attention_v2a.rows(), 16);
  EXPECT_LE((r.attention_v2a.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-6);
  EXPECT_LE((r.attention_a2v.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-6);
  EXPECT_TRUE(std::isfinite(r.logit.scalar()));
  EXPECT_EQ(m.score(c), m.score(c));
}

TEST(Model, VideoOnlyEmbeddingIsHalfWidth) {
  ModelConfig mc;
  mc.flags.video_only = true;
  CadModel m(mc);
  EXPECT_EQ(m.embedding_dim(), 128u);
  const auto c = m.prepare(default_clips()[0]);
  EXPECT_EQ(m.embedding(c).cols(), 128);
}

TEST(Model, LossBundleInvariant) {
  for (double lkl : {0.0, 0.3, 1.0})
    for (double lkd : {0.0, 2.0}) {
      ModelConfig mc = oracle::toy_model_config();
      mc.loss.lambda_kl = lkl;
      mc.loss.lambda_kd = lkd;
      CadModel m(mc);
      const auto b = m.total_loss(toy_clips());
      EXPECT_NEAR(b.total, b.l_cls + lkl * b.l_kl + lkd * b.l_kd, 1e-9);
      EXPECT_GE(b.l_cls, 0.0);
      EXPECT_GE(b.l_kl, 0.0);
      EXPECT_GE(b.l_kd, -1.0);
      EXPECT_LE(b.l_kd, 1.0);
      if (lkl == 0 && lkd == 0) {
        EXPECT_EQ(b.total, b.l_cls);
      }
    }
  CadModel m(oracle::toy_model_config());
  EXPECT_THROW(m.total_loss({}), ArgumentError);
}

TEST(Model, GradientsMatchCentralDifferences) {
  for (bool center : {true, false}) {
    ModelConfig mc = oracle::toy_model_config();
    mc.center_shared_tokens = center;
    mc.positions_in_values = !center;
    CadModel m(mc);
    std::mt19937_64 rng(12);
    for (Parameter* p : m.params().all())
      if (p->role == Role::Lora) p->value = random_normal(rng, p->value.rows(), p->value.cols(), 0.3);
    const auto clips = toy_clips();
    m.params().zero_grad();
    m.total_loss(clips, true);
    const ParamStore unpinned = m.params();

    const CadModel snapshot = m;
    m.pin_distillation_targets(&snapshot);
    m.params().zero_grad();
    m.total_loss(clips, true);
    for (const Parameter* p : m.params().trainable())
      EXPECT_EQ(p->grad, unpinned.get(p->name).grad) << p->name;

    const auto report = oracle::compare_with_central_differences(
        m.params().trainable(), [&] { return m.total_loss(clips).total; }, 1e-4);
    EXPECT_LE(report.worst_relative, 1e-3) << report.worst_name;
    EXPECT_GT(report.checked_values, 500u);
  }
}

TEST(Model, GradientsMatchWithoutFrozenEncoders) {
  ModelConfig mc = oracle::toy_model_config();
  mc.flags.no_frozen = true;
  CadModel m(mc);
  const CadModel snapshot = m;
  m.pin_distillation_targets(&snapshot);
  const auto clips = toy_clips();
  m.params().zero_grad();
  m.total_loss(clips, true);
  std::vector<Parameter*> frozen_role;
  for (Parameter* p : m.params().all())
    if (p->role == Role::Frozen) frozen_role.push_back(p);
  ASSERT_FALSE(frozen_role.empty());
  const auto report =
      oracle::compare_with_central_differences(frozen_role, [&] { return m.total_loss(clips).total; }, 1e-4);
  EXPECT_LE(report.worst_relative, 1e-3) << report.worst_name;
}

TEST(Model, FrozenParametersGetNoGradient) {
  CadModel m(oracle::toy_model_config());
  m.params().zero_grad();
  m.total_loss(toy_clips(), true);
  double frozen = 0, lora = 0, trainable = 0;
  for (const Parameter* p : m.params().all()) {
    const double g = p->grad.norm();
    (p->role == Role::Frozen ? frozen : p->role == Role::Lora ? lora : trainable) += g;
  }
  EXPECT_EQ(frozen, 0.0);
  EXPECT_GT(lora, 0.0);
  EXPECT_GT(trainable, 0.0);
}

TEST(Model, NoAlignmentMatchesZeroKlWeight) {
  ModelConfig a = oracle::toy_model_config(), b = a;
  a.flags.no_alignment = true;
  b.loss.lambda_kl = 0.0;
  CadModel ma(a), mb(b);
  const auto clips = toy_clips();
  ma.params().zero_grad();
  mb.params().zero_grad();
  const auto la = ma.total_loss(clips, true), lb = mb.total_loss(clips, true);
  EXPECT_EQ(la.l_kl, 0.0);
  EXPECT_GT(lb.l_kl, 0.0);
  EXPECT_NEAR(la.total, lb.total, 1e-12);
  for (const Parameter* p : ma.params().all())
    EXPECT_LE((p->grad - mb.params().get(p->name).grad).cwiseAbs().maxCoeff(), 1e-12) << p->name;
}

TEST(Model, FlagsRemoveTheirComponents) {
  const auto clips = toy_clips();
  {
    ModelConfig mc = oracle::toy_model_config();
    mc.flags.no_distillation = true;
    const auto b = CadModel(mc).total_loss(clips);
    EXPECT_EQ(b.l_kd, 0.0);
  }
  {
    ModelConfig mc = oracle::toy_model_config();
    mc.flags.kd_as_kl = true;
    const auto b = CadModel(mc).total_loss(clips);
    EXPECT_GE(b.l_kd, 0.0);  // a KL, not a negative cosine
  }
  {
    ModelConfig mc = oracle::toy_model_config();
    mc.flags.no_cross_attention = true;
    CadModel m(mc);
    Tape t;
    const auto r = m.forward(t, m.prepare(clips[0]));
    EXPECT_EQ(r.attention_v2a, Mat::Identity(4, 4));
  }
  {
    ModelConfig mc = oracle::toy_model_config();
    mc.flags.video_only = true;
    const auto b = CadModel(mc).total_loss(clips);
    EXPECT_EQ(b.l_kl, 0.0);
    EXPECT_EQ(b.l_kd, 0.0);
  }
}

TEST(Model, ContradictoryFlagsRejected) {
  EXPECT_THROW(AblationFlags::from_names({"video_only", "no_alignment"}), ArgumentError);
  EXPECT_THROW(AblationFlags::from_names({"kd_as_kl", "no_distillation"}), ArgumentError);
  EXPECT_THROW(AblationFlags::from_names({"no_such_flag"}), ArgumentError);
  const auto f = AblationFlags::from_names({"no_frozen", "no_alignment"});
  EXPECT_EQ(f.active(), (std::vector<std::string>{"no_alignment", "no_frozen"}));
  EXPECT_EQ(AblationFlags{}.label(), "full");
}

TEST(Model, ClassWeightScalesOnlyTheClassificationTerm) {
  CadModel m(oracle::toy_model_config());
  const auto c = m.prepare(toy_clips()[1]);
  const std::vector<const ClipCache*> batch{&c};
  const auto plain = m.batch_loss(batch, false), weighted = m.batch_loss(batch, false, {1.0, 3.0});
  EXPECT_NEAR(weighted.l_cls, 3.0 * plain.l_cls, 1e-12);
  EXPECT_EQ(weighted.l_kl, plain.l_kl);
  EXPECT_EQ(weighted.l_kd, plain.l_kd);
}
