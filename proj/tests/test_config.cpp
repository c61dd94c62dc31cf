#include <gtest/gtest.h>

#include "cad/config.hpp"

using namespace cad;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    config::parse_yaml(yaml);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const auto rc = config::parse_yaml("");
  EXPECT_EQ(rc.data.total(), 400u);
  EXPECT_EQ(rc.train.epochs, 20u);
  EXPECT_EQ(rc.repeats, 3u);
  EXPECT_EQ(rc.model.lora.rank, 8u);
  EXPECT_EQ(rc.protocol, train::Protocol::Intra7030);
}

TEST(RunConfig, ReadsEverySection) {
  const auto rc = config::parse_yaml(R"(
seed: 11
synthgen:
  counts: {REAL: 10, MISALIGNED: 5}
  frames: 8
  samples: 4000
  offset_frames: [1, 3]
model:
  d: 16
  flags: [no_distillation]
loss:
  lambda_kl: 0.5
  kl_axis: token
lora:
  rank: 4
  alpha: 8
train:
  epochs: 3
  optimizer: sgd
  learning_rate: 0.1
  repeats: 2
protocol:
  name: loco
  held_out: MISALIGNED
outputs:
  dir: out/x
)");
  EXPECT_EQ(rc.seed, 11u);
  EXPECT_EQ(rc.data.seed, 11u);
  EXPECT_EQ(rc.train.seed, 11u);
  EXPECT_EQ(rc.data.total(), 15u);
  EXPECT_EQ(rc.data.generator.shape.frames, 8u);
  EXPECT_EQ(rc.data.offset_max, 3);
  EXPECT_EQ(rc.model.encoder.d, 16u);
  EXPECT_TRUE(rc.model.flags.no_distillation);
  EXPECT_EQ(rc.model.loss.lambda_kl, 0.5);
  EXPECT_EQ(rc.model.loss.kl_axis, model::KlAxis::Token);
  EXPECT_EQ(rc.model.lora.rank, 4u);
  EXPECT_EQ(rc.train.optimizer.kind, OptimizerKind::Sgd);
  EXPECT_EQ(rc.repeats, 2u);
  EXPECT_EQ(rc.held_out, synth::Category::Misaligned);
  EXPECT_EQ(rc.out_dir, "out/x");
}

TEST(RunConfig, UnknownKeyNamesKeyAndLine) {
  const auto msg = error_of("seed: 1\ntrain:\n  epochs: 2\n  epochz: 3\n");
  EXPECT_NE(msg.find("train.epochz"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
  EXPECT_NE(error_of("colour: red\n").find("'colour'"), std::string::npos);
  EXPECT_NE(error_of("synthgen:\n  counts: {FAKE: 3}\n").find("synthgen.counts.FAKE"), std::string::npos);
}

TEST(RunConfig, WrongTypesAndValuesNameTheKey) {
  auto msg = error_of("model:\n  d: many\n");
  EXPECT_NE(msg.find("model.d"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  msg = error_of("train:\n  optimizer: rmsprop\n");
  EXPECT_NE(msg.find("train.optimizer"), std::string::npos) << msg;
  msg = error_of("model:\n  flags: [video_only, no_alignment]\n");
  EXPECT_NE(msg.find("model.flags"), std::string::npos) << msg;
  EXPECT_NE(error_of("train: 3\n").find("'train'"), std::string::npos);
  EXPECT_NE(error_of("seed: [1\n").find("line"), std::string::npos);
}

TEST(RunConfig, ProtocolConsistencyEnforced) {
  EXPECT_THROW(config::parse_yaml("protocol: {name: loco}\n"), ConfigError);
  EXPECT_THROW(config::parse_yaml("protocol: {held_out: AUDIO_ONLY}\n"), ConfigError);
  EXPECT_THROW(config::parse_yaml("train: {repeats: 0}\n"), ConfigError);
}

TEST(RunConfig, JsonRoundTripIsExact) {
  const auto rc = config::parse_yaml(
      "seed: 3\nmodel: {flags: [kd_as_kl], position_scale: 0.75}\ntrain: {learning_rate: 0.0013}\n"
      "protocol: {name: loco, held_out: COMBINED}\nsynthgen: {visual_strength: [0.35, 0.9]}\n");
  const auto j = config::to_json(rc);
  const auto back = config::from_json(j);
  EXPECT_EQ(config::to_json(back), j);
  EXPECT_EQ(config::fingerprint(back), config::fingerprint(rc));
}

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const config::RunConfig rc;
  EXPECT_EQ(config::to_json(config::from_json(config::to_json(rc))), config::to_json(rc));
}

TEST(RunConfig, FingerprintTracksContent) {
  const auto a = config::parse_yaml("seed: 1\n");
  const auto b = config::parse_yaml("seed: 2\n");
  EXPECT_EQ(config::fingerprint(a), config::fingerprint(config::parse_yaml("seed: 1\n")));
  EXPECT_NE(config::fingerprint(a), config::fingerprint(b));
  EXPECT_EQ(config::fingerprint(a).size(), 16u);
}

TEST(RunConfig, MissingFileIsIoError) {
  EXPECT_THROW(config::load("/nonexistent/run.yaml"), IoError);
}

TEST(RunConfig, ShippedConfigsLoad) {
  const std::string dir = CAD_CONFIG_DIR;
  EXPECT_EQ(config::fingerprint(config::load(dir + "/default.yaml")), config::fingerprint(config::RunConfig{}));
  const auto quick = config::load(dir + "/quick.yaml");
  EXPECT_EQ(quick.data.total(), 120u);
  EXPECT_EQ(quick.repeats, 1u);
}
