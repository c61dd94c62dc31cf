#ifndef CAD_CONFIG_HPP
#define CAD_CONFIG_HPP

// RunConfig: one YAML document covering data generation, model, losses,
// LoRA, training, protocol and outputs. Parsing is strict: unknown keys and
// wrong types fail with the dotted key path and its line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "cad/errors.hpp"
#include "cad/model.hpp"
#include "cad/synthgen.hpp"
#include "cad/train_eval.hpp"

namespace cad::config {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 7;  // split seed; also the default for data and training
  synth::DatasetConfig data;
  model::ModelConfig model;
  train::TrainConfig train;
  train::Protocol protocol = train::Protocol::Intra7030;
  std::optional<synth::Category> held_out;
  std::size_t repeats = 3;
  std::filesystem::path out_dir = "runs";

  RunConfig() { data.counts = synth::DatasetConfig::balanced_counts(400); }

  void validate() const {
    data.validate();
    model.flags.validate();
    model.encoder.validate();
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (repeats == 0) throw ConfigError("train.repeats must be positive");
    if (model.lora.enabled && model.lora.rank == 0) throw ConfigError("lora.rank must be positive");
    if ((protocol == train::Protocol::LeaveOneCategoryOut) != held_out.has_value())
      throw ConfigError("protocol.held_out is required for loco and forbidden for intra");
  }
};

namespace detail {

inline const char* to_string(model::KlAxis a) { return a == model::KlAxis::Feature ? "feature" : "token"; }
inline const char* to_string(model::KlPooling p) {
  return p == model::KlPooling::Pooled ? "pooled" : "token_averaged";
}

/// Walks one mapping node, remembering which keys were consumed.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.IsMap()) fail(path_.empty() ? "document" : path_, node_, "expected a mapping");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const YAML::Node n = take(key);
    if (!n) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(full(key), n, "wrong type");
    }
  }

  std::optional<Section> section(const std::string& key) {
    const YAML::Node n = take(key);
    if (!n) return std::nullopt;
    return Section(n, full(key));
  }

  YAML::Node raw(const std::string& key) { return take(key); }
  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Rejects whatever keys no read() consumed.
  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail(full(key), kv.first, "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& key, const YAML::Node& at, const std::string& what) {
    const int line = at.Mark().line >= 0 ? at.Mark().line + 1 : 0;
    throw ConfigError("key '" + key + "' at line " + std::to_string(line) + ": " + what);
  }

 private:
  YAML::Node take(const std::string& key) {
    seen_.insert(key);
    const YAML::Node& n = node_;  // const lookup never inserts
    return n[key];
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_range(Section& s, const std::string& key, double& lo, double& hi) {
  const YAML::Node n = s.raw(key);
  if (!n) return;
  if (!n.IsSequence() || n.size() != 2) Section::fail(s.full(key), n, "expected [min, max]");
  try {
    lo = n[0].as<double>();
    hi = n[1].as<double>();
  } catch (const YAML::Exception&) {
    Section::fail(s.full(key), n, "wrong type");
  }
}

template <class F>
auto parse_enum(Section& s, const std::string& key, F parse) -> std::optional<decltype(parse(std::string()))> {
  const YAML::Node n = s.raw(key);
  if (!n || n.IsNull()) return std::nullopt;
  try {
    return parse(n.as<std::string>());
  } catch (const YAML::Exception&) {
    Section::fail(s.full(key), n, "wrong type");
  } catch (const Error& e) {
    Section::fail(s.full(key), n, e.what());
  }
}

}  // namespace detail

inline RunConfig from_yaml(const YAML::Node& root) {
  using detail::Section;
  RunConfig rc;
  if (!root || root.IsNull()) return rc;
  Section top(root, "");
  top.read("seed", rc.seed);
  bool data_seed_given = false, train_seed_given = false;

  if (auto s = top.section("synthgen")) {
    auto& d = rc.data;
    auto& shape = d.generator.shape;
    std::size_t clips = 0;
    s->read("clips", clips);
    if (clips) d.counts = synth::DatasetConfig::balanced_counts(clips);
    if (auto c = s->section("counts")) {
      d.counts.clear();
      for (synth::Category cat : synth::kCategories) {
        std::size_t n = 0;
        c->read(std::string(synth::to_string(cat)), n);
        if (n) d.counts[cat] = n;
      }
      c->finish();
    }
    data_seed_given = bool(s->raw("seed"));
    s->read("seed", d.seed);
    s->read("frames", shape.frames);
    s->read("height", shape.height);
    s->read("width", shape.width);
    s->read("samples", shape.samples);
    s->read("sample_rate", shape.sample_rate);
    s->read("spike_hz", d.generator.spike_hz);
    s->read("noise_level", d.generator.noise_level);
    s->read("motion_px", d.generator.motion_px);
    detail::read_range(*s, "visual_strength", d.visual_strength_min, d.visual_strength_max);
    detail::read_range(*s, "audio_strength", d.audio_strength_min, d.audio_strength_max);
    double lo = d.offset_min, hi = d.offset_max;
    detail::read_range(*s, "offset_frames", lo, hi);
    d.offset_min = int(lo);
    d.offset_max = int(hi);
    s->finish();
  }

  if (auto s = top.section("model")) {
    auto& m = rc.model;
    auto& e = m.encoder;
    s->read("d", e.d);
    s->read("input_size", e.input_size);
    s->read("patch", e.patch);
    s->read("shared_patch_width", e.shared_patch_width);
    s->read("specific_width", e.specific_width);
    s->read("audio_bands", e.audio_bands);
    s->read("shared_audio_hidden", e.shared_audio_hidden);
    s->read("specific_audio_hidden", e.specific_audio_hidden);
    s->read("frozen_seed", e.frozen_seed);
    s->read("ffn_hidden", m.ffn_hidden);
    s->read("projector_hidden", m.projector_hidden);
    s->read("head_hidden", m.head_hidden);
    s->read("position_scale", m.position_scale);
    s->read("center_shared_tokens", m.center_shared_tokens);
    s->read("positions_in_values", m.positions_in_values);
    s->read("seed", m.seed);
    std::vector<std::string> flags;
    const YAML::Node fn = s->raw("flags");
    if (fn) {
      try {
        flags = fn.as<std::vector<std::string>>();
        m.flags = model::AblationFlags::from_names(flags);
      } catch (const YAML::Exception&) {
        Section::fail(s->full("flags"), fn, "expected a list of flag names");
      } catch (const Error& err) {
        Section::fail(s->full("flags"), fn, err.what());
      }
    }
    s->finish();
  }

  if (auto s = top.section("loss")) {
    auto& l = rc.model.loss;
    s->read("lambda_kl", l.lambda_kl);
    s->read("lambda_kd", l.lambda_kd);
    s->read("symmetric_kl", l.symmetric_kl);
    s->read("use_predictor", l.use_predictor);
    if (auto a = detail::parse_enum(*s, "kl_axis", [](const std::string& v) {
          if (v == "feature") return model::KlAxis::Feature;
          if (v == "token") return model::KlAxis::Token;
          throw ConfigError("expected feature or token");
        }))
      l.kl_axis = *a;
    if (auto p = detail::parse_enum(*s, "kl_pooling", [](const std::string& v) {
          if (v == "pooled") return model::KlPooling::Pooled;
          if (v == "token_averaged") return model::KlPooling::TokenAveraged;
          throw ConfigError("expected pooled or token_averaged");
        }))
      l.kl_pooling = *p;
    s->finish();
  }

  if (auto s = top.section("lora")) {
    auto& l = rc.model.lora;
    s->read("enabled", l.enabled);
    s->read("rank", l.rank);
    s->read("alpha", l.alpha);
    s->read("targets", l.targets);
    s->finish();
  }

  if (auto s = top.section("train")) {
    auto& t = rc.train;
    s->read("epochs", t.epochs);
    s->read("batch_size", t.batch_size);
    train_seed_given = bool(s->raw("seed"));
    s->read("seed", t.seed);
    s->read("class_balance", t.class_balance);
    s->read("time_roll", t.time_roll);
    s->read("repeats", rc.repeats);
    if (auto k = detail::parse_enum(*s, "optimizer", parse_optimizer)) t.optimizer.kind = *k;
    s->read("learning_rate", t.optimizer.learning_rate);
    s->read("momentum", t.optimizer.momentum);
    s->read("grad_clip", t.optimizer.grad_clip);
    s->finish();
  }

  if (auto s = top.section("protocol")) {
    if (auto p = detail::parse_enum(*s, "name", train::parse_protocol)) rc.protocol = *p;
    if (auto c = detail::parse_enum(*s, "held_out", [](const std::string& v) { return synth::parse_category(v); }))
      rc.held_out = *c;
    s->finish();
  }

  if (auto s = top.section("outputs")) {
    std::string dir = rc.out_dir.string();
    s->read("dir", dir);
    rc.out_dir = dir;
    s->finish();
  }
  top.finish();

  if (!data_seed_given) rc.data.seed = rc.seed;
  if (!train_seed_given) rc.train.seed = rc.seed;
  rc.validate();
  return rc;
}

inline RunConfig parse_yaml(const std::string& text) {
  try {
    return from_yaml(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

inline RunConfig load(const std::filesystem::path& path) {
  try {
    return from_yaml(YAML::LoadFile(path.string()));
  } catch (const YAML::BadFile&) {
    throw IoError("cannot open config " + path.string());
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string() + ": line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

/// Full serialization, embedded in every report. Uses the same keys as the
/// YAML form, so from_json(to_json(rc)) reproduces rc.
inline json to_json(const RunConfig& rc) {
  const auto& m = rc.model;
  const auto& e = m.encoder;
  const auto& t = rc.train;
  const auto& d = rc.data;
  const auto& shape = d.generator.shape;
  json counts = json::object();
  for (const auto& [c, n] : rc.data.counts) counts[std::string(synth::to_string(c))] = n;
  return json{
      {"seed", rc.seed},
      {"synthgen",
       {{"counts", counts}, {"seed", d.seed}, {"frames", shape.frames}, {"height", shape.height},
        {"width", shape.width}, {"samples", shape.samples}, {"sample_rate", shape.sample_rate},
        {"spike_hz", d.generator.spike_hz}, {"noise_level", d.generator.noise_level},
        {"motion_px", d.generator.motion_px}, {"visual_strength", {d.visual_strength_min, d.visual_strength_max}},
        {"audio_strength", {d.audio_strength_min, d.audio_strength_max}},
        {"offset_frames", {d.offset_min, d.offset_max}}}},
      {"model",
       {{"d", e.d}, {"input_size", e.input_size}, {"patch", e.patch},
        {"shared_patch_width", e.shared_patch_width}, {"specific_width", e.specific_width},
        {"audio_bands", e.audio_bands}, {"shared_audio_hidden", e.shared_audio_hidden},
        {"specific_audio_hidden", e.specific_audio_hidden}, {"frozen_seed", e.frozen_seed},
        {"ffn_hidden", m.ffn_hidden}, {"projector_hidden", m.projector_hidden}, {"head_hidden", m.head_hidden},
        {"position_scale", m.position_scale}, {"center_shared_tokens", m.center_shared_tokens},
        {"positions_in_values", m.positions_in_values}, {"seed", m.seed}, {"flags", m.flags.active()}}},
      {"loss",
       {{"lambda_kl", m.loss.lambda_kl}, {"lambda_kd", m.loss.lambda_kd},
        {"kl_axis", detail::to_string(m.loss.kl_axis)}, {"kl_pooling", detail::to_string(m.loss.kl_pooling)},
        {"symmetric_kl", m.loss.symmetric_kl}, {"use_predictor", m.loss.use_predictor}}},
      {"lora", {{"enabled", m.lora.enabled}, {"rank", m.lora.rank}, {"alpha", m.lora.alpha}, {"targets", m.lora.targets}}},
      {"train",
       {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"seed", t.seed}, {"class_balance", t.class_balance},
        {"time_roll", t.time_roll}, {"repeats", rc.repeats}, {"optimizer", to_string(t.optimizer.kind)},
        {"learning_rate", t.optimizer.learning_rate}, {"momentum", t.optimizer.momentum},
        {"grad_clip", t.optimizer.grad_clip}}},
      {"protocol",
       {{"name", train::to_string(rc.protocol)},
        {"held_out", rc.held_out ? json(std::string(synth::to_string(*rc.held_out))) : json(nullptr)}}},
      {"outputs", {{"dir", rc.out_dir.string()}}}};
}

inline RunConfig from_json(const json& j) { return parse_yaml(j.dump()); }

/// FNV-1a over the compact JSON form.
inline std::string fingerprint(const RunConfig& rc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(rc).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cad::config

#endif  // CAD_CONFIG_HPP
