#ifndef CAD_ENCODERS_HPP
#define CAD_ENCODERS_HPP

// Four encoder paths over one clip, each producing T tokens of width d:
//
//   shared video   frozen: 8x8 patch embedding, GELU, flatten per frame, projection, tanh
//   shared audio   frozen MLP over log band energies; LoRA on its last two matrices
//   specific video trainable: patch filters over the high-pass residual of each
//                  frame, energy-pooled per frame, then a circular temporal
//                  convolution across frames, then projection
//   specific audio trainable MLP over the same log band energies
//
// Front-ends (patchify, spectrogram) have no parameters and are computed once
// per clip.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cad/autodiff.hpp"
#include "cad/params.hpp"
#include "cad/synthgen.hpp"

namespace cad::enc {

using ad::Tape;
using ad::Var;

enum class Modality { Video, Audio };
enum class Path { Shared, Specific };

struct FeatureSequence {
  Mat tokens;  // T x d
  Modality modality = Modality::Video;
  Path path = Path::Shared;
};

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t input_size = 32;  // frames are resized to input_size x input_size
  std::size_t patch = 8;
  std::size_t shared_patch_width = 24;
  std::size_t specific_width = 32;
  std::size_t audio_bands = 32;
  std::size_t shared_audio_hidden = 64;
  std::size_t specific_audio_hidden = 64;
  std::uint64_t frozen_seed = 20240611;

  std::size_t patches_per_frame() const { return (input_size / patch) * (input_size / patch); }
  std::size_t patch_dim() const { return patch * patch * 3; }

  void validate() const {
    if (d == 0 || patch == 0 || input_size == 0 || input_size % patch != 0)
      throw ConfigError("encoder: input_size must be a positive multiple of patch, and d > 0");
    if (shared_patch_width == 0 || specific_width == 0 || audio_bands == 0 || shared_audio_hidden == 0 ||
        specific_audio_hidden == 0)
      throw ConfigError("encoder: layer widths must be positive");
  }
};

struct LoraConfig {
  bool enabled = true;
  std::size_t rank = 8;
  double alpha = 16.0;
  std::vector<std::string> targets{"w2", "w3"};  // matrices of the shared audio path

  double scaling() const { return alpha / double(rank); }
  bool adapts(const std::string& m) const {
    return enabled && std::find(targets.begin(), targets.end(), m) != targets.end();
  }
};

// ---------------------------------------------------------------------------
// Front-ends

inline constexpr std::array<double, 3> kPixelMean{0.48145466, 0.4578275, 0.40821073};
inline constexpr std::array<double, 3> kPixelStd{0.26862954, 0.26130258, 0.27577711};

/// Resizes every frame to input_size x input_size (bilinear, pixel-centre
/// aligned) and normalizes per channel. Layout (t, y, x, c).
inline std::vector<double> normalized_frames(const synth::MediaClip& clip, const EncoderConfig& cfg) {
  const auto& s = clip.shape;
  if (clip.frames.size() != s.frame_values() || s.channels != 3)
    throw ArgumentError("video encoder: frame tensor does not match its shape");
  for (float v : clip.frames)
    if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("video encoder: pixel values must lie in [0, 1]");
  const std::size_t n = cfg.input_size;
  const double fy = double(s.height) / double(n), fx = double(s.width) / double(n);
  auto sample = [&](std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    if (s.height == n && s.width == n) return double(clip.pixel(t, y, x, c));
    const double sy = std::clamp((double(y) + 0.5) * fy - 0.5, 0.0, double(s.height - 1));
    const double sx = std::clamp((double(x) + 0.5) * fx - 0.5, 0.0, double(s.width - 1));
    const auto y0 = std::size_t(sy), x0 = std::size_t(sx);
    const std::size_t y1 = std::min(y0 + 1, s.height - 1), x1 = std::min(x0 + 1, s.width - 1);
    const double wy = sy - double(y0), wx = sx - double(x0);
    return (1 - wy) * ((1 - wx) * clip.pixel(t, y0, x0, c) + wx * clip.pixel(t, y0, x1, c)) +
           wy * ((1 - wx) * clip.pixel(t, y1, x0, c) + wx * clip.pixel(t, y1, x1, c));
  };
  std::vector<double> out(s.frames * n * n * 3);
  std::size_t i = 0;
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t c = 0; c < 3; ++c) out[i++] = (sample(t, y, x, c) - kPixelMean[c]) / kPixelStd[c];
  return out;
}

/// Each value minus the mean of its 3x3 neighbourhood in the same frame and
/// channel (edges clamped).
inline std::vector<double> highpass_residual(const std::vector<double>& img, std::size_t frames, std::size_t n) {
  std::vector<double> out(img.size());
  auto at = [&](std::size_t t, long y, long x, std::size_t c) {
    y = std::clamp(y, 0L, long(n) - 1);
    x = std::clamp(x, 0L, long(n) - 1);
    return img[((t * n + std::size_t(y)) * n + std::size_t(x)) * 3 + c];
  };
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) acc += at(t, long(y) + dy, long(x) + dx, c);
          out[((t * n + y) * n + x) * 3 + c] = at(t, long(y), long(x), c) - acc / 9.0;
        }
  return out;
}

/// Cuts non-overlapping patches. Row t*P + p of the result is patch p of frame
/// t, laid out (row, col, channel).
inline Mat patchify(const std::vector<double>& img, std::size_t frames, const EncoderConfig& cfg) {
  const std::size_t n = cfg.input_size, p = cfg.patch, per_row = n / p;
  Mat out(Eigen::Index(frames * cfg.patches_per_frame()), Eigen::Index(cfg.patch_dim()));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t py = 0; py < per_row; ++py)
      for (std::size_t px = 0; px < per_row; ++px) {
        const auto row = Eigen::Index(t * cfg.patches_per_frame() + py * per_row + px);
        Eigen::Index col = 0;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t c = 0; c < 3; ++c) out(row, col++) = img[((t * n + py * p + y) * n + px * p + x) * 3 + c];
      }
  return out;
}

inline Mat video_patches(const synth::MediaClip& clip, const EncoderConfig& cfg) {
  return patchify(normalized_frames(clip, cfg), clip.shape.frames, cfg);
}

inline constexpr double kLogFloor = 1e-4;

/// Log band energies per aligned segment: T x bands. Each of the T segments
/// (one per frame) is Hann-windowed; bins 1..N/2 of its DFT are split into
/// `bands` contiguous groups whose mean magnitude (amplitude-normalized) is
/// log-compressed with a floor and affinely rescaled to roughly [-1, 1].
inline Mat audio_features(const synth::MediaClip& clip, const EncoderConfig& cfg) {
  const auto& s = clip.shape;
  if (clip.waveform.size() != s.samples || s.samples % s.frames != 0)
    throw ArgumentError("audio encoder: waveform length does not match its shape");
  const std::size_t seg = s.samples / s.frames, bins = seg / 2;
  if (cfg.audio_bands > bins) throw ConfigError("audio encoder: more bands than DFT bins");
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> window(seg), cos_t(seg), sin_t(seg);
  double wsum = 0;
  for (std::size_t n = 0; n < seg; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(two_pi * double(n) / double(seg));
    wsum += window[n];
    cos_t[n] = std::cos(two_pi * double(n) / double(seg));
    sin_t[n] = std::sin(two_pi * double(n) / double(seg));
  }
  Mat out(Eigen::Index(s.frames), Eigen::Index(cfg.audio_bands));
  std::vector<double> xw(seg), mag(bins + 1);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t n = 0; n < seg; ++n) xw[n] = double(clip.waveform[t * seg + n]) * window[n];
    for (std::size_t k = 1; k <= bins; ++k) {
      double re = 0, im = 0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < seg; ++n) {
        re += xw[n] * cos_t[idx];
        im -= xw[n] * sin_t[idx];
        idx += k;
        if (idx >= seg) idx -= seg;
      }
      mag[k] = 2.0 * std::sqrt(re * re + im * im) / wsum;
    }
    for (std::size_t b = 0; b < cfg.audio_bands; ++b) {
      const std::size_t lo = 1 + b * bins / cfg.audio_bands, hi = 1 + (b + 1) * bins / cfg.audio_bands;
      double acc = 0;
      for (std::size_t k = lo; k < hi; ++k) acc += mag[k];
      const double m = acc / double(hi - lo);
      out(Eigen::Index(t), Eigen::Index(b)) = (std::log(m + kLogFloor) + 6.5) / 2.5;
    }
  }
  return out;
}

/// Per-clip encoder inputs.
struct ClipInputs {
  Mat patches;           // (T * P) x patch_dim
  Mat residual_patches;  // same layout, high-pass residual of the normalized frames
  Mat audio_features;    // T x bands
  std::size_t frames = 0;
};

inline ClipInputs prepare_inputs(const synth::MediaClip& clip, const EncoderConfig& cfg) {
  const auto img = normalized_frames(clip, cfg);
  const std::size_t T = clip.shape.frames;
  return ClipInputs{patchify(img, T, cfg), patchify(highpass_residual(img, T, cfg.input_size), T, cfg),
                    audio_features(clip, cfg), T};
}

// ---------------------------------------------------------------------------
// Parameters

/// Registers every encoder parameter. Frozen weights depend only on
/// cfg.frozen_seed; trainable ones are drawn from `rng`.
inline void register_encoder_params(ParamStore& store, const EncoderConfig& cfg, const LoraConfig& lora,
                                    std::mt19937_64& rng) {
  cfg.validate();
  const auto d = Eigen::Index(cfg.d), pd = Eigen::Index(cfg.patch_dim()), P = Eigen::Index(cfg.patches_per_frame());
  const auto sw = Eigen::Index(cfg.shared_patch_width), bands = Eigen::Index(cfg.audio_bands);
  const auto ah = Eigen::Index(cfg.shared_audio_hidden);

  std::mt19937_64 frozen(cfg.frozen_seed);
  store.add("shared_video.patch_w", fan_in_init(frozen, sw, pd), Role::Frozen);
  store.add("shared_video.patch_b", random_normal(frozen, 1, sw, 0.1), Role::Frozen);
  store.add("shared_video.proj_w", fan_in_init(frozen, d, P * sw), Role::Frozen);
  store.add("shared_video.proj_b", random_normal(frozen, 1, d, 0.1), Role::Frozen);
  store.add("shared_audio.w1", fan_in_init(frozen, ah, bands), Role::Frozen);
  store.add("shared_audio.b1", random_normal(frozen, 1, ah, 0.1), Role::Frozen);
  store.add("shared_audio.w2", fan_in_init(frozen, ah, ah), Role::Frozen);
  store.add("shared_audio.b2", random_normal(frozen, 1, ah, 0.1), Role::Frozen);
  store.add("shared_audio.w3", fan_in_init(frozen, d, ah), Role::Frozen);
  store.add("shared_audio.b3", random_normal(frozen, 1, d, 0.1), Role::Frozen);

  if (lora.enabled) {
    if (lora.rank == 0 || !(lora.alpha > 0)) throw ConfigError("lora: rank and alpha must be positive");
    for (const auto& target : lora.targets) {
      if (target != "w1" && target != "w2" && target != "w3")
        throw ConfigError("lora: unknown target '" + target + "' (expected w1, w2 or w3)");
      const Parameter& w = store.get("shared_audio." + target);
      const auto out = w.value.rows(), in = w.value.cols();
      if (Eigen::Index(lora.rank) >= std::min(out, in))
        throw ConfigError("lora: rank " + std::to_string(lora.rank) + " must be below min(d_in, d_out) = " +
                          std::to_string(std::min(out, in)) + " for " + target);
      const auto r = Eigen::Index(lora.rank);
      store.add("shared_audio." + target + ".lora_a", random_normal(rng, r, in, 1.0 / std::sqrt(double(in))),
                Role::Lora);
      store.add("shared_audio." + target + ".lora_b", Mat::Zero(out, r), Role::Lora);
    }
  }

  const auto vw = Eigen::Index(cfg.specific_width), sh = Eigen::Index(cfg.specific_audio_hidden);
  store.add("specific_video.patch_w", fan_in_init(rng, vw, pd), Role::Trainable);
  store.add("specific_video.patch_b", Mat::Zero(1, vw), Role::Trainable);
  for (int k = 0; k < 3; ++k)
    store.add("specific_video.temporal_w" + std::to_string(k), fan_in_init(rng, vw, vw) / std::sqrt(3.0),
              Role::Trainable);
  store.add("specific_video.temporal_b", Mat::Zero(1, vw), Role::Trainable);
  store.add("specific_video.proj_w", fan_in_init(rng, d, vw), Role::Trainable);
  store.add("specific_video.proj_b", Mat::Zero(1, d), Role::Trainable);
  store.add("specific_audio.w1", fan_in_init(rng, sh, bands), Role::Trainable);
  store.add("specific_audio.b1", Mat::Zero(1, sh), Role::Trainable);
  store.add("specific_audio.w2", fan_in_init(rng, d, sh), Role::Trainable);
  store.add("specific_audio.b2", Mat::Zero(1, d), Role::Trainable);
}

/// Trainable values added by LoRA to one adapted (d_out x d_in) matrix.
inline std::size_t lora_param_count(std::size_t rank, std::size_t d_in, std::size_t d_out) {
  return rank * (d_in + d_out);
}

// ---------------------------------------------------------------------------
// Forward passes on a tape

namespace detail {
inline Var p(Tape& t, ParamStore& s, const std::string& name) { return t.param(s.get(name)); }
}  // namespace detail

inline Var shared_video(Tape& t, ParamStore& s, const ClipInputs& in, const EncoderConfig& cfg) {
  using detail::p;
  Var x = t.constant(in.patches);
  Var h = ad::gelu(ad::linear(x, p(t, s, "shared_video.patch_w"), p(t, s, "shared_video.patch_b")));
  Var per_frame = ad::group_rows(h, Eigen::Index(cfg.patches_per_frame()));
  return ad::tanh(ad::linear(per_frame, p(t, s, "shared_video.proj_w"), p(t, s, "shared_video.proj_b")));
}

/// x W^T + b, plus (alpha / r) x A^T B^T when `name` is a LoRA target.
inline Var adapted_linear(Tape& t, ParamStore& s, Var x, const std::string& name, const LoraConfig& lora) {
  using detail::p;
  Var y = ad::linear(x, p(t, s, "shared_audio." + name), p(t, s, "shared_audio.b" + name.substr(1)));
  if (!lora.adapts(name)) return y;
  Var a = p(t, s, "shared_audio." + name + ".lora_a");
  Var b = p(t, s, "shared_audio." + name + ".lora_b");
  return ad::add(y, ad::scale(ad::matmul_nt(ad::matmul_nt(x, a), b), lora.scaling()));
}

/// First hidden layer of the shared audio path; constant per clip while frozen and not adapted.
inline Var shared_audio_layer1(Tape& t, ParamStore& s, const ClipInputs& in, const LoraConfig& lora) {
  return ad::gelu(adapted_linear(t, s, t.constant(in.audio_features), "w1", lora));
}

inline Var shared_audio_from_hidden(Tape& t, ParamStore& s, Var h1, const LoraConfig& lora) {
  Var h2 = ad::gelu(adapted_linear(t, s, h1, "w2", lora));
  return ad::tanh(adapted_linear(t, s, h2, "w3", lora));
}

inline Var shared_audio(Tape& t, ParamStore& s, const ClipInputs& in, const LoraConfig& lora) {
  return shared_audio_from_hidden(t, s, shared_audio_layer1(t, s, in, lora), lora);
}

/// Spatial stage only: per-frame pooled patch features, T x specific_width.
inline Var specific_video_spatial(Tape& t, ParamStore& s, const ClipInputs& in, const EncoderConfig& cfg) {
  using detail::p;
  Var z = ad::linear(t.constant(in.residual_patches), p(t, s, "specific_video.patch_w"),
                     p(t, s, "specific_video.patch_b"));
  return ad::mean_row_groups(ad::mul(z, z), Eigen::Index(cfg.patches_per_frame()));
}

/// Circular kernel-3 convolution over frames.
inline Var specific_video_temporal(Tape& t, ParamStore& s, Var spatial) {
  using detail::p;
  Var acc = ad::matmul_nt(ad::shift_rows(spatial, 1), p(t, s, "specific_video.temporal_w0"));
  acc = ad::add(acc, ad::matmul_nt(spatial, p(t, s, "specific_video.temporal_w1")));
  acc = ad::add(acc, ad::matmul_nt(ad::shift_rows(spatial, -1), p(t, s, "specific_video.temporal_w2")));
  return ad::gelu(ad::add_row(acc, p(t, s, "specific_video.temporal_b")));
}

inline Var specific_video(Tape& t, ParamStore& s, const ClipInputs& in, const EncoderConfig& cfg) {
  using detail::p;
  Var temporal = specific_video_temporal(t, s, specific_video_spatial(t, s, in, cfg));
  return ad::linear(temporal, p(t, s, "specific_video.proj_w"), p(t, s, "specific_video.proj_b"));
}

inline Var specific_audio(Tape& t, ParamStore& s, const ClipInputs& in) {
  using detail::p;
  Var h = ad::gelu(ad::linear(t.constant(in.audio_features), p(t, s, "specific_audio.w1"), p(t, s, "specific_audio.b1")));
  return ad::linear(h, p(t, s, "specific_audio.w2"), p(t, s, "specific_audio.b2"));
}

// ---------------------------------------------------------------------------
// Value-level entry points

inline void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string(what) + ": non-finite token values");
}

class EncoderBundle {
 public:
  EncoderBundle(EncoderConfig cfg, LoraConfig lora, std::uint64_t seed) : cfg_(cfg), lora_(lora) {
    std::mt19937_64 rng(seed);
    register_encoder_params(store_, cfg_, lora_, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  const LoraConfig& lora() const { return lora_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  FeatureSequence encode_shared_video(const synth::MediaClip& clip) {
    return run(clip, Modality::Video, Path::Shared, [&](Tape& t, const ClipInputs& in) {
      return shared_video(t, store_, in, cfg_);
    });
  }

  FeatureSequence encode_shared_audio(const synth::MediaClip& clip, bool with_lora = true) {
    LoraConfig l = lora_;
    l.enabled = lora_.enabled && with_lora;
    return run(clip, Modality::Audio, Path::Shared, [&](Tape& t, const ClipInputs& in) {
      return shared_audio(t, store_, in, l);
    });
  }

  FeatureSequence encode_specific_video(const synth::MediaClip& clip) {
    return run(clip, Modality::Video, Path::Specific, [&](Tape& t, const ClipInputs& in) {
      return specific_video(t, store_, in, cfg_);
    });
  }

  FeatureSequence encode_specific_audio(const synth::MediaClip& clip) {
    return run(clip, Modality::Audio, Path::Specific, [&](Tape& t, const ClipInputs& in) {
      return specific_audio(t, store_, in);
    });
  }

 private:
  template <class F>
  FeatureSequence run(const synth::MediaClip& clip, Modality m, Path p, F&& f) {
    Tape t;
    const ClipInputs in = prepare_inputs(clip, cfg_);
    FeatureSequence out{f(t, in).value(), m, p};
    require_finite(out.tokens, "encoder");
    return out;
  }

  EncoderConfig cfg_;
  LoraConfig lora_;
  ParamStore store_;
};

}  // namespace cad::enc

#endif  // CAD_ENCODERS_HPP
