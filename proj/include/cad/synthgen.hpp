#ifndef CAD_SYNTHGEN_HPP
#define CAD_SYNTHGEN_HPP

// Procedural audio-visual clips with planted forgery artifacts.
//
// A real clip is a proxy face (skin ellipse, eyes, a red mouth) drifting over
// a flat background, paired with a voiced tone whose loudness follows a
// per-frame envelope. The mouth opening in frame t equals the envelope value
// at t, so the two streams share one latent signal. Forgeries either damage
// one stream (blending seam in the frames, spectral spike plus quantization in
// the audio) or break the shared signal (the audio envelope is circularly
// shifted against the mouth).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cad/errors.hpp"
#include "cad/random.hpp"
#include "cad/tensor_io.hpp"

namespace cad::synth {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Category : int { Real = 0, VisualOnly, AudioOnly, BothSpecific, Misaligned, Combined };

inline constexpr std::array<Category, 6> kCategories = {Category::Real,         Category::VisualOnly,
                                                        Category::AudioOnly,    Category::BothSpecific,
                                                        Category::Misaligned,   Category::Combined};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::Real: return "REAL";
    case Category::VisualOnly: return "VISUAL_ONLY";
    case Category::AudioOnly: return "AUDIO_ONLY";
    case Category::BothSpecific: return "BOTH_SPECIFIC";
    case Category::Misaligned: return "MISALIGNED";
    case Category::Combined: return "COMBINED";
  }
  return "?";
}

inline Category parse_category(std::string_view text) {
  std::string upper(text);
  for (char& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (Category c : kCategories)
    if (to_string(c) == upper) return c;
  throw ArgumentError("unknown category '" + std::string(text) + "'");
}

inline bool is_modality_specific(Category c) {
  return c == Category::VisualOnly || c == Category::AudioOnly || c == Category::BothSpecific;
}

inline Category category_from_flags(bool visual, bool audio, bool misaligned) {
  if (misaligned) return (visual || audio) ? Category::Combined : Category::Misaligned;
  if (visual && audio) return Category::BothSpecific;
  if (visual) return Category::VisualOnly;
  if (audio) return Category::AudioOnly;
  return Category::Real;
}

struct ForgeryLabel {
  Category category = Category::Real;
  bool is_fake = false;
  std::map<std::string, double> artifact_params;

  bool has(const std::string& key) const { return artifact_params.count(key) != 0; }

  void refresh() {
    category = category_from_flags(has("visual_strength"), has("audio_strength"), has("offset_frames"));
    is_fake = category != Category::Real;
  }
};

inline void to_json(json& j, const ForgeryLabel& l) {
  j = json{{"category", std::string(to_string(l.category))}, {"is_fake", l.is_fake}, {"artifact_params", l.artifact_params}};
}

inline void from_json(const json& j, ForgeryLabel& l) {
  l.category = parse_category(j.at("category").get<std::string>());
  l.is_fake = j.at("is_fake").get<bool>();
  l.artifact_params = j.at("artifact_params").get<std::map<std::string, double>>();
  if (l.is_fake != (l.category != Category::Real)) throw FormatError("label: is_fake disagrees with category");
}

struct ClipShape {
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t samples = 8000;
  double sample_rate = 8000.0;

  std::size_t frame_values() const { return frames * height * width * channels; }
  std::size_t segment_length() const { return samples / frames; }

  void validate() const {
    if (frames < 2 || height < 4 || width < 4) throw ArgumentError("clip shape: need T >= 2 and H, W >= 4");
    if (channels != 3) throw ArgumentError("clip shape: only 3-channel frames are supported");
    if (samples == 0 || samples % frames != 0)
      throw ArgumentError("clip shape: audio length must be a positive multiple of the frame count");
    if (!(sample_rate > 0.0)) throw ArgumentError("clip shape: sample rate must be positive");
  }

  bool operator==(const ClipShape&) const = default;
};

inline void to_json(json& j, const ClipShape& s) {
  j = json{{"frames", s.frames}, {"height", s.height},   {"width", s.width},
           {"channels", s.channels}, {"samples", s.samples}, {"sample_rate", s.sample_rate}};
}

inline void from_json(const json& j, ClipShape& s) {
  j.at("frames").get_to(s.frames);
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("channels").get_to(s.channels);
  j.at("samples").get_to(s.samples);
  j.at("sample_rate").get_to(s.sample_rate);
}

struct MediaClip {
  ClipShape shape;
  std::vector<float> frames;    // T x H x W x C, values in [0, 1]
  std::vector<float> waveform;  // L samples, values in [-1, 1]
  ForgeryLabel label;
  std::string clip_id;
  std::uint64_t seed = 0;

  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return ((t * shape.height + y) * shape.width + x) * shape.channels + c;
  }
  float pixel(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const { return frames[index(t, y, x, c)]; }
};

struct GeneratorConfig {
  ClipShape shape;
  double spike_hz = 2800.0;
  double noise_level = 0.01;
  double motion_px = 1.5;  // face drift amplitude, in pixels of a 32-pixel frame
};

inline void to_json(json& j, const GeneratorConfig& g) {
  j = json{{"shape", g.shape}, {"spike_hz", g.spike_hz}, {"noise_level", g.noise_level}, {"motion_px", g.motion_px}};
}

inline void from_json(const json& j, GeneratorConfig& g) {
  j.at("shape").get_to(g.shape);
  j.at("spike_hz").get_to(g.spike_hz);
  j.at("noise_level").get_to(g.noise_level);
  j.at("motion_px").get_to(g.motion_px);
}

namespace detail {

enum Stream : std::uint64_t { kLatent = 1, kAudioNoise, kSeam, kSpike, kDataset, kClip };

inline double smoothstep_coverage(double signed_distance) {
  // Signed distance in pixels (negative inside) to an antialiased coverage in [0, 1].
  return std::clamp(0.5 - signed_distance, 0.0, 1.0);
}

struct Latent {
  std::vector<double> envelope;  // one value per frame, in [0.1, 0.9]
  double cx0 = 0, cy0 = 0, rx = 0, ry = 0;
  double motion_x = 0, motion_y = 0, motion_phase = 0;
  std::array<double, 3> skin{}, background{};
  double bg_gradient = 0;
  double f0 = 0, vibrato_phase = 0;
  std::array<double, 3> harmonics{};
};

}  // namespace detail

/// Seam energy: per pixel, the smaller of the squared residuals against the
/// 3x3 spatial median and against the 3-frame temporal median (circular in
/// time), averaged over interior pixels. Static edges have a large spatial
/// residual only and smooth motion a large temporal residual only, while
/// per-frame noise is large in both.
inline double seam_energy_score(const MediaClip& clip) {
  const auto& s = clip.shape;
  double acc = 0.0;
  std::size_t count = 0;
  std::array<float, 9> win{};
  for (std::size_t t = 0; t < s.frames; ++t) {
    const std::size_t tp = (t + s.frames - 1) % s.frames, tn = (t + 1) % s.frames;
    for (std::size_t y = 1; y + 1 < s.height; ++y)
      for (std::size_t x = 1; x + 1 < s.width; ++x)
        for (std::size_t c = 0; c < s.channels; ++c) {
          std::size_t k = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) win[k++] = clip.pixel(t, y + dy, x + dx, c);
          std::nth_element(win.begin(), win.begin() + 4, win.end());
          const float v = clip.pixel(t, y, x, c);
          const float a = clip.pixel(tp, y, x, c), b = clip.pixel(tn, y, x, c);
          const float tmed = std::max(std::min(a, b), std::min(std::max(a, b), v));
          const double rs = double(v) - win[4], rt = double(v) - tmed;
          acc += std::min(rs * rs, rt * rt);
          ++count;
        }
  }
  return count ? acc / double(count) : 0.0;
}

/// |X(f)| of the whole waveform at frequency `hz` (Hz), by direct summation.
inline double spectrum_magnitude(std::span<const float> wave, double sample_rate, double hz) {
  const double w = 2.0 * std::numbers::pi * hz / sample_rate;
  // Rotating phasor; renormalized every block to bound drift.
  std::complex<double> acc(0.0, 0.0), rot(1.0, 0.0);
  const std::complex<double> step = std::polar(1.0, -w);
  for (std::size_t n = 0; n < wave.size(); ++n) {
    acc += double(wave[n]) * rot;
    rot *= step;
    if ((n & 255u) == 255u) rot = std::polar(1.0, -w * double(n + 1));
  }
  return std::abs(acc);
}

/// Ratio of the spectrum at `spike_hz` to the median spectrum in a +-200 Hz
/// band around it (excluding +-3 Hz).
inline double spectral_spike_score(const MediaClip& clip, double spike_hz) {
  const double peak = spectrum_magnitude(clip.waveform, clip.shape.sample_rate, spike_hz);
  std::vector<double> band;
  for (int df = -200; df <= 200; df += 2) {
    if (std::abs(df) <= 3) continue;
    band.push_back(spectrum_magnitude(clip.waveform, clip.shape.sample_rate, spike_hz + df));
  }
  std::nth_element(band.begin(), band.begin() + band.size() / 2, band.end());
  const double median = band[band.size() / 2];
  return peak / std::max(median, 1e-12);
}

struct DetectorThresholds {
  double seam_energy = 6e-5;
  double spectral_spike = 20.0;
};

inline bool seam_detector_flags(const MediaClip& clip, const DetectorThresholds& th = {}) {
  return seam_energy_score(clip) > th.seam_energy;
}

inline bool spike_detector_flags(const MediaClip& clip, double spike_hz, const DetectorThresholds& th = {}) {
  return spectral_spike_score(clip, spike_hz) > th.spectral_spike;
}

/// Mouth-aperture proxy measured from the pixels: red-dominance mass per frame.
inline std::vector<double> mouth_aperture_series(const MediaClip& clip) {
  const auto& s = clip.shape;
  std::vector<double> out(s.frames, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        const double rg = double(clip.pixel(t, y, x, 0)) - double(clip.pixel(t, y, x, 1));
        out[t] += std::max(0.0, rg - 0.3);
      }
  return out;
}

/// RMS of each of the T aligned audio segments.
inline std::vector<double> audio_envelope_series(const MediaClip& clip) {
  const std::size_t seg = clip.shape.segment_length();
  std::vector<double> out(clip.shape.frames, 0.0);
  for (std::size_t t = 0; t < clip.shape.frames; ++t) {
    double acc = 0.0;
    for (std::size_t n = 0; n < seg; ++n) {
      const double v = clip.waveform[t * seg + n];
      acc += v * v;
    }
    out[t] = std::sqrt(acc / double(seg));
  }
  return out;
}

/// Pearson correlation at lag 0.
inline double normalized_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ArgumentError("normalized_correlation: size mismatch");
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

class Generator {
 public:
  explicit Generator(GeneratorConfig config = {}) : config_(config) { config_.shape.validate(); }

  const GeneratorConfig& config() const { return config_; }

  MediaClip generate_real(std::uint64_t seed) const {
    const auto lat = latent(seed);
    MediaClip clip;
    clip.shape = config_.shape;
    clip.seed = seed;
    clip.clip_id = "seed_" + std::to_string(seed);
    clip.frames = render_frames(lat);
    clip.waveform = synth_audio(lat, seed, 0);
    clip.label.refresh();
    return clip;
  }

  MediaClip inject_visual_artifact(MediaClip clip, double strength) const {
    check_strength(strength);
    check_shape(clip);
    if (clip.label.has("visual_strength")) throw ArgumentError("visual artifact already injected");
    const auto lat = latent(clip.seed);
    const auto& s = config_.shape;
    const double sx = double(s.width) / 32.0, sy = double(s.height) / 32.0;
    const double brightness = 0.04 + 0.08 * strength;
    const double seam_noise = 0.08 + 0.3 * strength;
    const double inner_noise = 0.03 * strength;
    std::mt19937_64 rng(derive_seed(clip.seed, detail::kSeam));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t t = 0; t < s.frames; ++t) {
      const auto [cx, cy] = face_center(lat, t);
      const double x0 = (cx - 0.9 * lat.rx) * sx, x1 = (cx + 0.9 * lat.rx) * sx;
      const double y0 = (cy - 0.8 * lat.ry) * sy, y1 = (cy + 0.8 * lat.ry) * sy;
      const auto ix0 = long(std::floor(x0)), ix1 = long(std::floor(x1));
      const auto iy0 = long(std::floor(y0)), iy1 = long(std::floor(y1));
      for (long y = std::max(0L, iy0); y <= std::min(long(s.height) - 1, iy1); ++y)
        for (long x = std::max(0L, ix0); x <= std::min(long(s.width) - 1, ix1); ++x) {
          const bool on_border = (y == iy0 || y == iy1 || x == ix0 || x == ix1);
          for (std::size_t c = 0; c < s.channels; ++c) {
            const double n = u(rng);
            float& px = clip.frames[clip.index(t, std::size_t(y), std::size_t(x), c)];
            const double v = double(px) + brightness + (on_border ? seam_noise : inner_noise) * n;
            px = float(std::clamp(v, 0.0, 1.0));
          }
        }
    }
    clip.label.artifact_params["visual_strength"] = strength;
    clip.label.artifact_params["seam_brightness"] = brightness;
    clip.label.artifact_params["seam_noise"] = seam_noise;
    clip.label.refresh();
    return clip;
  }

  MediaClip inject_audio_artifact(MediaClip clip, double strength) const {
    check_strength(strength);
    check_shape(clip);
    if (clip.label.has("audio_strength")) throw ArgumentError("audio artifact already injected");
    apply_audio_artifact(clip, strength);
    clip.label.artifact_params["audio_strength"] = strength;
    clip.label.artifact_params["spike_hz"] = config_.spike_hz;
    clip.label.artifact_params["spike_amplitude"] = spike_amplitude(strength);
    clip.label.artifact_params["quant_bits"] = double(quant_bits(strength));
    clip.label.refresh();
    return clip;
  }

  /// Resynthesizes the audio with its envelope circularly delayed by
  /// `offset_frames` against the frames. Pixels are untouched; a previously
  /// injected audio artifact is re-applied with the same parameters.
  MediaClip inject_misalignment(MediaClip clip, int offset_frames) const {
    check_shape(clip);
    const int half = int(config_.shape.frames / 2);
    if (offset_frames == 0 || std::abs(offset_frames) > half)
      throw ArgumentError("misalignment offset must satisfy 1 <= |offset| <= " + std::to_string(half));
    if (clip.label.has("offset_frames")) throw ArgumentError("clip is already misaligned");
    const auto lat = latent(clip.seed);
    clip.waveform = synth_audio(lat, clip.seed, offset_frames);
    if (clip.label.has("audio_strength")) apply_audio_artifact(clip, clip.label.artifact_params.at("audio_strength"));
    clip.label.artifact_params["offset_frames"] = offset_frames;
    clip.label.refresh();
    return clip;
  }

  /// Envelope driving both the mouth and the audio loudness of a real clip.
  std::vector<double> envelope(std::uint64_t seed) const { return latent(seed).envelope; }

  static double spike_amplitude(double strength) { return 0.03 + 0.1 * strength; }
  static int quant_bits(double strength) { return int(std::lround(10.0 - 6.0 * strength)); }

 private:
  static void check_strength(double strength) {
    if (!(strength > 0.0 && strength <= 1.0)) throw ArgumentError("artifact strength must lie in (0, 1]");
  }

  void check_shape(const MediaClip& clip) const {
    if (!(clip.shape == config_.shape) || clip.frames.size() != config_.shape.frame_values() ||
        clip.waveform.size() != config_.shape.samples)
      throw ArgumentError("clip shape does not match the generator configuration");
  }

  detail::Latent latent(std::uint64_t seed) const {
    std::mt19937_64 rng(derive_seed(seed, detail::kLatent));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    detail::Latent l;
    const std::size_t T = config_.shape.frames;
    std::vector<double> raw(T);
    for (double& v : raw) v = uni(0.1, 0.9);
    l.envelope.resize(T);
    for (std::size_t t = 0; t < T; ++t)
      l.envelope[t] = 0.25 * raw[(t + T - 1) % T] + 0.5 * raw[t] + 0.25 * raw[(t + 1) % T];
    l.cx0 = uni(14.0, 18.0);
    l.cy0 = uni(14.0, 17.0);
    l.rx = uni(8.0, 10.0);
    l.ry = uni(10.0, 12.0);
    l.motion_x = config_.motion_px * uni(0.5, 1.0);
    l.motion_y = config_.motion_px * uni(0.2, 0.6);
    l.motion_phase = uni(0.0, 2.0 * std::numbers::pi);
    l.skin[0] = uni(0.7, 0.85);
    l.skin[1] = l.skin[0] - uni(0.1, 0.2);
    l.skin[2] = l.skin[1] - uni(0.05, 0.15);
    l.background[1] = uni(0.2, 0.6);
    l.background[0] = l.background[1] - uni(0.0, 0.1);
    l.background[2] = uni(0.2, 0.7);
    l.bg_gradient = uni(-0.1, 0.1);
    l.f0 = uni(140.0, 260.0);
    l.vibrato_phase = uni(0.0, 2.0 * std::numbers::pi);
    l.harmonics = {0.5 * uni(0.9, 1.1), 0.22 * uni(0.8, 1.2), 0.1 * uni(0.8, 1.2)};
    return l;
  }

  std::pair<double, double> face_center(const detail::Latent& l, std::size_t t) const {
    const double phase = 2.0 * std::numbers::pi * double(t) / double(config_.shape.frames) + l.motion_phase;
    return {l.cx0 + l.motion_x * std::sin(phase), l.cy0 + l.motion_y * std::cos(phase)};
  }

  std::vector<float> render_frames(const detail::Latent& l) const {
    const auto& s = config_.shape;
    std::vector<float> frames(s.frame_values());
    // Geometry is authored on a 32 x 32 canvas and scaled to the frame size.
    const double sx = double(s.width) / 32.0, sy = double(s.height) / 32.0;
    const std::array<double, 3> mouth_color{0.7, 0.08, 0.15};
    const std::array<double, 3> eye_color{0.1, 0.1, 0.15};
    constexpr int kSub = 3;
    for (std::size_t t = 0; t < s.frames; ++t) {
      const auto [cx, cy] = face_center(l, t);
      const double mouth_cy = cy + 0.45 * l.ry;
      const double mouth_hw = 0.5 * l.rx;
      const double mouth_hh = 0.4 + 4.0 * l.envelope[t];
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x) {
          double face_a = 0, mouth_a = 0, eye_a = 0;
          for (int sy_i = 0; sy_i < kSub; ++sy_i)
            for (int sx_i = 0; sx_i < kSub; ++sx_i) {
              const double px = (double(x) + (sx_i + 0.5) / kSub) / sx;
              const double py = (double(y) + (sy_i + 0.5) / kSub) / sy;
              const double fx = (px - cx) / l.rx, fy = (py - cy) / l.ry;
              if (fx * fx + fy * fy <= 1.0) {
                face_a += 1;
                const double mx = (px - cx) / mouth_hw, my = (py - mouth_cy) / mouth_hh;
                if (mx * mx + my * my <= 1.0) mouth_a += 1;
                for (double ex : {-0.4 * l.rx, 0.4 * l.rx}) {
                  const double dx = px - (cx + ex), dy = py - (cy - 0.3 * l.ry);
                  if (dx * dx + dy * dy <= 1.5 * 1.5) eye_a += 1;
                }
              }
            }
          const double n = kSub * kSub;
          face_a /= n;
          mouth_a /= n;
          eye_a /= n;
          for (std::size_t c = 0; c < 3; ++c) {
            const double bg = l.background[c] + l.bg_gradient * (double(y) / double(s.height) - 0.5);
            double v = bg * (1.0 - face_a) + l.skin[c] * face_a;
            v = v * (1.0 - mouth_a) + mouth_color[c] * mouth_a;
            v = v * (1.0 - eye_a) + eye_color[c] * eye_a;
            frames[((t * s.height + y) * s.width + x) * 3 + c] = float(std::clamp(v, 0.0, 1.0));
          }
        }
    }
    return frames;
  }

  std::vector<float> synth_audio(const detail::Latent& l, std::uint64_t seed, int offset_frames) const {
    const auto& s = config_.shape;
    const std::size_t T = s.frames, L = s.samples, seg = s.segment_length();
    std::vector<double> env(T);
    for (std::size_t t = 0; t < T; ++t) {
      const long src = (long(t) - offset_frames) % long(T);
      env[t] = l.envelope[std::size_t(src < 0 ? src + long(T) : src)];
    }
    std::mt19937_64 rng(derive_seed(seed, detail::kAudioNoise));
    std::normal_distribution<double> noise(0.0, config_.noise_level);
    std::vector<float> wave(L);
    double phase = 0.0;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t n = 0; n < L; ++n) {
      // Envelope interpolated linearly between segment centres, circularly.
      const double pos = (double(n) + 0.5) / double(seg) - 0.5;
      const double base = std::floor(pos);
      const double frac = pos - base;
      const long i0 = ((long(base) % long(T)) + long(T)) % long(T);
      const double e = (1.0 - frac) * env[std::size_t(i0)] + frac * env[std::size_t((i0 + 1) % long(T))];
      const double f = l.f0 * (1.0 + 0.015 * std::sin(two_pi * 3.0 * double(n) / double(L) + l.vibrato_phase));
      phase += two_pi * f / s.sample_rate;
      const double voiced = l.harmonics[0] * std::sin(phase) + l.harmonics[1] * std::sin(2.0 * phase) +
                            l.harmonics[2] * std::sin(3.0 * phase);
      wave[n] = float(std::clamp(e * voiced + noise(rng), -1.0, 1.0));
    }
    return wave;
  }

  void apply_audio_artifact(MediaClip& clip, double strength) const {
    std::mt19937_64 rng(derive_seed(clip.seed, detail::kSpike));
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    const double spike_phase = u(rng);
    const double amp = spike_amplitude(strength);
    const double step = 2.0 / double(1 << quant_bits(strength));
    const double w = 2.0 * std::numbers::pi * config_.spike_hz / config_.shape.sample_rate;
    for (std::size_t n = 0; n < clip.waveform.size(); ++n) {
      double v = double(clip.waveform[n]) + amp * std::sin(w * double(n) + spike_phase);
      v = step * std::round(v / step);
      clip.waveform[n] = float(std::clamp(v, -1.0, 1.0));
    }
  }

  GeneratorConfig config_;
};

// ---------------------------------------------------------------------------
// Datasets

inline constexpr const char* kManifestVersion = "cad-manifest/1";
inline constexpr const char* kTensorMetaVersion = "cad-tensor/1";

struct DatasetConfig {
  GeneratorConfig generator;
  std::map<Category, std::size_t> counts;
  std::uint64_t seed = 7;
  double visual_strength_min = 0.3, visual_strength_max = 1.0;
  double audio_strength_min = 0.3, audio_strength_max = 1.0;
  int offset_min = 3, offset_max = 8;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [c, k] : counts) n += k;
    return n;
  }

  /// `total` clips spread over the six categories, differing by at most one.
  static std::map<Category, std::size_t> balanced_counts(std::size_t total) {
    std::map<Category, std::size_t> counts;
    for (std::size_t i = 0; i < kCategories.size(); ++i)
      counts[kCategories[i]] = total / kCategories.size() + (i < total % kCategories.size() ? 1 : 0);
    return counts;
  }

  void validate() const {
    generator.shape.validate();
    if (total() == 0) throw ArgumentError("dataset config: total clip count is zero");
    auto check_range = [](double lo, double hi, const char* what) {
      if (!(lo > 0.0 && lo <= hi && hi <= 1.0))
        throw ArgumentError(std::string("dataset config: ") + what + " strength range must lie in (0, 1]");
    };
    check_range(visual_strength_min, visual_strength_max, "visual");
    check_range(audio_strength_min, audio_strength_max, "audio");
    const int half = int(generator.shape.frames / 2);
    if (offset_min < 1 || offset_min > offset_max || offset_max > half)
      throw ArgumentError("dataset config: offset range must satisfy 1 <= min <= max <= T/2");
  }
};

inline void to_json(json& j, const DatasetConfig& d) {
  json counts = json::object();
  for (const auto& [c, k] : d.counts) counts[std::string(to_string(c))] = k;
  j = json{{"generator", d.generator},
           {"counts", counts},
           {"seed", d.seed},
           {"visual_strength", {d.visual_strength_min, d.visual_strength_max}},
           {"audio_strength", {d.audio_strength_min, d.audio_strength_max}},
           {"offset_frames", {d.offset_min, d.offset_max}}};
}

inline void from_json(const json& j, DatasetConfig& d) {
  j.at("generator").get_to(d.generator);
  d.counts.clear();
  for (const auto& [k, v] : j.at("counts").items()) d.counts[parse_category(k)] = v.get<std::size_t>();
  j.at("seed").get_to(d.seed);
  d.visual_strength_min = j.at("visual_strength").at(0);
  d.visual_strength_max = j.at("visual_strength").at(1);
  d.audio_strength_min = j.at("audio_strength").at(0);
  d.audio_strength_max = j.at("audio_strength").at(1);
  d.offset_min = j.at("offset_frames").at(0);
  d.offset_max = j.at("offset_frames").at(1);
}

inline std::string clip_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05zu", index);
  return buf;
}

/// Clip `index` of a dataset; a pure function of (config, category, index).
inline MediaClip make_dataset_clip(const Generator& gen, const DatasetConfig& cfg, Category category,
                                   std::size_t index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, detail::kDataset, index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto visual = [&] { return cfg.visual_strength_min + (cfg.visual_strength_max - cfg.visual_strength_min) * u(rng); };
  auto audio = [&] { return cfg.audio_strength_min + (cfg.audio_strength_max - cfg.audio_strength_min) * u(rng); };
  auto offset = [&] {
    std::uniform_int_distribution<int> mag(cfg.offset_min, cfg.offset_max);
    const int m = mag(rng);
    return u(rng) < 0.5 ? -m : m;
  };

  MediaClip clip = gen.generate_real(derive_seed(cfg.seed, detail::kClip, index));
  switch (category) {
    case Category::Real: break;
    case Category::VisualOnly: clip = gen.inject_visual_artifact(std::move(clip), visual()); break;
    case Category::AudioOnly: clip = gen.inject_audio_artifact(std::move(clip), audio()); break;
    case Category::BothSpecific: {
      const double v = visual(), a = audio();
      clip = gen.inject_audio_artifact(gen.inject_visual_artifact(std::move(clip), v), a);
      break;
    }
    case Category::Misaligned: clip = gen.inject_misalignment(std::move(clip), offset()); break;
    case Category::Combined: {
      clip = gen.inject_misalignment(std::move(clip), offset());
      if (u(rng) < 0.5)
        clip = gen.inject_visual_artifact(std::move(clip), visual());
      else
        clip = gen.inject_audio_artifact(std::move(clip), audio());
      break;
    }
  }
  clip.clip_id = clip_id_for(index);
  return clip;
}

struct ManifestEntry {
  std::string clip_id;
  std::string frames_file;
  std::string audio_file;
  std::string meta_file;
  ForgeryLabel label;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::string format_version = kManifestVersion;
  json generator_config;
  std::vector<ManifestEntry> entries;
  fs::path root;  // directory holding manifest.json; not serialized

  const ManifestEntry& find(const std::string& clip_id) const {
    for (const auto& e : entries)
      if (e.clip_id == clip_id) return e;
    throw NotFoundError("clip '" + clip_id + "' is not in the manifest");
  }

  std::size_t count(Category c) const {
    return std::size_t(std::count_if(entries.begin(), entries.end(),
                                     [c](const ManifestEntry& e) { return e.label.category == c; }));
  }
};

inline json manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back(json{{"clip_id", e.clip_id},
                           {"frames", e.frames_file},
                           {"audio", e.audio_file},
                           {"meta", e.meta_file},
                           {"label", e.label},
                           {"seed", e.seed}});
  }
  return json{{"format_version", m.format_version}, {"generator_config", m.generator_config}, {"entries", entries}};
}

inline json tensor_meta(const MediaClip& clip, const ManifestEntry& e) {
  const auto& s = clip.shape;
  return json{{"format_version", kTensorMetaVersion},
              {"clip_id", clip.clip_id},
              {"frames", {{"file", e.frames_file}, {"dtype", "float32"}, {"endianness", "little"},
                          {"layout", "THWC"}, {"shape", {s.frames, s.height, s.width, s.channels}}}},
              {"audio", {{"file", e.audio_file}, {"dtype", "float32"}, {"endianness", "little"},
                         {"shape", {s.samples}}, {"sample_rate", s.sample_rate}}}};
}

inline void write_clip(const fs::path& dir, const MediaClip& clip, ManifestEntry& entry) {
  entry.clip_id = clip.clip_id;
  entry.frames_file = clip.clip_id + ".frames.f32";
  entry.audio_file = clip.clip_id + ".audio.f32";
  entry.meta_file = clip.clip_id + ".meta.json";
  entry.label = clip.label;
  entry.seed = clip.seed;
  io::write_f32(dir / entry.frames_file, clip.frames);
  io::write_f32(dir / entry.audio_file, clip.waveform);
  io::write_json(dir / entry.meta_file, tensor_meta(clip, entry));
}

/// Writes every clip plus `manifest.json` into `out_dir`.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  io::ensure_directory(out_dir);
  const Generator gen(cfg.generator);
  DatasetManifest m;
  m.generator_config = cfg;
  m.root = out_dir;
  std::size_t index = 0;
  for (Category c : kCategories) {
    const auto it = cfg.counts.find(c);
    const std::size_t n = it == cfg.counts.end() ? 0 : it->second;
    for (std::size_t k = 0; k < n; ++k, ++index) {
      const MediaClip clip = make_dataset_clip(gen, cfg, c, index);
      ManifestEntry e;
      write_clip(out_dir, clip, e);
      m.entries.push_back(std::move(e));
    }
  }
  io::write_json(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  const json j = io::read_json(path);
  io::require_version(j, kManifestVersion, path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  m.generator_config = j.at("generator_config");
  std::set<std::string> seen;
  try {
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.clip_id = je.at("clip_id").get<std::string>();
      e.frames_file = je.at("frames").get<std::string>();
      e.audio_file = je.at("audio").get<std::string>();
      e.meta_file = je.at("meta").get<std::string>();
      e.label = je.at("label").get<ForgeryLabel>();
      e.seed = je.at("seed").get<std::uint64_t>();
      if (!seen.insert(e.clip_id).second) throw FormatError("duplicate clip_id '" + e.clip_id + "' in manifest");
      for (const auto* f : {&e.frames_file, &e.audio_file, &e.meta_file})
        if (!fs::exists(m.root / *f)) throw IoError("manifest references missing file " + (m.root / *f).string());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
  return m;
}

inline MediaClip load_clip(const DatasetManifest& m, const ManifestEntry& e) {
  const json meta = io::read_json(m.root / e.meta_file);
  io::require_version(meta, kTensorMetaVersion, e.meta_file);
  MediaClip clip;
  try {
    const auto fshape = meta.at("frames").at("shape").get<std::vector<std::size_t>>();
    const auto ashape = meta.at("audio").at("shape").get<std::vector<std::size_t>>();
    if (fshape.size() != 4 || ashape.size() != 1) throw FormatError(e.meta_file + ": bad tensor rank");
    clip.shape.frames = fshape[0];
    clip.shape.height = fshape[1];
    clip.shape.width = fshape[2];
    clip.shape.channels = fshape[3];
    clip.shape.samples = ashape[0];
    clip.shape.sample_rate = meta.at("audio").at("sample_rate").get<double>();
  } catch (const json::exception& ex) {
    throw FormatError(e.meta_file + ": " + ex.what());
  }
  clip.frames = io::read_f32(m.root / e.frames_file, clip.shape.frame_values());
  clip.waveform = io::read_f32(m.root / e.audio_file, clip.shape.samples);
  clip.label = e.label;
  clip.clip_id = e.clip_id;
  clip.seed = e.seed;
  return clip;
}

inline std::vector<MediaClip> load_all(const DatasetManifest& m) {
  std::vector<MediaClip> clips;
  clips.reserve(m.entries.size());
  for (const auto& e : m.entries) clips.push_back(load_clip(m, e));
  return clips;
}

}  // namespace cad::synth

#endif  // CAD_SYNTHGEN_HPP
