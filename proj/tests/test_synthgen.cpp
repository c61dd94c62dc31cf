#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include <unistd.h>

#include "cad/synthgen.hpp"

using namespace cad;
using namespace cad::synth;
namespace fs = std::filesystem;

namespace {

// Independent Pearson correlation, two-pass in long double.
double oracle_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  long double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return double(num / std::sqrt(da * db));
}

// Direct DFT magnitude with a fresh cos/sin per sample.
double oracle_dft_magnitude(const std::vector<float>& w, double fs_hz, double hz) {
  long double re = 0, im = 0;
  for (std::size_t n = 0; n < w.size(); ++n) {
    const long double ph = 2.0L * std::numbers::pi_v<long double> * hz * n / fs_hz;
    re += w[n] * std::cos(ph);
    im -= w[n] * std::sin(ph);
  }
  return double(std::sqrt(re * re + im * im));
}

double mean_frame_l2_delta(const MediaClip& a, const MediaClip& b) {
  const std::size_t per = a.shape.height * a.shape.width * a.shape.channels;
  double total = 0;
  for (std::size_t t = 0; t < a.shape.frames; ++t) {
    double acc = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = double(a.frames[t * per + i]) - b.frames[t * per + i];
      acc += d * d;
    }
    total += std::sqrt(acc);
  }
  return total / double(a.shape.frames);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cad_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void expect_ranges(const MediaClip& c) {
  for (float v : c.frames) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  for (float v : c.waveform) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
}

}  // namespace

TEST(Category, NamesRoundTrip) {
  for (Category c : kCategories) EXPECT_EQ(parse_category(to_string(c)), c);
  EXPECT_EQ(parse_category("visual_only"), Category::VisualOnly);
  EXPECT_THROW(parse_category("DEEPFAKE"), ArgumentError);
}

TEST(Category, FlagComposition) {
  EXPECT_EQ(category_from_flags(false, false, false), Category::Real);
  EXPECT_EQ(category_from_flags(true, false, false), Category::VisualOnly);
  EXPECT_EQ(category_from_flags(false, true, false), Category::AudioOnly);
  EXPECT_EQ(category_from_flags(true, true, false), Category::BothSpecific);
  EXPECT_EQ(category_from_flags(false, false, true), Category::Misaligned);
  EXPECT_EQ(category_from_flags(true, false, true), Category::Combined);
  EXPECT_EQ(category_from_flags(false, true, true), Category::Combined);
}

TEST(GenerateReal, DeterministicAndSeedSensitive) {
  Generator g;
  const auto a = g.generate_real(0), b = g.generate_real(0), c = g.generate_real(1);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.waveform, b.waveform);
  EXPECT_NE(a.frames, c.frames);
  EXPECT_NE(a.waveform, c.waveform);
}

TEST(GenerateReal, DefaultShapeRangesAndLabel) {
  Generator g;
  const auto c = g.generate_real(3);
  EXPECT_EQ(c.shape.frames, 16u);
  EXPECT_EQ(c.frames.size(), 16u * 32 * 32 * 3);
  EXPECT_EQ(c.waveform.size(), 8000u);
  expect_ranges(c);
  EXPECT_EQ(c.label.category, Category::Real);
  EXPECT_FALSE(c.label.is_fake);
  EXPECT_TRUE(c.label.artifact_params.empty());
}

TEST(GenerateReal, MouthTracksAudioEnvelope) {
  Generator g;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto c = g.generate_real(seed);
    const auto m = mouth_aperture_series(c), e = audio_envelope_series(c);
    const double r = oracle_correlation(m, e);
    EXPECT_GE(r, 0.9) << "seed " << seed;
    EXPECT_NEAR(normalized_correlation(m, e), r, 1e-9);
  }
}

TEST(InjectVisual, RejectsOutOfRangeStrength) {
  Generator g;
  const auto c = g.generate_real(0);
  EXPECT_THROW(g.inject_visual_artifact(c, 0.0), ArgumentError);
  EXPECT_THROW(g.inject_visual_artifact(c, -0.1), ArgumentError);
  EXPECT_THROW(g.inject_visual_artifact(c, 1.01), ArgumentError);
  EXPECT_NO_THROW(g.inject_visual_artifact(c, 1.0));
}

TEST(InjectVisual, AudioUntouchedAndLabelled) {
  Generator g;
  const auto c = g.generate_real(5);
  const auto v = g.inject_visual_artifact(c, 0.6);
  EXPECT_EQ(v.waveform, c.waveform);
  EXPECT_NE(v.frames, c.frames);
  EXPECT_EQ(v.label.category, Category::VisualOnly);
  EXPECT_TRUE(v.label.is_fake);
  EXPECT_DOUBLE_EQ(v.label.artifact_params.at("visual_strength"), 0.6);
  expect_ranges(v);
  EXPECT_THROW(g.inject_visual_artifact(v, 0.5), ArgumentError);
}

TEST(InjectVisual, DeltaGrowsWithStrength) {
  Generator g;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto c = g.generate_real(seed);
    const double d2 = mean_frame_l2_delta(c, g.inject_visual_artifact(c, 0.2));
    const double d5 = mean_frame_l2_delta(c, g.inject_visual_artifact(c, 0.5));
    const double d9 = mean_frame_l2_delta(c, g.inject_visual_artifact(c, 0.9));
    EXPECT_LT(d2, d5);
    EXPECT_LT(d5, d9);
  }
}

TEST(InjectAudio, FramesUntouchedAndSpikePresent) {
  Generator g;
  const double hz = g.config().spike_hz;
  for (std::uint64_t seed : {0u, 11u, 42u}) {
    const auto c = g.generate_real(seed);
    const auto a = g.inject_audio_artifact(c, 0.5);
    EXPECT_EQ(a.frames, c.frames);
    EXPECT_EQ(a.label.category, Category::AudioOnly);
    EXPECT_TRUE(a.label.is_fake);
    expect_ranges(a);
    const double clean = oracle_dft_magnitude(c.waveform, c.shape.sample_rate, hz);
    const double dirty = oracle_dft_magnitude(a.waveform, a.shape.sample_rate, hz);
    EXPECT_GE(dirty, 3.0 * clean) << "seed " << seed;
    EXPECT_NEAR(spectrum_magnitude(a.waveform, a.shape.sample_rate, hz), dirty, 1e-6 * dirty);
  }
}

TEST(InjectAudio, DeterministicAndRangeChecked) {
  Generator g;
  const auto c = g.generate_real(9);
  EXPECT_EQ(g.inject_audio_artifact(c, 0.4).waveform, g.inject_audio_artifact(c, 0.4).waveform);
  EXPECT_NE(g.inject_audio_artifact(c, 0.4).waveform, g.inject_audio_artifact(c, 0.8).waveform);
  EXPECT_THROW(g.inject_audio_artifact(c, 0.0), ArgumentError);
  EXPECT_THROW(g.inject_audio_artifact(c, 2.0), ArgumentError);
}

TEST(InjectMisalignment, OffsetBounds) {
  Generator g;
  const auto c = g.generate_real(0);
  EXPECT_THROW(g.inject_misalignment(c, 0), ArgumentError);
  EXPECT_THROW(g.inject_misalignment(c, 9), ArgumentError);
  EXPECT_THROW(g.inject_misalignment(c, -9), ArgumentError);
  EXPECT_THROW(g.inject_misalignment(c, 16), ArgumentError);
  EXPECT_NO_THROW(g.inject_misalignment(c, 8));
  EXPECT_NO_THROW(g.inject_misalignment(c, -8));
}

TEST(InjectMisalignment, PixelsUntouchedCorrelationBroken) {
  Generator g;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = g.generate_real(seed);
    const auto m = g.inject_misalignment(c, 4);
    EXPECT_EQ(m.frames, c.frames);
    EXPECT_EQ(m.label.category, Category::Misaligned);
    EXPECT_DOUBLE_EQ(m.label.artifact_params.at("offset_frames"), 4.0);
    expect_ranges(m);
    EXPECT_LT(oracle_correlation(mouth_aperture_series(m), audio_envelope_series(m)), 0.5) << "seed " << seed;
  }
}

TEST(InjectMisalignment, ShiftedAudioMatchesShiftedEnvelope) {
  // The delayed audio tracks the envelope of frame t - offset.
  Generator g;
  const auto c = g.generate_real(4);
  const auto m = g.inject_misalignment(c, 3);
  const auto env = g.envelope(4);
  const auto audio = audio_envelope_series(m);
  std::vector<double> shifted(env.size());
  for (std::size_t t = 0; t < env.size(); ++t) shifted[t] = env[(t + env.size() - 3) % env.size()];
  EXPECT_GE(oracle_correlation(shifted, audio), 0.9);
}

TEST(InjectMisalignment, CombinedKeepsAudioArtifact) {
  Generator g;
  const auto c = g.generate_real(6);
  const auto a = g.inject_audio_artifact(c, 0.7);
  const auto both = g.inject_misalignment(a, -5);
  EXPECT_EQ(both.label.category, Category::Combined);
  EXPECT_TRUE(spike_detector_flags(both, g.config().spike_hz));
  const auto other_order = g.inject_audio_artifact(g.inject_misalignment(c, -5), 0.7);
  EXPECT_EQ(both.waveform, other_order.waveform);
}

TEST(Detectors, FlagOnlyTheirModality) {
  Generator g;
  const double hz = g.config().spike_hz;
  for (std::uint64_t seed = 100; seed < 112; ++seed) {
    const auto c = g.generate_real(seed);
    EXPECT_FALSE(seam_detector_flags(c)) << seed;
    EXPECT_FALSE(spike_detector_flags(c, hz)) << seed;
    const auto v = g.inject_visual_artifact(c, 0.3);
    EXPECT_TRUE(seam_detector_flags(v)) << seed;
    EXPECT_FALSE(spike_detector_flags(v, hz)) << seed;
    const auto a = g.inject_audio_artifact(c, 0.3);
    EXPECT_FALSE(seam_detector_flags(a)) << seed;
    EXPECT_TRUE(spike_detector_flags(a, hz)) << seed;
  }
}

TEST(Detectors, MisalignedClipsPassBoth) {
  Generator g;
  const double hz = g.config().spike_hz;
  for (std::uint64_t seed = 200; seed < 212; ++seed)
    for (int off : {-8, -3, 1, 4, 8}) {
      const auto m = g.inject_misalignment(g.generate_real(seed), off);
      EXPECT_FALSE(seam_detector_flags(m)) << seed << " " << off;
      EXPECT_FALSE(spike_detector_flags(m, hz)) << seed << " " << off;
    }
}

TEST(Dataset, ZeroCountRejected) {
  TempDir dir("zero");
  DatasetConfig cfg;
  EXPECT_THROW(build_dataset(cfg, dir.path), ArgumentError);
  cfg.counts[Category::Real] = 0;
  EXPECT_THROW(build_dataset(cfg, dir.path), ArgumentError);
}

TEST(Dataset, UnwritableDirectory) {
  TempDir dir("unwritable");
  fs::create_directories(dir.path.parent_path());
  { std::ofstream(dir.path) << "file in the way"; }
  DatasetConfig cfg;
  cfg.counts[Category::Real] = 1;
  EXPECT_THROW(build_dataset(cfg, dir.path / "sub"), IoError);
  fs::remove(dir.path);
}

TEST(Dataset, CountsUniqueIdsAndByteIdenticalRebuild) {
  TempDir a("ds_a"), b("ds_b");
  DatasetConfig cfg;
  cfg.seed = 7;
  cfg.counts = {{Category::Real, 10}, {Category::Misaligned, 10}};
  const auto m = build_dataset(cfg, a.path);
  ASSERT_EQ(m.entries.size(), 20u);
  std::set<std::string> ids;
  for (const auto& e : m.entries) ids.insert(e.clip_id);
  EXPECT_EQ(ids.size(), 20u);
  EXPECT_EQ(m.count(Category::Real), 10u);
  EXPECT_EQ(m.count(Category::Misaligned), 10u);
  for (const auto& e : m.entries) {
    if (e.label.category == Category::Misaligned) {
      EXPECT_NE(e.label.artifact_params.at("offset_frames"), 0.0);
    }
  }

  build_dataset(cfg, b.path);
  EXPECT_EQ(slurp(a.path / "manifest.json"), slurp(b.path / "manifest.json"));
  for (const auto& entry : fs::directory_iterator(a.path))
    EXPECT_EQ(slurp(entry.path()), slurp(b.path / entry.path().filename())) << entry.path();
}

TEST(Dataset, AllCategoriesRoundTrip) {
  TempDir dir("ds_all");
  DatasetConfig cfg;
  cfg.seed = 3;
  cfg.counts = DatasetConfig::balanced_counts(14);
  const auto built = build_dataset(cfg, dir.path);
  const auto loaded = load_manifest(dir.path / "manifest.json");
  ASSERT_EQ(loaded.entries.size(), 14u);
  for (Category c : kCategories) EXPECT_EQ(loaded.count(c), cfg.counts.at(c));
  const Generator g(cfg.generator);
  for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
    const auto& e = loaded.entries[i];
    const auto clip = load_clip(loaded, e);
    const auto fresh = make_dataset_clip(g, cfg, e.label.category, i);
    EXPECT_EQ(clip.frames, fresh.frames);
    EXPECT_EQ(clip.waveform, fresh.waveform);
    EXPECT_EQ(clip.label.category, e.label.category);
    EXPECT_EQ(clip.label.is_fake, e.label.category != Category::Real);
  }
  EXPECT_EQ(loaded.generator_config.get<DatasetConfig>().counts, cfg.counts);
}

TEST(Dataset, LoaderRejectsDamage) {
  TempDir dir("ds_bad");
  DatasetConfig cfg;
  cfg.counts = {{Category::Real, 2}};
  const auto m = build_dataset(cfg, dir.path);
  const auto manifest = dir.path / "manifest.json";

  auto j = io::read_json(manifest);
  j["format_version"] = "cad-manifest/0";
  io::write_json(manifest, j);
  EXPECT_THROW(load_manifest(manifest), FormatError);

  j["format_version"] = kManifestVersion;
  j["entries"][1]["clip_id"] = j["entries"][0]["clip_id"];
  io::write_json(manifest, j);
  EXPECT_THROW(load_manifest(manifest), FormatError);

  io::write_json(manifest, manifest_to_json(m));
  const auto ok = load_manifest(manifest);
  { std::ofstream(dir.path / m.entries[0].frames_file, std::ios::binary | std::ios::trunc) << "abc"; }
  EXPECT_THROW(load_clip(ok, ok.entries[0]), FormatError);

  fs::remove(dir.path / m.entries[1].audio_file);
  EXPECT_THROW(load_manifest(manifest), IoError);
}
