#ifndef CAD_PIPELINE_HPP
#define CAD_PIPELINE_HPP

// gen -> split -> train -> evaluate, shared by the CLI and the acceptance
// binary, plus the ablation sweep, repeat summaries and visual exports.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cad/config.hpp"
#include "cad/model.hpp"
#include "cad/synthgen.hpp"
#include "cad/tensor_io.hpp"
#include "cad/train_eval.hpp"

namespace cad::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

struct Dataset {
  synth::DatasetManifest manifest;
  std::vector<synth::MediaClip> clips;  // same order as manifest.entries

  std::size_t position(const std::string& clip_id) const {
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].clip_id == clip_id) return i;
    throw NotFoundError("clip '" + clip_id + "' is not in the manifest");
  }
};

/// Same clips as build_dataset, kept in memory.
inline Dataset generate(const synth::DatasetConfig& cfg) {
  cfg.validate();
  const synth::Generator gen(cfg.generator);
  Dataset d;
  d.manifest.generator_config = cfg;
  std::size_t index = 0;
  for (synth::Category c : synth::kCategories) {
    const auto it = cfg.counts.find(c);
    const std::size_t n = it == cfg.counts.end() ? 0 : it->second;
    for (std::size_t k = 0; k < n; ++k, ++index) {
      d.clips.push_back(synth::make_dataset_clip(gen, cfg, c, index));
      synth::ManifestEntry e;
      e.clip_id = d.clips.back().clip_id;
      e.label = d.clips.back().label;
      e.seed = d.clips.back().seed;
      d.manifest.entries.push_back(e);
    }
  }
  return d;
}

inline Dataset load(const fs::path& manifest_path) {
  Dataset d;
  d.manifest = synth::load_manifest(manifest_path);
  d.clips = synth::load_all(d.manifest);
  return d;
}

inline train::SplitPlan split_for(const config::RunConfig& rc, const synth::DatasetManifest& m) {
  auto plan = train::make_split(m, rc.protocol, rc.seed, rc.held_out);
  train::check_split(plan, m);
  return plan;
}

inline std::vector<model::ClipCache> prepare(model::CadModel& m, const Dataset& d, const std::vector<std::string>& ids) {
  std::vector<model::ClipCache> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(m.prepare(d.clips[d.position(id)]));
  return out;
}

/// Repeat k offsets the model and training seeds by k; data and split stay fixed.
inline model::ModelConfig model_config(const config::RunConfig& rc, std::size_t repeat = 0) {
  auto mc = rc.model;
  mc.seed += repeat;
  return mc;
}

struct Trained {
  std::unique_ptr<model::CadModel> model;
  train::TrainResult result;
};

inline Trained fit(const config::RunConfig& rc, const Dataset& d, const train::SplitPlan& split,
                   std::size_t repeat = 0) {
  Trained out;
  out.model = std::make_unique<model::CadModel>(model_config(rc, repeat));
  const auto caches = prepare(*out.model, d, split.train_ids);
  auto tc = rc.train;
  tc.seed += repeat;
  out.result = train::train(*out.model, caches, tc);
  return out;
}

inline train::EvalReport evaluate(model::CadModel& m, const config::RunConfig& rc, const Dataset& d,
                                  const train::SplitPlan& split) {
  const auto start = std::chrono::steady_clock::now();
  const auto caches = prepare(m, d, split.test_ids);
  std::vector<const synth::ManifestEntry*> entries;
  for (const auto& id : split.test_ids) entries.push_back(&d.manifest.entries[d.position(id)]);
  train::EvalReport r;
  r.protocol = split.protocol;
  r.held_out = split.held_out;
  r.rows = train::report_rows(train::score_clips(m, caches, entries));
  r.n_train = split.train_ids.size();
  r.n_test = split.test_ids.size();
  r.config_fingerprint = config::fingerprint(rc);
  r.run_config = config::to_json(rc);
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

struct RunOutcome {
  Trained trained;
  train::EvalReport report;
};

inline RunOutcome run(const config::RunConfig& rc, const Dataset& d, const train::SplitPlan& split,
                      std::size_t repeat = 0) {
  const auto start = std::chrono::steady_clock::now();
  RunOutcome o;
  o.trained = fit(rc, d, split, repeat);
  o.report = evaluate(*o.trained.model, rc, d, split);
  o.report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return o;
}

// ---------------------------------------------------------------------------
// Checkpoints carry the run config, split and loss trace needed to rebuild
// and re-evaluate the model.

inline void save(const model::CadModel& m, const config::RunConfig& rc, const train::SplitPlan& split,
                 std::size_t repeat, const train::TrainResult& res, const fs::path& index_path) {
  json trace = json::array();
  for (const auto& l : res.trace) trace.push_back(train::to_json(l));
  if (index_path.has_parent_path()) io::ensure_directory(index_path.parent_path());
  save_checkpoint(m.params(), index_path,
                  json{{"run_config", config::to_json(rc)},
                       {"split", split},
                       {"repeat", repeat},
                       {"diverged", res.diverged},
                       {"epochs_completed", res.epochs_completed},
                       {"loss_trace", trace}});
}

struct Loaded {
  std::unique_ptr<model::CadModel> model;
  config::RunConfig rc;
  train::SplitPlan split;
};

inline Loaded load_checkpoint(const fs::path& index_path) {
  const auto ck = read_checkpoint(index_path);
  Loaded l;
  try {
    const auto& extra = ck.index.at("extra");
    l.rc = config::from_json(extra.at("run_config"));
    l.split = extra.at("split").get<train::SplitPlan>();
    l.model = std::make_unique<model::CadModel>(model_config(l.rc, extra.at("repeat").get<std::size_t>()));
  } catch (const json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
  load_into(l.model->params(), ck);
  return l;
}

// ---------------------------------------------------------------------------
// Repeats: mean and range of every metric over runs with different model seeds.

struct Spread {
  double mean = 0, min = 0, max = 0;
  std::size_t n = 0;
};

inline std::optional<Spread> spread(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  Spread s;
  s.n = v.size();
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x / double(v.size());
  return s;
}

inline json to_json(const std::optional<Spread>& s) {
  if (!s) return "N/A";
  return json{{"mean", s->mean}, {"min", s->min}, {"max", s->max}, {"range", s->max - s->min}, {"n", s->n}};
}

/// Rows keyed by name; metrics that were N/A in a run are left out of its spread.
inline json summarize(const std::vector<train::EvalReport>& reports) {
  json rows = json::array();
  if (reports.empty()) return json{{"repeats", 0}, {"rows", rows}};
  for (const auto& row : reports.front().rows) {
    std::vector<double> acc, auc, ap;
    for (const auto& r : reports) {
      const auto& x = r.row(row.name);
      if (x.acc) acc.push_back(*x.acc);
      if (x.auc) auc.push_back(*x.auc);
      if (x.ap) ap.push_back(*x.ap);
    }
    rows.push_back(json{{"name", row.name}, {"acc", to_json(spread(acc))}, {"auc", to_json(spread(auc))},
                        {"ap", to_json(spread(ap))}});
  }
  std::vector<double> avg;
  for (const auto& r : reports) {
    try {
      avg.push_back(r.average_auc());
    } catch (const UndefinedMetricError&) {
    }
  }
  return json{{"repeats", reports.size()}, {"rows", rows}, {"average_auc", to_json(spread(avg))}};
}

// ---------------------------------------------------------------------------
// Ablation sweep

struct AblationRow {
  std::string label;  // "full" or the flag name
  std::vector<train::EvalReport> reports;
  std::string error;  // non-empty marks the row FAILED

  bool failed() const { return !error.empty(); }
  double average_auc() const {
    double s = 0;
    for (const auto& r : reports) s += r.average_auc();
    return s / double(reports.size());
  }
  double all(const std::optional<double> train::MetricRow::*metric) const {
    double s = 0;
    for (const auto& r : reports) s += (r.row("ALL").*metric).value_or(0.0);
    return s / double(reports.size());
  }
};

/// Full model plus one run per flag, all on the same data, split and seeds.
inline std::vector<AblationRow> ablate(const config::RunConfig& base, const Dataset& d,
                                       const std::vector<std::string>& flags, std::size_t repeats) {
  const auto split = split_for(base, d.manifest);
  std::vector<std::string> labels{"full"};
  labels.insert(labels.end(), flags.begin(), flags.end());
  std::vector<AblationRow> rows;
  for (const auto& label : labels) {
    AblationRow row;
    row.label = label;
    try {
      auto rc = base;
      if (label != "full") rc.model.flags = model::AblationFlags::from_names({label});
      for (std::size_t k = 0; k < repeats; ++k) row.reports.push_back(run(rc, d, split, k).report);
      row.average_auc();
    } catch (const std::exception& e) {
      row.error = e.what();
      row.reports.clear();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  const AblationRow* full = rows.empty() || rows.front().failed() ? nullptr : &rows.front();
  for (const auto& r : rows) {
    if (r.failed()) {
      out.push_back(json{{"label", r.label}, {"status", "FAILED"}, {"error", r.error}});
      continue;
    }
    json categories = json::object();
    for (const auto& row : r.reports.front().rows) {
      if (row.name == "ALL" || row.name == "REAL") continue;
      double s = 0;
      for (const auto& rep : r.reports) s += rep.row(row.name).auc.value_or(0.0);
      categories[row.name] = s / double(r.reports.size());
    }
    json j{{"label", r.label},
           {"status", "OK"},
           {"average_auc", r.average_auc()},
           {"all_auc", r.all(&train::MetricRow::auc)},
           {"all_ap", r.all(&train::MetricRow::ap)},
           {"category_auc", categories}};
    if (full) {
      j["delta_average_auc"] = r.average_auc() - full->average_auc();
      j["delta_all_auc"] = r.all(&train::MetricRow::auc) - full->all(&train::MetricRow::auc);
      j["delta_all_ap"] = r.all(&train::MetricRow::ap) - full->all(&train::MetricRow::ap);
    }
    out.push_back(j);
  }
  return json{{"format_version", "cad-ablation/1"}, {"rows", out}};
}

// ---------------------------------------------------------------------------
// Text tables

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "   N/A";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.2f", *v);
  return buf;
}

inline std::string report_table(const train::EvalReport& r) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "protocol %s%s%s  train %zu  test %zu\n", train::to_string(r.protocol),
                r.held_out ? "  held out " : "", r.held_out ? std::string(synth::to_string(*r.held_out)).c_str() : "",
                r.n_train, r.n_test);
  s += buf;
  std::snprintf(buf, sizeof buf, "%-14s %5s %6s %6s %6s\n", "subset", "n", "ACC", "AUC", "AP");
  s += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-14s %5zu %s %s %s\n", row.name.c_str(), row.n, format_metric(row.acc).c_str(),
                  format_metric(row.auc).c_str(), format_metric(row.ap).c_str());
    s += buf;
  }
  return s;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string s;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-18s %8s %8s %8s %8s\n", "model", "avgAUC", "dAUC", "ALL AUC", "ALL AP");
  s += buf;
  const double base = rows.empty() || rows.front().failed() ? 0.0 : rows.front().average_auc();
  for (const auto& r : rows) {
    if (r.failed()) {
      std::snprintf(buf, sizeof buf, "%-18s FAILED: %s\n", r.label.c_str(), r.error.c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%-18s %8.2f %+8.2f %8.2f %8.2f\n", r.label.c_str(), r.average_auc(),
                    r.average_auc() - base, r.all(&train::MetricRow::auc), r.all(&train::MetricRow::ap));
    }
    s += buf;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Exports

inline constexpr const char* kAttentionVersion = "cad-attention/1";
inline constexpr const char* kHeatmapVersion = "cad-heatmap/1";
inline constexpr const char* kEmbeddingsVersion = "cad-embeddings/1";

/// Binary graymap; the header comment carries the format version.
inline void write_pgm(const fs::path& path, const std::vector<std::uint8_t>& pixels, std::size_t width,
                      std::size_t height) {
  if (pixels.size() != width * height) throw ArgumentError("pgm: pixel count does not match the size");
  std::string data = "P5\n# format_version " + std::string(kHeatmapVersion) + "\n" + std::to_string(width) + " " +
                     std::to_string(height) + "\n255\n";
  data.append(pixels.begin(), pixels.end());
  io::write_text(path, data);
}

/// Min-max scaling to 0..255 over the whole matrix; a constant matrix maps to 0.
inline std::vector<std::uint8_t> to_gray(const Mat& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  std::vector<std::uint8_t> out;
  out.reserve(std::size_t(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out.push_back(hi > lo ? std::uint8_t(std::lround(255.0 * (m(r, c) - lo) / (hi - lo))) : 0);
  return out;
}

/// Mean over rows of the total-variation distance to the uniform row 1/T.
inline double mean_tv_from_uniform(const Mat& w) {
  double s = 0;
  for (Eigen::Index r = 0; r < w.rows(); ++r) s += 0.5 * (w.row(r).array() - 1.0 / double(w.cols())).abs().sum();
  return s / double(w.rows());
}

struct AttentionExport {
  Mat specific_energy;  // T x patches
  Mat v2a, a2v;         // T x T, empty for video_only
  std::vector<fs::path> files;
};

/// Per frame: a grid image of specific-video filter energy and a 2 x T image
/// of the v2a/a2v attention rows, each scaled to 0..255 over the clip.
inline AttentionExport export_attention(model::CadModel& m, const Dataset& d, const std::string& clip_id,
                                        const fs::path& out_dir) {
  const std::size_t pos = d.position(clip_id);
  const auto cache = m.prepare(d.clips[pos]);
  AttentionExport ex;
  ex.specific_energy = m.specific_video_energy(cache);
  if (!m.config().flags.video_only) {
    ad::Tape t;
    const auto fr = m.forward(t, cache);
    ex.v2a = fr.attention_v2a;
    ex.a2v = fr.attention_a2v;
  }
  io::ensure_directory(out_dir);
  const std::size_t T = cache.inputs.frames;
  const std::size_t side = m.config().encoder.input_size / m.config().encoder.patch;
  const auto energy = to_gray(ex.specific_energy);
  std::vector<std::uint8_t> attn;
  if (ex.v2a.size() > 0) {
    Mat both(2 * Eigen::Index(T), Eigen::Index(T));
    both << ex.v2a, ex.a2v;
    attn = to_gray(both);
  }
  char name[64];
  for (std::size_t t = 0; t < T; ++t) {
    std::snprintf(name, sizeof name, "%s.specific.f%02zu.pgm", clip_id.c_str(), t);
    write_pgm(out_dir / name, std::vector<std::uint8_t>(energy.begin() + std::ptrdiff_t(t * side * side),
                                                        energy.begin() + std::ptrdiff_t((t + 1) * side * side)),
              side, side);
    ex.files.push_back(out_dir / name);
    if (attn.empty()) continue;
    std::vector<std::uint8_t> rows(attn.begin() + std::ptrdiff_t(t * T), attn.begin() + std::ptrdiff_t((t + 1) * T));
    rows.insert(rows.end(), attn.begin() + std::ptrdiff_t((T + t) * T), attn.begin() + std::ptrdiff_t((T + t + 1) * T));
    std::snprintf(name, sizeof name, "%s.attention.f%02zu.pgm", clip_id.c_str(), t);
    write_pgm(out_dir / name, rows, T, 2);
    ex.files.push_back(out_dir / name);
  }
  auto mat_json = [](const Mat& w) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      std::vector<double> row(std::size_t(w.cols()));
      for (Eigen::Index c = 0; c < w.cols(); ++c) row[std::size_t(c)] = w(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  json j{{"format_version", kAttentionVersion},
         {"clip_id", clip_id},
         {"category", std::string(synth::to_string(d.manifest.entries[pos].label.category))},
         {"frames", T},
         {"patch_grid", side},
         {"specific_energy", mat_json(ex.specific_energy)}};
  if (ex.v2a.size() > 0) {
    j["attention_v2a"] = mat_json(ex.v2a);
    j["attention_a2v"] = mat_json(ex.a2v);
    j["tv_from_uniform"] = {{"v2a", mean_tv_from_uniform(ex.v2a)}, {"a2v", mean_tv_from_uniform(ex.a2v)}};
  }
  const auto json_path = out_dir / (clip_id + ".attention.json");
  io::write_json(json_path, j);
  ex.files.push_back(json_path);
  return ex;
}

/// CSV: a format_version comment line, a header, then clip_id, category and
/// the integrated embedding for every clip in the dataset.
inline std::size_t export_embeddings(model::CadModel& m, const Dataset& d, const fs::path& path) {
  std::string out = "# format_version " + std::string(kEmbeddingsVersion) + "\nclip_id,category";
  for (std::size_t k = 0; k < m.embedding_dim(); ++k) out += ",e" + std::to_string(k);
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < d.clips.size(); ++i) {
    const Mat e = m.embedding(m.prepare(d.clips[i]));
    out += d.manifest.entries[i].clip_id + "," + std::string(synth::to_string(d.manifest.entries[i].label.category));
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.9g", e(k));
      out += buf;
    }
    out += "\n";
  }
  if (path.has_parent_path()) io::ensure_directory(path.parent_path());
  io::write_text(path, out);
  return d.clips.size();
}

}  // namespace cad::pipeline

#endif  // CAD_PIPELINE_HPP
