#ifndef CAD_CLI_HPP
#define CAD_CLI_HPP

// The `cad` command line. run() takes the streams explicitly so tests can
// drive it in-process. Exit codes: 0 success, 2 usage, 1 any other failure
// with one line "error: <category>: <message>" on stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cad/config.hpp"
#include "cad/infotheory.hpp"
#include "cad/pipeline.hpp"

namespace cad::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kGenSummaryVersion = "cad-gen/1";
inline constexpr const char* kTrainSummaryVersion = "cad-train/1";
inline constexpr const char* kInfoVersion = "cad-info/1";
inline constexpr const char* kInspectVersion = "cad-inspect/1";

struct Options {
  std::string config, manifest, ckpt, clip, out, protocol, held_out, flags = "no_alignment,no_distillation,video_only";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats, epochs, clips;
  std::size_t trials = 100;
  bool json = false;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Config file (or defaults) with command-line overrides applied.
inline config::RunConfig run_config(const Options& o) {
  auto rc = o.config.empty() ? config::RunConfig() : config::load(o.config);
  if (o.seed) rc.seed = rc.data.seed = rc.train.seed = *o.seed;
  if (o.repeats) rc.repeats = *o.repeats;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.clips) rc.data.counts = synth::DatasetConfig::balanced_counts(*o.clips);
  if (!o.protocol.empty()) rc.protocol = train::parse_protocol(o.protocol);
  if (!o.held_out.empty()) rc.held_out = synth::parse_category(o.held_out);
  if (!o.out.empty()) rc.out_dir = o.out;
  rc.validate();
  return rc;
}

inline pipeline::Dataset dataset(const Options& o, const config::RunConfig& rc) {
  return o.manifest.empty() ? pipeline::generate(rc.data) : pipeline::load(o.manifest);
}

inline void emit(std::ostream& out, const Options& o, const json& j, const std::string& text) {
  if (o.json)
    out << j.dump(2) << "\n";
  else
    out << text;
}

inline std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

}  // namespace detail

inline int cmd_gen(const Options& o, std::ostream& out) {
  const auto rc = detail::run_config(o);
  const fs::path dir = o.out.empty() ? rc.out_dir / "data" : fs::path(o.out);
  const auto m = synth::build_dataset(rc.data, dir);
  json counts = json::object();
  std::string text = "wrote " + std::to_string(m.entries.size()) + " clips to " + dir.string() + "\n";
  for (synth::Category c : synth::kCategories) {
    counts[std::string(synth::to_string(c))] = m.count(c);
    text += "  " + std::string(synth::to_string(c)) + " " + std::to_string(m.count(c)) + "\n";
  }
  detail::emit(out, o,
               json{{"format_version", kGenSummaryVersion},
                    {"manifest", (dir / "manifest.json").string()},
                    {"clips", m.entries.size()},
                    {"counts", counts}},
               text);
  return 0;
}

/// Trains `repeats` models on one split; repeat 0 is saved as model.json.
inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto rc = detail::run_config(o);
  const auto data = detail::dataset(o, rc);
  const auto split = pipeline::split_for(rc, data.manifest);
  io::ensure_directory(rc.out_dir);
  std::vector<train::EvalReport> reports;
  json runs = json::array();
  for (std::size_t k = 0; k < rc.repeats; ++k) {
    auto o_k = pipeline::run(rc, data, split, k);
    if (o_k.trained.result.diverged)
      err << "warning: repeat " << k << " diverged after epoch " << o_k.trained.result.epochs_completed
          << "; kept the last finite parameters\n";
    if (k == 0) pipeline::save(*o_k.trained.model, rc, split, k, o_k.trained.result, rc.out_dir / "model.json");
    runs.push_back(json{{"repeat", k},
                        {"final_loss", train::to_json(o_k.trained.result.trace.back())},
                        {"diverged", o_k.trained.result.diverged},
                        {"train_seconds", o_k.trained.result.seconds},
                        {"report", train::to_json(o_k.report)}});
    reports.push_back(std::move(o_k.report));
  }
  const json summary = pipeline::summarize(reports);
  const json j{{"format_version", kTrainSummaryVersion},
               {"checkpoint", (rc.out_dir / "model.json").string()},
               {"runs", runs},
               {"summary", summary}};
  io::write_json(rc.out_dir / "train_report.json", j);
  std::string text = pipeline::report_table(reports.front());
  if (reports.size() > 1) {
    char buf[160];
    text += "over " + std::to_string(reports.size()) + " repeats (mean, min..max):\n";
    for (const auto& row : summary["rows"]) {
      if (!row["auc"].is_object()) continue;
      std::snprintf(buf, sizeof buf, "  %-14s AUC %6.2f  %6.2f..%6.2f\n", row["name"].get<std::string>().c_str(),
                    row["auc"]["mean"].get<double>(), row["auc"]["min"].get<double>(), row["auc"]["max"].get<double>());
      text += buf;
    }
  }
  text += "checkpoint " + (rc.out_dir / "model.json").string() + "\n";
  detail::emit(out, o, j, text);
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  auto loaded = pipeline::load_checkpoint(o.ckpt);
  const auto data = detail::dataset(o, loaded.rc);
  train::check_split(loaded.split, data.manifest);
  const auto report = pipeline::evaluate(*loaded.model, loaded.rc, data, loaded.split);
  if (!o.out.empty()) io::write_json(o.out, train::to_json(report));
  detail::emit(out, o, train::to_json(report), pipeline::report_table(report));
  return 0;
}

inline int cmd_ablate(const Options& o, std::ostream& out) {
  const auto rc = detail::run_config(o);
  const auto data = detail::dataset(o, rc);
  const auto rows = pipeline::ablate(rc, data, detail::split_list(o.flags), rc.repeats);
  const auto j = pipeline::to_json(rows);
  io::ensure_directory(rc.out_dir);
  io::write_json(rc.out_dir / "ablation.json", j);
  detail::emit(out, o, j, pipeline::ablation_table(rows));
  return 0;
}

inline int cmd_info_verify(const Options& o, std::ostream& out) {
  const auto rep = info::run_identity_suite(o.seed.value_or(7), o.trials);
  json ids = json::array();
  std::string text;
  char buf[120];
  for (const auto& r : rep.identities) {
    ids.push_back(json{{"name", r.name}, {"max_residual", r.max_residual}, {"trials", r.trials}});
    std::snprintf(buf, sizeof buf, "%-24s max |residual| %.3e over %zu joints\n", r.name.c_str(), r.max_residual,
                  r.trials);
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "xor interaction information %.17g bits\n", rep.xor_interaction_bits);
  text += buf;
  text += rep.passed() ? "all identities hold within 1e-9\n" : "IDENTITY CHECK FAILED\n";
  detail::emit(out, o,
               json{{"format_version", kInfoVersion},
                    {"identities", ids},
                    {"xor_interaction_bits", rep.xor_interaction_bits},
                    {"tolerance", rep.tolerance},
                    {"passed", rep.passed()}},
               text);
  return rep.passed() ? 0 : 1;
}

inline int cmd_export_attention(const Options& o, std::ostream& out) {
  auto loaded = pipeline::load_checkpoint(o.ckpt);
  const auto data = detail::dataset(o, loaded.rc);
  const fs::path dir = o.out.empty() ? loaded.rc.out_dir / "attention" : fs::path(o.out);
  const auto ex = pipeline::export_attention(*loaded.model, data, o.clip, dir);
  json files = json::array();
  for (const auto& f : ex.files) files.push_back(f.string());
  detail::emit(out, o, json{{"format_version", pipeline::kAttentionVersion}, {"files", files}},
               "wrote " + std::to_string(ex.files.size()) + " files to " + dir.string() + "\n");
  return 0;
}

inline int cmd_export_embeddings(const Options& o, std::ostream& out) {
  auto loaded = pipeline::load_checkpoint(o.ckpt);
  const auto data = detail::dataset(o, loaded.rc);
  const fs::path path = o.out.empty() ? loaded.rc.out_dir / "embeddings.csv" : fs::path(o.out);
  const auto n = pipeline::export_embeddings(*loaded.model, data, path);
  detail::emit(out, o,
               json{{"format_version", pipeline::kEmbeddingsVersion}, {"file", path.string()}, {"rows", n},
                    {"columns", 2 + loaded.model->embedding_dim()}},
               "wrote " + std::to_string(n) + " rows to " + path.string() + "\n");
  return 0;
}

/// Parameter counts per module and role, from a checkpoint or a config.
inline int cmd_inspect(const Options& o, std::ostream& out) {
  std::unique_ptr<model::CadModel> m;
  if (!o.ckpt.empty())
    m = std::move(pipeline::load_checkpoint(o.ckpt).model);
  else
    m = std::make_unique<model::CadModel>(detail::run_config(o).model);
  struct Counts {
    std::size_t tensors = 0, frozen = 0, trainable = 0, lora = 0;
  };
  std::map<std::string, Counts> groups;
  std::vector<std::string> order;
  Counts total;
  for (const Parameter* p : m->params().all()) {
    const auto g = detail::group_of(p->name);
    if (!groups.count(g)) order.push_back(g);
    auto& c = groups[g];
    const auto n = std::size_t(p->value.size());
    for (Counts* x : {&c, &total}) {
      x->tensors++;
      (p->role == Role::Frozen ? x->frozen : p->role == Role::Lora ? x->lora : x->trainable) += n;
    }
  }
  json rows = json::array();
  char buf[160];
  std::string text;
  std::snprintf(buf, sizeof buf, "%-16s %7s %10s %10s %8s\n", "module", "tensors", "frozen", "trainable", "lora");
  text += buf;
  auto line = [&](const std::string& name, const Counts& c) {
    rows.push_back(json{{"module", name}, {"tensors", c.tensors}, {"frozen", c.frozen}, {"trainable", c.trainable},
                        {"lora", c.lora}});
    std::snprintf(buf, sizeof buf, "%-16s %7zu %10zu %10zu %8zu\n", name.c_str(), c.tensors, c.frozen, c.trainable,
                  c.lora);
    text += buf;
  };
  for (const auto& g : order) line(g, groups[g]);
  line("total", total);
  detail::emit(out, o, json{{"format_version", kInspectVersion}, {"modules", rows}}, text);
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Synthetic audio-visual forgery detection: data, training, evaluation and analysis", "cad"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* s, bool with_config) {
    s->add_option("--seed", o.seed, "Run seed (split, data and training)");
    s->add_flag("--json", o.json, "Print JSON instead of a table");
    s->add_option("--out", o.out, "Output directory or file");
    if (with_config) s->add_option("--config", o.config, "YAML run config")->check(CLI::ExistingFile);
  };
  auto data_flags = [&](CLI::App* s) {
    s->add_option("--manifest", o.manifest, "Dataset manifest; generated in memory from the config if omitted");
  };
  auto run_flags = [&](CLI::App* s) {
    s->add_option("--protocol", o.protocol, "intra or loco");
    s->add_option("--held-out", o.held_out, "Category held out under loco");
    s->add_option("--repeats", o.repeats, "Training repeats with different model seeds (default 3)");
    s->add_option("--epochs", o.epochs, "Training epochs");
    s->add_option("--clips", o.clips, "Total clips, balanced over the six categories");
  };

  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset and its manifest");
  common(gen, true);
  gen->add_option("--clips", o.clips, "Total clips, balanced over the six categories");
  auto* tr = app.add_subcommand("train", "Train, save a checkpoint and report test metrics");
  common(tr, true);
  data_flags(tr);
  run_flags(tr);
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  common(ev, false);
  data_flags(ev);
  ev->add_option("--ckpt", o.ckpt, "Checkpoint index (model.json)")->required();
  auto* ab = app.add_subcommand("ablate", "Full model against single-flag ablations");
  common(ab, true);
  data_flags(ab);
  run_flags(ab);
  ab->add_option("--flags", o.flags, "Comma-separated ablation flags");
  auto* info = app.add_subcommand("info", "Information-theory checks");
  info->require_subcommand(1);
  auto* verify = info->add_subcommand("verify", "Verify the identity suite on random joints");
  common(verify, false);
  verify->add_option("--trials", o.trials, "Random joints per identity")->check(CLI::PositiveNumber);
  auto* att = app.add_subcommand("export-attention", "Per-frame heatmaps for one clip");
  common(att, false);
  data_flags(att);
  att->add_option("--ckpt", o.ckpt, "Checkpoint index")->required();
  att->add_option("--clip", o.clip, "Clip id")->required();
  auto* emb = app.add_subcommand("export-embeddings", "Integrated embeddings of every clip as CSV");
  common(emb, false);
  data_flags(emb);
  emb->add_option("--ckpt", o.ckpt, "Checkpoint index")->required();
  auto* ins = app.add_subcommand("inspect", "Parameter counts per module");
  common(ins, true);
  ins->add_option("--ckpt", o.ckpt, "Checkpoint index; the config is used if omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen(o, out);
    if (*tr) return cmd_train(o, out, err);
    if (*ev) return cmd_eval(o, out);
    if (*ab) return cmd_ablate(o, out);
    if (*verify) return cmd_info_verify(o, out);
    if (*att) return cmd_export_attention(o, out);
    if (*emb) return cmd_export_embeddings(o, out);
    if (*ins) return cmd_inspect(o, out);
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
  err << "error: usage: no subcommand\n" << app.help();
  return 2;
}

}  // namespace cad::cli

#endif  // CAD_CLI_HPP
