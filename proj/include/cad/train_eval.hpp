#ifndef CAD_TRAIN_EVAL_HPP
#define CAD_TRAIN_EVAL_HPP

// Splits, the training loop and per-category evaluation reports.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cad/metrics.hpp"
#include "cad/model.hpp"
#include "cad/params.hpp"
#include "cad/random.hpp"
#include "cad/synthgen.hpp"

namespace cad::train {

using nlohmann::json;
using synth::Category;

enum class Protocol { Intra7030, LeaveOneCategoryOut };

inline const char* to_string(Protocol p) {
  return p == Protocol::Intra7030 ? "INTRA_70_30" : "LEAVE_ONE_CATEGORY_OUT";
}

inline Protocol parse_protocol(const std::string& s) {
  if (s == "intra" || s == "INTRA_70_30") return Protocol::Intra7030;
  if (s == "loco" || s == "LEAVE_ONE_CATEGORY_OUT") return Protocol::LeaveOneCategoryOut;
  throw ArgumentError("unknown protocol '" + s + "' (expected intra or loco)");
}

inline bool binary_label(const synth::ForgeryLabel& label) { return label.category != Category::Real; }

struct SplitPlan {
  Protocol protocol = Protocol::Intra7030;
  std::vector<std::string> train_ids, test_ids;
  std::optional<Category> held_out;
};

inline void to_json(json& j, const SplitPlan& s) {
  j = json{{"protocol", to_string(s.protocol)},
           {"train_ids", s.train_ids},
           {"test_ids", s.test_ids},
           {"held_out", s.held_out ? json(std::string(synth::to_string(*s.held_out))) : json(nullptr)}};
}

inline void from_json(const json& j, SplitPlan& s) {
  s.protocol = parse_protocol(j.at("protocol").get<std::string>());
  j.at("train_ids").get_to(s.train_ids);
  j.at("test_ids").get_to(s.test_ids);
  if (j.at("held_out").is_null())
    s.held_out.reset();
  else
    s.held_out = synth::parse_category(j.at("held_out").get<std::string>());
}

namespace detail {
/// Splits each group so that the total training share is round(frac * N):
/// floors first, then leftover slots to the largest remainders (ties by group order).
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, double frac) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  const auto target = std::size_t(std::llround(frac * double(n)));
  std::vector<std::size_t> take(sizes.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = frac * double(sizes[i]);
    take[i] = std::size_t(std::floor(exact));
    assigned += take[i];
    rem.push_back({exact - double(take[i]), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target && k < rem.size(); ++k, ++assigned) take[rem[k].second]++;
  return take;
}

inline std::vector<std::string> shuffled(std::vector<std::string> ids, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the order does not depend on the standard library.
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[std::size_t(rng() % i)]);
  return ids;
}
}  // namespace detail

inline SplitPlan make_split(const synth::DatasetManifest& manifest, Protocol protocol, std::uint64_t seed,
                            std::optional<Category> held_out = std::nullopt) {
  if (manifest.entries.empty()) throw ArgumentError("make_split: manifest is empty");
  const bool loco = protocol == Protocol::LeaveOneCategoryOut;
  if (loco && !held_out) throw ArgumentError("make_split: leave-one-category-out needs a held-out category");
  if (!loco && held_out) throw ArgumentError("make_split: held-out category given for the intra protocol");
  if (loco && *held_out == Category::Real) throw ArgumentError("make_split: REAL cannot be held out");

  std::map<Category, std::vector<std::string>> by_cat;
  for (const auto& e : manifest.entries) by_cat[e.label.category].push_back(e.clip_id);
  SplitPlan plan;
  plan.protocol = protocol;
  plan.held_out = held_out;

  if (!loco) {
    std::vector<Category> cats;
    std::vector<std::size_t> sizes;
    for (auto& [c, ids] : by_cat) {
      cats.push_back(c);
      sizes.push_back(ids.size());
    }
    const auto take = detail::apportion(sizes, 0.7);
    for (std::size_t i = 0; i < cats.size(); ++i) {
      const auto ids = detail::shuffled(by_cat[cats[i]], derive_seed(seed, 100 + std::uint64_t(cats[i])));
      plan.train_ids.insert(plan.train_ids.end(), ids.begin(), ids.begin() + std::ptrdiff_t(take[i]));
      plan.test_ids.insert(plan.test_ids.end(), ids.begin() + std::ptrdiff_t(take[i]), ids.end());
    }
    return plan;
  }

  if (!by_cat.count(*held_out) || by_cat[*held_out].empty())
    throw ArgumentError("make_split: held-out category " + std::string(synth::to_string(*held_out)) +
                        " is absent from the manifest");
  for (auto& [c, ids] : by_cat) {
    if (c == *held_out) {
      plan.test_ids.insert(plan.test_ids.end(), ids.begin(), ids.end());
    } else if (c == Category::Real) {
      const auto sh = detail::shuffled(ids, derive_seed(seed, 100));
      const auto n_train = detail::apportion({sh.size()}, 0.7)[0];
      plan.train_ids.insert(plan.train_ids.end(), sh.begin(), sh.begin() + std::ptrdiff_t(n_train));
      plan.test_ids.insert(plan.test_ids.end(), sh.begin() + std::ptrdiff_t(n_train), sh.end());
    } else {
      plan.train_ids.insert(plan.train_ids.end(), ids.begin(), ids.end());
    }
  }
  return plan;
}

/// Throws if a split violates disjointness or leaks the held-out category.
inline void check_split(const SplitPlan& plan, const synth::DatasetManifest& manifest) {
  std::set<std::string> train(plan.train_ids.begin(), plan.train_ids.end());
  for (const auto& id : plan.test_ids)
    if (train.count(id)) throw PreconditionError("split: clip " + id + " is in both train and test");
  if (plan.held_out)
    for (const auto& id : plan.train_ids)
      if (manifest.find(id).label.category == *plan.held_out)
        throw PreconditionError("split: held-out clip " + id + " appears in training");
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 7;
  bool class_balance = true;  // weight real and fake classification terms to equal total mass
  bool time_roll = true;      // rotate each training clip by a random whole-frame offset per step
};

/// {real, fake} weights n / (2 n_class); {1, 1} when a class is absent.
inline std::array<double, 2> class_weights(const std::vector<model::ClipCache>& data) {
  std::size_t fakes = 0;
  for (const auto& c : data) fakes += c.label > 0.5 ? 1 : 0;
  const std::size_t reals = data.size() - fakes;
  if (fakes == 0 || reals == 0) return {1.0, 1.0};
  const double n = double(data.size());
  return {n / (2.0 * double(reals)), n / (2.0 * double(fakes))};
}

struct TrainResult {
  std::vector<model::LossBundle> trace;  // trace[0] before any update, trace[k] after epoch k
  bool diverged = false;
  std::size_t epochs_completed = 0;
  double seconds = 0.0;
};

inline json to_json(const model::LossBundle& l) {
  return json{{"l_cls", l.l_cls}, {"l_kl", l.l_kl},           {"l_kd", l.l_kd},
              {"lambda_kl", l.lambda_kl}, {"lambda_kd", l.lambda_kd}, {"total", l.total}};
}

/// Minibatch gradient descent on the mean total loss. On a non-finite loss
/// the parameters are rolled back to the last finite epoch and training stops.
inline TrainResult train(model::CadModel& m, const std::vector<model::ClipCache>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ArgumentError("train: empty training set");
  if (cfg.batch_size == 0) throw ArgumentError("train: batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  TrainResult res;
  std::vector<const model::ClipCache*> all;
  for (const auto& c : data) all.push_back(&c);
  const auto weights = cfg.class_balance ? class_weights(data) : std::array<double, 2>{1.0, 1.0};
  res.trace.push_back(m.batch_loss(all, false, weights));
  if (!std::isfinite(res.trace[0].total)) {
    res.diverged = true;
    return res;
  }
  // Blown-up weights show up either as a non-finite loss or as a vector
  // the distillation loss cannot normalize; both count as divergence.
  auto finite_loss = [&](const std::vector<const model::ClipCache*>& batch,
                         bool accumulate) -> std::optional<model::LossBundle> {
    try {
      const auto l = m.batch_loss(batch, accumulate, weights);
      if (std::isfinite(l.total)) return l;
    } catch (const NormalizationError&) {
    }
    return std::nullopt;
  };
  Optimizer opt(cfg.optimizer);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7a11));
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const ParamStore snapshot = m.params();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[std::size_t(rng() % i)]);
    bool bad = false;
    for (std::size_t b = 0; b < order.size() && !bad; b += cfg.batch_size) {
      std::vector<const model::ClipCache*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&data[order[k]]);
      std::vector<model::ClipCache> rolled;
      if (cfg.time_roll) {
        rolled.reserve(batch.size());
        for (auto*& c : batch) {
          rolled.push_back(model::roll_frames(*c, std::size_t(rng() % c->inputs.frames)));
          c = &rolled.back();
        }
      }
      m.params().zero_grad();
      const auto l = finite_loss(batch, true);
      if (!l) {
        bad = true;
        break;
      }
      opt.step(m.params());
    }
    const auto epoch_loss = bad ? std::nullopt : finite_loss(all, false);
    if (!epoch_loss) {
      m.params() = snapshot;
      res.diverged = true;
      break;
    }
    res.trace.push_back(*epoch_loss);
    res.epochs_completed = e;
  }
  m.params().zero_grad();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricRow {
  std::string name;
  std::size_t n = 0, n_fake = 0, n_real = 0;
  std::optional<double> acc, auc, ap;
};

struct EvalReport {
  Protocol protocol = Protocol::Intra7030;
  std::optional<Category> held_out;
  std::vector<MetricRow> rows;  // one per fake category present, then REAL, then ALL
  std::size_t n_train = 0, n_test = 0;
  std::string config_fingerprint;
  double wall_clock_seconds = 0.0;
  json run_config = json::object();

  const MetricRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw NotFoundError("report has no row '" + name + "'");
  }

  bool has_row(const std::string& name) const {
    return std::any_of(rows.begin(), rows.end(), [&](const MetricRow& r) { return r.name == name; });
  }

  /// Mean AUC over the fake-category rows that have one.
  double average_auc() const {
    double s = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.name != "ALL" && r.name != "REAL" && r.auc) {
        s += *r.auc;
        ++n;
      }
    if (n == 0) throw UndefinedMetricError("no category row has an AUC");
    return s / n;
  }
};

inline constexpr const char* kReportVersion = "cad-report/1";

inline json to_json(const MetricRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json("N/A"); };
  return json{{"name", r.name}, {"n", r.n},         {"n_fake", r.n_fake}, {"n_real", r.n_real},
              {"acc", opt(r.acc)}, {"auc", opt(r.auc)}, {"ap", opt(r.ap)}};
}

/// `with_timing` = false drops the wall clock so reports can be compared byte for byte.
inline json to_json(const EvalReport& r, bool with_timing = true) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  json j{{"format_version", kReportVersion},
         {"protocol", to_string(r.protocol)},
         {"held_out", r.held_out ? json(std::string(synth::to_string(*r.held_out))) : json(nullptr)},
         {"n_train", r.n_train},
         {"n_test", r.n_test},
         {"rows", rows},
         {"config_fingerprint", r.config_fingerprint},
         {"run_config", r.run_config}};
  if (with_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

inline MetricRow metric_row(const std::string& name, const std::vector<double>& logits, const std::vector<bool>& labels) {
  MetricRow r;
  r.name = name;
  r.n = logits.size();
  for (bool l : labels) (l ? r.n_fake : r.n_real)++;
  auto guarded = [&](auto f) -> std::optional<double> {
    try {
      return f(logits, labels);
    } catch (const UndefinedMetricError&) {
      return std::nullopt;
    }
  };
  r.acc = guarded(metrics::accuracy_from_logits);
  r.auc = guarded(metrics::auc);
  r.ap = guarded(metrics::average_precision);
  return r;
}

struct ScoredClip {
  std::string clip_id;
  Category category = Category::Real;
  double logit = 0.0;
};

/// Rows: each fake category scored against the test reals, then REAL alone, then ALL.
inline std::vector<MetricRow> report_rows(const std::vector<ScoredClip>& scored) {
  std::vector<double> real_scores;
  for (const auto& s : scored)
    if (s.category == Category::Real) real_scores.push_back(s.logit);
  std::vector<MetricRow> rows;
  for (Category c : synth::kCategories) {
    if (c == Category::Real) continue;
    std::vector<double> sc;
    std::vector<bool> lb;
    for (const auto& s : scored)
      if (s.category == c) {
        sc.push_back(s.logit);
        lb.push_back(true);
      }
    if (sc.empty()) continue;
    for (double r : real_scores) {
      sc.push_back(r);
      lb.push_back(false);
    }
    rows.push_back(metric_row(std::string(synth::to_string(c)), sc, lb));
  }
  rows.push_back(metric_row("REAL", real_scores, std::vector<bool>(real_scores.size(), false)));
  std::vector<double> sc;
  std::vector<bool> lb;
  for (const auto& s : scored) {
    sc.push_back(s.logit);
    lb.push_back(s.category != Category::Real);
  }
  rows.push_back(metric_row("ALL", sc, lb));
  return rows;
}

inline std::vector<ScoredClip> score_clips(model::CadModel& m, const std::vector<model::ClipCache>& caches,
                                           const std::vector<const synth::ManifestEntry*>& entries) {
  std::vector<ScoredClip> out;
  for (std::size_t i = 0; i < caches.size(); ++i) {
    const double logit = m.score(caches[i]);
    out.push_back({entries[i]->clip_id, entries[i]->label.category, logit});
  }
  return out;
}

}  // namespace cad::train

#endif  // CAD_TRAIN_EVAL_HPP
