#ifndef CAD_PARAMS_HPP
#define CAD_PARAMS_HPP

// Named parameter storage, checkpoint files and first-order optimizers.

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cad/autodiff.hpp"
#include "cad/errors.hpp"
#include "cad/tensor_io.hpp"

namespace cad {

using ad::Mat;
using ad::Parameter;
using ad::Role;

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { *this = other; }
  ParamStore& operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    by_name_.clear();
    for (const auto& p : other.params_) {
      params_.push_back(std::make_unique<Parameter>(*p));
      by_name_[p->name] = params_.back().get();
    }
    return *this;
  }
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(const std::string& name, Mat value, Role role) {
    if (by_name_.count(name)) throw ArgumentError("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(value);
    p->role = role;
    p->trainable = role != Role::Frozen;
    p->zero_grad();
    params_.push_back(std::move(p));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }

  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw NotFoundError("no parameter named '" + name + "'");
    return *it->second;
  }
  const Parameter& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

  std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter*> trainable() const {
    std::vector<Parameter*> out;
    for (const auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t count(Role role) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->role == role) n += std::size_t(p->value.size());
    return n;
  }

  std::size_t count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) n += std::size_t(p->value.size());
    return n;
  }

  std::size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

inline Mat random_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Weight (out x in) with variance 1/in.
inline Mat fan_in_init(std::mt19937_64& rng, Eigen::Index out, Eigen::Index in) {
  return random_normal(rng, out, in, 1.0 / std::sqrt(double(in)));
}

// ---------------------------------------------------------------------------
// Checkpoints: `<stem>.json` index plus `<stem>.f32` flat data.

inline constexpr const char* kCheckpointVersion = "cad-checkpoint/1";

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& index_path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  auto data_path = index_path;
  data_path.replace_extension(".f32");
  std::vector<float> flat;
  nlohmann::json entries = nlohmann::json::array();
  for (const Parameter* p : store.all()) {
    entries.push_back({{"name", p->name},
                       {"shape", {p->value.rows(), p->value.cols()}},
                       {"role", ad::to_string(p->role)},
                       {"offset", flat.size()}});
    // Row-major so the file reads naturally from other languages.
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) flat.push_back(float(p->value(r, c)));
  }
  io::write_f32(data_path, flat);
  nlohmann::json index = {{"format_version", kCheckpointVersion},
                          {"data_file", data_path.filename().string()},
                          {"total_values", flat.size()},
                          {"parameters", entries},
                          {"extra", extra}};
  io::write_json(index_path, index);
}

struct CheckpointContents {
  nlohmann::json index;
  std::map<std::string, std::pair<Role, Mat>> tensors;
};

inline CheckpointContents read_checkpoint(const std::filesystem::path& index_path) {
  CheckpointContents out;
  out.index = io::read_json(index_path);
  io::require_version(out.index, kCheckpointVersion, index_path.string());
  try {
    const auto data_path = index_path.parent_path() / out.index.at("data_file").get<std::string>();
    const auto flat = io::read_f32(data_path, out.index.at("total_values").get<std::size_t>());
    for (const auto& e : out.index.at("parameters")) {
      const auto rows = e.at("shape").at(0).get<Eigen::Index>(), cols = e.at("shape").at(1).get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset + std::size_t(rows * cols) > flat.size()) throw FormatError("checkpoint entry exceeds data file");
      Mat m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[offset + std::size_t(r * cols + c)];
      out.tensors[e.at("name").get<std::string>()] = {ad::parse_role(e.at("role").get<std::string>()), std::move(m)};
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(index_path.string() + ": " + ex.what());
  }
  return out;
}

/// Copies checkpoint tensors into an existing store with identical layout.
inline void load_into(ParamStore& store, const CheckpointContents& ck) {
  if (ck.tensors.size() != store.size()) throw FormatError("checkpoint parameter count differs from model");
  for (Parameter* p : store.all()) {
    auto it = ck.tensors.find(p->name);
    if (it == ck.tensors.end()) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.second.rows() != p->value.rows() || it->second.second.cols() != p->value.cols())
      throw FormatError("checkpoint shape mismatch for '" + p->name + "'");
    p->value = it->second.second;
  }
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { Sgd, Momentum, Adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "momentum") return OptimizerKind::Momentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, momentum or adam)");
}

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.002;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  /// Applies one update from the accumulated gradients of trainable parameters.
  void step(ParamStore& store) {
    ++steps_;
    const auto params = store.trainable();
    double scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double sq = 0;
      for (const Parameter* p : params) sq += p->grad.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    for (Parameter* p : params) {
      const Mat g = p->grad * scale;
      switch (cfg_.kind) {
        case OptimizerKind::Sgd: p->value -= cfg_.learning_rate * g; break;
        case OptimizerKind::Momentum: {
          Mat& v = state(first_, p);
          v = cfg_.momentum * v + g;
          p->value -= cfg_.learning_rate * v;
          break;
        }
        case OptimizerKind::Adam: {
          Mat& m = state(first_, p);
          Mat& v = state(second_, p);
          m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
          v = cfg_.beta2 * v + (1 - cfg_.beta2) * g.cwiseProduct(g);
          const double c1 = 1 - std::pow(cfg_.beta1, double(steps_));
          const double c2 = 1 - std::pow(cfg_.beta2, double(steps_));
          p->value.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
          break;
        }
      }
    }
  }

 private:
  static Mat& state(std::map<std::string, Mat>& slots, const Parameter* p) {
    auto it = slots.find(p->name);
    if (it == slots.end()) it = slots.emplace(p->name, Mat::Zero(p->value.rows(), p->value.cols())).first;
    return it->second;
  }

  OptimizerConfig cfg_;
  long steps_ = 0;
  std::map<std::string, Mat> first_, second_;
};

}  // namespace cad

#endif  // CAD_PARAMS_HPP
