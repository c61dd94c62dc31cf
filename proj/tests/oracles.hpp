#ifndef CAD_TEST_ORACLES_HPP
#define CAD_TEST_ORACLES_HPP

// Reference computations shared by the unit suites and the acceptance binary.
// Each one is written independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cad/model.hpp"

namespace oracle {

/// AUC by visiting every (fake, real) pair.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  std::uint64_t pos = 0, neg = 0, twice = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++pos;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  for (bool l : y) neg += l ? 0 : 1;
  return 100.0 * double(twice) / (2.0 * double(pos) * double(neg));
}

/// AP: for each fake, precision among all clips scoring at least as high,
/// counted directly; fakes visited from highest score down.
inline double rank_walk_ap(const std::vector<double>& s, const std::vector<bool>& y) {
  std::vector<std::size_t> fakes;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (y[i]) fakes.push_back(i);
  std::stable_sort(fakes.begin(), fakes.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double acc = 0;
  for (std::size_t i : fakes) {
    std::uint64_t above = 0, fake_above = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        ++above;
        fake_above += y[j] ? 1 : 0;
      }
    acc += double(fake_above) / double(above);
  }
  return 100.0 * acc / double(fakes.size());
}

/// KL(softmax(p) || softmax(q)) for two vectors, in long double.
inline double kl_of_softmax(const std::vector<double>& p, const std::vector<double>& q) {
  auto softmax = [](const std::vector<double>& x) {
    const long double m = *std::max_element(x.begin(), x.end());
    std::vector<long double> e(x.size());
    long double z = 0;
    for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp((long double)x[i] - m);
    for (auto& v : e) v /= z;
    return e;
  };
  const auto a = softmax(p), b = softmax(q);
  long double kl = 0;
  for (std::size_t i = 0; i < a.size(); ++i) kl += a[i] * std::log(a[i] / b[i]);
  return double(kl);
}

/// Largest tensor-wise relative error ||analytic - numeric|| / max(norms)
/// over the given parameters; `loss` re-evaluates the scalar objective.
struct GradientReport {
  double worst_relative = 0;
  std::string worst_name;
  std::size_t checked_values = 0;
};

inline GradientReport compare_with_central_differences(const std::vector<cad::Parameter*>& params,
                                                       const std::function<double()>& loss, double step) {
  GradientReport r;
  for (cad::Parameter* p : params) {
    cad::Mat numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double keep = x;
      x = keep + step;
      const double up = loss();
      x = keep - step;
      const double down = loss();
      x = keep;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    r.checked_values += std::size_t(p->value.size());
    const double scale = std::max(p->grad.norm(), numeric.norm());
    const double rel = scale < 1e-12 ? 0.0 : (p->grad - numeric).norm() / scale;
    if (rel > r.worst_relative) {
      r.worst_relative = rel;
      r.worst_name = p->name;
    }
  }
  return r;
}

/// Small model and clip shapes for finite-difference work.
inline cad::model::ModelConfig toy_model_config() {
  cad::model::ModelConfig mc;
  mc.encoder.d = 8;
  mc.encoder.input_size = 8;
  mc.encoder.patch = 4;
  mc.encoder.shared_patch_width = 4;
  mc.encoder.specific_width = 4;
  mc.encoder.audio_bands = 4;
  mc.encoder.shared_audio_hidden = 8;
  mc.encoder.specific_audio_hidden = 8;
  mc.lora.rank = 2;
  mc.lora.alpha = 4;
  mc.ffn_hidden = 6;
  mc.projector_hidden = 6;
  mc.head_hidden = 5;
  return mc;
}

inline cad::synth::GeneratorConfig toy_generator_config() {
  cad::synth::GeneratorConfig g;
  g.shape.frames = 4;
  g.shape.height = 12;
  g.shape.width = 12;
  g.shape.samples = 4 * 32;
  return g;
}

}  // namespace oracle

#endif  // CAD_TEST_ORACLES_HPP
