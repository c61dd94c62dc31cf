#ifndef CAD_INFOTHEORY_HPP
#define CAD_INFOTHEORY_HPP

// Discrete entropy / mutual-information toolkit.
//
// Tables are flat, row-major over the outcome tuple (last variable varies
// fastest). Variable indices are positions in the tuple: for three-variable
// joints they are x1 = 0, x2 = 1, y = 2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cad/errors.hpp"

namespace cad::info {

enum class LogBase { Nats, Bits };

/// Probabilities below this are treated as exact zeros.
inline constexpr double kZeroMass = 1e-15;
inline constexpr double kNormTolerance = 1e-12;

inline double log_in(double x, LogBase base) {
  return base == LogBase::Bits ? std::log2(x) : std::log(x);
}

/// -sum p log p over a probability vector, 0 log 0 := 0.
inline double shannon(std::span<const double> p, LogBase base = LogBase::Nats) {
  double h = 0.0;
  for (double v : p) {
    if (v > kZeroMass) h -= v * log_in(v, base);
  }
  return h;
}

/// -sum p log q. Infinite when q has a zero where p has mass.
inline double cross_entropy(std::span<const double> p, std::span<const double> q,
                            LogBase base = LogBase::Nats) {
  if (p.size() != q.size()) throw ArgumentError("cross_entropy: size mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= kZeroMass) continue;
    if (q[i] <= kZeroMass) return std::numeric_limits<double>::infinity();
    h -= p[i] * log_in(q[i], base);
  }
  return h;
}

class DiscreteJoint {
 public:
  DiscreteJoint(std::vector<std::size_t> support_sizes, std::vector<double> probs)
      : sizes_(std::move(support_sizes)), probs_(std::move(probs)) {
    if (sizes_.size() < 2 || sizes_.size() > 3)
      throw ArgumentError("DiscreteJoint: need 2 or 3 variables");
    std::size_t cells = 1;
    for (std::size_t s : sizes_) {
      if (s == 0) throw ArgumentError("DiscreteJoint: support sizes must be positive");
      cells *= s;
    }
    if (cells != probs_.size()) {
      std::ostringstream os;
      os << "DiscreteJoint: table has " << probs_.size() << " entries, expected " << cells;
      throw ArgumentError(os.str());
    }
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) throw ArgumentError("DiscreteJoint: negative or NaN probability");
      total += p;
    }
    if (std::abs(total - 1.0) > kNormTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "DiscreteJoint: probabilities sum to " << total;
      throw ArgumentError(os.str());
    }
  }

  std::size_t arity() const { return sizes_.size(); }
  const std::vector<std::size_t>& support_sizes() const { return sizes_; }
  const std::vector<double>& probs() const { return probs_; }

  std::vector<std::size_t> unravel(std::size_t flat) const {
    std::vector<std::size_t> idx(sizes_.size());
    for (std::size_t k = sizes_.size(); k-- > 0;) {
      idx[k] = flat % sizes_[k];
      flat /= sizes_[k];
    }
    return idx;
  }

  std::size_t ravel(std::span<const std::size_t> outcome) const {
    std::size_t flat = 0;
    for (std::size_t k = 0; k < sizes_.size(); ++k) flat = flat * sizes_[k] + outcome[k];
    return flat;
  }

  /// Marginal table over `vars`, flattened in the order the variables are given.
  std::vector<double> marginal(std::span<const std::size_t> vars) const {
    check_vars(vars);
    std::size_t cells = 1;
    for (std::size_t v : vars) cells *= sizes_[v];
    std::vector<double> out(cells, 0.0);
    for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
      const auto idx = unravel(flat);
      std::size_t m = 0;
      for (std::size_t v : vars) m = m * sizes_[v] + idx[v];
      out[m] += probs_[flat];
    }
    return out;
  }

  void check_vars(std::span<const std::size_t> vars) const {
    if (vars.empty()) throw ArgumentError("variable subset is empty");
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (vars[i] >= sizes_.size()) {
        std::ostringstream os;
        os << "unknown variable index " << vars[i] << " (joint has " << sizes_.size() << ")";
        throw ArgumentError(os.str());
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (vars[j] == vars[i]) throw ArgumentError("variable listed twice");
      }
    }
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<double> probs_;
};

inline double entropy(const DiscreteJoint& joint, std::span<const std::size_t> vars,
                      LogBase base = LogBase::Nats) {
  const auto m = joint.marginal(vars);
  return shannon(m, base);
}

inline double entropy(const DiscreteJoint& joint, std::initializer_list<std::size_t> vars,
                      LogBase base = LogBase::Nats) {
  return entropy(joint, std::span<const std::size_t>(vars.begin(), vars.size()), base);
}

/// I(a;b) = H(a) + H(b) - H(a,b).
inline double mutual_information_pair(const DiscreteJoint& joint, std::size_t a, std::size_t b,
                                      LogBase base = LogBase::Nats) {
  if (a == b) throw ArgumentError("mutual_information_pair: same variable passed twice");
  // H(a,b) is computed over the ordered pair (min, max) so that the result is
  // bit-identical under argument swap.
  const std::size_t lo = std::min(a, b), hi = std::max(a, b);
  return entropy(joint, {lo}, base) + entropy(joint, {hi}, base) - entropy(joint, {lo, hi}, base);
}

/// Three-way interaction information, inclusion-exclusion over entropies:
/// H(x1)+H(x2)+H(y) - H(x1,y) - H(x2,y) - H(x1,x2) + H(x1,x2,y).
inline double mutual_information_triple(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  if (joint.arity() != 3) throw ArgumentError("mutual_information_triple: joint must have 3 variables");
  return entropy(joint, {0}, base) + entropy(joint, {1}, base) + entropy(joint, {2}, base) -
         entropy(joint, {0, 2}, base) - entropy(joint, {1, 2}, base) - entropy(joint, {0, 1}, base) +
         entropy(joint, {0, 1, 2}, base);
}

/// Interaction information by the conditioning route, I(x1;x2) - I(x1;x2|y),
/// both terms summed cell by cell. Used as the second route for the entropy
/// expansion above.
inline double interaction_by_conditioning(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  if (joint.arity() != 3) throw ArgumentError("interaction_by_conditioning: joint must have 3 variables");
  const auto& s = joint.support_sizes();
  const auto p12 = joint.marginal(std::vector<std::size_t>{0, 1});
  const auto p1 = joint.marginal(std::vector<std::size_t>{0});
  const auto p2 = joint.marginal(std::vector<std::size_t>{1});
  const auto p1y = joint.marginal(std::vector<std::size_t>{0, 2});
  const auto p2y = joint.marginal(std::vector<std::size_t>{1, 2});
  const auto py = joint.marginal(std::vector<std::size_t>{2});

  double mi12 = 0.0;
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t j = 0; j < s[1]; ++j) {
      const double p = p12[i * s[1] + j];
      if (p > kZeroMass) mi12 += p * log_in(p / (p1[i] * p2[j]), base);
    }
  double cmi = 0.0;
  for (std::size_t flat = 0; flat < joint.probs().size(); ++flat) {
    const double p = joint.probs()[flat];
    if (p <= kZeroMass) continue;
    const auto idx = joint.unravel(flat);
    const double num = p * py[idx[2]];
    const double den = p1y[idx[0] * s[2] + idx[2]] * p2y[idx[1] * s[2] + idx[2]];
    cmi += p * log_in(num / den, base);
  }
  return mi12 - cmi;
}

/// Residual of the entropy expansion against the conditioning route.
inline double verify_interaction_expansion(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  return std::abs(mutual_information_triple(joint, base) - interaction_by_conditioning(joint, base));
}

/// Builds the 3-variable joint (x1, x2, y) where y is the pairing of (x1, x2),
/// i.e. y = x1 * |x2| + x2. Both x1 and x2 are then functions of y.
inline DiscreteJoint pairing_joint(const DiscreteJoint& x1x2) {
  if (x1x2.arity() != 2) throw ArgumentError("pairing_joint: expected a 2-variable joint");
  const std::size_t n1 = x1x2.support_sizes()[0], n2 = x1x2.support_sizes()[1];
  const std::size_t ny = n1 * n2;
  std::vector<double> probs(n1 * n2 * ny, 0.0);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      const std::size_t y = i * n2 + j;
      probs[(i * n2 + j) * ny + y] = x1x2.probs()[i * n2 + j];
    }
  return DiscreteJoint({n1, n2, ny}, std::move(probs));
}

/// Joint of (x1, x2, f(x1, x2)) for an arbitrary map f into {0..ny-1}.
inline DiscreteJoint function_joint(const DiscreteJoint& x1x2, std::size_t ny,
                                    const std::function<std::size_t(std::size_t, std::size_t)>& f) {
  if (x1x2.arity() != 2) throw ArgumentError("function_joint: expected a 2-variable joint");
  const std::size_t n1 = x1x2.support_sizes()[0], n2 = x1x2.support_sizes()[1];
  std::vector<double> probs(n1 * n2 * ny, 0.0);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      const std::size_t y = f(i, j);
      if (y >= ny) throw ArgumentError("function_joint: f maps outside the support of y");
      probs[(i * n2 + j) * ny + y] = x1x2.probs()[i * n2 + j];
    }
  return DiscreteJoint({n1, n2, ny}, std::move(probs));
}

using ResidualMap = std::map<std::string, double>;

/// Checks H(x1,x2,y) = H(x1,y) = H(x2,y) = H(y) and the reduced form
/// I(x1;x2;y) = H(x1) + H(x2) - H(x1,x2). Requires y to be a function of
/// (x1, x2); the chained equalities hold exactly when that map is injective.
inline ResidualMap verify_subset_reduction(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  if (joint.arity() != 3) throw ArgumentError("verify_subset_reduction: joint must have 3 variables");
  const auto& s = joint.support_sizes();
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t j = 0; j < s[1]; ++j) {
      std::size_t hits = 0;
      std::size_t first_y = 0;
      for (std::size_t y = 0; y < s[2]; ++y) {
        const std::size_t cell[] = {i, j, y};
        if (joint.probs()[joint.ravel(cell)] > kZeroMass) {
          if (hits == 0) first_y = y;
          if (++hits > 1) {
            std::ostringstream os;
            os << "y is not determined by (x1, x2): outcome (" << i << ", " << j
               << ") maps to both y=" << first_y << " and y=" << y;
            throw PreconditionError(os.str());
          }
        }
      }
    }
  const double h12y = entropy(joint, {0, 1, 2}, base);
  const double h1y = entropy(joint, {0, 2}, base);
  const double h2y = entropy(joint, {1, 2}, base);
  const double hy = entropy(joint, {2}, base);
  const double reduced = entropy(joint, {0}, base) + entropy(joint, {1}, base) - entropy(joint, {0, 1}, base);
  return {
      {"H(x1,x2,y)=H(x1,y)", std::abs(h12y - h1y)},
      {"H(x1,y)=H(x2,y)", std::abs(h1y - h2y)},
      {"H(x2,y)=H(y)", std::abs(h2y - hy)},
      {"I(x1;x2;y)=H(x1)+H(x2)-H(x1,x2)", std::abs(mutual_information_triple(joint, base) - reduced)},
  };
}

/// MI of a 2-D table given as a flat row-major vector; the table need not be
/// normalized (it is a conditional slice scaled by its mass).
inline double table_mi(std::span<const double> table, std::size_t rows, std::size_t cols, LogBase base) {
  const double mass = std::accumulate(table.begin(), table.end(), 0.0);
  if (mass <= kZeroMass) return 0.0;
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      pr[i] += table[i * cols + j] / mass;
      pc[j] += table[i * cols + j] / mass;
    }
  double mi = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = table[i * cols + j] / mass;
      if (p > kZeroMass) mi += p * log_in(p / (pr[i] * pc[j]), base);
    }
  return mi;
}

struct ChainDecomposition {
  double mi_x1_y = 0.0;       // I(x1;y)
  double interaction = 0.0;   // I(x1;x2;y), entropy expansion
  double conditional_mi = 0.0;  // I(x1;y|x2), expectation over x2
  double conditional_joint_entropy = 0.0;  // H(x1,y|x2), the literal term in the source derivation
  double residual = 0.0;      // |I(x1;y) - I(x1;x2;y) - I(x1;y|x2)|
};

inline ChainDecomposition verify_chain_decomposition(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  if (joint.arity() != 3) throw ArgumentError("verify_chain_decomposition: joint must have 3 variables");
  const auto& s = joint.support_sizes();
  ChainDecomposition out;
  out.mi_x1_y = mutual_information_pair(joint, 0, 2, base);
  out.interaction = mutual_information_triple(joint, base);

  const auto p2 = joint.marginal(std::vector<std::size_t>{1});
  for (std::size_t j = 0; j < s[1]; ++j) {
    if (p2[j] <= kZeroMass) continue;
    std::vector<double> slice(s[0] * s[2]);
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t y = 0; y < s[2]; ++y) {
        const std::size_t cell[] = {i, j, y};
        slice[i * s[2] + y] = joint.probs()[joint.ravel(cell)];
      }
    out.conditional_mi += p2[j] * table_mi(slice, s[0], s[2], base);
    for (double& v : slice) v /= p2[j];
    out.conditional_joint_entropy += p2[j] * shannon(slice, base);
  }
  out.residual = std::abs(out.mi_x1_y - out.interaction - out.conditional_mi);
  return out;
}

/// A family p(v, a | c) of conditional tables with a prior p(c).
struct ConditionalFamily {
  std::size_t v_size = 0;
  std::size_t a_size = 0;
  std::vector<double> context_prior;
  std::vector<std::vector<double>> tables;  // one v_size x a_size table per context
};

struct ConditionalMiDecomposition {
  double direct = 0.0;                   // I(v;a|c) summed cell by cell
  double expected_entropy = 0.0;         // E_c H(p(v|c))
  double expected_cross_entropy = 0.0;   // E_{c,a} CE(p(v|s), p(v|a,c)), s marginalized into (c, a)
  double residual = 0.0;
};

inline void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw PreconditionError(what + " has a negative or NaN entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kNormTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << " is not normalized (sums to " << total << ")";
    throw PreconditionError(os.str());
  }
}

inline ConditionalMiDecomposition verify_conditional_mi_decomposition(const ConditionalFamily& family,
                                                           LogBase base = LogBase::Nats) {
  const std::size_t nv = family.v_size, na = family.a_size;
  if (nv == 0 || na == 0) throw ArgumentError("verify_conditional_mi_decomposition: empty support");
  if (family.tables.size() != family.context_prior.size() || family.tables.empty())
    throw ArgumentError("verify_conditional_mi_decomposition: one table per context is required");
  check_distribution(family.context_prior, "context prior");
  for (std::size_t c = 0; c < family.tables.size(); ++c) {
    if (family.tables[c].size() != nv * na)
      throw ArgumentError("verify_conditional_mi_decomposition: table " + std::to_string(c) + " has the wrong size");
    check_distribution(family.tables[c], "conditional table " + std::to_string(c));
  }

  ConditionalMiDecomposition out;
  for (std::size_t c = 0; c < family.tables.size(); ++c) {
    const double pc = family.context_prior[c];
    if (pc <= kZeroMass) continue;
    const auto& t = family.tables[c];
    std::vector<double> pv(nv, 0.0), pa(na, 0.0);
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t a = 0; a < na; ++a) {
        pv[v] += t[v * na + a];
        pa[a] += t[v * na + a];
      }
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t a = 0; a < na; ++a) {
        const double p = t[v * na + a];
        if (p > kZeroMass) out.direct += pc * p * log_in(p / (pv[v] * pa[a]), base);
      }
    out.expected_entropy += pc * shannon(pv, base);
    for (std::size_t a = 0; a < na; ++a) {
      if (pa[a] <= kZeroMass) continue;
      std::vector<double> v_given_a(nv);
      for (std::size_t v = 0; v < nv; ++v) v_given_a[v] = t[v * na + a] / pa[a];
      // The per-sample conditional p(v|s) coincides with p(v|a,c) once the
      // sample is marginalized into (c, a).
      out.expected_cross_entropy += pc * pa[a] * cross_entropy(v_given_a, v_given_a, base);
    }
  }
  out.residual = std::abs(out.direct - (out.expected_entropy - out.expected_cross_entropy));
  return out;
}

struct InfoReport {
  std::map<std::string, double> entropies;
  std::map<std::string, double> mutual_informations;
  std::map<std::string, double> identity_residuals;
};

inline InfoReport info_report(const DiscreteJoint& joint, LogBase base = LogBase::Nats) {
  static const char* const kNames3[] = {"x1", "x2", "y"};
  static const char* const kNames2[] = {"x1", "x2"};
  const auto* names = joint.arity() == 3 ? kNames3 : kNames2;
  InfoReport r;
  const std::size_t n = joint.arity();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> vars;
    std::string key = "H(";
    for (std::size_t k = 0; k < n; ++k) {
      if (mask & (1u << k)) {
        if (!vars.empty()) key += ",";
        key += names[k];
        vars.push_back(k);
      }
    }
    r.entropies[key + ")"] = entropy(joint, vars, base);
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      r.mutual_informations[std::string("I(") + names[a] + ";" + names[b] + ")"] =
          mutual_information_pair(joint, a, b, base);
  if (n == 3) {
    r.mutual_informations["I(x1;x2;y)"] = mutual_information_triple(joint, base);
    r.identity_residuals["interaction_expansion"] = verify_interaction_expansion(joint, base);
    r.identity_residuals["chain_decomposition"] = verify_chain_decomposition(joint, base).residual;
  }
  return r;
}

/// Random table with support `sizes`; roughly one cell in eight is an exact
/// zero so the 0 log 0 convention is exercised.
inline DiscreteJoint random_joint(std::mt19937_64& rng, std::vector<std::size_t> sizes) {
  std::size_t cells = 1;
  for (std::size_t s : sizes) cells *= s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(cells);
  double total = 0.0;
  for (double& v : p) {
    v = u(rng) < 0.125 ? 0.0 : u(rng);
    total += v;
  }
  if (total <= 0.0) {
    p[0] = 1.0;
    total = 1.0;
  }
  for (double& v : p) v /= total;
  // Fold the rounding remainder into the largest cell.
  const double rem = 1.0 - std::accumulate(p.begin(), p.end(), 0.0);
  *std::max_element(p.begin(), p.end()) += rem;
  return DiscreteJoint(std::move(sizes), std::move(p));
}

inline ConditionalFamily random_family(std::mt19937_64& rng, std::size_t contexts, std::size_t nv, std::size_t na) {
  ConditionalFamily f;
  f.v_size = nv;
  f.a_size = na;
  const auto prior = random_joint(rng, {contexts, 1}).probs();
  f.context_prior = prior;
  for (std::size_t c = 0; c < contexts; ++c) f.tables.push_back(random_joint(rng, {nv, na}).probs());
  return f;
}

/// y = x1 xor x2 over two independent fair coins.
inline DiscreteJoint xor_joint() {
  std::vector<double> p(8, 0.0);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) p[(a * 2 + b) * 2 + (a ^ b)] = 0.25;
  return DiscreteJoint({2, 2, 2}, std::move(p));
}

struct IdentityResult {
  std::string name;
  double max_residual = 0.0;
  std::size_t trials = 0;
};

struct IdentitySuiteReport {
  std::vector<IdentityResult> identities;
  double xor_interaction_bits = 0.0;
  double tolerance = 1e-9;

  bool passed() const {
    for (const auto& r : identities)
      if (!(r.max_residual <= tolerance)) return false;
    return xor_interaction_bits == -1.0;
  }
};

/// Runs every identity on `trials` seeded random joints with supports in [2, 4].
inline IdentitySuiteReport run_identity_suite(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> support(2, 4);
  IdentitySuiteReport rep;
  rep.identities = {{"interaction_expansion", 0.0, trials},
                    {"subset_reduction", 0.0, trials},
                    {"pair_reduction", 0.0, trials},
                    {"chain_decomposition", 0.0, trials},
                    {"conditional_mi_decomposition", 0.0, trials}};
  auto bump = [](IdentityResult& r, double v) { r.max_residual = std::max(r.max_residual, v); };
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n1 = support(rng), n2 = support(rng), ny = support(rng);
    const auto joint3 = random_joint(rng, {n1, n2, ny});
    bump(rep.identities[0], verify_interaction_expansion(joint3));
    bump(rep.identities[3], verify_chain_decomposition(joint3).residual);

    const auto paired = pairing_joint(random_joint(rng, {n1, n2}));
    const auto residuals = verify_subset_reduction(paired);
    for (const auto& [name, value] : residuals) {
      if (name.rfind("I(", 0) == 0)
        bump(rep.identities[2], value);
      else
        bump(rep.identities[1], value);
    }

    std::uniform_int_distribution<std::size_t> ctx(2, 4);
    const auto family = random_family(rng, ctx(rng), n1, n2);
    bump(rep.identities[4], verify_conditional_mi_decomposition(family).residual);
  }
  rep.xor_interaction_bits = mutual_information_triple(xor_joint(), LogBase::Bits);
  return rep;
}

}  // namespace cad::info

#endif  // CAD_INFOTHEORY_HPP
