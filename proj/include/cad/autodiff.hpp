#ifndef CAD_AUTODIFF_HPP
#define CAD_AUTODIFF_HPP

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Nodes hold their value
// and, after backward(), their gradient. Parameters enter the tape through
// Tape::param(); their gradients are accumulated into Parameter::grad so a
// minibatch can be processed one example (one tape) at a time.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cad/errors.hpp"

namespace cad::ad {

using Mat = Eigen::MatrixXd;

enum class Role { Frozen, Trainable, Lora };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::Frozen: return "frozen";
    case Role::Trainable: return "trainable";
    case Role::Lora: return "lora";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  if (s == "frozen") return Role::Frozen;
  if (s == "trainable") return Role::Trainable;
  if (s == "lora") return Role::Lora;
  throw FormatError("unknown parameter role '" + s + "'");
}

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Role role = Role::Trainable;
  bool trainable = true;  // frozen parameters can be unfrozen by an ablation

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat&)> backward;  // receives the node's gradient
    Parameter* param = nullptr;
  };

  Var constant(Mat value) { return push(std::move(value), false); }

  /// Parameters that are not trainable enter as constants.
  Var param(Parameter& p) {
    Var v = push(p.value, p.trainable);
    if (p.trainable) nodes_[std::size_t(v.id)].param = &p;
    return v;
  }

  /// Result node. `backward` is called only if some input needs a gradient.
  Var op(Mat value, std::initializer_list<Var> inputs, std::function<void(Tape&, const Mat&)> backward) {
    return op(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var op(Mat value, const std::vector<Var>& inputs, std::function<void(Tape&, const Mat&)> backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || node(in).requires_grad;
    Var v = push(std::move(value), needs);
    if (needs) nodes_[std::size_t(v.id)].backward = std::move(backward);
    return v;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_[std::size_t(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Backpropagates from a 1x1 node and adds parameter gradients into
  /// Parameter::grad (scaled by `weight`).
  void backward(Var root, double weight = 1.0) {
    if (node(root).value.size() != 1) throw PreconditionError("backward: root must be a scalar");
    if (!node(root).requires_grad) return;
    nodes_[std::size_t(root.id)].grad = Mat::Constant(1, 1, weight);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  const Node& node(Var v) const { return nodes_[std::size_t(v.id)]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Mat value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, int(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->node(*this).value; }
inline const Mat& Var::grad() const { return tape->node(*this).grad; }

// ---------------------------------------------------------------------------
// Operations. Every op captures its inputs by handle and reads their values
// from the tape during backward.

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ArgumentError("matmul: inner dimensions differ");
  Tape& t = *a.tape;
  return t.op(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T, the usual x W^T of a linear layer with W stored out x in.
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ArgumentError("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape;
  return t.op(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  return a.tape->op(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  return a.tape->op(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  return a.tape->op(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double s) {
  return a.tape->op(a.value() * s, {a}, [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

/// Adds a 1 x n row to every row of a.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ArgumentError("add_row: bias shape mismatch");
  Mat v = a.value().rowwise() + row.value().row(0);
  return a.tape->op(std::move(v), {a, row}, [a, row](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

/// x W^T + b for W (out x in) and b (1 x out).
inline Var linear(Var x, Var w, Var b) { return add_row(matmul_nt(x, w), b); }

inline Var transpose(Var a) {
  return a.tape->op(a.value().transpose(), {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g.transpose()); });
}

/// Tanh-approximated GELU; smooth everywhere, so finite differences agree.
inline Var gelu(Var a) {
  static constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  const Mat& x = a.value();
  Mat u = (k * (x.array() + 0.044715 * x.array().cube())).matrix();
  Mat th = u.array().tanh().matrix();
  Mat y = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return a.tape->op(std::move(y), {a}, [a, th](Tape& t, const Mat& g) {
    const auto& x = a.value().array();
    const auto sech2 = 1.0 - th.array().square();
    const auto d = 0.5 * (1.0 + th.array()) + 0.5 * x * sech2 * k * (1.0 + 3.0 * 0.044715 * x.square());
    t.accumulate(a, (g.array() * d).matrix());
  });
}

inline Var tanh(Var a) {
  Mat y = a.value().array().tanh().matrix();
  return a.tape->op(y, {a}, [a, y](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

inline Mat sigmoid_values(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

inline Var sigmoid(Var a) {
  Mat y = sigmoid_values(a.value());
  return a.tape->op(y, {a}, [a, y](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Mat softmax_rows_values(const Mat& x) {
  Mat y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y = (y.array().colwise() / y.rowwise().sum().array()).matrix();
  return y;
}

/// Softmax over each row.
inline Var softmax_rows(Var a) {
  Mat y = softmax_rows_values(a.value());
  return a.tape->op(y, {a}, [a, y](Tape& t, const Mat& g) {
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.accumulate(a, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

inline Var log_softmax_rows(Var a) {
  const Mat& x = a.value();
  const Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Mat shifted = x.colwise() - mx;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Mat y = shifted.colwise() - lse;
  Mat p = y.array().exp().matrix();
  return a.tape->op(std::move(y), {a}, [a, p](Tape& t, const Mat& g) {
    const Eigen::VectorXd s = g.rowwise().sum();
    t.accumulate(a, g - (p.array().colwise() * s.array()).matrix());
  });
}

/// Column means: (r x n) -> (1 x n).
inline Var mean_rows(Var a) {
  const double r = double(a.rows());
  return a.tape->op(a.value().colwise().mean(), {a}, [a, r](Tape& t, const Mat& g) {
    t.accumulate(a, Mat(g.replicate(a.rows(), 1) / r));
  });
}

/// Row means: (r x n) -> (r x 1).
inline Var mean_cols(Var a) {
  const double c = double(a.cols());
  return a.tape->op(a.value().rowwise().mean(), {a}, [a, c](Tape& t, const Mat& g) {
    t.accumulate(a, Mat(g.replicate(1, a.cols()) / c));
  });
}

/// Means over consecutive groups of `group` rows: (k*group x n) -> (k x n).
inline Var mean_row_groups(Var a, Eigen::Index group) {
  if (group <= 0 || a.rows() % group != 0) throw ArgumentError("mean_row_groups: rows not divisible by group");
  const Eigen::Index k = a.rows() / group;
  Mat y(k, a.cols());
  for (Eigen::Index i = 0; i < k; ++i) y.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return a.tape->op(std::move(y), {a}, [a, group, k](Tape& t, const Mat& g) {
    Mat ga(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < k; ++i) ga.middleRows(i * group, group) = g.row(i).replicate(group, 1) / double(group);
    t.accumulate(a, ga);
  });
}

/// Concatenation along columns: [(r x c1) (r x c2) ...] -> (r x sum c).
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ArgumentError("concat_cols: row count mismatch");
    c += p.cols();
  }
  Mat y(r, c);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts[0].tape->op(std::move(y), parts, [parts](Tape& t, const Mat& g) {
    Eigen::Index o = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

/// Row-major flatten: (r x c) -> (1 x r*c).
inline Var flatten_rows(Var a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat y(1, r * c);
  for (Eigen::Index i = 0; i < r; ++i) y.block(0, i * c, 1, c) = a.value().row(i);
  return a.tape->op(std::move(y), {a}, [a, r, c](Tape& t, const Mat& g) {
    Mat ga(r, c);
    for (Eigen::Index i = 0; i < r; ++i) ga.row(i) = g.block(0, i * c, 1, c);
    t.accumulate(a, ga);
  });
}

/// Regroups rows: (k*group x c) -> (k x group*c), row i holding rows i*group..i*group+group-1.
inline Var group_rows(Var a, Eigen::Index group) {
  if (group <= 0 || a.rows() % group != 0) throw ArgumentError("group_rows: rows not divisible by group");
  const Eigen::Index k = a.rows() / group, c = a.cols();
  Mat y(k, group * c);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < group; ++j) y.block(i, j * c, 1, c) = a.value().row(i * group + j);
  return a.tape->op(std::move(y), {a}, [a, group, k, c](Tape& t, const Mat& g) {
    Mat ga(k * group, c);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < group; ++j) ga.row(i * group + j) = g.block(i, j * c, 1, c);
    t.accumulate(a, ga);
  });
}

/// Circular row shift: out.row(i) = a.row((i - k) mod r).
inline Var shift_rows(Var a, Eigen::Index k) {
  const Eigen::Index r = a.rows();
  auto src = [r, k](Eigen::Index i) { return ((i - k) % r + r) % r; };
  Mat y(r, a.cols());
  for (Eigen::Index i = 0; i < r; ++i) y.row(i) = a.value().row(src(i));
  return a.tape->op(std::move(y), {a}, [a, r, src](Tape& t, const Mat& g) {
    Mat ga(r, a.cols());
    for (Eigen::Index i = 0; i < r; ++i) ga.row(src(i)) = g.row(i);
    t.accumulate(a, ga);
  });
}

inline Var sum(Var a) {
  return a.tape->op(Mat::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / double(a.value().size())); }

/// Each row divided by its L2 norm. `what` names the operand in the error.
inline Var l2_normalize_rows(Var a, const std::string& what = "vector", double eps = 1e-12) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > eps)) throw NormalizationError(what + " has zero norm");
  Mat y = (a.value().array().colwise() / norms.array()).matrix();
  return a.tape->op(y, {a}, [a, y, norms](Tape& t, const Mat& g) {
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    Mat ga = ((g - (y.array().colwise() * dot.array()).matrix()).array().colwise() / norms.array()).matrix();
    t.accumulate(a, ga);
  });
}

/// Value copy that blocks gradient flow.
inline Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

/// Numerically stable binary cross-entropy on a 1x1 logit.
inline Var bce_with_logits(Var logit, double target) {
  const double x = logit.scalar();
  const double loss = std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
  return logit.tape->op(Mat::Constant(1, 1, loss), {logit}, [logit, target](Tape& t, const Mat& g) {
    const double s = 1.0 / (1.0 + std::exp(-logit.scalar()));
    t.accumulate(logit, Mat::Constant(1, 1, g(0, 0) * (s - target)));
  });
}

/// Sum over rows of KL(softmax(p_row) || softmax(q_row)).
inline Var kl_softmax_rows(Var p_logits, Var q_logits) {
  detail::same_shape(p_logits, q_logits, "kl_softmax_rows");
  Var log_p = log_softmax_rows(p_logits);
  Var log_q = log_softmax_rows(q_logits);
  Var p = softmax_rows(p_logits);
  return sum(mul(p, sub(log_p, log_q)));
}

}  // namespace cad::ad

#endif  // CAD_AUTODIFF_HPP
