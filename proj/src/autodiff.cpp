#include "npx/autodiff.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace npx::ad {

namespace {

bool g_break_backward = false;

std::string shape_str(const Var& v) {
  return std::to_string(v->rows()) + "x" + std::to_string(v->cols());
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
}

Var make_node(std::string op, Eigen::MatrixXd value, std::vector<Var> inputs,
              std::function<void(Node&)> backprop) {
  if (!value.allFinite())
    throw NumericError("op '" + op + "' produced a non-finite value");
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->value = std::move(value);
  for (const auto& in : inputs)
    if (in->requires_grad) n->requires_grad = true;
  n->inputs = std::move(inputs);
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void accum(const Var& in, const Eigen::MatrixXd& g) {
  if (in->requires_grad) in->grad += g;
}

}  // namespace

void set_break_backward(bool broken) { g_break_backward = broken; }

Var leaf(Eigen::MatrixXd value, bool requires_grad, std::string name) {
  if (!value.allFinite()) throw NumericError("leaf '" + name + "' has non-finite values");
  auto n = std::make_shared<Node>();
  n->op = std::move(name);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Eigen::MatrixXd value) { return leaf(std::move(value), false, "const"); }

Var constant(double scalar) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = scalar;
  return constant(std::move(m));
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows())
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  return make_node("matmul", a->value * b->value, {a, b}, [](Node& n) {
    accum(n.inputs[0], n.grad * n.inputs[1]->value.transpose());
    accum(n.inputs[1], n.inputs[0]->value.transpose() * n.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  return make_node("add", a->value + b->value, {a, b}, [](Node& n) {
    accum(n.inputs[0], n.grad);
    accum(n.inputs[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  return make_node("sub", a->value - b->value, {a, b}, [](Node& n) {
    accum(n.inputs[0], n.grad);
    accum(n.inputs[1], -n.grad);
  });
}

Var scale(const Var& a, double c) {
  return make_node("scale", a->value * c, {a},
                   [c](Node& n) { accum(n.inputs[0], n.grad * c); });
}

Var add_const(const Var& a, double c) {
  return make_node("add_const", (a->value.array() + c).matrix(), {a},
                   [](Node& n) { accum(n.inputs[0], n.grad); });
}

Var transpose(const Var& a) {
  return make_node("transpose", a->value.transpose(), {a},
                   [](Node& n) { accum(n.inputs[0], n.grad.transpose()); });
}

Var row_sum(const Var& a) {
  Eigen::MatrixXd v = a->value.rowwise().sum();
  return make_node("row_sum", v, {a}, [](Node& n) {
    accum(n.inputs[0], n.grad.replicate(1, n.inputs[0]->cols()));
  });
}

Var col_sum(const Var& a) {
  Eigen::MatrixXd v = a->value.colwise().sum();
  return make_node("col_sum", v, {a}, [](Node& n) {
    accum(n.inputs[0], n.grad.replicate(n.inputs[0]->rows(), 1));
  });
}

Var sum_all(const Var& a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a->value.sum();
  return make_node("sum_all", v, {a}, [](Node& n) {
    accum(n.inputs[0],
          Eigen::MatrixXd::Constant(n.inputs[0]->rows(), n.inputs[0]->cols(), n.grad(0, 0)));
  });
}

Var flatten(const Var& a) {
  const Eigen::Index r = a->rows(), c = a->cols();
  Eigen::MatrixXd v(1, r * c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) v(0, i * c + j) = a->value(i, j);
  return make_node("flatten", v, {a}, [r, c](Node& n) {
    Eigen::MatrixXd g(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) g(i, j) = n.grad(0, i * c + j);
    accum(n.inputs[0], g);
  });
}

Var relu(const Var& a) {
  Eigen::MatrixXd v = a->value.cwiseMax(0.0);
  return make_node("relu", v, {a}, [](Node& n) {
    // subgradient at 0 is 0
    Eigen::ArrayXXd mask = (n.inputs[0]->value.array() > 0.0).cast<double>();
    if (g_break_backward) mask *= 1.05;
    accum(n.inputs[0], (n.grad.array() * mask).matrix());
  });
}

Var softsign_half(const Var& a) {
  if ((a->value.array() < 0.0).any())
    throw DomainError("softsign_half: negative input");
  Eigen::ArrayXXd denom = a->value.array() + 0.5;
  return make_node("softsign_half", (a->value.array() / denom).matrix(), {a}, [](Node& n) {
    Eigen::ArrayXXd d = n.inputs[0]->value.array() + 0.5;
    accum(n.inputs[0], (n.grad.array() * 0.5 / (d * d)).matrix());
  });
}

Var sigmoid(const Var& a) {
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-a->value.array()).exp());
  return make_node("sigmoid", s.matrix(), {a}, [](Node& n) {
    Eigen::ArrayXXd s = n.value.array();
    accum(n.inputs[0], (n.grad.array() * s * (1.0 - s)).matrix());
  });
}

Var log_elem(const Var& a) {
  if ((a->value.array() <= 0.0).any()) throw DomainError("log: non-positive input");
  return make_node("log", a->value.array().log().matrix(), {a}, [](Node& n) {
    accum(n.inputs[0], (n.grad.array() / n.inputs[0]->value.array()).matrix());
  });
}

Var abs_elem(const Var& a) {
  return make_node("abs", a->value.cwiseAbs(), {a}, [](Node& n) {
    // subgradient at 0 is 0
    Eigen::ArrayXXd sgn = n.inputs[0]->value.array().sign();
    accum(n.inputs[0], (n.grad.array() * sgn).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("clamp: lo must be < hi");
  Eigen::MatrixXd v = a->value.cwiseMax(lo).cwiseMin(hi);
  return make_node("clamp", v, {a}, [lo, hi](Node& n) {
    Eigen::ArrayXXd mask = (n.inputs[0]->value.array() >= lo &&
                            n.inputs[0]->value.array() <= hi)
                               .cast<double>();
    accum(n.inputs[0], (n.grad.array() * mask).matrix());
  });
}

Var row_scale_add(const Var& e, const Var& p, const Var& b) {
  check_same_shape("row_scale_add", e, b);
  if (p->cols() != 1 || p->rows() != e->rows())
    throw ShapeError("row_scale_add: p must be " + std::to_string(e->rows()) + "x1, got " +
                     shape_str(p));
  Eigen::MatrixXd v =
      (e->value.array().colwise() * p->value.col(0).array()).matrix() + b->value;
  return make_node("row_scale_add", v, {e, p, b}, [](Node& n) {
    const auto& e = n.inputs[0];
    const auto& p = n.inputs[1];
    accum(e, (n.grad.array().colwise() * p->value.col(0).array()).matrix());
    if (p->requires_grad) {
      Eigen::MatrixXd gp(p->rows(), 1);
      for (Eigen::Index k = 0; k < p->rows(); ++k)
        gp(k, 0) = e->value.row(k).dot(n.grad.row(k));
      p->grad += gp;
    }
    accum(n.inputs[2], n.grad);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->cols() != w->cols())
    throw ShapeError("linear: input " + shape_str(x) + " vs weight " + shape_str(w));
  if (b->rows() != w->rows() || b->cols() != 1)
    throw ShapeError("linear: bias " + shape_str(b) + " vs weight " + shape_str(w));
  Eigen::MatrixXd v = x->value * w->value.transpose();
  v.rowwise() += b->value.col(0).transpose();
  return make_node("linear", v, {x, w, b}, [](Node& n) {
    accum(n.inputs[0], n.grad * n.inputs[1]->value);
    accum(n.inputs[1], n.grad.transpose() * n.inputs[0]->value);
    if (n.inputs[2]->requires_grad)
      n.inputs[2]->grad += n.grad.colwise().sum().transpose();
  });
}

Var bernoulli_kl_sum(const Var& a, double q, double clamp_eps) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("bernoulli_kl_sum: q must be in (0,1)");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5))
    throw DomainError("bernoulli_kl_sum: clamp_eps must be in (0, 0.5)");
  Eigen::ArrayXXd ac = a->value.array().max(clamp_eps).min(1.0 - clamp_eps);
  // ratio form: an entry exactly equal to q contributes log(1) == 0
  Eigen::ArrayXXd kl = q * (q / ac).log() + (1.0 - q) * ((1.0 - q) / (1.0 - ac)).log();
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = kl.sum();
  return make_node("bernoulli_kl_sum", v, {a}, [q, clamp_eps](Node& n) {
    const Eigen::ArrayXXd& raw = n.inputs[0]->value.array();
    Eigen::ArrayXXd ac = raw.max(clamp_eps).min(1.0 - clamp_eps);
    Eigen::ArrayXXd mask =
        (raw >= clamp_eps && raw <= 1.0 - clamp_eps).cast<double>();
    Eigen::ArrayXXd d = (-q / ac + (1.0 - q) / (1.0 - ac)) * mask;
    accum(n.inputs[0], (n.grad(0, 0) * d).matrix());
  });
}

Var weighted_bce(const Var& logit, int label, double delta) {
  if (logit->rows() != 1 || logit->cols() != 1)
    throw ShapeError("weighted_bce: logit must be scalar, got " + shape_str(logit));
  if (label != 0 && label != 1) throw DomainError("weighted_bce: label must be 0 or 1");
  constexpr double eps = 1e-7;
  const double z = logit->value(0, 0);
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double pc = std::min(std::max(p, eps), 1.0 - eps);
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = label == 1 ? -delta * std::log(pc) : -(1.0 - delta) * std::log(1.0 - pc);
  return make_node("weighted_bce", v, {logit}, [label, delta, p, pc](Node& n) {
    double g = 0.0;
    if (p >= 1e-7 && p <= 1.0 - 1e-7) {
      double w = label == 1 ? delta : (1.0 - delta);
      g = label == 1 ? -w * (1.0 - pc) : w * pc;
    }
    Eigen::MatrixXd gm(1, 1);
    gm(0, 0) = n.grad(0, 0) * g;
    accum(n.inputs[0], gm);
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, bool train,
              BatchNormState& state) {
  const Eigen::Index c = x->cols();
  if (gamma->rows() != c || gamma->cols() != 1 || beta->rows() != c || beta->cols() != 1)
    throw ShapeError("batchnorm: gamma/beta must be " + std::to_string(c) + "x1");
  if (state.running_mean.size() != c) state.init(c);

  const double eps = kBatchNormEps;
  if (train) {
    const double n = static_cast<double>(x->rows());
    Eigen::VectorXd mu = x->value.colwise().mean();
    Eigen::VectorXd var(c);
    for (Eigen::Index j = 0; j < c; ++j)
      var(j) = (x->value.col(j).array() - mu(j)).square().sum() / n;
    state.running_mean = (1.0 - kBatchNormMomentum) * state.running_mean +
                         kBatchNormMomentum * mu;
    state.running_var = (1.0 - kBatchNormMomentum) * state.running_var +
                        kBatchNormMomentum * var;
    Eigen::VectorXd inv = (var.array() + eps).rsqrt();
    Eigen::MatrixXd xhat = x->value;
    xhat.rowwise() -= mu.transpose();
    xhat = xhat.array().rowwise() * inv.transpose().array();
    Eigen::MatrixXd out =
        (xhat.array().rowwise() * gamma->value.col(0).transpose().array()).matrix();
    out.rowwise() += beta->value.col(0).transpose();
    return make_node("batchnorm", out, {x, gamma, beta},
                     [mu, inv, xhat, n](Node& nd) {
                       const auto& x = nd.inputs[0];
                       const auto& gamma = nd.inputs[1];
                       Eigen::MatrixXd dxhat =
                           nd.grad.array().rowwise() *
                           gamma->value.col(0).transpose().array();
                       Eigen::MatrixXd xc = x->value;
                       xc.rowwise() -= mu.transpose();
                       Eigen::VectorXd dvar(x->cols());
                       Eigen::VectorXd dmu(x->cols());
                       for (Eigen::Index j = 0; j < x->cols(); ++j) {
                         double iv = inv(j);
                         dvar(j) = -0.5 * iv * iv * iv *
                                   (dxhat.col(j).array() * xc.col(j).array()).sum();
                         dmu(j) = -iv * dxhat.col(j).sum() +
                                  dvar(j) * (-2.0 / n) * xc.col(j).sum();
                       }
                       if (x->requires_grad) {
                         Eigen::MatrixXd dx = dxhat.array().rowwise() *
                                              inv.transpose().array();
                         dx += (xc.array().rowwise() *
                                (2.0 / n * dvar).transpose().array())
                                   .matrix();
                         dx.rowwise() += (dmu / n).transpose();
                         x->grad += dx;
                       }
                       if (gamma->requires_grad)
                         gamma->grad +=
                             (nd.grad.array() * xhat.array()).colwise().sum().matrix()
                                 .transpose();
                       if (nd.inputs[2]->requires_grad)
                         nd.inputs[2]->grad += nd.grad.colwise().sum().transpose();
                     });
  }

  Eigen::VectorXd inv = (state.running_var.array() + eps).rsqrt();
  Eigen::MatrixXd xhat = x->value;
  xhat.rowwise() -= state.running_mean.transpose();
  xhat = xhat.array().rowwise() * inv.transpose().array();
  Eigen::MatrixXd out =
      (xhat.array().rowwise() * gamma->value.col(0).transpose().array()).matrix();
  out.rowwise() += beta->value.col(0).transpose();
  return make_node("batchnorm_eval", out, {x, gamma, beta}, [inv, xhat](Node& nd) {
    const auto& gamma = nd.inputs[1];
    if (nd.inputs[0]->requires_grad) {
      Eigen::MatrixXd dx = nd.grad.array().rowwise() *
                           (gamma->value.col(0).array() * inv.array()).transpose();
      nd.inputs[0]->grad += dx;
    }
    if (gamma->requires_grad)
      gamma->grad +=
          (nd.grad.array() * xhat.array()).colwise().sum().matrix().transpose();
    if (nd.inputs[2]->requires_grad)
      nd.inputs[2]->grad += nd.grad.colwise().sum().transpose();
  });
}

Var dropout(const Var& x, double p, bool train, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must be in [0, 1)");
  if (!train || p == 0.0)
    return make_node("dropout_eval", x->value, {x},
                     [](Node& n) { accum(n.inputs[0], n.grad); });
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::ArrayXXd mask(x->rows(), x->cols());
  const double keep = 1.0 - p;
  for (Eigen::Index i = 0; i < x->rows(); ++i)
    for (Eigen::Index j = 0; j < x->cols(); ++j)
      mask(i, j) = u(rng) < keep ? 1.0 / keep : 0.0;
  return make_node("dropout", (x->value.array() * mask).matrix(), {x}, [mask](Node& n) {
    accum(n.inputs[0], (n.grad.array() * mask).matrix());
  });
}

void backward(const Var& loss) {
  if (loss->rows() != 1 || loss->cols() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss));

  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Eigen::MatrixXd::Zero(n->rows(), n->cols());
  loss->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
}

GradCheckReport grad_check(const std::function<Var()>& f,
                           const std::vector<std::pair<std::string, Var>>& params,
                           double h, double tol) {
  Var loss = f();
  backward(loss);
  std::vector<Eigen::MatrixXd> ad_grads;
  for (const auto& [name, p] : params) ad_grads.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, p] = params[k];
    GradCheckEntry entry{name, 0.0};
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) {
        const double orig = p->value(i, j);
        p->value(i, j) = orig + h;
        const double fp = f()->value(0, 0);
        p->value(i, j) = orig - h;
        const double fm = f()->value(0, 0);
        p->value(i, j) = orig;
        const double g_fd = (fp - fm) / (2.0 * h);
        const double g_ad = ad_grads[k](i, j);
        const double rel =
            std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
        entry.max_rel_err = std::max(entry.max_rel_err, rel);
      }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

void save_checkpoint(const std::vector<std::pair<std::string, Eigen::MatrixXd>>& entries,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("NPXW", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  for (const auto& [name, m] : entries) {
    std::uint32_t len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(name.data(), len);
    std::uint32_t rank = 2;
    out.write(reinterpret_cast<const char*>(&rank), 4);
    std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()),
                             static_cast<std::uint64_t>(m.cols())};
    out.write(reinterpret_cast<const char*>(dims), 16);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double v = m(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
}

std::vector<std::pair<std::string, Eigen::MatrixXd>> load_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "NPXW", 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw IoError("unsupported checkpoint version");
  std::vector<std::pair<std::string, Eigen::MatrixXd>> out;
  while (true) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in) break;  // EOF
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (rank != 2) throw IoError("unsupported rank in checkpoint entry '" + name + "'");
    std::uint64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), 16);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), 8);
        m(i, j) = v;
      }
    if (!in) throw IoError("truncated checkpoint: " + path);
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace npx::ad
