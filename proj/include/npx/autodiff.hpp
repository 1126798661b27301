#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "npx/errors.hpp"

namespace npx::ad {

// Reverse-mode tape over dense 64-bit matrices. A scalar is a 1x1 matrix;
// vectors are column matrices. Every op validates shapes and rejects
// non-finite outputs immediately.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;  // same shape; valid after backward()
  bool requires_grad = false;
  std::string op;  // diagnostic name
  std::vector<Var> inputs;
  // consumes this->grad and accumulates into the inputs' grads
  std::function<void(Node&)> backprop;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

Var leaf(Eigen::MatrixXd value, bool requires_grad = true, std::string name = "leaf");
Var constant(Eigen::MatrixXd value);
Var constant(double scalar);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var transpose(const Var& a);
Var row_sum(const Var& a);  // R x C -> R x 1
Var col_sum(const Var& a);  // R x C -> 1 x C
Var sum_all(const Var& a);  // -> 1 x 1
Var flatten(const Var& a);  // row-major -> 1 x (R*C)
Var relu(const Var& a);
// x / (0.5 + x) on nonnegative inputs; throws DomainError otherwise.
Var softsign_half(const Var& a);
Var sigmoid(const Var& a);
Var log_elem(const Var& a);
Var abs_elem(const Var& a);
Var clamp(const Var& a, double lo, double hi);
// out[k,:] = p[k] * e[k,:] + b[k,:], with p a column vector
Var row_scale_add(const Var& e, const Var& p, const Var& b);
// x (N x in) -> x * W^T + 1 b^T, with W (out x in), b (out x 1)
Var linear(const Var& x, const Var& w, const Var& b);

// Per-entry KL( Ber(q) || Ber(clamp(a, eps, 1-eps)) ), summed. Computed on
// the ratio form so an entry exactly equal to q contributes exactly zero.
Var bernoulli_kl_sum(const Var& a, double q, double clamp_eps);

// Weighted negative log-likelihood of one subject:
//   y=1 -> -delta * log(p), y=0 -> -(1-delta) * log(1-p),
// with p = sigmoid(logit) clamped to [1e-7, 1-1e-7].
Var weighted_bce(const Var& logit, int label, double delta);

struct BatchNormState {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  void init(Eigen::Index channels) {
    running_mean = Eigen::VectorXd::Zero(channels);
    running_var = Eigen::VectorXd::Ones(channels);
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// x: N x C normalized per column. Train mode uses batch statistics and
// updates the running stats in place; eval mode uses the frozen stats.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, bool train,
              BatchNormState& state);

// Keeps activations with probability 1-p, scaled by 1/(1-p); identity in
// eval mode. p must lie in [0, 1).
Var dropout(const Var& x, double p, bool train, std::mt19937_64& rng);

// Populates grads of every requires_grad leaf reachable from the scalar
// loss; gradients accumulate additively across fan-out.
void backward(const Var& loss);

// Debug hook: when set, relu() registers a deliberately wrong backward
// rule. Used by the gradcheck negative control only.
void set_break_backward(bool broken);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed = false;
};

// f rebuilds the loss graph from current parameter values each call.
GradCheckReport grad_check(const std::function<Var()>& f,
                           const std::vector<std::pair<std::string, Var>>& params,
                           double h = 1e-5, double tol = 1e-4);

// Flat checkpoint: magic "NPXW", u32 version, then per entry
// u32 name length, name bytes, u32 rank, u64 dims, little-endian f64 data.
void save_checkpoint(const std::vector<std::pair<std::string, Eigen::MatrixXd>>& entries,
                     const std::string& path);
std::vector<std::pair<std::string, Eigen::MatrixXd>> load_checkpoint(const std::string& path);

}  // namespace npx::ad
