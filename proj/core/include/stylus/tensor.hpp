#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "stylus/rng.hpp"

namespace stylus::nn {

// All training math runs in 64-bit: the finite-difference gradient checks in
// the test suite compare against analytic gradients at 1e-4 steps, which is
// hopeless in float.
using real = double;
using Arr = Eigen::ArrayX<real>;

struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int ndim = 0;

  static Shape of(std::initializer_list<int> dims);
  std::int64_t numel() const;
  int rows() const { return d[0]; }
  int cols() const { return d[1]; }
  bool operator==(const Shape& other) const = default;
  std::string str() const;
};

class Node;
using Var = std::shared_ptr<Node>;

// One value in the define-by-run graph. `backprop` scatters this node's grad
// into its parents; nodes are replayed in reverse creation order.
class Node {
 public:
  Arr value;
  Arr grad;
  Shape shape;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  std::uint64_t order = 0;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Arr::Zero(value.size());
  }
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Var make_leaf(Shape shape, bool requires_grad);
// Node for a custom op: requires_grad inherited from parents, creation order
// minted; caller fills value and backprop.
Var make_custom(Shape shape, std::vector<Var> parents);
Var constant(Shape shape, const Arr& values);
Var constant_scalar(real v);
Var parameter(Shape shape, Rng& rng, real init_std);
Var parameter_zeros(Shape shape);
Var parameter_consts(Shape shape, real v);

// Runs reverse-mode accumulation from a scalar root (grad seeded to 1).
void backward(const Var& root);

// Value copy that blocks gradient flow.
Var detach(const Var& x);

// ---------------------------------------------------------------------------
// Elementwise / scalar
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, real s);
Var mul_scalar(const Var& a, real s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var exp_(const Var& a);
Var square(const Var& a);

// ---------------------------------------------------------------------------
// Matrix ops (2-D shapes [rows, cols], row-major storage)
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& a, const Var& bias);   // bias shape [cols]
Var slice_cols(const Var& a, int c0, int n);
Var slice_rows(const Var& a, int r0, int n);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);

// Row-wise softmax; `causal` masks column j > row i.
Var softmax_rows(const Var& a, bool causal = false);
Var log_softmax_rows(const Var& a);

// Gather rows of an embedding table; backward scatter-adds.
Var gather_rows(const Var& table, const std::vector<int>& ids);

// RMS normalization over the last dimension of a [T, D] matrix.
Var rms_norm(const Var& x, const Var& gamma, real eps = 1e-6);

// ---------------------------------------------------------------------------
// Convolutional ops (4-D shapes [N, C, H, W])
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var upsample_nearest2x(const Var& x);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, real eps = 1e-5);
Var global_avg_pool(const Var& x);  // [N, C, H, W] -> [N, C]

// ---------------------------------------------------------------------------
// Reductions / losses
// ---------------------------------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
Var l1_mean(const Var& pred, const Var& target);
Var mse_mean(const Var& pred, const Var& target);
// MSE over rows where mask is true, averaged over (masked rows x cols).
Var mse_masked_rows(const Var& pred, const Var& target, const std::vector<bool>& row_mask);
// Closed-form KL(N(mu, sigma^2) || N(0,1)) averaged per element.
Var kl_gaussian_mean(const Var& mu, const Var& logvar);
// Mean cross-entropy from logits [N, C] against integer labels.
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Parameter registry + AdamW
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  Var add(const std::string& name, Var v);
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  Var find(const std::string& name) const;
  std::int64_t count() const;  // total scalar parameters
  void zero_grad();
  // FNV hash over all parameter bytes; freeze checks compare this.
  std::uint64_t value_hash() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

struct AdamWConfig {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
  real weight_decay = 0.0;
};

class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig cfg);
  void step();
  void reset();
  std::int64_t steps_taken() const { return t_; }

 private:
  ParamStore& params_;
  AdamWConfig cfg_;
  std::vector<Arr> m_, v_;
  std::int64_t t_ = 0;
};

// Central finite differences of a scalar-valued rebuild function w.r.t. one
// parameter; test-side oracle for every gradient check.
Arr finite_difference_grad(const std::function<real()>& loss_fn, const Var& param, real step);

}  // namespace stylus::nn
