#pragma once

// Reverse-mode differentiation over Tensor values. A Tape records every op in
// execution order; backward() walks the record once in reverse, so gradient
// accumulation order is fixed by the forward program and repeatable bit for
// bit. A tape belongs to one thread.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gres/tensor.hpp"

namespace gres::ad {

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf that receives a gradient.
  Var parameter(Tensor value);

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients from a previous call
  // are discarded first, so repeated calls give identical results.
  void backward(Var loss);

  // Zero tensor of the right shape when nothing flowed into v.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Lazily allocated, zero-initialised gradient buffer.
  Tensor& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.values().empty(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };
  Var push(Node node);
  std::vector<Node> nodes_;
};

// Ops. Shapes are checked and violations throw ArgumentError.
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// a (m x n) + bias (1 x n) broadcast over rows.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
// Max-subtracted. Throws ComputationError on non-finite input.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var gather_rows(Var a, std::span<const int> rows);
// out[s] = mean of rows p with segment[p] == s. Every segment must be
// non-empty (StructuralError otherwise).
Var segment_mean(Var a, std::span<const int> segment, std::size_t num_segments);
// m x n -> m x 1 row means.
Var mean_cols(Var a);
// sum_ij w_ij * a_ij -> 1x1; w is a constant.
Var weighted_sum(Var a, const Tensor& weights);
// Mean over all entries of binary cross-entropy with a as logits -> 1x1.
Var bce_with_logits(Var logits, const Tensor& targets);
// Mean over rows of 1 - (2 sum p g + eps) / (sum p + sum g + eps), p = sigmoid(logits).
Var dice_loss_rows(Var logits, const Tensor& targets, double eps);
// sum_i coeffs[i] * terms[i] over 1x1 terms -> 1x1.
Var linear_combination(std::span<const Var> terms, std::span<const double> coeffs);

// Affine/rectifier chain; the last layer stays affine.
struct LinearVars {
  Var weight;  // in x out
  Var bias;    // 1 x out
};
Var mlp_forward(Var x, std::span<const LinearVars> layers);

// Max relative error between reverse-mode and central-difference gradients,
// denominator max(|analytic|, |numeric|, 1e-8) per coordinate. `loss` builds
// the scalar on the given tape from parameter Vars that correspond one to one
// with `params`.
using LossBuilder = std::function<Var(Tape&, std::span<const Var> params)>;
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};
GradCheckResult grad_check(const LossBuilder& loss, std::span<Tensor* const> params,
                           double step);

}  // namespace gres::ad
