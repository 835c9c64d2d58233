#include "gres/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gres/errors.hpp"
#include "gres/simd/kernels.hpp"

namespace gres::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, false, {}}); }

Var Tape::parameter(Tensor value) { return push(Node{std::move(value), {}, true, {}}); }

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ArgumentError("op mixes Vars from different tapes");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  return push(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.values().empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ArgumentError("backward on a Var from another tape");
  if (value(loss.id()).size() != 1) throw ArgumentError("backward needs a scalar loss");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].needs_grad) return;
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && has_grad(i)) n.backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.values().empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                        shape_str(b));
  }
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw ComputationError(std::string(op) + ": non-finite input");
}

void accumulate(Tape& tape, std::size_t id, const Tensor& delta) {
  if (!tape.needs_grad(id)) return;
  Tensor& g = tape.grad_buffer(id);
  simd::active().add(delta.data(), g.data(), g.size());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(gres::matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.needs_grad(ia)) matmul_acc(g, t.value(ib).transposed(), t.grad_buffer(ia));
    if (t.needs_grad(ib)) matmul_acc(t.value(ia).transposed(), g, t.grad_buffer(ib));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(gres::matmul(a.value(), b.value().transposed()), {a, b},
                     [ia, ib](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_buffer(self);
                       if (t.needs_grad(ia)) matmul_acc(g, t.value(ib), t.grad_buffer(ia));
                       if (t.needs_grad(ib)) matmul_acc(g.transposed(), t.value(ia), t.grad_buffer(ib));
                     });
}

Var transpose(Var a) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  return tape.record(a.value().transposed(), {a}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_buffer(self).transposed());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape& tape = *a.tape();
  Tensor out = a.value();
  simd::active().add(b.value().data(), out.data(), out.size());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor g = t.grad_buffer(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw ArgumentError("add_bias: bias " + shape_str(b) + " for input " + shape_str(x));
  }
  Tape& tape = *a.tape();
  Tensor out = x;
  const auto& k = simd::active();
  for (std::size_t r = 0; r < out.rows(); ++r) k.add(b.data(), out.row(r).data(), out.cols());
  const std::size_t ia = a.id(), ib = bias.id();
  return tape.record(std::move(out), {a, bias}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor g = t.grad_buffer(self);
    accumulate(t, ia, g);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const auto& kk = simd::active();
      for (std::size_t r = 0; r < g.rows(); ++r) kk.add(g.row(r).data(), gb.data(), gb.size());
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  simd::active().scale(s, out.data(), out.size());
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    simd::active().axpy(s, t.grad_buffer(self).data(), t.grad_buffer(ia).data(),
                        t.value(ia).size());
  });
}

Var relu(Var a) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& x = t.value(ia);
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x.values()[i] > 0.0) gi.values()[i] += g.values()[i];
  });
}

Var sigmoid(Var a) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = sigmoid_scalar(v);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double s = y.values()[i];
      gi.values()[i] += g.values()[i] * (s * (1.0 - s));
    }
  });
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  require_finite(x, "softmax_rows");
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - m);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gi(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  require_finite(x, "log_softmax_rows");
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - m);
    const double lse = m + std::log(total);
    for (std::size_t c = 0; c < in.size(); ++c) out(r, c) = in[c] - lse;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) total += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gi(r, c) += g(r, c) - std::exp(y(r, c)) * total;
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= x.rows()) {
      throw ArgumentError("gather_rows: index " + std::to_string(rows[i]) + " out of " +
                          std::to_string(x.rows()) + " rows");
    }
    std::copy_n(x.row(rows[i]).data(), x.cols(), out.row(i).data());
  }
  const std::size_t ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    const auto& k = simd::active();
    for (std::size_t i = 0; i < idx.size(); ++i) k.add(g.row(i).data(), gi.row(idx[i]).data(), g.cols());
  });
}

Var segment_mean(Var a, std::span<const int> segment, std::size_t num_segments) {
  const Tensor& x = a.value();
  if (segment.size() != x.rows()) {
    throw ArgumentError("segment_mean: " + std::to_string(segment.size()) + " segment ids for " +
                        std::to_string(x.rows()) + " rows");
  }
  std::vector<std::size_t> counts(num_segments, 0);
  for (int s : segment) {
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
      throw StructuralError("segment id " + std::to_string(s) + " outside [0, " +
                            std::to_string(num_segments) + ")");
    }
    ++counts[s];
  }
  for (std::size_t s = 0; s < num_segments; ++s) {
    if (counts[s] == 0) throw StructuralError("segment " + std::to_string(s) + " is empty");
  }
  const auto& k = simd::active();
  Tensor out(num_segments, x.cols());
  for (std::size_t p = 0; p < x.rows(); ++p) k.add(x.row(p).data(), out.row(segment[p]).data(), x.cols());
  for (std::size_t s = 0; s < num_segments; ++s) {
    const double inv = 1.0 / static_cast<double>(counts[s]);
    k.scale(inv, out.row(s).data(), x.cols());
  }
  const std::size_t ia = a.id();
  std::vector<int> seg(segment.begin(), segment.end());
  return a.tape()->record(std::move(out), {a},
                          [ia, seg = std::move(seg), counts = std::move(counts)](Tape& t, std::size_t self) {
                            if (!t.needs_grad(ia)) return;
                            const Tensor& g = t.grad_buffer(self);
                            Tensor& gi = t.grad_buffer(ia);
                            const auto& kk = simd::active();
                            for (std::size_t p = 0; p < seg.size(); ++p) {
                              const double inv = 1.0 / static_cast<double>(counts[seg[p]]);
                              kk.axpy(inv, g.row(seg[p]).data(), gi.row(p).data(), g.cols());
                            }
                          });
}

Var mean_cols(Var a) {
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ArgumentError("mean_cols of zero columns");
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double total = 0.0;
    for (double v : x.row(r)) total += v;
    out(r, 0) = total / static_cast<double>(x.cols());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad_buffer(self);
    Tensor& gi = t.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(gi.cols());
    for (std::size_t r = 0; r < gi.rows(); ++r)
      for (double& v : gi.row(r)) v += g(r, 0) * inv;
  });
}

Var weighted_sum(Var a, const Tensor& weights) {
  require_same_shape(a.value(), weights, "weighted_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights.values()[i] * a.value().values()[i];
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor::scalar(total), {a}, [ia, weights](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    simd::active().axpy(t.grad_buffer(self).item(), weights.data(), t.grad_buffer(ia).data(),
                        weights.size());
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& x = logits.value();
  require_same_shape(x, targets, "bce_with_logits");
  if (x.size() == 0) throw ArgumentError("bce_with_logits on an empty tensor");
  if (!x.all_finite() || !targets.all_finite()) throw ComputationError("bce_with_logits: non-finite input");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = x.values()[i];
    const double y = targets.values()[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const double n = static_cast<double>(x.size());
  const std::size_t ia = logits.id();
  return logits.tape()->record(Tensor::scalar(total / n), {logits}, [ia, targets, n](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const double g = t.grad_buffer(self).item() / n;
    const Tensor& z = t.value(ia);
    Tensor& gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < z.size(); ++i)
      gi.values()[i] += g * (sigmoid_scalar(z.values()[i]) - targets.values()[i]);
  });
}

Var dice_loss_rows(Var logits, const Tensor& targets, double eps) {
  const Tensor& x = logits.value();
  require_same_shape(x, targets, "dice_loss_rows");
  if (x.rows() == 0) throw ArgumentError("dice_loss_rows on zero rows");
  if (!x.all_finite()) throw ComputationError("dice_loss_rows: non-finite input");
  Tensor p(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) p.values()[i] = sigmoid_scalar(x.values()[i]);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      inter += p(r, c) * targets(r, c);
      sp += p(r, c);
      sg += targets(r, c);
    }
    total += 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
  }
  const double rows = static_cast<double>(x.rows());
  const std::size_t ia = logits.id();
  return logits.tape()->record(
      Tensor::scalar(total / rows), {logits}, [ia, targets, eps, rows, p = std::move(p)](Tape& t, std::size_t self) {
        if (!t.needs_grad(ia)) return;
        const double g = t.grad_buffer(self).item() / rows;
        Tensor& gi = t.grad_buffer(ia);
        for (std::size_t r = 0; r < p.rows(); ++r) {
          double inter = 0.0, sp = 0.0, sg = 0.0;
          for (std::size_t c = 0; c < p.cols(); ++c) {
            inter += p(r, c) * targets(r, c);
            sp += p(r, c);
            sg += targets(r, c);
          }
          const double num = 2.0 * inter + eps;
          const double den = sp + sg + eps;
          for (std::size_t c = 0; c < p.cols(); ++c) {
            const double dloss_dp = -(2.0 * targets(r, c) * den - num) / (den * den);
            gi(r, c) += g * dloss_dp * p(r, c) * (1.0 - p(r, c));
          }
        }
      });
}

Var linear_combination(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw ArgumentError("linear_combination needs matching non-empty terms and coefficients");
  }
  Tape& tape = *terms[0].tape();
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += coeffs[i] * terms[i].value().item();
  std::vector<std::size_t> ids;
  for (const Var& v : terms) ids.push_back(v.id());
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return tape.record(Tensor::scalar(total), terms, [ids = std::move(ids), c = std::move(c)](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self).item();
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (t.needs_grad(ids[i])) t.grad_buffer(ids[i]).values()[0] += c[i] * g;
  });
}

Var mlp_forward(Var x, std::span<const LinearVars> layers) {
  if (layers.empty()) throw ArgumentError("mlp_forward needs at least one layer");
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = add_bias(matmul(h, layers[i].weight), layers[i].bias);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

GradCheckResult grad_check(const LossBuilder& loss, std::span<Tensor* const> params, double step) {
  if (!(step > 0.0)) throw ArgumentError("grad_check step must be positive");
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Tensor* p : params) vars.push_back(with_grad ? tape.parameter(*p) : tape.constant(*p));
    Var l = loss(tape, vars);
    const double v = l.value().item();
    if (!std::isfinite(v)) throw ComputationError("grad_check: non-finite loss");
    if (grads) {
      tape.backward(l);
      for (const Var& pv : vars) grads->push_back(tape.grad(pv));
    }
    return v;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + step;
      const double up = evaluate(false, nullptr);
      p.values()[i] = saved - step;
      const double down = evaluate(false, nullptr);
      p.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi].values()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace gres::ad
