#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mvfuse/tensor.hpp"

namespace mvfuse {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Every operation appends a node after its inputs, so node order is a
/// topological order and backward() is a single reverse sweep. A tape belongs
/// to one thread; run independent tapes for concurrent work.
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var leaf(Tensor t);
  // Records the current value of `p`. When p.trainable, backward() adds the
  // gradient into p.grad.
  Var param(Parameter& p);

  // Used by operations. `fn` is only kept when some input requires grad.
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient of the last backward() target w.r.t. v (zeros if untouched).
  Tensor grad(Var v) const;
  // Mutable gradient buffer of v, or nullptr when v does not require grad.
  std::vector<double>* grad_buffer(Var v);

  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Operations. All are pure functions of their input values; shape problems
// throw DimensionError naming the offending shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
// Elementwise product; `b` may also be a single-element scalar.
Var mul(Var a, Var b);
Var scale(Var a, double c);
// x[m x n] + bias[n] on every row.
Var add_bias(Var x, Var bias);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var softmax(Var x, std::size_t axis);
// Row-wise softmax over the allowed entries of a [rows x cols] mask
// (non-zero = allowed). Disallowed entries are exactly 0; a row with no
// allowed entries is all zeros.
Var masked_softmax(Var x, std::span<const std::uint8_t> mask);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Mean token cross-entropy over positions whose target != pad_id. An all-pad
// target sequence gives loss 0 with zero gradient.
Var cross_entropy(Var logits, std::span<const int> targets, int pad_id);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
// Embedding lookup: rows of `table` selected by ids.
Var gather_rows(Var table, std::span<const int> ids);

enum class Elementwise { kTanh, kSigmoid, kAdd, kMul, kHadamard };
Var elementwise(Elementwise kind, std::span<const Var> args);

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace mvfuse
