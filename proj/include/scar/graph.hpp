#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every node created during one forward pass in insertion
// order, which is a topological order. backward() walks it once in reverse.
// One tape per training step; a tape may be differentiated only once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "scar/tensor.hpp"

namespace scar::ag {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateVectorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class EmptyVisibleSetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr double kNormEpsilon = 1e-12;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op node. requires_grad is inherited from the parents; the
  /// backward closure is dropped when no parent needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  /// Forward identity whose backward contributes nothing to its parent.
  Var stop_gradient(Var x);

  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of the last backward root w.r.t. this node (zeros if unreached).
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_stopped(std::size_t id) const { return nodes_[id].stopped; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Gradient accumulation buffer, zero-initialised on first touch.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool stopped = false;
    mutable bool has_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---- ops -------------------------------------------------------------------
// Binary elementwise ops accept equal shapes or a single-element operand on
// either side. Nothing else broadcasts.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// Throws DomainError on any non-positive input.
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

/// a (n×m) plus a bias row b (1×m or m) added to every row.
Var add_bias(Var a, Var b);
/// Multiplies row i of a (n×m) by v[i]; v has n elements.
Var scale_rows(Var a, Var v);

/// Softmax restricted to the active indices; inactive entries are exactly 0.
Var softmax_over_set(Var scores, std::span<const std::uint8_t> active);
/// softmax_over_set applied independently to consecutive segments of length
/// `segment`. Output has the shape of `scores`.
Var segment_softmax(Var scores, std::span<const std::uint8_t> active, std::size_t segment);
/// Per segment: sum_i w[i] * rows[i]. rows is n×d, w has n elements, output (n/segment)×d.
Var segment_weighted_sum(Var rows, Var weights, std::size_t segment);

/// Cosine similarity of two equally sized tensors, treated as flat vectors.
Var cosine_sim(Var a, Var b);
/// Row-wise cosine similarity of two n×d matrices; output n×1.
Var row_cosine(Var a, Var b);
/// Scales every row to unit l2 norm.
Var row_normalize(Var a);

/// Diagonal of a square matrix as n×1.
Var diagonal(Var a);
/// log(sum(exp(row))) per row, max-stabilised; output n×1.
Var logsumexp_rows(Var a);

/// Rows of `table` selected by ids; output ids.size()×cols.
Var gather_rows(Var table, std::span<const std::size_t> ids);

inline Var stop_gradient(Var x) { return x.tape().stop_gradient(x); }

}  // namespace scar::ag
