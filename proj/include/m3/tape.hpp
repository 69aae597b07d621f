// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "m3/tensor.hpp"

namespace m3 {

class ParameterStore;
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

using GradientMap = std::map<std::string, Tensor>;

/// Dynamic reverse-mode tape. Every primitive in namespace `ad` appends one
/// node holding its forward value and, when any input needs a gradient, a
/// closure that pushes the output adjoint back to its inputs. Nodes are only
/// appended, so the node order is a topological order.
///
/// A tape built with `record = false` keeps values but no closures; it is the
/// inference path. A tape and its vars belong to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Repeated calls with the same name return the
  /// same node; a tape binds parameters from a single store.
  Var param(const ParameterStore& store, const std::string& name);

  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Drops every node recorded after the first `size` nodes. Vars pointing
  /// past the mark become invalid. Used to reuse one inference tape across
  /// decoding steps.
  void truncate(std::size_t size);

  /// Reverse sweep from a scalar `loss`. Returns d loss / d theta for every
  /// parameter in `store`; parameters not reached map to zeros.
  GradientMap backward(Var loss, const ParameterStore& store);

  // Primitive-author interface.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Tensor& grad(std::uint32_t id);
  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.value;
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;  // parameter leaves read the store in place
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: references to values survive appends
  std::map<std::string, std::uint32_t> param_ids_;
  const ParameterStore* store_ = nullptr;
  bool record_;
};

/// Differentiable primitives. Shape errors throw std::invalid_argument naming
/// the primitive and the offending shapes.
namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);
/// a * s where s is a scalar var.
Var scale_by(Var a, Var s);

Var sigmoid(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var log(Var a);

Var softmax(Var v);
Var log_softmax(Var v);

/// W (m x n) times x (n) -> (m).
Var matvec(Var w, Var x);
/// A (n x k) times B^T, B (m x k) -> (n x m).
Var matmul_transposed(Var a, Var b);
/// Adds vector b (m) to every row of A (n x m).
Var add_rowwise(Var a, Var b);
/// a (n) outer b (m) -> (n x m).
Var outer(Var a, Var b);
/// sum_i w(i) * M(i, :) for w (n), M (n x m) -> (m).
Var weighted_row_sum(Var w, Var m);
/// Per-row L2 norm of M (n x m) -> (n). The gradient at a zero row is zero.
Var row_norms(Var m);
/// L2 norm -> scalar. The gradient at the zero vector is zero.
Var norm(Var v);
Var dot(Var a, Var b);
Var sum(Var a);
Var sum_squares(Var a);

/// Concatenates vectors and scalars end to end.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Row `r` of a matrix as a vector.
Var row(Var m, std::size_t r);
/// Element `i` of a vector as a scalar.
Var pick(Var v, std::size_t i);
/// Replaces entries where `keep[i] == 0` by `fill`; no gradient flows there.
Var mask_fill(Var v, std::span<const double> keep, double fill);
/// Elementwise product with a fixed mask (inverted dropout: entries are 0 or
/// 1/keep_prob).
Var dropout(Var a, const Tensor& mask);

}  // namespace ad

GradientMap backward(Var loss, const ParameterStore& store);

}  // namespace m3
