#pragma once

#include "micmco/tensor.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace micmco {

struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Result of a backward pass: per-leaf gradients keyed by node id.
/// Unused leaves report zero gradients rather than being absent.
class Gradients {
 public:
  bool has(Var v) const;
  Tensor grad(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Eigen::ArrayXd>> slots_;
};

/// Define-by-run reverse-mode tape over Tensors. Append-only: parents always
/// precede children, so reverse insertion order is a reverse topological order.
/// Single-threaded; distinct tapes are independent.
class Tape {
 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v);
  /// Differentiable leaf.
  Var param(Tensor v);
  /// Value-identical node that blocks all gradient flow through it.
  Var stop_gradient(Var x);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar root. Visits each node once in
  /// reverse topological order; fan-out gradients are summed.
  Gradients backward(Var root);

  using BackwardFn = std::function<void(Tape&, int self_id, const Eigen::ArrayXd& gout)>;

  Var add_node(Tensor value, std::vector<int> parents, BackwardFn backward);

  /// Accumulate a gradient contribution for node `id` during backward.
  template <class E>
  void accum(int id, const E& expr) {
    if (!nodes_[id].requires_grad) return;
    auto& slot = (*grads_)[id];
    if (!slot)
      slot.emplace(expr);
    else
      *slot += expr;
  }
  void accum(int id, Eigen::ArrayXd&& values) {
    if (!nodes_[id].requires_grad) return;
    auto& slot = (*grads_)[id];
    if (!slot)
      slot.emplace(std::move(values));
    else
      *slot += values;
  }
  /// Get-or-create the zeroed gradient slot and mutate it in place (for
  /// scatter-style backward rules).
  template <class Fn>
  void accum_apply(int id, Fn&& fn) {
    if (!nodes_[id].requires_grad) return;
    auto& slot = (*grads_)[id];
    if (!slot) slot.emplace(Eigen::ArrayXd::Zero(nodes_[id].value.size()));
    fn(*slot);
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    bool requires_grad = false;
    bool grad_blocked = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Eigen::ArrayXd>>* grads_ = nullptr;
  bool check_finite_ = false;
};

// Elementwise arithmetic. Operands must have equal shapes, or one may be a
// scalar, or one may be a rank-1 vector matching the other's columns (it is
// then broadcast across rows).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return divide(a, b); }

Var matmul(Var a, Var b);

Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var negate(Var x);
inline Var operator-(Var x) { return negate(x); }
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var clamp(Var x, double lo, double hi);

// Reductions. The *_rows variants reduce along axis 1 of a rank-2 tensor,
// returning one entry per row.
Var sum(Var x);
Var mean(Var x);
Var max(Var x);
Var sum_rows(Var x);
Var mean_rows(Var x);
Var logsumexp(Var x);
Var logsumexp_rows(Var x);
/// Log-softmax along the last axis (whole tensor for rank-1, per row for rank-2).
Var softmax_log(Var x);

/// Rows of `table` selected by `idx`; gradient scatter-adds into the table.
Var embedding_lookup(Var table, std::span<const int> idx);
/// out[r] = mat(r, cols[r]).
Var take_rowwise(Var mat, std::span<const int> cols);
Var concat(std::span<const Var> parts);

Var reshape(Var x, Shape shape);
Var broadcast_to(Var scalar, Shape shape);
/// (B) -> (B,k), each value repeated along the row.
Var expand_cols(Var v, Eigen::Index k);
/// (d) -> (n,d), the vector repeated as every row.
Var expand_rows(Var v, Eigen::Index n);
/// (B,d) -> (B*k,d); row i maps to rows [i*k, (i+1)*k).
Var repeat_rows(Var m, Eigen::Index k);

}  // namespace micmco
