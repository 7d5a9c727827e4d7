#include "micmco/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace micmco {

namespace {

using Eigen::ArrayXd;
using Eigen::Index;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw TapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " x " +
                  b.shape_string());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw TapeError(std::string(op) + ": bad shape " + a.shape_string());
}

Tape* same_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    throw TapeError(std::string(op) + ": operands on different tapes");
  return a.tape;
}

Eigen::Map<const RowMat> as_mat(const Tensor& t) { return t.matrix(); }

double row_logsumexp(const double* p, Index n) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) m = std::max(m, p[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  Eigen::Map<const ArrayXd> row(p, n);
  s = (row - m).exp().sum();
  return m + std::log(s);
}

// How an operand relates to the (larger) output shape of a binary op.
enum class Bc { same, scalar, row };

Bc classify(const Tensor& x, const Tensor& out) {
  if (x.shape() == out.shape()) return Bc::same;
  if (x.size() == 1) return Bc::scalar;
  if (x.rank() == 1 && out.rank() == 2 && x.cols() == out.cols()) return Bc::row;
  return Bc::same;  // unreachable; callers validate first
}

bool broadcastable(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return true;
  if (a.size() == 1 || b.size() == 1) return true;
  if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.cols()) return true;
  if (b.rank() == 2 && a.rank() == 1 && b.cols() == a.cols()) return true;
  return false;
}

const Tensor& output_like(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a;
  if (b.size() == 1) return a;
  if (a.size() == 1) return b;
  return a.rank() == 2 ? a : b;
}

// Expand an operand's flat data to the output's flat layout.
ArrayXd expanded(const Tensor& x, const Tensor& out) {
  switch (classify(x, out)) {
    case Bc::same:
      return x.array();
    case Bc::scalar:
      return ArrayXd::Constant(out.size(), x.array()(0));
    case Bc::row: {
      RowMat m = x.matrix().replicate(out.rows(), 1);
      return Eigen::Map<const ArrayXd>(m.data(), m.size());
    }
  }
  return x.array();
}

// Reduce an output-shaped gradient back to an operand's shape.
ArrayXd reduce_grad(const ArrayXd& g, const Tensor& x, const Tensor& out) {
  switch (classify(x, out)) {
    case Bc::same:
      return g;
    case Bc::scalar: {
      ArrayXd r(1);
      r(0) = g.sum();
      return r;
    }
    case Bc::row: {
      Eigen::Map<const RowMat> gm(g.data(), out.rows(), out.cols());
      Eigen::VectorXd cs = gm.colwise().sum();
      return Eigen::Map<const ArrayXd>(cs.data(), cs.size());
    }
  }
  return g;
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw TapeError("Var::value on invalid handle");
  return tape->value(id);
}

bool Gradients::has(Var v) const {
  return v.valid() && v.tape == tape_ && static_cast<size_t>(v.id) < slots_.size() &&
         slots_[v.id].has_value();
}

Tensor Gradients::grad(Var v) const {
  if (!v.valid() || v.tape != tape_) throw TapeError("Gradients::grad: foreign Var");
  const Tensor& val = v.value();
  if (static_cast<size_t>(v.id) >= slots_.size() || !slots_[v.id])
    return Tensor::zeros(val.shape());
  return Tensor::from_array(val.shape(), *slots_[v.id]);
}

Var Tape::add_node(Tensor value, std::vector<int> parents, BackwardFn backward) {
  if (check_finite_ && !value.all_finite())
    throw TapeError("non-finite value produced on tape (node " +
                    std::to_string(nodes_.size()) + ")");
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  for (int p : n.parents)
    if (nodes_[p].requires_grad) n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor v) { return add_node(std::move(v), {}, nullptr); }

Var Tape::param(Tensor v) {
  Var r = add_node(std::move(v), {}, nullptr);
  nodes_[r.id].requires_grad = true;
  return r;
}

Var Tape::stop_gradient(Var x) {
  if (x.tape != this) throw TapeError("stop_gradient: Var from another tape");
  Var r = add_node(nodes_[x.id].value, {x.id}, nullptr);
  nodes_[r.id].requires_grad = false;
  nodes_[r.id].grad_blocked = true;
  return r;
}

Gradients Tape::backward(Var root) {
  if (root.tape != this) throw TapeError("backward: root from another tape");
  if (root.value().size() != 1)
    throw TapeError("backward: root must be scalar, got shape " + root.value().shape_string());

  Gradients out;
  out.tape_ = this;
  out.slots_.assign(nodes_.size(), std::nullopt);
  grads_ = &out.slots_;

  out.slots_[root.id].emplace(ArrayXd::Ones(1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!out.slots_[id].has_value()) continue;
    if (n.grad_blocked) {
      out.slots_[id].reset();
      continue;
    }
    if (n.backward) {
      n.backward(*this, id, *out.slots_[id]);
      out.slots_[id].reset();  // free intermediates; only leaves are reported
    }
  }
  grads_ = nullptr;
  return out;
}

// ---------------------------------------------------------------------------
// elementwise binary ops
//
// Broadcast arithmetic works on Eigen views; neither the forward nor the
// backward pass materializes an expanded operand.

namespace {

enum class BinOp { add, sub, mul, div };

template <class A, class B>
ArrayXd apply_bin(BinOp op, const A& x, const B& y) {
  switch (op) {
    case BinOp::add: return x + y;
    case BinOp::sub: return x - y;
    case BinOp::mul: return x * y;
    case BinOp::div: return x / y;
  }
  return x + y;
}

ArrayXd binary_forward(BinOp op, const Tensor& av, const Tensor& bv, const Tensor& proto) {
  Bc ca = classify(av, proto);
  Bc cb = classify(bv, proto);
  Index r = proto.rows(), c = proto.cols();
  if (ca == Bc::same && cb == Bc::same) return apply_bin(op, av.array(), bv.array());
  if (cb == Bc::scalar) return apply_bin(op, av.array(), bv.array()(0));
  if (ca == Bc::scalar) {
    switch (op) {  // scalar on the left needs the expression flipped
      case BinOp::add: return av.array()(0) + bv.array();
      case BinOp::sub: return av.array()(0) - bv.array();
      case BinOp::mul: return av.array()(0) * bv.array();
      case BinOp::div: return av.array()(0) / bv.array();
    }
  }
  // one operand is a row vector broadcast over the rows of the other
  ArrayXd out(r * c);
  for (Index i = 0; i < r; ++i) {
    Eigen::Map<ArrayXd> oi(out.data() + i * c, c);
    if (ca == Bc::row)
      oi = apply_bin(op, Eigen::Map<const ArrayXd>(av.data(), c),
                     Eigen::Map<const ArrayXd>(bv.data() + i * c, c));
    else
      oi = apply_bin(op, Eigen::Map<const ArrayXd>(av.data() + i * c, c),
                     Eigen::Map<const ArrayXd>(bv.data(), c));
  }
  return out;
}

// gout reduced to an operand's shape, optionally scaled by an elementwise
// factor supplied as a callable over flat output indexing
ArrayXd reduce_plain(const ArrayXd& g, Bc cls, Index r, Index c, double sign) {
  switch (cls) {
    case Bc::same:
      return sign * g;
    case Bc::scalar: {
      ArrayXd out(1);
      out(0) = sign * g.sum();
      return out;
    }
    case Bc::row: {
      Eigen::Map<const RowMat> gm(g.data(), r, c);
      Eigen::VectorXd cs = gm.colwise().sum();
      return sign * Eigen::Map<const ArrayXd>(cs.data(), c);
    }
  }
  return g;
}

Var binary_op(const char* name, BinOp op, Var a, Var b) {
  Tape* t = same_tape(name, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!broadcastable(av, bv)) shape_error(name, av, bv);
  const Tensor& proto = output_like(av, bv);
  Tensor out = Tensor::from_array(proto.shape(), binary_forward(op, av, bv, proto));
  int aid = a.id, bid = b.id;
  return t->add_node(
      std::move(out), {aid, bid}, [aid, bid, op](Tape& tp, int self, const ArrayXd& g) {
        const Tensor& av = tp.value(aid);
        const Tensor& bv = tp.value(bid);
        const Tensor& ov = tp.value(self);
        Bc ca = classify(av, ov);
        Bc cb = classify(bv, ov);
        Index r = ov.rows(), c = ov.cols();
        switch (op) {
          case BinOp::add:
            tp.accum(aid, reduce_plain(g, ca, r, c, 1.0));
            tp.accum(bid, reduce_plain(g, cb, r, c, 1.0));
            break;
          case BinOp::sub:
            tp.accum(aid, reduce_plain(g, ca, r, c, 1.0));
            tp.accum(bid, reduce_plain(g, cb, r, c, -1.0));
            break;
          case BinOp::mul:
            if (tp.requires_grad(aid))
              tp.accum(aid, reduce_grad(g * expanded(bv, ov), av, ov));
            if (tp.requires_grad(bid))
              tp.accum(bid, reduce_grad(g * expanded(av, ov), bv, ov));
            break;
          case BinOp::div:
            if (tp.requires_grad(aid))
              tp.accum(aid, reduce_grad(g / expanded(bv, ov), av, ov));
            if (tp.requires_grad(bid))
              tp.accum(bid, reduce_grad(
                               (-g * expanded(av, ov) /
                                expanded(bv, ov).square())
                                   .eval(),
                               bv, ov));
            break;
        }
      });
}

}  // namespace

Var add(Var a, Var b) { return binary_op("add", BinOp::add, a, b); }
Var sub(Var a, Var b) { return binary_op("sub", BinOp::sub, a, b); }
Var mul(Var a, Var b) { return binary_op("mul", BinOp::mul, a, b); }

Var divide(Var a, Var b) {
  if ((b.value().array() == 0.0).any()) throw TapeError("div: division by zero");
  return binary_op("div", BinOp::div, a, b);
}

// ---------------------------------------------------------------------------
// matmul

Var matmul(Var a, Var b) {
  Tape* t = same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av, bv);
  ArrayXd out(av.rows() * bv.cols());
  Eigen::Map<RowMat>(out.data(), av.rows(), bv.cols()).noalias() = as_mat(av) * as_mat(bv);
  int aid = a.id, bid = b.id;
  return t->add_node(Tensor::from_array({av.rows(), bv.cols()}, std::move(out)), {aid, bid},
                     [aid, bid](Tape& tp, int self, const ArrayXd& g) {
                       const Tensor& av = tp.value(aid);
                       const Tensor& bv = tp.value(bid);
                       Eigen::Map<const RowMat> gm(g.data(), av.rows(), bv.cols());
                       if (tp.requires_grad(aid)) {
                         ArrayXd da(av.size());
                         Eigen::Map<RowMat>(da.data(), av.rows(), av.cols()).noalias() =
                             gm * as_mat(bv).transpose();
                         tp.accum(aid, std::move(da));
                       }
                       if (tp.requires_grad(bid)) {
                         ArrayXd db(bv.size());
                         Eigen::Map<RowMat>(db.data(), bv.rows(), bv.cols()).noalias() =
                             as_mat(av).transpose() * gm;
                         tp.accum(bid, std::move(db));
                       }
                     });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace {

template <class Fwd, class Bwd>
Var unary_op(const char* name, Var x, Fwd fwd, Bwd bwd) {
  if (!x.valid()) throw TapeError(std::string(name) + ": invalid operand");
  const Tensor& xv = x.value();
  Tensor out = Tensor::from_array(xv.shape(), fwd(xv.array()));
  int xid = x.id;
  return x.tape->add_node(std::move(out), {xid},
                          [xid, bwd](Tape& tp, int self, const ArrayXd& g) {
                            tp.accum(xid, bwd(g, tp.value(xid).array(),
                                              tp.value(self).array()));
                          });
}

}  // namespace

Var tanh(Var x) {
  return unary_op(
      "tanh", x, [](const ArrayXd& v) -> ArrayXd { return v.tanh(); },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd& y) -> ArrayXd {
        return g * (1.0 - y * y);
      });
}

Var exp(Var x) {
  return unary_op(
      "exp", x, [](const ArrayXd& v) -> ArrayXd { return v.exp(); },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd& y) -> ArrayXd { return g * y; });
}

Var log(Var x) {
  if ((x.value().array() <= 0.0).any())
    throw TapeError("log: non-positive input");
  return unary_op(
      "log", x, [](const ArrayXd& v) -> ArrayXd { return v.log(); },
      [](const ArrayXd& g, const ArrayXd& v, const ArrayXd&) -> ArrayXd { return g / v; });
}

Var square(Var x) {
  return unary_op(
      "square", x, [](const ArrayXd& v) -> ArrayXd { return v.square(); },
      [](const ArrayXd& g, const ArrayXd& v, const ArrayXd&) -> ArrayXd {
        return 2.0 * g * v;
      });
}

Var negate(Var x) {
  return unary_op(
      "negate", x, [](const ArrayXd& v) -> ArrayXd { return -v; },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd&) -> ArrayXd { return -g; });
}

Var scale(Var x, double c) {
  return unary_op(
      "scale", x, [c](const ArrayXd& v) -> ArrayXd { return c * v; },
      [c](const ArrayXd& g, const ArrayXd&, const ArrayXd&) -> ArrayXd { return c * g; });
}

Var add_scalar(Var x, double c) {
  return unary_op(
      "add_scalar", x, [c](const ArrayXd& v) -> ArrayXd { return v + c; },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd&) -> ArrayXd { return g; });
}

Var clamp(Var x, double lo, double hi) {
  if (lo > hi) throw TapeError("clamp: lo > hi");
  return unary_op(
      "clamp", x,
      [lo, hi](const ArrayXd& v) -> ArrayXd { return v.max(lo).min(hi); },
      [lo, hi](const ArrayXd& g, const ArrayXd& v, const ArrayXd&) -> ArrayXd {
        return g * ((v >= lo) && (v <= hi)).cast<double>();
      });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(Var x) {
  const Tensor& xv = x.value();
  ArrayXd out(1);
  out(0) = xv.array().sum();
  int xid = x.id;
  Index n = xv.size();
  return x.tape->add_node(Tensor::from_array({}, std::move(out)), {xid},
                          [xid, n](Tape& tp, int, const ArrayXd& g) {
                            tp.accum(xid, ArrayXd::Constant(n, g(0)));
                          });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) shape_error("mean", xv);
  ArrayXd out(1);
  out(0) = xv.array().mean();
  int xid = x.id;
  Index n = xv.size();
  return x.tape->add_node(Tensor::from_array({}, std::move(out)), {xid},
                          [xid, n](Tape& tp, int, const ArrayXd& g) {
                            tp.accum(xid, ArrayXd::Constant(n, g(0) / double(n)));
                          });
}

Var max(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) shape_error("max", xv);
  Index arg = 0;
  xv.array().maxCoeff(&arg);
  ArrayXd out(1);
  out(0) = xv.array()(arg);
  int xid = x.id;
  Index n = xv.size();
  // ties route the gradient to the first maximal element
  return x.tape->add_node(Tensor::from_array({}, std::move(out)), {xid},
                          [xid, n, arg](Tape& tp, int, const ArrayXd& g) {
                            ArrayXd d = ArrayXd::Zero(n);
                            d(arg) = g(0);
                            tp.accum(xid, d);
                          });
}

Var sum_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) shape_error("sum_rows", xv);
  Index r = xv.rows(), c = xv.cols();
  ArrayXd out(r);
  Eigen::Map<Eigen::VectorXd>(out.data(), r) = xv.matrix().rowwise().sum();
  int xid = x.id;
  return x.tape->add_node(Tensor::from_array({r}, std::move(out)), {xid},
                          [xid, r, c](Tape& tp, int, const ArrayXd& g) {
                            ArrayXd d(r * c);
                            Eigen::Map<RowMat> dm(d.data(), r, c);
                            for (Index i = 0; i < r; ++i) dm.row(i).setConstant(g(i));
                            tp.accum(xid, std::move(d));
                          });
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() == 0) shape_error("mean_rows", xv);
  return scale(sum_rows(x), 1.0 / double(xv.cols()));
}

Var logsumexp(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) shape_error("logsumexp", xv);
  ArrayXd out(1);
  out(0) = row_logsumexp(xv.data(), xv.size());
  int xid = x.id;
  return x.tape->add_node(Tensor::from_array({}, std::move(out)), {xid},
                          [xid](Tape& tp, int self, const ArrayXd& g) {
                            double lse = tp.value(self).array()(0);
                            const ArrayXd& v = tp.value(xid).array();
                            if (!std::isfinite(lse)) {
                              tp.accum(xid, ArrayXd::Zero(v.size()));
                              return;
                            }
                            tp.accum(xid, g(0) * (v - lse).exp());
                          });
}

Var logsumexp_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() == 0) shape_error("logsumexp_rows", xv);
  Index r = xv.rows(), c = xv.cols();
  ArrayXd out(r);
  const double* p = xv.data();
  for (Index i = 0; i < r; ++i) out(i) = row_logsumexp(p + i * c, c);
  int xid = x.id;
  return x.tape->add_node(Tensor::from_array({r}, std::move(out)), {xid},
                          [xid, r, c](Tape& tp, int self, const ArrayXd& g) {
                            if (!tp.requires_grad(xid)) return;
                            const ArrayXd& lse = tp.value(self).array();
                            const double* p = tp.value(xid).data();
                            ArrayXd d(r * c);
                            for (Index i = 0; i < r; ++i) {
                              Eigen::Map<const ArrayXd> row(p + i * c, c);
                              Eigen::Map<ArrayXd> drow(d.data() + i * c, c);
                              if (!std::isfinite(lse(i)))
                                drow.setZero();
                              else
                                drow = g(i) * (row - lse(i)).exp();
                            }
                            tp.accum(xid, std::move(d));
                          });
}

Var softmax_log(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0 || xv.rank() == 0) shape_error("softmax_log", xv);
  Index r = xv.rank() == 2 ? xv.rows() : 1;
  Index c = xv.rank() == 2 ? xv.cols() : xv.size();
  ArrayXd out(r * c);
  const double* p = xv.data();
  for (Index i = 0; i < r; ++i) {
    double lse = row_logsumexp(p + i * c, c);
    Eigen::Map<ArrayXd>(out.data() + i * c, c) =
        Eigen::Map<const ArrayXd>(p + i * c, c) - lse;
  }
  int xid = x.id;
  return x.tape->add_node(Tensor::from_array(xv.shape(), std::move(out)), {xid},
                          [xid, r, c](Tape& tp, int self, const ArrayXd& g) {
                            const ArrayXd& y = tp.value(self).array();
                            ArrayXd d(r * c);
                            for (Index i = 0; i < r; ++i) {
                              Eigen::Map<const ArrayXd> gi(g.data() + i * c, c);
                              Eigen::Map<const ArrayXd> yi(y.data() + i * c, c);
                              Eigen::Map<ArrayXd> di(d.data() + i * c, c);
                              di = gi - yi.exp() * gi.sum();
                            }
                            tp.accum(xid, std::move(d));
                          });
}

// ---------------------------------------------------------------------------
// indexing / layout

Var embedding_lookup(Var table, std::span<const int> idx) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) shape_error("embedding_lookup", tv);
  Index n = tv.rows(), d = tv.cols();
  for (int i : idx)
    if (i < 0 || i >= n)
      throw TapeError("embedding_lookup: index " + std::to_string(i) + " out of range [0," +
                      std::to_string(n) + ")");
  Index m = static_cast<Index>(idx.size());
  ArrayXd out(m * d);
  const double* p = tv.data();
  for (Index i = 0; i < m; ++i)
    Eigen::Map<ArrayXd>(out.data() + i * d, d) =
        Eigen::Map<const ArrayXd>(p + Index(idx[i]) * d, d);
  int tid = table.id;
  std::vector<int> ix(idx.begin(), idx.end());
  return table.tape->add_node(
      Tensor::from_array({m, d}, std::move(out)), {tid},
      [tid, ix, d](Tape& tp, int, const ArrayXd& g) {
        tp.accum_apply(tid, [&](ArrayXd& dg) {
          for (size_t i = 0; i < ix.size(); ++i)
            Eigen::Map<ArrayXd>(dg.data() + Index(ix[i]) * d, d) +=
                Eigen::Map<const ArrayXd>(g.data() + Index(i) * d, d);
        });
      });
}

Var take_rowwise(Var mat, std::span<const int> cols) {
  const Tensor& mv = mat.value();
  if (mv.rank() != 2 || static_cast<Index>(cols.size()) != mv.rows())
    shape_error("take_rowwise", mv);
  Index r = mv.rows(), c = mv.cols();
  for (int j : cols)
    if (j < 0 || j >= c)
      throw TapeError("take_rowwise: column " + std::to_string(j) + " out of range");
  ArrayXd out(r);
  const double* p = mv.data();
  for (Index i = 0; i < r; ++i) out(i) = p[i * c + cols[i]];
  int mid = mat.id;
  std::vector<int> ix(cols.begin(), cols.end());
  return mat.tape->add_node(Tensor::from_array({r}, std::move(out)), {mid},
                            [mid, ix, r, c](Tape& tp, int, const ArrayXd& g) {
                              tp.accum_apply(mid, [&](ArrayXd& d) {
                                for (Index i = 0; i < r; ++i) d(i * c + ix[i]) += g(i);
                              });
                            });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw TapeError("concat: no operands");
  Tape* t = parts[0].tape;
  Index total = 0;
  std::vector<int> pids;
  std::vector<Index> sizes;
  for (Var p : parts) {
    if (p.tape != t) throw TapeError("concat: operands on different tapes");
    if (p.value().rank() > 1) shape_error("concat", p.value());
    total += p.value().size();
    pids.push_back(p.id);
    sizes.push_back(p.value().size());
  }
  ArrayXd out(total);
  Index off = 0;
  for (Var p : parts) {
    out.segment(off, p.value().size()) = p.value().array();
    off += p.value().size();
  }
  return t->add_node(Tensor::from_array({total}, std::move(out)), pids,
                     [pids, sizes](Tape& tp, int, const ArrayXd& g) {
                       Index off = 0;
                       for (size_t i = 0; i < pids.size(); ++i) {
                         tp.accum(pids[i], g.segment(off, sizes[i]).eval());
                         off += sizes[i];
                       }
                     });
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  Tensor out = xv.reshaped(std::move(shape));  // shares storage
  int xid = x.id;
  return x.tape->add_node(std::move(out), {xid},
                          [xid](Tape& tp, int, const ArrayXd& g) { tp.accum(xid, g); });
}

Var broadcast_to(Var s, Shape shape) {
  const Tensor& sv = s.value();
  if (sv.size() != 1) shape_error("broadcast_to", sv);
  Index n = shape_size(shape);
  Tensor out = Tensor::full(std::move(shape), sv.array()(0));
  int sid = s.id;
  return s.tape->add_node(std::move(out), {sid},
                          [sid](Tape& tp, int, const ArrayXd& g) {
                            ArrayXd d(1);
                            d(0) = g.sum();
                            tp.accum(sid, d);
                          });
}

Var expand_cols(Var v, Index k) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1 || k <= 0) shape_error("expand_cols", vv);
  Index b = vv.size();
  ArrayXd out(b * k);
  for (Index i = 0; i < b; ++i)
    Eigen::Map<ArrayXd>(out.data() + i * k, k).setConstant(vv.array()(i));
  int vid = v.id;
  return v.tape->add_node(Tensor::from_array({b, k}, std::move(out)), {vid},
                          [vid, b, k](Tape& tp, int, const ArrayXd& g) {
                            ArrayXd d(b);
                            for (Index i = 0; i < b; ++i)
                              d(i) = Eigen::Map<const ArrayXd>(g.data() + i * k, k).sum();
                            tp.accum(vid, d);
                          });
}

Var expand_rows(Var v, Index n) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1 || n <= 0) shape_error("expand_rows", vv);
  Index d = vv.size();
  ArrayXd out(n * d);
  for (Index i = 0; i < n; ++i)
    Eigen::Map<ArrayXd>(out.data() + i * d, d) = vv.array();
  int vid = v.id;
  return v.tape->add_node(Tensor::from_array({n, d}, std::move(out)), {vid},
                          [vid, n, d](Tape& tp, int, const ArrayXd& g) {
                            Eigen::Map<const RowMat> gm(g.data(), n, d);
                            Eigen::VectorXd cs = gm.colwise().sum();
                            tp.accum(vid, Eigen::Map<const ArrayXd>(cs.data(), d));
                          });
}

Var repeat_rows(Var m, Index k) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || k <= 0) shape_error("repeat_rows", mv);
  Index b = mv.rows(), d = mv.cols();
  ArrayXd out(b * k * d);
  const double* p = mv.data();
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < k; ++j)
      Eigen::Map<ArrayXd>(out.data() + (i * k + j) * d, d) =
          Eigen::Map<const ArrayXd>(p + i * d, d);
  int mid = m.id;
  return m.tape->add_node(Tensor::from_array({b * k, d}, std::move(out)), {mid},
                          [mid, b, k, d](Tape& tp, int, const ArrayXd& g) {
                            ArrayXd dg = ArrayXd::Zero(b * d);
                            for (Index i = 0; i < b; ++i) {
                              Eigen::Map<ArrayXd> row(dg.data() + i * d, d);
                              for (Index j = 0; j < k; ++j)
                                row += Eigen::Map<const ArrayXd>(
                                    g.data() + (i * k + j) * d, d);
                            }
                            tp.accum(mid, dg);
                          });
}

}  // namespace micmco
