#pragma once

// Reverse-mode differentiation on an append-only tape.
//
// Every primitive's vector-Jacobian product is itself written with tape
// primitives, so a gradient computed with grad_graph() is an ordinary node
// that can be differentiated again. Custom operations (see CustomOp) supply a
// numeric first derivative only; they are rejected by grad_graph().

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gap/errors.hpp"
#include "gap/softplus.hpp"
#include "gap/tensor.hpp"

namespace gap::ad {

using NodeId = std::size_t;
inline constexpr NodeId kNoInput = std::numeric_limits<NodeId>::max();

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kOpaque,  // numeric derivative produced by a CustomOp; not differentiable
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kTranspose,
  kAddBias,        // (B×n) + bias(n) on every row
  kSumRows,        // B×n → n
  kBroadcastRows,  // n → B×n
  kRowScale,       // diag(s)·G
  kSumCols,        // m×n → m
  kBroadcastCols,  // m → m×n
  kRelu,
  kReluMask,  // 1 where input > 0; zero derivative
  kSum,       // any → scalar
  kFill,      // scalar → shape
  kSoftplus,  // Sp(x) = ½·log(1 + exp(2x))
  kSigmoid2,  // Sp'(x) = 1 / (1 + exp(−2x))
  kCustom,
};

/// Differentiable-once operation with a hand-written numeric VJP.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) const = 0;
  /// Gradients with respect to each input given the output cotangent.
  virtual std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output,
                                       const Tensor& grad_output) const = 0;
};

struct Node {
  Op op = Op::kLeaf;
  NodeId a = kNoInput;
  NodeId b = kNoInput;
  double scalar = 0.0;    // kScale factor
  std::size_t count = 0;  // kBroadcastRows rows / kBroadcastCols cols
  Shape fill_shape;       // kFill target
  std::shared_ptr<const CustomOp> custom;
  Tensor value;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape keeps the node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = kNoInput;
};

namespace detail {

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  if (bias.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += bias[c];
  return out;
}

inline Tensor sum_rows(const Tensor& x) {
  require_rank(x, 2, "sum_rows");
  Tensor out(Shape{x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  return out;
}

inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  require_rank(v, 1, "broadcast_rows");
  Tensor out(Shape{rows, v.size()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < v.size(); ++c) out(r, c) = v[c];
  return out;
}

inline Tensor row_scale(const Tensor& s, const Tensor& g) {
  require_rank(s, 1, "row_scale");
  require_rank(g, 2, "row_scale");
  if (s.size() != g.rows()) {
    throw DimensionError("row_scale: scale " + shape_str(s.shape()) + " vs matrix " +
                         shape_str(g.shape()));
  }
  Tensor out = g;
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out(r, c) *= s[r];
  return out;
}

inline Tensor sum_cols(const Tensor& x) {
  require_rank(x, 2, "sum_cols");
  Tensor out(Shape{x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) acc += x(r, c);
    out[r] = acc;
  }
  return out;
}

inline Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
  require_rank(v, 1, "broadcast_cols");
  Tensor out(Shape{v.size(), cols});
  for (std::size_t r = 0; r < v.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = v[r];
  return out;
}

inline Tensor fill(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) throw DimensionError("fill: source must be scalar");
  return Tensor(shape, s[0]);
}

/// Forward kernel for one node given its input values.
inline Tensor evaluate(const Node& n, const Tensor* a, const Tensor* b) {
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
    case Op::kOpaque:
      return n.value;
    case Op::kAdd:
      return gap::add(*a, *b);
    case Op::kSub:
      return gap::sub(*a, *b);
    case Op::kMul:
      return gap::hadamard(*a, *b);
    case Op::kScale:
      return gap::scale(*a, n.scalar);
    case Op::kMatMul:
      return gap::matmul(*a, *b);
    case Op::kTranspose:
      return gap::transpose(*a);
    case Op::kAddBias:
      return add_bias(*a, *b);
    case Op::kSumRows:
      return sum_rows(*a);
    case Op::kBroadcastRows:
      return broadcast_rows(*a, n.count);
    case Op::kRowScale:
      return row_scale(*a, *b);
    case Op::kSumCols:
      return sum_cols(*a);
    case Op::kBroadcastCols:
      return broadcast_cols(*a, n.count);
    case Op::kRelu:
      return gap::map(*a, relu);
    case Op::kReluMask:
      return gap::map(*a, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Op::kSum:
      return Tensor::scalar(gap::sum(*a));
    case Op::kFill:
      return fill(*a, n.fill_shape);
    case Op::kSoftplus:
      return gap::map(*a, gap::sp);
    case Op::kSigmoid2:
      return gap::map(*a, gap::sp_derivative);
    case Op::kCustom: {
      const Tensor* ins[2] = {a, b};
      return n.custom->forward(std::span<const Tensor* const>(ins, b ? 2 : 1));
    }
  }
  throw ContractError("unknown tape op");
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    return append(std::move(n));
  }

  Var constant(Tensor value) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return append(std::move(n));
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw LookupError("node " + std::to_string(id) + " is not on the tape");
    return nodes_[id];
  }
  const Tensor& value(NodeId id) const { return node(id).value; }

  /// Drops every node with id ≥ mark. Vars pointing there become invalid.
  void truncate(std::size_t mark) {
    if (mark < nodes_.size()) nodes_.resize(mark);
  }

  void clear() { nodes_.clear(); }

  /// Recomputes every derived node from the recorded leaves and constants.
  std::vector<Tensor> replay() const {
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) {
      const Tensor* a = n.a == kNoInput ? nullptr : &values[n.a];
      const Tensor* b = n.b == kNoInput ? nullptr : &values[n.b];
      values.push_back(detail::evaluate(n, a, b));
    }
    return values;
  }

  /// Records an operation node, computing its value from its inputs.
  Var record(Node n) {
    if (n.a != kNoInput && n.a >= nodes_.size()) throw LookupError("input node not on tape");
    if (n.b != kNoInput && n.b >= nodes_.size()) throw LookupError("input node not on tape");
    const Tensor* a = n.a == kNoInput ? nullptr : &nodes_[n.a].value;
    const Tensor* b = n.b == kNoInput ? nullptr : &nodes_[n.b].value;
    n.value = detail::evaluate(n, a, b);
    return append(std::move(n));
  }

 private:
  friend class Var;
  Var append(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw LookupError("unbound variable");
  return tape_->value(id_);
}

// ---- primitive builders ----------------------------------------------------

namespace detail {

inline Tape* same_tape(const Var& a, const Var& b) {
  if (!a.tape() || a.tape() != b.tape()) throw LookupError("operands live on different tapes");
  return a.tape();
}

inline Var unary(Op op, const Var& a, double scalar = 0.0, std::size_t count = 0) {
  if (!a.tape()) throw LookupError("unbound variable");
  Node n;
  n.op = op;
  n.a = a.id();
  n.scalar = scalar;
  n.count = count;
  return a.tape()->record(std::move(n));
}

inline Var binary(Op op, const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  return t->record(std::move(n));
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(Op::kAdd, a, b); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(Op::kSub, a, b); }
/// Elementwise product.
inline Var operator*(const Var& a, const Var& b) { return detail::binary(Op::kMul, a, b); }
inline Var scale(const Var& a, double c) { return detail::unary(Op::kScale, a, c); }
inline Var matmul(const Var& a, const Var& b) { return detail::binary(Op::kMatMul, a, b); }
inline Var transpose(const Var& a) { return detail::unary(Op::kTranspose, a); }
inline Var add_bias(const Var& x, const Var& bias) { return detail::binary(Op::kAddBias, x, bias); }
inline Var sum_rows(const Var& x) { return detail::unary(Op::kSumRows, x); }
inline Var broadcast_rows(const Var& v, std::size_t rows) {
  return detail::unary(Op::kBroadcastRows, v, 0.0, rows);
}
inline Var row_scale(const Var& s, const Var& g) { return detail::binary(Op::kRowScale, s, g); }
inline Var sum_cols(const Var& x) { return detail::unary(Op::kSumCols, x); }
inline Var broadcast_cols(const Var& v, std::size_t cols) {
  return detail::unary(Op::kBroadcastCols, v, 0.0, cols);
}
inline Var relu(const Var& a) { return detail::unary(Op::kRelu, a); }
inline Var relu_mask(const Var& a) { return detail::unary(Op::kReluMask, a); }
inline Var sum(const Var& a) { return detail::unary(Op::kSum, a); }
inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }
inline Var softplus(const Var& a) { return detail::unary(Op::kSoftplus, a); }
inline Var sigmoid2(const Var& a) { return detail::unary(Op::kSigmoid2, a); }

inline Var fill(const Var& s, Shape shape) {
  if (!s.tape()) throw LookupError("unbound variable");
  Node n;
  n.op = Op::kFill;
  n.a = s.id();
  n.fill_shape = std::move(shape);
  return s.tape()->record(std::move(n));
}

inline Var custom(std::shared_ptr<const CustomOp> op, const Var& a, const Var& b) {
  Tape* t = detail::same_tape(a, b);
  Node n;
  n.op = Op::kCustom;
  n.a = a.id();
  n.b = b.id();
  n.custom = std::move(op);
  return t->record(std::move(n));
}

/// Treats the current value of `a` as a constant (no gradient flows back).
inline Var detach(const Var& a) { return a.tape()->constant(a.value()); }

// ---- reverse sweep ---------------------------------------------------------

namespace detail {

inline bool has_derivative(Op op) {
  switch (op) {
    case Op::kLeaf:
    case Op::kConstant:
    case Op::kOpaque:
    case Op::kReluMask:
      return false;
    default:
      return true;
  }
}

inline std::vector<Var> reverse_sweep(const Var& output, std::span<const Var> wrt, bool create_graph) {
  Tape* tape = output.tape();
  if (!tape) throw LookupError("unbound output");
  if (output.value().size() != 1) {
    throw ContractError("grad requires a scalar output, got shape " + shape_str(output.shape()));
  }
  const NodeId out = output.id();
  NodeId first = out + 1;
  for (const Var& w : wrt) {
    if (w.tape() != tape || w.id() >= tape->size()) throw LookupError("wrt variable is not on this tape");
    first = std::min(first, w.id());
  }

  // Nodes that lie on some path wrt → output.
  std::vector<char> live(out + 1, 0);
  for (const Var& w : wrt)
    if (w.id() <= out) live[w.id()] = 1;
  for (NodeId id = first; id <= out && first <= out; ++id) {
    const Node& n = tape->node(id);
    if (live[id] || !has_derivative(n.op)) continue;
    if ((n.a != kNoInput && n.a >= first && live[n.a]) || (n.b != kNoInput && n.b >= first && live[n.b])) {
      live[id] = 1;
    }
  }

  std::vector<std::optional<Var>> g(out + 1);
  g[out] = tape->constant(Tensor(output.shape(), 1.0));

  auto needs = [&](NodeId target) { return target != kNoInput && target >= first && live[target]; };
  auto accumulate = [&](NodeId target, const Var& contrib) {
    if (!needs(target)) return;
    g[target] = g[target] ? *g[target] + contrib : contrib;
  };

  for (NodeId id = out + 1; id-- > first;) {
    if (!live[id] || !g[id]) continue;
    // Copy what we need: recording below may reallocate the node storage.
    const Op op = tape->node(id).op;
    const NodeId ia = tape->node(id).a;
    const NodeId ib = tape->node(id).b;
    const double scalar = tape->node(id).scalar;
    if (!needs(ia) && !needs(ib)) continue;
    const Var gy = *g[id];
    const Var a(tape, ia);
    const Var b(tape, ib);
    const Var y(tape, id);
    switch (op) {
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kReluMask:
        break;
      case Op::kOpaque:
        throw ContractError("cannot differentiate through an opaque derivative node");
      case Op::kAdd:
        accumulate(ia, gy);
        accumulate(ib, gy);
        break;
      case Op::kSub:
        accumulate(ia, gy);
        if (needs(ib)) accumulate(ib, scale(gy, -1.0));
        break;
      case Op::kMul:
        if (needs(ia)) accumulate(ia, gy * b);
        if (needs(ib)) accumulate(ib, gy * a);
        break;
      case Op::kScale:
        accumulate(ia, scale(gy, scalar));
        break;
      case Op::kMatMul:
        if (needs(ia)) accumulate(ia, matmul(gy, transpose(b)));
        if (needs(ib)) accumulate(ib, matmul(transpose(a), gy));
        break;
      case Op::kTranspose:
        accumulate(ia, transpose(gy));
        break;
      case Op::kAddBias:
        accumulate(ia, gy);
        if (needs(ib)) accumulate(ib, sum_rows(gy));
        break;
      case Op::kSumRows:
        accumulate(ia, broadcast_rows(gy, a.value().rows()));
        break;
      case Op::kBroadcastRows:
        accumulate(ia, sum_rows(gy));
        break;
      case Op::kRowScale:
        if (needs(ia)) accumulate(ia, sum_cols(gy * b));
        if (needs(ib)) accumulate(ib, row_scale(a, gy));
        break;
      case Op::kSumCols:
        accumulate(ia, broadcast_cols(gy, a.value().cols()));
        break;
      case Op::kBroadcastCols:
        accumulate(ia, sum_cols(gy));
        break;
      case Op::kRelu:
        accumulate(ia, gy * relu_mask(a));
        break;
      case Op::kSum:
        accumulate(ia, fill(gy, a.shape()));
        break;
      case Op::kFill:
        accumulate(ia, sum(gy));
        break;
      case Op::kSoftplus:
        accumulate(ia, gy * sigmoid2(a));
        break;
      case Op::kSigmoid2:
        // d/dx σ(2x) = 2·σ(2x)·(1 − σ(2x))
        accumulate(ia, gy * scale(y - y * y, 2.0));
        break;
      case Op::kCustom: {
        if (create_graph) {
          throw ContractError("custom op '" + tape->node(id).custom->name() +
                              "' supports first-order differentiation only");
        }
        auto custom_op = tape->node(id).custom;
        const Tensor* ins[2] = {&a.value(), &b.value()};
        Tensor y_value = y.value();
        std::vector<Tensor> grads = custom_op->backward(std::span<const Tensor* const>(ins, 2), y_value,
                                                        gy.value());
        const NodeId targets[2] = {ia, ib};
        for (std::size_t k = 0; k < 2 && k < grads.size(); ++k) {
          if (!needs(targets[k])) continue;
          Node n;
          n.op = Op::kOpaque;
          n.value = std::move(grads[k]);
          accumulate(targets[k], tape->record(std::move(n)));
        }
        break;
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= out && g[w.id()]) {
      result.push_back(*g[w.id()]);
    } else {
      result.push_back(tape->constant(Tensor(w.shape(), 0.0)));
    }
  }
  return result;
}

}  // namespace detail

/// Gradients of a scalar output as tape nodes that can be differentiated again.
inline std::vector<Var> grad_graph(const Var& output, std::span<const Var> wrt) {
  return detail::reverse_sweep(output, wrt, true);
}

/// Gradient values of a scalar output. The tape is left exactly as it was.
inline std::vector<Tensor> grad(const Var& output, std::span<const Var> wrt) {
  Tape* tape = output.tape();
  if (!tape) throw LookupError("unbound output");
  const std::size_t mark = tape->size();
  std::vector<Var> vars = detail::reverse_sweep(output, wrt, false);
  std::vector<Tensor> values;
  values.reserve(vars.size());
  for (const Var& v : vars) values.push_back(v.value());
  tape->truncate(mark);
  return values;
}

inline Tensor grad(const Var& output, const Var& wrt) {
  return std::move(grad(output, std::span<const Var>(&wrt, 1)).front());
}

/// Central differences (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h for every coordinate.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad requires h > 0");
  Tensor out(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

}  // namespace gap::ad
