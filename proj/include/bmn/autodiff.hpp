#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bmn/matrix.hpp"

namespace bmn::ad {

/// Raised when the tape is used against its contract (non-scalar loss, foreign node).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Axis {
  Rows,  ///< reduce over the batch: r×c -> 1×c
  Cols,  ///< reduce over features: r×c -> r×1
};

enum class Op {
  Leaf,
  MatMul,
  AddRow,
  Add,
  Sub,
  Hadamard,
  MaskMul,
  Scale,
  AddScalar,
  Relu,
  Log,
  Square,
  Mean,
  Var,
  Sum,
  ConcatCols,
  SliceRows,
};

using NodeId = std::size_t;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  NodeId id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Matrix& value() const;
  const Matrix& grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/**
 * Append-only reverse-mode record.
 *
 * Nodes only reference earlier nodes, so insertion order is a topological
 * order and backward() is a single reverse sweep. Adjoints accumulate, which
 * makes shared subexpressions correct without special handling.
 */
class Tape {
 public:
  Var variable(Matrix value) { return push(Op::Leaf, {}, std::move(value), true); }
  Var constant(Matrix value) { return push(Op::Leaf, {}, std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(NodeId id) const { return node(id).value; }

  /// Adjoint of a node after backward(); zero matrix for nodes without gradient.
  const Matrix& grad(NodeId id) const {
    const Node& n = node(id);
    if (id >= grads_.size() || grads_[id].empty()) {
      zero_cache_ = Matrix(n.value.rows(), n.value.cols());
      return zero_cache_;
    }
    return grads_[id];
  }

  void backward(Var loss);

  // Node construction is exposed to the op free functions below.
  struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    Matrix value;
    Matrix aux;  // op-specific cache (mask, pass-through flags, ...)
    double scalar = 0.0;
    std::size_t index_a = 0;
    std::size_t index_b = 0;
    Axis axis = Axis::Rows;
    bool requires_grad = false;
  };

  Var push(Op op, std::vector<NodeId> inputs, Matrix value, bool leaf_requires_grad = false) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = leaf_requires_grad;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) throw ContractError("tape input references a later node");
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Node& node(NodeId id) {
    if (id >= nodes_.size()) throw ContractError("unknown tape node " + std::to_string(id));
    return nodes_[id];
  }
  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw ContractError("unknown tape node " + std::to_string(id));
    return nodes_[id];
  }

  void check_owner(const Var& v) const {
    if (v.tape() != this) throw ContractError("variable belongs to a different tape");
  }

 private:
  void accumulate(NodeId id, const Matrix& g) {
    if (!nodes_[id].requires_grad) return;
    Matrix& dst = grads_[id];
    if (dst.empty()) {
      dst = g;
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  }

  void propagate(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  mutable Matrix zero_cache_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {
inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}
inline Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw ContractError("unbound variable");
  return *a.tape();
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.push(Op::MatMul, {a.id(), b.id()}, bmn::matmul(a.value(), b.value()));
}

/// x + bias broadcast over rows.
inline Var add_row(Var x, Var bias) {
  Tape& t = detail::tape_of(x, bias);
  return t.push(Op::AddRow, {x.id(), bias.id()}, bmn::add_row(x.value(), bias.value()));
}

inline Var operator+(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.push(Op::Add, {a.id(), b.id()}, a.value() + b.value());
}

inline Var operator-(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.push(Op::Sub, {a.id(), b.id()}, a.value() - b.value());
}

inline Var hadamard(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.push(Op::Hadamard, {a.id(), b.id()}, bmn::hadamard(a.value(), b.value()));
}

/// Elementwise product with a constant mask (dropout).
inline Var mask_mul(Var x, const Matrix& mask) {
  Tape& t = detail::tape_of(x);
  Var out = t.push(Op::MaskMul, {x.id()}, bmn::hadamard(x.value(), mask));
  t.node(out.id()).aux = mask;
  return out;
}

inline Var scale(Var x, double s) {
  Tape& t = detail::tape_of(x);
  Var out = t.push(Op::Scale, {x.id()}, s * x.value());
  t.node(out.id()).scalar = s;
  return out;
}

inline Var add_scalar(Var x, double s) {
  Tape& t = detail::tape_of(x);
  Matrix v = x.value();
  for (double& e : v.data()) e += s;
  return t.push(Op::AddScalar, {x.id()}, std::move(v));
}

inline Var relu(Var x) {
  Tape& t = detail::tape_of(x);
  return t.push(Op::Relu, {x.id()}, bmn::relu(x.value()));
}

/// Elementwise natural log. Throws DomainError naming the first non-positive coordinate.
inline Var log(Var x) {
  Tape& t = detail::tape_of(x);
  const Matrix& in = x.value();
  Matrix v(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    for (std::size_t j = 0; j < in.cols(); ++j) {
      if (!(in(i, j) > 0.0)) {
        throw DomainError("log of non-positive value " + std::to_string(in(i, j)) + " at (" +
                          std::to_string(i) + "," + std::to_string(j) + ")");
      }
      v(i, j) = std::log(in(i, j));
    }
  }
  return t.push(Op::Log, {x.id()}, std::move(v));
}

inline Var square(Var x) {
  Tape& t = detail::tape_of(x);
  return t.push(Op::Square, {x.id()}, bmn::hadamard(x.value(), x.value()));
}

inline Var reduce_mean(Var x, Axis axis) {
  Tape& t = detail::tape_of(x);
  const Matrix& in = x.value();
  const bool rows = axis == Axis::Rows;
  const std::size_t n = rows ? in.rows() : in.cols();
  if (n == 0) throw ShapeError("reduce_mean over an empty axis");
  Matrix out = rows ? Matrix(1, in.cols()) : Matrix(in.rows(), 1);
  for (std::size_t i = 0; i < in.rows(); ++i)
    for (std::size_t j = 0; j < in.cols(); ++j) out[rows ? j : i] += in(i, j);
  for (double& v : out.data()) v /= static_cast<double>(n);
  Var res = t.push(Op::Mean, {x.id()}, std::move(out));
  t.node(res.id()).axis = axis;
  return res;
}

/**
 * Population variance (1/n) along an axis, floored at `floor`.
 *
 * Entries that hit the floor are constant w.r.t. the input, so their
 * adjoint is dropped.
 */
inline Var reduce_var(Var x, Axis axis, double floor = 0.0) {
  Tape& t = detail::tape_of(x);
  const Matrix& in = x.value();
  const bool rows = axis == Axis::Rows;
  const std::size_t n = rows ? in.rows() : in.cols();
  if (n == 0) throw ShapeError("reduce_var over an empty axis");
  Matrix mean = rows ? Matrix(1, in.cols()) : Matrix(in.rows(), 1);
  for (std::size_t i = 0; i < in.rows(); ++i)
    for (std::size_t j = 0; j < in.cols(); ++j) mean[rows ? j : i] += in(i, j);
  for (double& v : mean.data()) v /= static_cast<double>(n);
  Matrix var(mean.rows(), mean.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    for (std::size_t j = 0; j < in.cols(); ++j) {
      const double dev = in(i, j) - mean[rows ? j : i];
      var[rows ? j : i] += dev * dev;
    }
  }
  Matrix pass(var.rows(), var.cols());
  for (std::size_t k = 0; k < var.size(); ++k) {
    var[k] /= static_cast<double>(n);
    if (var[k] > floor) {
      pass[k] = 1.0;
    } else {
      var[k] = floor;
    }
  }
  Var res = t.push(Op::Var, {x.id()}, std::move(var));
  Tape::Node& node = t.node(res.id());
  node.axis = axis;
  node.aux = std::move(pass);
  node.scalar = static_cast<double>(n);
  return res;
}

/// Sum of all entries -> 1×1.
inline Var sum(Var x) {
  Tape& t = detail::tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.push(Op::Sum, {x.id()}, Matrix::scalar(s));
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.push(Op::ConcatCols, {a.id(), b.id()}, bmn::concat_cols(a.value(), b.value()));
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = detail::tape_of(x);
  Var res = t.push(Op::SliceRows, {x.id()}, bmn::slice_rows(x.value(), begin, end));
  t.node(res.id()).index_a = begin;
  t.node(res.id()).index_b = end;
  return res;
}

inline void Tape::backward(Var loss) {
  check_owner(loss);
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward needs a scalar loss, got " + lv.shape_string());
  }
  grads_.assign(nodes_.size(), Matrix());
  if (!nodes_[loss.id()].requires_grad) return;
  grads_[loss.id()] = Matrix::scalar(1.0);
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    if (!grads_[id].empty()) propagate(id);
  }
}

inline void Tape::propagate(NodeId id) {
  const Node& n = nodes_[id];
  const Matrix& g = grads_[id];
  auto in_value = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul:
      if (wants(0)) accumulate(n.inputs[0], bmn::matmul(g, transpose(in_value(1))));
      if (wants(1)) accumulate(n.inputs[1], bmn::matmul(transpose(in_value(0)), g));
      break;
    case Op::AddRow: {
      if (wants(0)) accumulate(n.inputs[0], g);
      if (wants(1)) {
        Matrix db(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g(i, j);
        accumulate(n.inputs[1], db);
      }
      break;
    }
    case Op::Add:
      if (wants(0)) accumulate(n.inputs[0], g);
      if (wants(1)) accumulate(n.inputs[1], g);
      break;
    case Op::Sub:
      if (wants(0)) accumulate(n.inputs[0], g);
      if (wants(1)) accumulate(n.inputs[1], -1.0 * g);
      break;
    case Op::Hadamard:
      if (wants(0)) accumulate(n.inputs[0], bmn::hadamard(g, in_value(1)));
      if (wants(1)) accumulate(n.inputs[1], bmn::hadamard(g, in_value(0)));
      break;
    case Op::MaskMul:
      accumulate(n.inputs[0], bmn::hadamard(g, n.aux));
      break;
    case Op::Scale:
      accumulate(n.inputs[0], n.scalar * g);
      break;
    case Op::AddScalar:
      accumulate(n.inputs[0], g);
      break;
    case Op::Relu: {
      Matrix d = g;
      const Matrix& x = in_value(0);
      for (std::size_t k = 0; k < d.size(); ++k)
        if (x[k] <= 0.0) d[k] = 0.0;
      accumulate(n.inputs[0], d);
      break;
    }
    case Op::Log: {
      Matrix d = g;
      const Matrix& x = in_value(0);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] /= x[k];
      accumulate(n.inputs[0], d);
      break;
    }
    case Op::Square: {
      Matrix d = g;
      const Matrix& x = in_value(0);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 2.0 * x[k];
      accumulate(n.inputs[0], d);
      break;
    }
    case Op::Mean: {
      const Matrix& x = in_value(0);
      const bool rows = n.axis == Axis::Rows;
      const double inv = 1.0 / static_cast<double>(rows ? x.rows() : x.cols());
      Matrix d(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g[rows ? j : i] * inv;
      accumulate(n.inputs[0], d);
      break;
    }
    case Op::Var: {
      const Matrix& x = in_value(0);
      const bool rows = n.axis == Axis::Rows;
      const double count = n.scalar;
      Matrix mean = rows ? Matrix(1, x.cols()) : Matrix(x.rows(), 1);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) mean[rows ? j : i] += x(i, j);
      for (double& v : mean.data()) v /= count;
      Matrix d(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
          const std::size_t k = rows ? j : i;
          d(i, j) = n.aux[k] * g[k] * 2.0 * (x(i, j) - mean[k]) / count;
        }
      }
      accumulate(n.inputs[0], d);
      break;
    }
    case Op::Sum: {
      const Matrix& x = in_value(0);
      accumulate(n.inputs[0], Matrix(x.rows(), x.cols(), g[0]));
      break;
    }
    case Op::ConcatCols: {
      const Matrix& a = in_value(0);
      const Matrix& b = in_value(1);
      if (wants(0)) {
        Matrix da(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) da(i, j) = g(i, j);
        accumulate(n.inputs[0], da);
      }
      if (wants(1)) {
        Matrix db(b.rows(), b.cols());
        for (std::size_t i = 0; i < b.rows(); ++i)
          for (std::size_t j = 0; j < b.cols(); ++j) db(i, j) = g(i, a.cols() + j);
        accumulate(n.inputs[1], db);
      }
      break;
    }
    case Op::SliceRows: {
      const Matrix& x = in_value(0);
      Matrix d(x.rows(), x.cols());
      for (std::size_t i = n.index_a; i < n.index_b; ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(i - n.index_a, j);
      accumulate(n.inputs[0], d);
      break;
    }
  }
}

}  // namespace bmn::ad
