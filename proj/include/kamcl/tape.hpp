#pragma once

// Define-by-run reverse-mode differentiation. A Tape records every operation
// of one forward pass; backward() replays the records in reverse and pushes
// gradients into the ParamTensors that were read through Tape::leaf().

#include <cstddef>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "kamcl/error.hpp"
#include "kamcl/matrix.hpp"

namespace kamcl::ad {

/// Trainable storage: value plus a same-shape gradient accumulator.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string tensor_name, Matrix initial)
      : name(std::move(tensor_name)), value(std::move(initial)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  inline const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. the recorded output, and that output.
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that receives no gradient.
  Var constant(Matrix value) { return push("constant", std::move(value), nullptr, nullptr); }

  /// Records the current value of a parameter; backward() adds into param.grad.
  Var leaf(ParamTensor& param) {
    if (!param.value.all_finite()) throw NumericError("non-finite values in parameter '" + param.name + "'");
    return push("leaf", param.value, nullptr, &param);
  }

  /// Appends an operation result. The value must be finite. `backward` is
  /// called as f(tape, out_grad) or f(tape, out_grad, out_value).
  template <class F>
  Var record(const char* op, Matrix value, F backward) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output from op '") + op + "'");
    if constexpr (std::is_invocable_v<F&, Tape&, const Matrix&, const Matrix&>) {
      return push(op, std::move(value), BackwardFn(std::move(backward)), nullptr);
    } else {
      return push(op, std::move(value),
                  [f = std::move(backward)](Tape& t, const Matrix& g, const Matrix&) mutable { f(t, g); }, nullptr);
    }
  }

  const Matrix& value(Var v) const { return node(v).value; }
  const char* op_name(Var v) const { return node(v).op; }

  /// Gradient reached by the last backward(); empty matrix if none reached.
  const Matrix& grad(Var v) const { return node(v).grad; }

  /// Gradient slot of `v`, zero-initialized on first touch. For use inside BackwardFn.
  Matrix& grad_slot(Var v) {
    Node& n = node(v);
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var loss) {
    const Node& l = node(loss);
    if (l.value.rows() != 1 || l.value.cols() != 1)
      throw ContractError("backward: loss must be a 1x1 scalar, got " + l.value.shape_string());
    for (auto& n : nodes_) n.grad = Matrix();
    grad_slot(loss)(0, 0) = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) {
        // Inputs always precede outputs, so this node's grad is final here.
        n.backward(*this, n.grad, n.value);
      } else if (n.param != nullptr) {
        n.param->grad.add_scaled(n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    ParamTensor* param;
  };

  Var push(const char* op, Matrix value, BackwardFn backward, ParamTensor* param) {
    nodes_.push_back(Node{op, std::move(value), Matrix(), std::move(backward), param});
    return Var(this, nodes_.size() - 1);
  }

  const Node& node(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
    return nodes_[v.id_];
  }
  Node& node(Var v) {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
    return nodes_[v.id_];
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

}  // namespace kamcl::ad
