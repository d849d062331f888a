#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "latcert/tensor.hpp"

namespace latcert {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Parameter name -> gradient tensor.
using Gradients = std::map<std::string, Tensor>;

/// Single-use reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse id order is a valid
/// topological order for the backward sweep. A tape can be differentiated
/// once; a second call to gradient() throws UsageError.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);

  /// Non-differentiable value recorded once per key.
  Var cached_constant(const std::string& key, const Tensor& value);

  /// Differentiable leaf. Repeated calls with the same name return the same node.
  Var parameter(const std::string& name, const Tensor& value);

  /// Appends a node. `backward` runs only when some parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adjoint buffer of a node, zero-initialised on first access.
  Tensor& grad(std::size_t id);

  /// Back-propagates `seed` from a scalar root and returns the adjoint of every
  /// parameter leaf (zeros for leaves the root does not depend on).
  Gradients gradient(Var root, double seed = 1.0);

  [[nodiscard]] bool consumed() const noexcept { return consumed_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> parameters_;
  std::unordered_map<std::string, std::size_t> constants_;
  std::vector<std::string> parameter_order_;
  bool consumed_ = false;
};

// Differentiable operations. All operands must live on the same tape.
namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
/// Square root with gradient 0 at 0.
Var sqrt(Var a);
Var square(Var a);
/// Clamp into [lo, hi]; gradient is zero where the clamp is active.
Var clamp(Var a, double lo, double hi);
/// Elementwise maximum; ties route the gradient to `a`.
Var maximum(Var a, Var b);
/// Elementwise inverse standard normal CDF.
Var normal_quantile(Var a);
Var sum(Var a);
Var mean(Var a);
/// Sum of same-shaped values, accumulated left to right.
Var add_n(const std::vector<Var>& terms);
/// Scalar element `index` of a vector.
Var pick(Var a, std::size_t index);
/// Largest element other than `exclude` (lowest index on ties).
Var pick_runner_up(Var a, std::size_t exclude);

Var affine(Var x, Var weight, Var bias);
/// |weight| * x, used for interval radii.
Var affine_abs(Var x, Var weight);
Var conv1d(Var x, Var weight, Var bias);
Var conv1d_abs(Var x, Var weight);
Var mean_rows(Var x);
Var log_softmax(Var x);

}  // namespace ad

}  // namespace latcert
