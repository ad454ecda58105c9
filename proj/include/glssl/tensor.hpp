#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glssl/matrix.hpp"

namespace glssl {

namespace detail {
struct TensorNode {
  Matrix value;
  Matrix grad;  // allocated lazily; empty until something accumulates into it
  bool requires_grad = false;
  bool leaf = true;
  std::string name;
};
}  // namespace detail

/// Shared handle to a node of the computation graph. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  /// A leaf that never receives gradients.
  static Tensor constant(Matrix value);
  /// A trainable leaf.
  static Tensor parameter(Matrix value, std::string name = {});

  bool valid() const noexcept { return node_ != nullptr; }
  std::size_t rows() const noexcept { return node_->value.rows(); }
  std::size_t cols() const noexcept { return node_->value.cols(); }
  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool is_leaf() const noexcept { return node_->leaf; }
  const std::string& name() const noexcept { return node_->name; }

  const Matrix& value() const noexcept { return node_->value; }
  Matrix& mutable_value() noexcept { return node_->value; }

  /// Accumulated gradient; a zero matrix of the right shape if nothing has accumulated yet.
  const Matrix& grad() const;
  /// Gradient buffer for accumulation, allocated on first use.
  Matrix& grad_buffer();
  void zero_grad();

  double item() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations.
///
/// Operations append themselves after their inputs exist, so the record is
/// topologically ordered by construction; backward() replays it in reverse.
/// With recording disabled every op returns a constant, which is how the
/// evaluation pass avoids keeping intermediates alive.
class Tape {
 public:
  // Receives the op's output value and the gradient flowing into it.
  using BackwardFn = std::function<void(const Matrix& out_value, const Matrix& out_grad)>;

  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }

  /// True when an op over these inputs must be recorded.
  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;

  /// Wraps `value` as an op output. Records `backward` when any input requires grad.
  Tensor record(Matrix value, std::vector<Tensor> inputs, BackwardFn backward);

  /// Reverse-mode sweep from a 1x1 loss. Gradients accumulate into leaves across
  /// calls; intermediate gradients are reset at the start of every sweep.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  void clear() { records_.clear(); }

 private:
  bool recording_;
  std::vector<Record> records_;
};

}  // namespace glssl
