#include <algorithm>

#include "glssl/errors.hpp"
#include "glssl/tensor.hpp"

namespace glssl {

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value, std::string name) {
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Tensor(std::move(node));
}

const Matrix& Tensor::grad() const {
  auto& n = *node_;
  if (!n.value.same_shape(n.grad)) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tensor::grad_buffer() {
  auto& n = *node_;
  if (!n.value.same_shape(n.grad)) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = *node_;
  if (n.value.same_shape(n.grad)) {
    n.grad.fill(0.0);
  } else {
    n.grad = Matrix(n.value.rows(), n.value.cols());
  }
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("item() on non-scalar tensor " + value().shape_string());
  }
  return value()[0];
}

bool Tape::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->valid() && t->requires_grad(); });
}

Tensor Tape::record(Matrix value, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool grad = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                      return t.requires_grad();
                    });
  if (!grad) return Tensor::constant(std::move(value));
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->leaf = false;
  Tensor out(std::move(node));
  records_.push_back(Record{std::move(inputs), out, std::move(backward)});
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward target must be 1x1, got " + loss.value().shape_string());
  }
  if (!loss.requires_grad()) return;
  for (auto& rec : records_) rec.output.node_->grad = Matrix();
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& out = *it->output.node_;
    if (out.grad.empty()) continue;  // nothing downstream reached this op
    it->backward(out.value, out.grad);
    // Intermediate gradients are not needed once propagated.
    if (!it->output.same_node(loss)) out.grad = Matrix();
  }
}

}  // namespace glssl
