#include "mseg/tensor.hpp"

#include <sstream>

namespace mseg {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] <= 0)
      throw DimensionError("axis " + std::to_string(i) + " of " + shape_str(shape) +
                           " is not positive");
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node>()) {
  validate_shape(shape);
  node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw DimensionError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  return shape()[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape()));
  return node().data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
  return n.grad;
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& op) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(d[i]))
      throw NumericError(op + ": non-finite value at flat index " + std::to_string(i));
}

template <typename T>
void GradTape<T>::record(std::string op, std::uint64_t macs, std::vector<Tensor<T>> inputs,
                         std::vector<Tensor<T>> outputs, std::function<void()> backward) {
  if (consumed_) throw StateError("recording onto a tape that was already replayed; reset it");
  for (auto& o : outputs) o.set_requires_grad(true);
  entries_.push_back(Entry{std::move(op), macs, std::move(inputs), std::move(outputs),
                           std::move(backward)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw StateError("backward called twice without reset");
  if (entries_.empty()) throw StateError("backward on an empty tape");
  if (loss.numel() != 1)
    throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  auto seed = loss;
  seed.grad_buffer()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    bool any = false;
    for (const auto& o : it->outputs) any = any || o.has_grad();
    if (any) it->backward();
  }
  consumed_ = true;
}

template <typename T>
void GradTape<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void check_finite(const Tensor<float>&, const std::string&);
template void check_finite(const Tensor<double>&, const std::string&);

}  // namespace mseg
