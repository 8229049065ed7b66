#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mseg {

using Shape = std::vector<std::int64_t>;

// Error taxonomy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DimensionError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class StateError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor with a shared node, so copies are cheap handles.
/// Values produced by an op are never mutated afterwards; only leaves (weights,
/// inputs) are written through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node().data.size()); }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  const std::vector<T>& vec() const { return node().data; }
  T item() const;
  T operator[](std::int64_t i) const { return node().data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return defined() && node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  /// Gradient buffer, zero-initialised on first access. Gradient state is the
  /// one mutable part of a produced tensor, so this is usable through const
  /// handles (backward closures capture inputs by value).
  std::span<T> grad_buffer() const;
  void zero_grad() const { node().grad.clear(); }

  /// Detached deep copy (no grad, no tracking).
  Tensor clone() const { return Tensor(shape(), vec()); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(vec().begin(), vec().end());
    return Tensor<U>(shape(), std::move(out));
  }

  const void* id() const { return node_.get(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Node& node() const {
    if (!node_) throw StateError("access to an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws NumericError naming `op` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& op);

/// Ordered record of differentiable ops. Backward replays entries in exact
/// reverse order. One tape per thread of execution; ops find it through the
/// thread-local slot installed by TapeScope.
template <typename T>
class GradTape {
 public:
  struct Entry {
    std::string op;
    std::uint64_t macs = 0;
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> outputs;
    std::function<void()> backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string op, std::uint64_t macs, std::vector<Tensor<T>> inputs,
              std::vector<Tensor<T>> outputs, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(const Tensor<T>& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool consumed() const { return consumed_; }

  static GradTape* active() { return active_; }

 private:
  template <typename>
  friend class TapeScope;

  std::vector<Entry> entries_;
  bool consumed_ = false;
  static inline thread_local GradTape* active_ = nullptr;
};

/// Installs a tape as the active one for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(GradTape<T>::active_) {
    GradTape<T>::active_ = &tape;
  }
  ~TapeScope() { GradTape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Returns the active tape when any of `inputs` requires grad, else nullptr.
template <typename T>
GradTape<T>* tracking_tape(std::initializer_list<const Tensor<T>*> inputs) {
  auto* tape = GradTape<T>::active();
  if (!tape) return nullptr;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return tape;
  return nullptr;
}

template <typename T>
GradTape<T>* tracking_tape(const std::vector<Tensor<T>>& inputs) {
  auto* tape = GradTape<T>::active();
  if (!tape) return nullptr;
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) return tape;
  return nullptr;
}

}  // namespace mseg
