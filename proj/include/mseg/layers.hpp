#pragma once

#include <string>

#include "mseg/ops.hpp"
#include "mseg/rng.hpp"

namespace mseg {

template <typename T>
struct Conv2dParams {
  Tensor<T> w;  // C_out x C_in x k x k
  Tensor<T> b;  // C_out
  int padding = 0;
  int stride = 1;

  /// Fan-in uniform weights and bias.
  static Conv2dParams init(std::int64_t c_in, std::int64_t c_out, int kernel, int stride,
                           int padding, SplitMix64& rng) {
    const std::int64_t fan_in = c_in * kernel * kernel;
    Conv2dParams p;
    p.w = fan_in_uniform<T>({c_out, c_in, kernel, kernel}, fan_in, rng);
    p.b = fan_in_uniform<T>({c_out}, fan_in, rng);
    p.padding = padding;
    p.stride = stride;
    return p;
  }

  /// "Same" convolution for odd kernels.
  static Conv2dParams same(std::int64_t c_in, std::int64_t c_out, int kernel, SplitMix64& rng) {
    return init(c_in, c_out, kernel, 1, (kernel - 1) / 2, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, padding, stride); }

  std::int64_t c_in() const { return w.dim(1); }
  std::int64_t c_out() const { return w.dim(0); }
  std::int64_t kernel() const { return w.dim(2); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

/// Two 1x1 convolutions with a ReLU between them, applied to C x 1 x 1
/// descriptors (channel attention) or full maps.
template <typename T>
struct MlpParams {
  Conv2dParams<T> reduce;
  Conv2dParams<T> expand;

  static MlpParams init(std::int64_t c_in, std::int64_t hidden, std::int64_t c_out,
                        SplitMix64& rng) {
    return MlpParams{Conv2dParams<T>::init(c_in, hidden, 1, 1, 0, rng),
                     Conv2dParams<T>::init(hidden, c_out, 1, 1, 0, rng)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return expand(activation(reduce(x), Activation::Relu));
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    reduce.for_each(prefix + ".reduce", f);
    expand.for_each(prefix + ".expand", f);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams init(std::int64_t channels) {
    return LayerNormParams{Tensor<T>::full({channels}, T(1)), Tensor<T>::zeros({channels})};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace mseg
