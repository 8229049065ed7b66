#pragma once

#include <utility>
#include <vector>

#include "mseg/tensor.hpp"

// Differentiable operator set. Feature maps are channel-first C x H x W,
// row-major. Every op records itself on the active GradTape when one of its
// inputs requires grad, and rejects non-finite results.
namespace mseg {

enum class PoolMode { Max, Avg };
enum class Activation { Sigmoid, Relu, Softplus, Exp };
enum class EwiseKind { Add, Mul };

/// Cross-correlation. x: C_in x H x W, w: C_out x C_in x k x k, b: C_out.
/// Output extent (H + 2*padding - k) / stride + 1 (floor).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding,
                 int stride);

/// Max or mean over the channel axis: C x H x W -> 1 x H x W.
template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x, PoolMode mode);

/// Global max or mean over pixels: C x H x W -> C x 1 x 1.
template <typename T>
Tensor<T> spatial_pool(const Tensor<T>& x, PoolMode mode);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

/// Elementwise add/mul. `b` either matches `a` or, for rank-3 `a` of C x H x W,
/// is C x 1 x 1 (per-channel weight) or 1 x H x W (per-pixel weight).
template <typename T>
Tensor<T> ewise(const Tensor<T>& a, const Tensor<T>& b, EwiseKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwiseKind::Add);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwiseKind::Mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return mul(x, activation(x, Activation::Sigmoid));
}

/// Concatenation along axis 0. All non-leading extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);

/// Splits axis 0 into the given extents (must sum to the axis length).
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& whole, const std::vector<std::int64_t>& sizes);

/// Splits axis 0 into `parts` equal pieces.
template <typename T>
std::vector<Tensor<T>> split_even(const Tensor<T>& whole, std::int64_t parts);

/// Channel 2k of the output is a's channel k, channel 2k+1 is b's channel k.
template <typename T>
Tensor<T> interleave(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> deinterleave(const Tensor<T>& x);

template <typename T>
Tensor<T> reverse(const Tensor<T>& x, std::size_t axis);

/// Normalises over axis 0 independently at every remaining position.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Bilinear resampling of C x H x W with half-pixel centres (align_corners off).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

/// Sum of all elements as a 1-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

}  // namespace mseg
