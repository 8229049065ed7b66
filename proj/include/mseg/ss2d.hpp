#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mseg/scan.hpp"

namespace mseg {

/// Pixel traversal orders. Each backward order is the exact reverse of its
/// forward partner.
enum class ScanDirection { RowForward, RowBackward, ColForward, ColBackward };

inline constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::RowForward, ScanDirection::RowBackward, ScanDirection::ColForward,
    ScanDirection::ColBackward};

const char* to_string(ScanDirection dir);

/// Flat pixel index (y * W + x) visited at each step of the traversal.
std::vector<std::int64_t> traversal_order(std::int64_t height, std::int64_t width,
                                          ScanDirection dir);

/// C x H x W -> (H*W) x C in traversal order. Differentiable.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, ScanDirection dir);

/// Inverse of unfold: (H*W) x C -> C x H x W. Differentiable.
template <typename T>
Tensor<T> refold(const Tensor<T>& seq, ScanDirection dir, std::int64_t height, std::int64_t width);

/// One independent S6 block per direction, indexed like kScanDirections.
template <typename T>
struct SS2DParams {
  std::array<S6Params<T>, 4> dirs;

  std::int64_t channels() const { return dirs[0].channels(); }

  static SS2DParams init(std::int64_t channels, std::int64_t state_dim, SplitMix64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < dirs.size(); ++i)
      dirs[i].for_each(prefix + "." + to_string(kScanDirections[i]), f);
  }
};

/// Sum over the four directions of refold(scan(unfold(x, d)), d).
template <typename T>
Tensor<T> ss2d(const Tensor<T>& x, const SS2DParams<T>& params);

/// MACs of one ss2d call on a C x H x W map.
std::uint64_t ss2d_macs(std::int64_t channels, std::int64_t height, std::int64_t width,
                        std::int64_t state_dim);

}  // namespace mseg
