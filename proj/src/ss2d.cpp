#include "mseg/ss2d.hpp"

#include <algorithm>

#include "mseg/ops.hpp"

namespace mseg {

namespace {

using i64 = std::int64_t;

std::size_t uz(i64 v) { return static_cast<std::size_t>(v); }

}  // namespace

const char* to_string(ScanDirection dir) {
  switch (dir) {
    case ScanDirection::RowForward: return "row_fwd";
    case ScanDirection::RowBackward: return "row_bwd";
    case ScanDirection::ColForward: return "col_fwd";
    case ScanDirection::ColBackward: return "col_bwd";
  }
  return "unknown";
}

std::vector<i64> traversal_order(i64 height, i64 width, ScanDirection dir) {
  if (height < 1 || width < 1) throw DimensionError("traversal_order: H and W must be >= 1");
  std::vector<i64> order;
  order.reserve(uz(height * width));
  const bool columns = dir == ScanDirection::ColForward || dir == ScanDirection::ColBackward;
  if (columns) {
    for (i64 x = 0; x < width; ++x)
      for (i64 y = 0; y < height; ++y) order.push_back(y * width + x);
  } else {
    for (i64 i = 0; i < height * width; ++i) order.push_back(i);
  }
  if (dir == ScanDirection::RowBackward || dir == ScanDirection::ColBackward)
    std::reverse(order.begin(), order.end());
  return order;
}

template <typename T>
Tensor<T> unfold(const Tensor<T>& x, ScanDirection dir) {
  if (x.rank() != 3) throw DimensionError("unfold: expected C x H x W, got " + shape_str(x.shape()));
  const i64 c = x.dim(0), h = x.dim(1), w = x.dim(2), len = h * w;
  const auto order = traversal_order(h, w, dir);
  const auto xd = x.data();
  std::vector<T> seq(uz(len * c));
  for (i64 s = 0; s < len; ++s)
    for (i64 ch = 0; ch < c; ++ch) seq[uz(s * c + ch)] = xd[uz(ch * len + order[uz(s)])];
  Tensor<T> result({len, c}, std::move(seq));
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("unfold", 0, {x}, {result}, [x, result, order, c, len]() mutable {
      const auto g = result.grad();
      auto gx = x.grad_buffer();
      for (i64 s = 0; s < len; ++s)
        for (i64 ch = 0; ch < c; ++ch) gx[uz(ch * len + order[uz(s)])] += g[uz(s * c + ch)];
    });
  }
  return result;
}

template <typename T>
Tensor<T> refold(const Tensor<T>& seq, ScanDirection dir, i64 height, i64 width) {
  if (seq.rank() != 2 || seq.dim(0) != height * width)
    throw DimensionError("refold: expected (" + std::to_string(height * width) + ") x C, got " +
                         shape_str(seq.shape()));
  const i64 c = seq.dim(1), len = height * width;
  const auto order = traversal_order(height, width, dir);
  const auto sd = seq.data();
  std::vector<T> out(uz(len * c));
  for (i64 s = 0; s < len; ++s)
    for (i64 ch = 0; ch < c; ++ch) out[uz(ch * len + order[uz(s)])] = sd[uz(s * c + ch)];
  Tensor<T> result({c, height, width}, std::move(out));
  if (auto* tape = tracking_tape<T>({&seq})) {
    tape->record("refold", 0, {seq}, {result}, [seq, result, order, c, len]() mutable {
      const auto g = result.grad();
      auto gs = seq.grad_buffer();
      for (i64 s = 0; s < len; ++s)
        for (i64 ch = 0; ch < c; ++ch) gs[uz(s * c + ch)] += g[uz(ch * len + order[uz(s)])];
    });
  }
  return result;
}

template <typename T>
SS2DParams<T> SS2DParams<T>::init(i64 channels, i64 state_dim, SplitMix64& rng) {
  SS2DParams p;
  for (auto& d : p.dirs) d = S6Params<T>::init(channels, state_dim, rng);
  return p;
}

template <typename T>
Tensor<T> ss2d(const Tensor<T>& x, const SS2DParams<T>& params) {
  if (x.rank() != 3 || x.dim(0) != params.channels())
    throw DimensionError("ss2d: expected " + std::to_string(params.channels()) +
                         " x H x W, got " + shape_str(x.shape()));
  const i64 h = x.dim(1), w = x.dim(2);
  Tensor<T> total;
  for (std::size_t i = 0; i < kScanDirections.size(); ++i) {
    const auto dir = kScanDirections[i];
    Tensor<T> branch;
    try {
      branch = refold(scan_sequential(params.dirs[i], unfold(x, dir)), dir, h, w);
    } catch (const NumericError& e) {
      throw NumericError(std::string("ss2d[") + to_string(dir) + "]: " + e.what());
    }
    total = total.defined() ? add(total, branch) : branch;
  }
  return total;
}

std::uint64_t ss2d_macs(i64 channels, i64 height, i64 width, i64 state_dim) {
  return 4 * scan_macs(height * width, channels, state_dim);
}

#define MSEG_INSTANTIATE_SS2D(T)                                        \
  template Tensor<T> unfold(const Tensor<T>&, ScanDirection);           \
  template Tensor<T> refold(const Tensor<T>&, ScanDirection, i64, i64); \
  template struct SS2DParams<T>;                                        \
  template Tensor<T> ss2d(const Tensor<T>&, const SS2DParams<T>&);

MSEG_INSTANTIATE_SS2D(float)
MSEG_INSTANTIATE_SS2D(double)

}  // namespace mseg
