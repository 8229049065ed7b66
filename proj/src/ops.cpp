#include "mseg/ops.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mseg {

namespace {

using i64 = std::int64_t;

std::size_t uz(i64 v) { return static_cast<std::size_t>(v); }

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(s));
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) {
    const T z = std::exp(-v);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(v);
  return z / (T(1) + z);
}

template <typename T>
T stable_softplus(T v) {
  // max(v, 0) + log1p(exp(-|v|))
  return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding,
                 int stride) {
  require_rank(x.shape(), 3, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weight");
  require_rank(b.shape(), 1, "conv2d", "bias");
  const i64 cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const i64 cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw DimensionError("conv2d: weight axis 1 (C_in=" + std::to_string(w.dim(1)) +
                         ") does not match input axis 0 (C=" + std::to_string(cin) + ")");
  if (w.dim(3) != k || k % 2 == 0)
    throw DimensionError("conv2d: kernel axes 2,3 must be equal and odd, got " +
                         shape_str(w.shape()));
  if (b.dim(0) != cout)
    throw DimensionError("conv2d: bias axis 0 (" + std::to_string(b.dim(0)) +
                         ") does not match weight axis 0 (" + std::to_string(cout) + ")");
  if (padding < 0 || stride < 1) throw DimensionError("conv2d: need padding >= 0, stride >= 1");
  if (h + 2 * padding < k || wd + 2 * padding < k)
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(x.shape()));
  const i64 ho = (h + 2 * padding - k) / stride + 1;
  const i64 wo = (wd + 2 * padding - k) / stride + 1;

  std::vector<T> out(uz(cout * ho * wo));
  const auto xd = x.data();
  const auto wdat = w.data();
  const auto bd = b.data();
  for (i64 co = 0; co < cout; ++co) {
    T* op = out.data() + co * ho * wo;
    std::fill(op, op + ho * wo, bd[uz(co)]);
    for (i64 ci = 0; ci < cin; ++ci) {
      const T* xp = xd.data() + ci * h * wd;
      const T* wp = wdat.data() + (co * cin + ci) * k * k;
      for (i64 ky = 0; ky < k; ++ky)
        for (i64 kx = 0; kx < k; ++kx) {
          const T wv = wp[ky * k + kx];
          for (i64 oy = 0; oy < ho; ++oy) {
            const i64 iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (i64 ox = 0; ox < wo; ++ox) {
              const i64 ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= wd) continue;
              op[oy * wo + ox] += wv * xp[iy * wd + ix];
            }
          }
        }
    }
  }
  Tensor<T> result({cout, ho, wo}, std::move(out));
  check_finite(result, "conv2d");

  if (auto* tape = tracking_tape<T>({&x, &w, &b})) {
    const auto macs = static_cast<std::uint64_t>(cout * ho * wo * cin * k * k);
    tape->record("conv2d", macs, {x, w, b}, {result},
                 [x, w, b, result, padding, stride, cin, h, wd, cout, k, ho, wo]() mutable {
                   const auto g = result.grad();
                   const auto xd = x.data();
                   const auto wdat = w.data();
                   if (b.requires_grad()) {
                     auto gb = b.grad_buffer();
                     for (i64 co = 0; co < cout; ++co)
                       for (i64 i = 0; i < ho * wo; ++i) gb[uz(co)] += g[uz(co * ho * wo + i)];
                   }
                   const bool need_x = x.requires_grad(), need_w = w.requires_grad();
                   std::span<T> gx, gw;
                   if (need_x) gx = x.grad_buffer();
                   if (need_w) gw = w.grad_buffer();
                   for (i64 co = 0; co < cout; ++co)
                     for (i64 ci = 0; ci < cin; ++ci)
                       for (i64 ky = 0; ky < k; ++ky)
                         for (i64 kx = 0; kx < k; ++kx) {
                           const i64 widx = ((co * cin + ci) * k + ky) * k + kx;
                           const T wv = wdat[uz(widx)];
                           T acc = 0;
                           for (i64 oy = 0; oy < ho; ++oy) {
                             const i64 iy = oy * stride - padding + ky;
                             if (iy < 0 || iy >= h) continue;
                             for (i64 ox = 0; ox < wo; ++ox) {
                               const i64 ix = ox * stride - padding + kx;
                               if (ix < 0 || ix >= wd) continue;
                               const T go = g[uz((co * ho + oy) * wo + ox)];
                               const i64 xi = (ci * h + iy) * wd + ix;
                               if (need_x) gx[uz(xi)] += go * wv;
                               acc += go * xd[uz(xi)];
                             }
                           }
                           if (need_w) gw[uz(widx)] += acc;
                         }
                 });
  }
  return result;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x, PoolMode mode) {
  require_rank(x.shape(), 3, "channel_pool", "input");
  const i64 c = x.dim(0), p = x.dim(1) * x.dim(2);
  const auto xd = x.data();
  std::vector<T> out(uz(p));
  std::vector<i64> arg(mode == PoolMode::Max ? uz(p) : 0);
  for (i64 i = 0; i < p; ++i) {
    if (mode == PoolMode::Max) {
      i64 best = 0;
      for (i64 ch = 1; ch < c; ++ch)
        if (xd[uz(ch * p + i)] > xd[uz(best * p + i)]) best = ch;
      arg[uz(i)] = best;
      out[uz(i)] = xd[uz(best * p + i)];
    } else {
      T acc = 0;
      for (i64 ch = 0; ch < c; ++ch) acc += xd[uz(ch * p + i)];
      out[uz(i)] = acc / static_cast<T>(c);
    }
  }
  Tensor<T> result({1, x.dim(1), x.dim(2)}, std::move(out));
  check_finite(result, "channel_pool");
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("channel_pool", 0, {x}, {result},
                 [x, result, mode, c, p, arg = std::move(arg)]() mutable {
                   const auto g = result.grad();
                   auto gx = x.grad_buffer();
                   for (i64 i = 0; i < p; ++i) {
                     if (mode == PoolMode::Max) {
                       gx[uz(arg[uz(i)] * p + i)] += g[uz(i)];
                     } else {
                       const T share = g[uz(i)] / static_cast<T>(c);
                       for (i64 ch = 0; ch < c; ++ch) gx[uz(ch * p + i)] += share;
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> spatial_pool(const Tensor<T>& x, PoolMode mode) {
  require_rank(x.shape(), 3, "spatial_pool", "input");
  const i64 c = x.dim(0), p = x.dim(1) * x.dim(2);
  const auto xd = x.data();
  std::vector<T> out(uz(c));
  std::vector<i64> arg(mode == PoolMode::Max ? uz(c) : 0);
  for (i64 ch = 0; ch < c; ++ch) {
    const T* row = xd.data() + ch * p;
    if (mode == PoolMode::Max) {
      const auto it = std::max_element(row, row + p);
      arg[uz(ch)] = it - row;
      out[uz(ch)] = *it;
    } else {
      out[uz(ch)] = std::accumulate(row, row + p, T(0)) / static_cast<T>(p);
    }
  }
  Tensor<T> result({c, 1, 1}, std::move(out));
  check_finite(result, "spatial_pool");
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("spatial_pool", 0, {x}, {result},
                 [x, result, mode, c, p, arg = std::move(arg)]() mutable {
                   const auto g = result.grad();
                   auto gx = x.grad_buffer();
                   for (i64 ch = 0; ch < c; ++ch) {
                     if (mode == PoolMode::Max) {
                       gx[uz(ch * p + arg[uz(ch)])] += g[uz(ch)];
                     } else {
                       const T share = g[uz(ch)] / static_cast<T>(p);
                       for (i64 i = 0; i < p; ++i) gx[uz(ch * p + i)] += share;
                     }
                   }
                 });
  }
  return result;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T v = xd[i];
    switch (kind) {
      case Activation::Sigmoid: out[i] = stable_sigmoid(v); break;
      case Activation::Relu: out[i] = v > T(0) ? v : T(0); break;
      case Activation::Softplus: out[i] = stable_softplus(v); break;
      case Activation::Exp: out[i] = std::exp(v); break;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "activation");
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("activation", 0, {x}, {result}, [x, result, kind]() mutable {
      const auto g = result.grad();
      const auto xd = x.data();
      const auto yd = result.data();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        T d = 0;
        switch (kind) {
          case Activation::Sigmoid: d = yd[i] * (T(1) - yd[i]); break;
          case Activation::Relu: d = xd[i] > T(0) ? T(1) : T(0); break;
          case Activation::Softplus: d = stable_sigmoid(xd[i]); break;
          case Activation::Exp: d = yd[i]; break;
        }
        gx[i] += g[i] * d;
      }
    });
  }
  return result;
}

namespace {

enum class Broadcast { None, PerChannel, PerPixel };

Broadcast broadcast_form(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::None;
  if (a.size() == 3 && b.size() == 3) {
    if (b[0] == a[0] && b[1] == 1 && b[2] == 1) return Broadcast::PerChannel;
    if (b[0] == 1 && b[1] == a[1] && b[2] == a[2]) return Broadcast::PerPixel;
  }
  throw DimensionError("ewise: cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

}  // namespace

template <typename T>
Tensor<T> ewise(const Tensor<T>& a, const Tensor<T>& b, EwiseKind kind) {
  const Broadcast form = broadcast_form(a.shape(), b.shape());
  const i64 n = a.numel();
  const i64 c = a.rank() == 3 ? a.dim(0) : 1;
  const i64 p = n / c;
  // Index into b for flat index i of a.
  auto bidx = [form, p](i64 i) -> i64 {
    switch (form) {
      case Broadcast::None: return i;
      case Broadcast::PerChannel: return i / p;
      case Broadcast::PerPixel: return i % p;
    }
    return i;
  };
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(uz(n));
  for (i64 i = 0; i < n; ++i) {
    const T bv = bd[uz(bidx(i))];
    out[uz(i)] = kind == EwiseKind::Add ? ad[uz(i)] + bv : ad[uz(i)] * bv;
  }
  Tensor<T> result(a.shape(), std::move(out));
  check_finite(result, "ewise");
  if (auto* tape = tracking_tape<T>({&a, &b})) {
    tape->record("ewise", 0, {a, b}, {result}, [a, b, result, kind, bidx, n]() mutable {
      const auto g = result.grad();
      const auto ad = a.data();
      const auto bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (i64 i = 0; i < n; ++i)
          ga[uz(i)] += kind == EwiseKind::Add ? g[uz(i)] : g[uz(i)] * bd[uz(bidx(i))];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (i64 i = 0; i < n; ++i)
          gb[uz(bidx(i))] += kind == EwiseKind::Add ? g[uz(i)] : g[uz(i)] * ad[uz(i)];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v *= factor;
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "scale");
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("scale", 0, {x}, {result}, [x, result, factor]() mutable {
      const auto g = result.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// layout

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  i64 lead = 0;
  std::vector<T> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), s.begin() + 1))
      throw DimensionError("concat: part " + std::to_string(i) + " has shape " + shape_str(s) +
                           ", non-channel axes must match " + shape_str(parts[0].shape()));
    lead += s[0];
    out.insert(out.end(), parts[i].vec().begin(), parts[i].vec().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> result(std::move(shape), std::move(out));
  if (auto* tape = tracking_tape<T>(parts)) {
    tape->record("concat", 0, parts, {result}, [parts, result]() mutable {
      const auto g = result.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        const auto n = static_cast<std::size_t>(p.numel());
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
        }
        off += n;
      }
    });
  }
  return result;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& whole, const std::vector<i64>& sizes) {
  const i64 lead = whole.dim(0);
  i64 total = 0;
  for (auto s : sizes) {
    if (s <= 0) throw DimensionError("split: part extents must be positive");
    total += s;
  }
  if (total != lead)
    throw DimensionError("split: parts sum to " + std::to_string(total) + " but axis 0 of " +
                         shape_str(whole.shape()) + " is " + std::to_string(lead));
  const i64 inner = whole.numel() / lead;
  std::vector<Tensor<T>> parts;
  i64 off = 0;
  for (auto s : sizes) {
    Shape shape = whole.shape();
    shape[0] = s;
    std::vector<T> d(whole.vec().begin() + off * inner, whole.vec().begin() + (off + s) * inner);
    parts.emplace_back(std::move(shape), std::move(d));
    off += s;
  }
  if (auto* tape = tracking_tape<T>({&whole})) {
    tape->record("split", 0, {whole}, parts, [whole, parts]() mutable {
      auto gw = whole.grad_buffer();
      std::size_t off = 0;
      for (const auto& p : parts) {
        const auto n = static_cast<std::size_t>(p.numel());
        if (p.has_grad()) {
          const auto g = p.grad();
          for (std::size_t i = 0; i < n; ++i) gw[off + i] += g[i];
        }
        off += n;
      }
    });
  }
  return parts;
}

template <typename T>
std::vector<Tensor<T>> split_even(const Tensor<T>& whole, i64 parts) {
  if (parts < 1 || whole.dim(0) % parts != 0)
    throw DimensionError("split: axis 0 of " + shape_str(whole.shape()) +
                         " is not divisible into " + std::to_string(parts) + " parts");
  return split(whole, std::vector<i64>(uz(parts), whole.dim(0) / parts));
}

template <typename T>
Tensor<T> interleave(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("interleave: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const i64 c = a.dim(0), inner = a.numel() / c;
  std::vector<T> out(uz(2 * a.numel()));
  for (i64 ch = 0; ch < c; ++ch) {
    std::copy_n(a.vec().begin() + ch * inner, inner, out.begin() + (2 * ch) * inner);
    std::copy_n(b.vec().begin() + ch * inner, inner, out.begin() + (2 * ch + 1) * inner);
  }
  Shape shape = a.shape();
  shape[0] = 2 * c;
  Tensor<T> result(std::move(shape), std::move(out));
  if (auto* tape = tracking_tape<T>({&a, &b})) {
    tape->record("interleave", 0, {a, b}, {result}, [a, b, result, c, inner]() mutable {
      const auto g = result.grad();
      for (int side = 0; side < 2; ++side) {
        const Tensor<T>& t = side == 0 ? a : b;
        if (!t.requires_grad()) continue;
        auto gt = t.grad_buffer();
        for (i64 ch = 0; ch < c; ++ch)
          for (i64 i = 0; i < inner; ++i)
            gt[uz(ch * inner + i)] += g[uz((2 * ch + side) * inner + i)];
      }
    });
  }
  return result;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> deinterleave(const Tensor<T>& x) {
  if (x.dim(0) % 2 != 0)
    throw DimensionError("deinterleave: axis 0 of " + shape_str(x.shape()) + " is odd");
  const i64 c = x.dim(0) / 2, inner = x.numel() / x.dim(0);
  std::vector<T> a(uz(c * inner)), b(uz(c * inner));
  for (i64 ch = 0; ch < c; ++ch) {
    std::copy_n(x.vec().begin() + (2 * ch) * inner, inner, a.begin() + ch * inner);
    std::copy_n(x.vec().begin() + (2 * ch + 1) * inner, inner, b.begin() + ch * inner);
  }
  Shape shape = x.shape();
  shape[0] = c;
  Tensor<T> ta(shape, std::move(a)), tb(shape, std::move(b));
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("deinterleave", 0, {x}, {ta, tb}, [x, ta, tb, c, inner]() mutable {
      auto gx = x.grad_buffer();
      for (int side = 0; side < 2; ++side) {
        const Tensor<T>& t = side == 0 ? ta : tb;
        if (!t.has_grad()) continue;
        const auto g = t.grad();
        for (i64 ch = 0; ch < c; ++ch)
          for (i64 i = 0; i < inner; ++i)
            gx[uz((2 * ch + side) * inner + i)] += g[uz(ch * inner + i)];
      }
    });
  }
  return {ta, tb};
}

namespace {

// Maps flat index of the output to flat index of the input for a reversal.
struct ReverseIndexer {
  i64 outer, len, inner;
  i64 operator()(i64 i) const {
    const i64 o = i / (len * inner);
    const i64 r = (i / inner) % len;
    const i64 in = i % inner;
    return (o * len + (len - 1 - r)) * inner + in;
  }
};

}  // namespace

template <typename T>
Tensor<T> reverse(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("reverse: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  i64 outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const ReverseIndexer idx{outer, x.dim(axis), inner};
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (i64 i = 0; i < x.numel(); ++i) out[uz(i)] = xd[uz(idx(i))];
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("reverse", 0, {x}, {result}, [x, result, idx]() mutable {
      const auto g = result.grad();
      auto gx = x.grad_buffer();
      for (i64 i = 0; i < x.numel(); ++i) gx[uz(idx(i))] += g[uz(i)];
    });
  }
  return result;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const i64 c = x.dim(0), p = x.numel() / c;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("layernorm: gamma/beta must be [" + std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  if (!(eps > T(0))) throw DimensionError("layernorm: eps must be positive");
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<T> xhat(xd.size()), inv_std(uz(p)), out(xd.size());
  for (i64 i = 0; i < p; ++i) {
    T mean = 0;
    for (i64 ch = 0; ch < c; ++ch) mean += xd[uz(ch * p + i)];
    mean /= static_cast<T>(c);
    T var = 0;
    for (i64 ch = 0; ch < c; ++ch) {
      const T d = xd[uz(ch * p + i)] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[uz(i)] = is;
    for (i64 ch = 0; ch < c; ++ch) {
      const auto k = uz(ch * p + i);
      xhat[k] = (xd[k] - mean) * is;
      out[k] = gd[uz(ch)] * xhat[k] + bd[uz(ch)];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "layernorm");
  if (auto* tape = tracking_tape<T>({&x, &gamma, &beta})) {
    tape->record("layernorm", 0, {x, gamma, beta}, {result},
                 [x, gamma, beta, result, c, p, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)]() mutable {
                   const auto g = result.grad();
                   const auto gd = gamma.data();
                   if (gamma.requires_grad()) {
                     auto gg = gamma.grad_buffer();
                     for (i64 ch = 0; ch < c; ++ch)
                       for (i64 i = 0; i < p; ++i)
                         gg[uz(ch)] += g[uz(ch * p + i)] * xhat[uz(ch * p + i)];
                   }
                   if (beta.requires_grad()) {
                     auto gb = beta.grad_buffer();
                     for (i64 ch = 0; ch < c; ++ch)
                       for (i64 i = 0; i < p; ++i) gb[uz(ch)] += g[uz(ch * p + i)];
                   }
                   if (!x.requires_grad()) return;
                   auto gx = x.grad_buffer();
                   const T n = static_cast<T>(c);
                   for (i64 i = 0; i < p; ++i) {
                     T sum_g = 0, sum_gx = 0;
                     for (i64 ch = 0; ch < c; ++ch) {
                       const auto k = uz(ch * p + i);
                       const T gh = g[k] * gd[uz(ch)];
                       sum_g += gh;
                       sum_gx += gh * xhat[k];
                     }
                     for (i64 ch = 0; ch < c; ++ch) {
                       const auto k = uz(ch * p + i);
                       const T gh = g[k] * gd[uz(ch)];
                       gx[k] += inv_std[uz(i)] / n * (n * gh - sum_g - xhat[k] * sum_gx);
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " +
                         shape_str(shape));
  Tensor<T> result(std::move(shape), x.vec());
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("reshape", 0, {x}, {result}, [x, result]() mutable {
      const auto g = result.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

namespace {

struct Tap {
  i64 lo, hi;
  double frac;
};

// Source taps for one axis, half-pixel centres, edge-clamped.
std::vector<Tap> bilinear_taps(i64 in, i64 out) {
  std::vector<Tap> taps(uz(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (i64 o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    i64 lo = static_cast<i64>(src);
    if (lo > in - 1) lo = in - 1;
    const i64 hi = std::min(lo + 1, in - 1);
    taps[uz(o)] = Tap{lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, i64 out_h, i64 out_w) {
  require_rank(x.shape(), 3, "resize_bilinear", "input");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: output extent < 1");
  const i64 c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  const auto xd = x.data();
  std::vector<T> out(uz(c * out_h * out_w));
  for (i64 ch = 0; ch < c; ++ch) {
    const T* src = xd.data() + ch * h * w;
    for (i64 oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[uz(oy)];
      const T fy = static_cast<T>(a.frac);
      for (i64 ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[uz(ox)];
        const T fx = static_cast<T>(b.frac);
        const T top = src[a.lo * w + b.lo] * (T(1) - fx) + src[a.lo * w + b.hi] * fx;
        const T bot = src[a.hi * w + b.lo] * (T(1) - fx) + src[a.hi * w + b.hi] * fx;
        out[uz((ch * out_h + oy) * out_w + ox)] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  Tensor<T> result({c, out_h, out_w}, std::move(out));
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("resize_bilinear", 0, {x}, {result},
                 [x, result, ty, tx, c, h, w, out_h, out_w]() mutable {
                   const auto g = result.grad();
                   auto gx = x.grad_buffer();
                   for (i64 ch = 0; ch < c; ++ch) {
                     T* dst = gx.data() + ch * h * w;
                     for (i64 oy = 0; oy < out_h; ++oy) {
                       const auto& a = ty[uz(oy)];
                       const T fy = static_cast<T>(a.frac);
                       for (i64 ox = 0; ox < out_w; ++ox) {
                         const auto& b = tx[uz(ox)];
                         const T fx = static_cast<T>(b.frac);
                         const T go = g[uz((ch * out_h + oy) * out_w + ox)];
                         dst[a.lo * w + b.lo] += go * (T(1) - fy) * (T(1) - fx);
                         dst[a.lo * w + b.hi] += go * (T(1) - fy) * fx;
                         dst[a.hi * w + b.lo] += go * fy * (T(1) - fx);
                         dst[a.hi * w + b.hi] += go * fy * fx;
                       }
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> result = Tensor<T>::scalar(acc);
  check_finite(result, "sum");
  if (auto* tape = tracking_tape<T>({&x})) {
    tape->record("sum", 0, {x}, {result}, [x, result]() mutable {
      const T g = result.grad()[0];
      for (auto& v : x.grad_buffer()) v += g;
    });
  }
  return result;
}

#define MSEG_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> channel_pool(const Tensor<T>&, PoolMode);                               \
  template Tensor<T> spatial_pool(const Tensor<T>&, PoolMode);                               \
  template Tensor<T> activation(const Tensor<T>&, Activation);                               \
  template Tensor<T> ewise(const Tensor<T>&, const Tensor<T>&, EwiseKind);                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                  \
  template std::vector<Tensor<T>> split(const Tensor<T>&, const std::vector<i64>&);          \
  template std::vector<Tensor<T>> split_even(const Tensor<T>&, i64);                         \
  template Tensor<T> interleave(const Tensor<T>&, const Tensor<T>&);                         \
  template std::pair<Tensor<T>, Tensor<T>> deinterleave(const Tensor<T>&);                   \
  template Tensor<T> reverse(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> resize_bilinear(const Tensor<T>&, i64, i64);                            \
  template Tensor<T> sum(const Tensor<T>&);

MSEG_INSTANTIATE_OPS(float)
MSEG_INSTANTIATE_OPS(double)

}  // namespace mseg
