#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mseg/rng.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Parameters of one selective (S6) scan block over D channels with an
/// N-dimensional diagonal state per channel.
///
///   delta_t = softplus(w_delta x_t + b_delta)            (D, one step per channel)
///   A       = -exp(a_log)                                (D x N, strictly negative)
///   A_bar   = exp(delta_t * A)                           (zero-order hold)
///   Bx_bar  = delta_t * (w_b x_t + b_b) * x_t            (Euler input path)
///   h_t     = A_bar * h_{t-1} + Bx_bar,  h_0 = 0
///   y_t     = sum_n (w_c x_t + b_c)[n] h_t[:, n] + skip_d * x_t
template <typename T>
struct S6Params {
  Tensor<T> a_log;    // D x N
  Tensor<T> w_delta;  // D x D
  Tensor<T> b_delta;  // D
  Tensor<T> w_b;      // N x D
  Tensor<T> b_b;      // N
  Tensor<T> w_c;      // N x D
  Tensor<T> b_c;      // N
  Tensor<T> skip_d;   // D

  std::int64_t channels() const { return a_log.dim(0); }
  std::int64_t state_dim() const { return a_log.dim(1); }

  /// a_log[d, n] = log(n + 1) so that -A spans [1, N]; skip_d = 1; everything
  /// else fan-in uniform.
  static S6Params init(std::int64_t channels, std::int64_t state_dim, SplitMix64& rng);

  void validate() const;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".a_log", a_log);
    f(prefix + ".w_delta", w_delta);
    f(prefix + ".b_delta", b_delta);
    f(prefix + ".w_b", w_b);
    f(prefix + ".b_b", b_b);
    f(prefix + ".w_c", w_c);
    f(prefix + ".b_c", b_c);
    f(prefix + ".skip_d", skip_d);
  }
};

/// Per-timestep discretisation for a single input vector x_t of length D.
template <typename T>
struct Discretized {
  std::vector<T> delta;  // D
  std::vector<T> a_bar;  // D x N
  std::vector<T> bx;     // D x N
};

template <typename T>
Discretized<T> discretize(const S6Params<T>& p, std::span<const T> x_t);

/// Left-to-right recurrence over x (L x D). Differentiable in x and every
/// parameter. O(L * D * N) plus the O(L * D * (D + 2N)) projections.
template <typename T>
Tensor<T> scan_sequential(const S6Params<T>& p, const Tensor<T>& x);

struct ParallelScanOptions {
  std::int64_t chunk = 64;  // fixed combination order; result depends only on this
  int workers = 1;
};

/// Same recurrence evaluated as an associative scan over (A_bar, Bx_bar) pairs
/// with (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2): chunk-local inclusive scans
/// (up-sweep), a scan over chunk aggregates, then carry application
/// (down-sweep). Forward only.
template <typename T>
Tensor<T> scan_parallel(const S6Params<T>& p, const Tensor<T>& x, ParallelScanOptions opts = {});

/// scan(fwd, x) + reverse(scan(bwd, reverse(x))) along the time axis.
template <typename T>
Tensor<T> scan_bidirectional(const S6Params<T>& fwd, const S6Params<T>& bwd,
                             const Tensor<T>& x);

/// Multiply-accumulates of one scan: L*D*(2N+1) for the recurrence plus the
/// delta/B/C projections L*(D*D + 2*N*D).
std::uint64_t scan_macs(std::int64_t length, std::int64_t channels, std::int64_t state_dim);

struct BenchRow {
  std::int64_t length = 0;
  double ns_per_element = 0;
  double total_ns = 0;
};

/// Times scan_sequential (median of `repeats`) for each length.
std::vector<BenchRow> bench_scan(const std::vector<std::int64_t>& lengths, std::int64_t channels,
                                 std::int64_t state_dim, int repeats, std::uint64_t seed = 0);

/// `L,ns_per_element,total_ns` header plus one row per length.
std::string bench_csv(const std::vector<BenchRow>& rows);

/// total_ns ratio between the two largest lengths; requires the largest to be
/// exactly twice the second largest. Returns a negative value otherwise.
double doubling_ratio(const std::vector<BenchRow>& rows);

inline constexpr double kDoublingRatioMin = 1.6;
inline constexpr double kDoublingRatioMax = 2.6;

}  // namespace mseg
