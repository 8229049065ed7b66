#include "mseg/scan.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <thread>

#include "mseg/ops.hpp"

namespace mseg {

namespace {

using i64 = std::int64_t;

std::size_t uz(i64 v) { return static_cast<std::size_t>(v); }

template <typename T>
T softplus(T v) {
  return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
}

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T z = std::exp(v);
  return z / (T(1) + z);
}

// Input-dependent projections for one timestep.
template <typename T>
void project_step(const S6Params<T>& p, const T* x, T* u, T* delta, T* b, T* c) {
  const i64 d_ch = p.channels(), n_st = p.state_dim();
  const auto wd = p.w_delta.data();
  const auto bd = p.b_delta.data();
  for (i64 d = 0; d < d_ch; ++d) {
    T acc = bd[uz(d)];
    for (i64 j = 0; j < d_ch; ++j) acc += wd[uz(d * d_ch + j)] * x[j];
    u[d] = acc;
    delta[d] = softplus(acc);
  }
  const auto wb = p.w_b.data();
  const auto bb = p.b_b.data();
  const auto wc = p.w_c.data();
  const auto bc = p.b_c.data();
  for (i64 n = 0; n < n_st; ++n) {
    T accb = bb[uz(n)], accc = bc[uz(n)];
    for (i64 j = 0; j < d_ch; ++j) {
      accb += wb[uz(n * d_ch + j)] * x[j];
      accc += wc[uz(n * d_ch + j)] * x[j];
    }
    b[n] = accb;
    c[n] = accc;
  }
}

template <typename T>
void discretize_step(const S6Params<T>& p, const T* x, const T* delta, const T* b, T* a_bar,
                     T* bx) {
  const i64 d_ch = p.channels(), n_st = p.state_dim();
  const auto al = p.a_log.data();
  for (i64 d = 0; d < d_ch; ++d)
    for (i64 n = 0; n < n_st; ++n) {
      const auto k = uz(d * n_st + n);
      const T a = -std::exp(al[k]);
      a_bar[k] = std::exp(delta[d] * a);
      bx[k] = delta[d] * b[n] * x[d];
    }
}

template <typename T>
void emit_output(const S6Params<T>& p, const T* x, const T* c, const T* h, T* y) {
  const i64 d_ch = p.channels(), n_st = p.state_dim();
  const auto skip = p.skip_d.data();
  for (i64 d = 0; d < d_ch; ++d) {
    T acc = 0;
    for (i64 n = 0; n < n_st; ++n) acc += c[n] * h[d * n_st + n];
    y[d] = acc + skip[uz(d)] * x[d];
  }
}

template <typename T>
void check_step(const T* v, i64 count, i64 t, const char* what) {
  for (i64 i = 0; i < count; ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string("scan: non-finite ") + what + " at timestep " +
                         std::to_string(t));
}

template <typename T>
void require_sequence(const S6Params<T>& p, const Tensor<T>& x) {
  p.validate();
  if (x.rank() != 2 || x.dim(1) != p.channels())
    throw DimensionError("scan: input must be L x " + std::to_string(p.channels()) + ", got " +
                         shape_str(x.shape()));
}

}  // namespace

template <typename T>
S6Params<T> S6Params<T>::init(i64 channels, i64 state_dim, SplitMix64& rng) {
  if (channels < 1 || state_dim < 1) throw ConfigError("S6: channels and state_dim must be >= 1");
  S6Params p;
  p.a_log = Tensor<T>({channels, state_dim});
  auto al = p.a_log.mutable_data();
  for (i64 d = 0; d < channels; ++d)
    for (i64 n = 0; n < state_dim; ++n)
      al[uz(d * state_dim + n)] = static_cast<T>(std::log(static_cast<double>(n + 1)));
  p.w_delta = fan_in_uniform<T>({channels, channels}, channels, rng);
  p.b_delta = fan_in_uniform<T>({channels}, channels, rng);
  p.w_b = fan_in_uniform<T>({state_dim, channels}, channels, rng);
  p.b_b = fan_in_uniform<T>({state_dim}, channels, rng);
  p.w_c = fan_in_uniform<T>({state_dim, channels}, channels, rng);
  p.b_c = fan_in_uniform<T>({state_dim}, channels, rng);
  p.skip_d = Tensor<T>::full({channels}, T(1));
  return p;
}

template <typename T>
void S6Params<T>::validate() const {
  if (!a_log.defined() || a_log.rank() != 2) throw ConfigError("S6: a_log must be D x N");
  const i64 d = a_log.dim(0), n = a_log.dim(1);
  auto expect = [](const Tensor<T>& t, const Shape& s, const char* name) {
    if (!t.defined() || t.shape() != s)
      throw ConfigError(std::string("S6: ") + name + " must be " + shape_str(s) +
                        (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined"));
  };
  expect(w_delta, {d, d}, "w_delta");
  expect(b_delta, {d}, "b_delta");
  expect(w_b, {n, d}, "w_b");
  expect(b_b, {n}, "b_b");
  expect(w_c, {n, d}, "w_c");
  expect(b_c, {n}, "b_c");
  expect(skip_d, {d}, "skip_d");
}

template <typename T>
Discretized<T> discretize(const S6Params<T>& p, std::span<const T> x_t) {
  p.validate();
  const i64 d_ch = p.channels(), n_st = p.state_dim();
  if (static_cast<i64>(x_t.size()) != d_ch)
    throw DimensionError("discretize: x_t has " + std::to_string(x_t.size()) +
                         " entries, expected " + std::to_string(d_ch));
  Discretized<T> out;
  std::vector<T> u(uz(d_ch)), b(uz(n_st)), c(uz(n_st));
  out.delta.resize(uz(d_ch));
  out.a_bar.resize(uz(d_ch * n_st));
  out.bx.resize(uz(d_ch * n_st));
  project_step(p, x_t.data(), u.data(), out.delta.data(), b.data(), c.data());
  discretize_step(p, x_t.data(), out.delta.data(), b.data(), out.a_bar.data(), out.bx.data());
  return out;
}

template <typename T>
Tensor<T> scan_sequential(const S6Params<T>& p, const Tensor<T>& x) {
  require_sequence(p, x);
  const i64 len = x.dim(0), d_ch = p.channels(), n_st = p.state_dim();
  const auto xd = x.data();

  auto* tape = tracking_tape<T>({&x, &p.a_log, &p.w_delta, &p.b_delta, &p.w_b, &p.b_b, &p.w_c,
                                 &p.b_c, &p.skip_d});
  // The full state history is only kept when backward will need it; otherwise
  // two D x N buffers are swapped, keeping memory and cache traffic flat in L.
  const i64 keep = tape ? len : 1;
  std::vector<T> u(uz(len * d_ch)), delta(uz(len * d_ch));
  std::vector<T> bm(uz(len * n_st)), cm(uz(len * n_st));
  std::vector<T> hs(uz((tape ? len : 2) * d_ch * n_st)), abar(uz(keep * d_ch * n_st));
  std::vector<T> bx(uz(d_ch * n_st));
  std::vector<T> y(uz(len * d_ch));

  for (i64 t = 0; t < len; ++t) {
    const T* xt = xd.data() + t * d_ch;
    project_step(p, xt, &u[uz(t * d_ch)], &delta[uz(t * d_ch)], &bm[uz(t * n_st)],
                 &cm[uz(t * n_st)]);
    T* ab = &abar[uz((tape ? t : 0) * d_ch * n_st)];
    discretize_step(p, xt, &delta[uz(t * d_ch)], &bm[uz(t * n_st)], ab, bx.data());
    T* h = &hs[uz((tape ? t : t % 2) * d_ch * n_st)];
    const T* hp = t == 0 ? nullptr : tape ? h - d_ch * n_st : &hs[uz((1 - t % 2) * d_ch * n_st)];
    for (i64 k = 0; k < d_ch * n_st; ++k) h[k] = (hp ? ab[k] * hp[k] : ab[k] * T(0)) + bx[uz(k)];
    emit_output(p, xt, &cm[uz(t * n_st)], h, &y[uz(t * d_ch)]);
    check_step(&y[uz(t * d_ch)], d_ch, t, "output");
    check_step(h, d_ch * n_st, t, "state");
  }

  Tensor<T> result(x.shape(), std::move(y));
  if (!tape) return result;

  tape->record(
      "s6_scan", scan_macs(len, d_ch, n_st),
      {x, p.a_log, p.w_delta, p.b_delta, p.w_b, p.b_b, p.w_c, p.b_c, p.skip_d}, {result},
      [p, x, result, len, d_ch, n_st, u = std::move(u), delta = std::move(delta),
       bm = std::move(bm), cm = std::move(cm), hs = std::move(hs),
       abar = std::move(abar)]() mutable {
        const auto g = result.grad();
        const auto xd = x.data();
        const auto al = p.a_log.data();
        const auto wd = p.w_delta.data();
        const auto wb = p.w_b.data();
        const auto wc = p.w_c.data();
        const auto skip = p.skip_d.data();
        const i64 dn = d_ch * n_st;

        std::vector<T> gx(uz(len * d_ch), T(0));
        std::vector<T> g_alog(uz(dn), T(0)), g_wd(uz(d_ch * d_ch), T(0)), g_bd(uz(d_ch), T(0));
        std::vector<T> g_wb(uz(n_st * d_ch), T(0)), g_bb(uz(n_st), T(0));
        std::vector<T> g_wc(uz(n_st * d_ch), T(0)), g_bc(uz(n_st), T(0));
        std::vector<T> g_skip(uz(d_ch), T(0));
        std::vector<T> carry(uz(dn), T(0)), gh(uz(dn));
        std::vector<T> gu(uz(d_ch)), gbt(uz(n_st)), gct(uz(n_st));

        for (i64 t = len - 1; t >= 0; --t) {
          const T* gy = g.data() + t * d_ch;
          const T* xt = xd.data() + t * d_ch;
          T* gxt = gx.data() + t * d_ch;
          const T* h = hs.data() + t * dn;
          const T* hp = t > 0 ? h - dn : nullptr;
          const T* ab = abar.data() + t * dn;
          const T* bt = bm.data() + t * n_st;
          const T* ct = cm.data() + t * n_st;
          const T* dt = delta.data() + t * d_ch;

          std::fill(gct.begin(), gct.end(), T(0));
          std::fill(gbt.begin(), gbt.end(), T(0));
          for (i64 d = 0; d < d_ch; ++d) {
            g_skip[uz(d)] += gy[d] * xt[d];
            gxt[d] += gy[d] * skip[uz(d)];
            T gd = 0;
            for (i64 n = 0; n < n_st; ++n) {
              const auto k = uz(d * n_st + n);
              gct[uz(n)] += gy[d] * h[k];
              gh[k] = gy[d] * ct[n] + carry[k];
              const T a = -std::exp(al[k]);
              const T g_ab = hp ? gh[k] * hp[k] : T(0);
              gd += g_ab * ab[k] * a;
              g_alog[k] += g_ab * ab[k] * dt[d] * a;
              gd += gh[k] * bt[n] * xt[d];
              gbt[uz(n)] += gh[k] * dt[d] * xt[d];
              gxt[d] += gh[k] * dt[d] * bt[n];
              carry[k] = ab[k] * gh[k];
            }
            gu[uz(d)] = gd * sigmoid(u[uz(t * d_ch + d)]);
          }
          for (i64 d = 0; d < d_ch; ++d) {
            g_bd[uz(d)] += gu[uz(d)];
            for (i64 j = 0; j < d_ch; ++j) {
              g_wd[uz(d * d_ch + j)] += gu[uz(d)] * xt[j];
              gxt[j] += wd[uz(d * d_ch + j)] * gu[uz(d)];
            }
          }
          for (i64 n = 0; n < n_st; ++n) {
            g_bb[uz(n)] += gbt[uz(n)];
            g_bc[uz(n)] += gct[uz(n)];
            for (i64 j = 0; j < d_ch; ++j) {
              g_wb[uz(n * d_ch + j)] += gbt[uz(n)] * xt[j];
              g_wc[uz(n * d_ch + j)] += gct[uz(n)] * xt[j];
              gxt[j] += wb[uz(n * d_ch + j)] * gbt[uz(n)] + wc[uz(n * d_ch + j)] * gct[uz(n)];
            }
          }
        }

        auto flush = [](const Tensor<T>& t, const std::vector<T>& g) {
          if (!t.requires_grad()) return;
          auto buf = t.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        };
        flush(x, gx);
        flush(p.a_log, g_alog);
        flush(p.w_delta, g_wd);
        flush(p.b_delta, g_bd);
        flush(p.w_b, g_wb);
        flush(p.b_b, g_bb);
        flush(p.w_c, g_wc);
        flush(p.b_c, g_bc);
        flush(p.skip_d, g_skip);
      });
  return result;
}

template <typename T>
Tensor<T> scan_parallel(const S6Params<T>& p, const Tensor<T>& x, ParallelScanOptions opts) {
  require_sequence(p, x);
  if (opts.chunk < 1) throw ConfigError("scan_parallel: chunk must be >= 1");
  const i64 len = x.dim(0), d_ch = p.channels(), n_st = p.state_dim(), dn = d_ch * n_st;
  const i64 chunk = opts.chunk;
  const i64 n_chunks = (len + chunk - 1) / chunk;
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(n_chunks)));
  const auto xd = x.data();

  std::vector<T> cm(uz(len * n_st));
  std::vector<T> a_pre(uz(len * dn)), b_pre(uz(len * dn));
  std::vector<T> y(uz(len * d_ch));

  auto for_chunks = [&](auto&& body) {
    if (workers == 1) {
      for (i64 c = 0; c < n_chunks; ++c) body(c);
      return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (i64 c = w; c < n_chunks; c += workers) body(c);
      });
    for (auto& th : pool) th.join();
  };

  // Up-sweep: discretise and form chunk-local inclusive prefixes.
  for_chunks([&](i64 c) {
    std::vector<T> u(uz(d_ch)), delta(uz(d_ch)), b(uz(n_st));
    const i64 begin = c * chunk, end = std::min(len, begin + chunk);
    for (i64 t = begin; t < end; ++t) {
      const T* xt = xd.data() + t * d_ch;
      T* ap = &a_pre[uz(t * dn)];
      T* bp = &b_pre[uz(t * dn)];
      project_step(p, xt, u.data(), delta.data(), b.data(), &cm[uz(t * n_st)]);
      discretize_step(p, xt, delta.data(), b.data(), ap, bp);
      if (t == begin) continue;
      const T* ap_prev = ap - dn;
      const T* bp_prev = bp - dn;
      for (i64 k = 0; k < dn; ++k) {
        // (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2)
        const T a2 = ap[k];
        bp[k] = a2 * bp_prev[k] + bp[k];
        ap[k] = a2 * ap_prev[k];
      }
    }
  });

  // Scan over chunk aggregates: carry[c] is the state entering chunk c.
  std::vector<T> carry(uz(n_chunks * dn), T(0));
  for (i64 c = 1; c < n_chunks; ++c) {
    const i64 last = c * chunk - 1;
    for (i64 k = 0; k < dn; ++k)
      carry[uz(c * dn + k)] =
          a_pre[uz(last * dn + k)] * carry[uz((c - 1) * dn + k)] + b_pre[uz(last * dn + k)];
  }

  // Down-sweep: apply carries and emit outputs.
  for_chunks([&](i64 c) {
    std::vector<T> h(uz(dn));
    const i64 begin = c * chunk, end = std::min(len, begin + chunk);
    const T* cin = &carry[uz(c * dn)];
    for (i64 t = begin; t < end; ++t) {
      for (i64 k = 0; k < dn; ++k)
        h[uz(k)] = a_pre[uz(t * dn + k)] * cin[k] + b_pre[uz(t * dn + k)];
      emit_output(p, xd.data() + t * d_ch, &cm[uz(t * n_st)], h.data(), &y[uz(t * d_ch)]);
    }
  });

  for (i64 t = 0; t < len; ++t) check_step(&y[uz(t * d_ch)], d_ch, t, "output");
  return Tensor<T>(x.shape(), std::move(y));
}

template <typename T>
Tensor<T> scan_bidirectional(const S6Params<T>& fwd, const S6Params<T>& bwd, const Tensor<T>& x) {
  auto forward = scan_sequential(fwd, x);
  auto backward = reverse(scan_sequential(bwd, reverse(x, 0)), 0);
  return add(forward, backward);
}

std::uint64_t scan_macs(i64 length, i64 channels, i64 state_dim) {
  const auto l = static_cast<std::uint64_t>(length);
  const auto d = static_cast<std::uint64_t>(channels);
  const auto n = static_cast<std::uint64_t>(state_dim);
  return l * d * (2 * n + 1) + l * (d * d + 2 * n * d);
}

std::vector<BenchRow> bench_scan(const std::vector<i64>& lengths, i64 channels, i64 state_dim,
                                 int repeats, std::uint64_t seed) {
  if (repeats < 1) throw ConfigError("bench_scan: repeats must be >= 1");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ConfigError("bench_scan: lengths must be >= 1");
    if (i > 0 && lengths[i] <= lengths[i - 1])
      throw ConfigError("bench_scan: lengths must be strictly ascending");
  }
  SplitMix64 rng(seed);
  const auto params = S6Params<float>::init(channels, state_dim, rng);
  std::vector<TensorF> inputs;
  for (const i64 len : lengths) {
    inputs.push_back(uniform_tensor<float>({len, channels}, -1.0, 1.0, rng));
    (void)scan_sequential(params, inputs.back());  // warm-up
  }
  // Repeats are interleaved across lengths so a slow stretch of the machine
  // lands on every length rather than skewing one of them.
  std::vector<std::vector<double>> times(lengths.size());
  for (int r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto y = scan_sequential(params, inputs[i]);
      const auto t1 = std::chrono::steady_clock::now();
      times[i].push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
      if (y.numel() != inputs[i].numel()) throw StateError("bench_scan: unexpected output size");
    }
  std::vector<BenchRow> rows;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto& ts = times[i];
    std::sort(ts.begin(), ts.end());
    const double median = ts[ts.size() / 2];
    rows.push_back(BenchRow{lengths[i], median / static_cast<double>(lengths[i]), median});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "L,ns_per_element,total_ns\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.3f,%.0f\n", static_cast<long long>(r.length),
                  r.ns_per_element, r.total_ns);
    os << buf;
  }
  return os.str();
}

double doubling_ratio(const std::vector<BenchRow>& rows) {
  if (rows.size() < 2) return -1;
  const auto& a = rows[rows.size() - 2];
  const auto& b = rows.back();
  if (b.length != 2 * a.length || a.total_ns <= 0) return -1;
  return b.total_ns / a.total_ns;
}

#define MSEG_INSTANTIATE_SCAN(T)                                                              \
  template struct S6Params<T>;                                                                \
  template Discretized<T> discretize(const S6Params<T>&, std::span<const T>);                  \
  template Tensor<T> scan_sequential(const S6Params<T>&, const Tensor<T>&);                    \
  template Tensor<T> scan_parallel(const S6Params<T>&, const Tensor<T>&, ParallelScanOptions); \
  template Tensor<T> scan_bidirectional(const S6Params<T>&, const S6Params<T>&, const Tensor<T>&);

MSEG_INSTANTIATE_SCAN(float)
MSEG_INSTANTIATE_SCAN(double)

}  // namespace mseg
