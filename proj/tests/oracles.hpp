#pragma once
// Independent 64-bit reference implementations used by the tests. Nothing
// here calls into the library's ops; parameters are read as raw arrays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "mseg/ddim.hpp"
#include "mseg/metrics.hpp"
#include "mseg/model.hpp"

namespace oracle {

using i64 = std::int64_t;
using Vec = std::vector<double>;

// Dense C x H x W map.
struct Map {
  i64 c = 0, h = 0, w = 0;
  Vec v;

  Map() = default;
  Map(i64 c_, i64 h_, i64 w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_ * h_ * w_), fill) {}
  double& at(i64 k, i64 y, i64 x) { return v[static_cast<std::size_t>((k * h + y) * w + x)]; }
  double at(i64 k, i64 y, i64 x) const { return v[static_cast<std::size_t>((k * h + y) * w + x)]; }
};

template <typename T>
Vec raw(const mseg::Tensor<T>& t) {
  return Vec(t.vec().begin(), t.vec().end());
}

template <typename T>
Map to_map(const mseg::Tensor<T>& t) {
  Map m(t.dim(0), t.dim(1), t.dim(2));
  m.v = raw(t);
  return m;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double softplus(double z) { return z > 30 ? z : std::log(1.0 + std::exp(z)); }

/// Direct nested-loop cross-correlation.
inline Map conv(const Map& x, const Vec& w, const Vec& b, i64 c_out, i64 k, i64 pad, i64 stride) {
  const i64 ho = (x.h + 2 * pad - k) / stride + 1;
  const i64 wo = (x.w + 2 * pad - k) / stride + 1;
  Map out(c_out, ho, wo);
  for (i64 o = 0; o < c_out; ++o)
    for (i64 y = 0; y < ho; ++y)
      for (i64 xx = 0; xx < wo; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (i64 ci = 0; ci < x.c; ++ci)
          for (i64 ky = 0; ky < k; ++ky)
            for (i64 kx = 0; kx < k; ++kx) {
              const i64 iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w) continue;
              acc += w[static_cast<std::size_t>(((o * x.c + ci) * k + ky) * k + kx)] * x.at(ci, iy, ix);
            }
        out.at(o, y, xx) = acc;
      }
  return out;
}

template <typename T>
Map conv(const Map& x, const mseg::Conv2dParams<T>& p) {
  return conv(x, raw(p.w), raw(p.b), p.c_out(), p.kernel(), p.padding, p.stride);
}

inline Map pool_channels(const Map& x) {  // [avg; max], 2 x H x W
  Map out(2, x.h, x.w);
  for (i64 y = 0; y < x.h; ++y)
    for (i64 xx = 0; xx < x.w; ++xx) {
      double s = 0.0, m = -INFINITY;
      for (i64 k = 0; k < x.c; ++k) {
        s += x.at(k, y, xx);
        m = std::max(m, x.at(k, y, xx));
      }
      out.at(0, y, xx) = s / static_cast<double>(x.c);
      out.at(1, y, xx) = m;
    }
  return out;
}

inline Vec pool_avg(const Map& x) {
  Vec out(static_cast<std::size_t>(x.c), 0.0);
  for (i64 k = 0; k < x.c; ++k) {
    for (i64 i = 0; i < x.h * x.w; ++i) out[static_cast<std::size_t>(k)] += x.v[static_cast<std::size_t>(k * x.h * x.w + i)];
    out[static_cast<std::size_t>(k)] /= static_cast<double>(x.h * x.w);
  }
  return out;
}

inline Vec pool_max(const Map& x) {
  Vec out(static_cast<std::size_t>(x.c), -INFINITY);
  for (i64 k = 0; k < x.c; ++k)
    for (i64 i = 0; i < x.h * x.w; ++i)
      out[static_cast<std::size_t>(k)] = std::max(out[static_cast<std::size_t>(k)], x.v[static_cast<std::size_t>(k * x.h * x.w + i)]);
  return out;
}

template <typename T>
Vec mlp(const Vec& in, const mseg::MlpParams<T>& p) {
  const auto w1 = raw(p.reduce.w), b1 = raw(p.reduce.b), w2 = raw(p.expand.w), b2 = raw(p.expand.b);
  const auto hidden = b1.size(), out_n = b2.size();
  Vec h(hidden), out(out_n);
  for (std::size_t o = 0; o < hidden; ++o) {
    double acc = b1[o];
    for (std::size_t i = 0; i < in.size(); ++i) acc += w1[o * in.size() + i] * in[i];
    h[o] = std::max(acc, 0.0);
  }
  for (std::size_t o = 0; o < out_n; ++o) {
    double acc = b2[o];
    for (std::size_t i = 0; i < hidden; ++i) acc += w2[o * hidden + i] * h[i];
    out[o] = acc;
  }
  return out;
}

/// Straight-line selective scan over a row-major L x D sequence.
template <typename T>
Vec scan(const mseg::S6Params<T>& p, const Vec& x, i64 len) {
  const i64 d_n = p.channels(), n_n = p.state_dim();
  const auto al = raw(p.a_log), wd = raw(p.w_delta), bd = raw(p.b_delta), wb = raw(p.w_b),
             bb = raw(p.b_b), wc = raw(p.w_c), bc = raw(p.b_c), sk = raw(p.skip_d);
  auto I = [](i64 v) { return static_cast<std::size_t>(v); };
  Vec h(I(d_n * n_n), 0.0), y(I(len * d_n), 0.0);
  for (i64 t = 0; t < len; ++t) {
    const double* xt = &x[I(t * d_n)];
    Vec bvec(I(n_n)), cvec(I(n_n));
    for (i64 n = 0; n < n_n; ++n) {
      double sb = bb[I(n)], sc = bc[I(n)];
      for (i64 j = 0; j < d_n; ++j) {
        sb += wb[I(n * d_n + j)] * xt[j];
        sc += wc[I(n * d_n + j)] * xt[j];
      }
      bvec[I(n)] = sb;
      cvec[I(n)] = sc;
    }
    for (i64 d = 0; d < d_n; ++d) {
      double z = bd[I(d)];
      for (i64 j = 0; j < d_n; ++j) z += wd[I(d * d_n + j)] * xt[j];
      const double delta = softplus(z);
      double out = sk[I(d)] * xt[d];
      for (i64 n = 0; n < n_n; ++n) {
        double& hs = h[I(d * n_n + n)];
        hs = std::exp(-delta * std::exp(al[I(d * n_n + n)])) * hs + delta * bvec[I(n)] * xt[d];
        out += cvec[I(n)] * hs;
      }
      y[I(t * d_n + d)] = out;
    }
  }
  return y;
}

/// Pixel visiting order for direction index 0..3 (row fwd, row bwd, col fwd,
/// col bwd).
inline std::vector<i64> order(i64 h, i64 w, int dir) {
  std::vector<i64> o;
  if (dir < 2) {
    for (i64 y = 0; y < h; ++y)
      for (i64 x = 0; x < w; ++x) o.push_back(y * w + x);
  } else {
    for (i64 x = 0; x < w; ++x)
      for (i64 y = 0; y < h; ++y) o.push_back(y * w + x);
  }
  if (dir % 2 == 1) std::reverse(o.begin(), o.end());
  return o;
}

template <typename T>
Map ss2d(const Map& x, const mseg::SS2DParams<T>& p) {
  Map out(x.c, x.h, x.w);
  const i64 px = x.h * x.w;
  for (int dir = 0; dir < 4; ++dir) {
    const auto ord = order(x.h, x.w, dir);
    Vec seq(static_cast<std::size_t>(px * x.c));
    for (i64 t = 0; t < px; ++t)
      for (i64 k = 0; k < x.c; ++k)
        seq[static_cast<std::size_t>(t * x.c + k)] = x.v[static_cast<std::size_t>(k * px + ord[static_cast<std::size_t>(t)])];
    const auto y = scan(p.dirs[static_cast<std::size_t>(dir)], seq, px);
    for (i64 t = 0; t < px; ++t)
      for (i64 k = 0; k < x.c; ++k)
        out.v[static_cast<std::size_t>(k * px + ord[static_cast<std::size_t>(t)])] += y[static_cast<std::size_t>(t * x.c + k)];
  }
  return out;
}

struct Pair {
  Map e, i;
};

template <typename T>
Pair csim(const Pair& in, const mseg::CsimParams<T>& p) {
  const auto& e = in.e;
  const auto& im = in.i;
  const i64 c = e.c, h = e.h, w = e.w;
  Map f(c, h, w);
  for (std::size_t k = 0; k < f.v.size(); ++k) f.v[k] = e.v[k] + im.v[k];
  Map stack(6, h, w);
  const Map pe = pool_channels(e), pi = pool_channels(im), pf = pool_channels(f);
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) {
      stack.at(0, y, x) = pe.at(0, y, x);
      stack.at(1, y, x) = pe.at(1, y, x);
      stack.at(2, y, x) = pi.at(0, y, x);
      stack.at(3, y, x) = pi.at(1, y, x);
      stack.at(4, y, x) = pf.at(0, y, x);
      stack.at(5, y, x) = pf.at(1, y, x);
    }
  Map hid = conv(stack, p.conv1);
  for (auto& v : hid.v) v = std::max(v, 0.0);
  Map att = conv(hid, p.conv2);
  for (auto& v : att.v) v = sigmoid(v);
  Map comb(2 * c, h, w);
  for (i64 k = 0; k < c; ++k)
    for (i64 y = 0; y < h; ++y)
      for (i64 x = 0; x < w; ++x) {
        comb.at(k, y, x) = e.at(k, y, x) * att.at(1, y, x) * att.at(2, y, x);
        comb.at(c + k, y, x) = im.at(k, y, x) * att.at(0, y, x) * att.at(2, y, x);
      }
  const Map s = ss2d(comb, p.ss2d);
  Map es(c, h, w), is(c, h, w);
  std::copy(s.v.begin(), s.v.begin() + c * h * w, es.v.begin());
  std::copy(s.v.begin() + c * h * w, s.v.end(), is.v.begin());
  Map sae = conv(pool_channels(es), p.sa_event), sai = conv(pool_channels(is), p.sa_image);
  Pair out{Map(c, h, w), Map(c, h, w)};
  for (i64 k = 0; k < c; ++k)
    for (i64 y = 0; y < h; ++y)
      for (i64 x = 0; x < w; ++x) {
        out.e.at(k, y, x) = e.at(k, y, x) + es.at(k, y, x) * sigmoid(sae.at(0, y, x));
        out.i.at(k, y, x) = im.at(k, y, x) + is.at(k, y, x) * sigmoid(sai.at(0, y, x));
      }
  return out;
}

template <typename T>
Pair ctim(const Pair& in, const mseg::CtimParams<T>& p) {
  const auto& e = in.e;
  const auto& im = in.i;
  const i64 c = e.c, h = e.h, w = e.w, px = h * w;
  Map inter(2 * c, h, w);
  for (i64 k = 0; k < c; ++k)
    for (i64 q = 0; q < px; ++q) {
      inter.v[static_cast<std::size_t>(2 * k * px + q)] = im.v[static_cast<std::size_t>(k * px + q)];
      inter.v[static_cast<std::size_t>((2 * k + 1) * px + q)] = e.v[static_cast<std::size_t>(k * px + q)];
    }
  const Vec a = mlp(pool_max(inter), p.shared), b = mlp(pool_avg(inter), p.shared);
  Vec wt(static_cast<std::size_t>(c));
  for (i64 k = 0; k < c; ++k) wt[static_cast<std::size_t>(k)] = sigmoid(a[static_cast<std::size_t>(k)] + b[static_cast<std::size_t>(k)]);
  // Sequence of 2C steps, each a vector of H*W pixels.
  Vec seq(static_cast<std::size_t>(2 * c * px));
  for (i64 k = 0; k < c; ++k)
    for (i64 q = 0; q < px; ++q) {
      seq[static_cast<std::size_t>(k * px + q)] = e.v[static_cast<std::size_t>(k * px + q)] * wt[static_cast<std::size_t>(k)];
      seq[static_cast<std::size_t>((c + k) * px + q)] = im.v[static_cast<std::size_t>(k * px + q)] * wt[static_cast<std::size_t>(k)];
    }
  const Vec fwd = scan(p.scan_fwd, seq, 2 * c);
  Vec rev(seq.size());
  for (i64 t = 0; t < 2 * c; ++t)
    std::copy(seq.begin() + (2 * c - 1 - t) * px, seq.begin() + (2 * c - t) * px, rev.begin() + t * px);
  const Vec bwd = scan(p.scan_bwd, rev, 2 * c);
  Map eb(c, h, w), ib(c, h, w);
  for (i64 t = 0; t < 2 * c; ++t)
    for (i64 q = 0; q < px; ++q) {
      const double v = fwd[static_cast<std::size_t>(t * px + q)] + bwd[static_cast<std::size_t>((2 * c - 1 - t) * px + q)];
      if (t < c) eb.v[static_cast<std::size_t>(t * px + q)] = v;
      else ib.v[static_cast<std::size_t>((t - c) * px + q)] = v;
    }
  const Vec te1 = mlp(pool_avg(eb), p.ta_event), te2 = mlp(pool_max(eb), p.ta_event);
  const Vec ti1 = mlp(pool_avg(ib), p.ta_image), ti2 = mlp(pool_max(ib), p.ta_image);
  Pair out{Map(c, h, w), Map(c, h, w)};
  for (i64 k = 0; k < c; ++k) {
    const double ae = sigmoid(te1[static_cast<std::size_t>(k)] + te2[static_cast<std::size_t>(k)]);
    const double ai = sigmoid(ti1[static_cast<std::size_t>(k)] + ti2[static_cast<std::size_t>(k)]);
    for (i64 q = 0; q < px; ++q) {
      const auto idx = static_cast<std::size_t>(k * px + q);
      out.e.v[idx] = e.v[idx] + eb.v[idx] * ae;
      out.i.v[idx] = im.v[idx] + ib.v[idx] * ai;
    }
  }
  return out;
}

template <typename T>
Pair ddim(const Pair& in, const mseg::DdimParams<T>& p, const mseg::DdimOptions& o) {
  Pair x = in;
  auto s = [&](const Pair& v) { return p.csim && o.enable_csim ? csim(v, *p.csim) : v; };
  auto t = [&](const Pair& v) { return p.ctim && o.enable_ctim ? ctim(v, *p.ctim) : v; };
  return o.csim_first ? t(s(x)) : s(t(x));
}

/// Trainable scalars and MACs found by recording one forward pass and walking
/// the tape: leaves are tensors that feed an op, require grad and are never
/// produced by one.
inline mseg::ModelCost graph_walk(const mseg::ModelConfig& cfg) {
  auto w = mseg::ModelWeights<float>::init(cfg);
  w.for_each([](const std::string&, mseg::TensorF& t) { t.set_requires_grad(true); });
  const mseg::TensorF vox({cfg.time_bins, cfg.height, cfg.width}, 0.5f);
  const mseg::TensorF img({cfg.image_channels, cfg.height, cfg.width}, 0.25f);
  mseg::GradTape<float> tape;
  {
    mseg::TapeScope<float> scope(tape);
    (void)mseg::forward(cfg, w, vox, img);
  }
  std::set<const void*> produced, seen;
  for (const auto& e : tape.entries())
    for (const auto& o : e.outputs) produced.insert(o.id());
  mseg::ModelCost cost;
  for (const auto& e : tape.entries()) {
    cost.macs += static_cast<i64>(e.macs);
    for (const auto& in : e.inputs)
      if (in.requires_grad() && !produced.count(in.id()) && seen.insert(in.id()).second)
        cost.params += in.numel();
  }
  return cost;
}

/// Brute-force metrics: per class, count pixel memberships directly.
struct BruteMetrics {
  double miou = 0.0, acc = 0.0;
};

inline BruteMetrics brute_metrics(const mseg::LabelMap& pred, const mseg::LabelMap& label, int k) {
  BruteMetrics m;
  i64 total = 0, correct = 0;
  double sum = 0.0;
  int present = 0;
  for (std::size_t i = 0; i < label.values.size(); ++i) {
    if (label.values[i] == mseg::kIgnoreIndex) continue;
    ++total;
    if (pred.values[i] == label.values[i]) ++correct;
  }
  for (int c = 0; c < k; ++c) {
    i64 inter = 0, uni = 0;
    for (std::size_t i = 0; i < label.values.size(); ++i) {
      if (label.values[i] == mseg::kIgnoreIndex) continue;
      const bool a = pred.values[i] == c, b = label.values[i] == c;
      inter += a && b;
      uni += a || b;
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  m.miou = sum / present;
  m.acc = static_cast<double>(correct) / static_cast<double>(total);
  return m;
}

}  // namespace oracle
