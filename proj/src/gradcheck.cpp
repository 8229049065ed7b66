#include "mseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mseg/ddim.hpp"
#include "mseg/model.hpp"
#include "mseg/ops.hpp"
#include "mseg/rng.hpp"
#include "mseg/scan.hpp"
#include "mseg/ss2d.hpp"

namespace mseg {

using i64 = std::int64_t;

namespace {

double project(const TensorD& out, const TensorD& r) {
  double s = 0.0;
  const auto o = out.data();
  const auto w = r.data();
  for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * w[i];
  return s;
}

std::vector<std::size_t> pick_coords(std::size_t n, int max_coords, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= static_cast<std::size_t>(max_coords)) return idx;
  for (std::size_t i = 0; i < static_cast<std::size_t>(max_coords); ++i)
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(static_cast<std::size_t>(max_coords));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckResult gradcheck(const std::string& op, const std::function<TensorD()>& fn,
                          const std::vector<TensorD>& leaves, std::uint64_t seed, int max_coords, double step) {
  SplitMix64 rng(seed ^ 0x5851F42D4C957F2DULL);
  for (auto leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  GradTape<double> tape;
  TensorD out, r;
  {
    TapeScope<double> scope(tape);
    out = fn();
    r = uniform_tensor<double>(out.shape(), -1.0, 1.0, rng);
    const auto loss = sum(mul(out, r));
    if (tape.size() > 0) tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    std::vector<double> g(static_cast<std::size_t>(leaf.numel()), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  for (auto leaf : leaves) {
    leaf.set_requires_grad(false);
    leaf.zero_grad();
  }
  tape.reset();

  GradcheckResult res;
  res.op = op;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto leaf = leaves[li];
    auto data = leaf.mutable_data();
    for (auto i : pick_coords(data.size(), max_coords, rng)) {
      const double orig = data[i];
      auto at = [&](double delta) {
        data[i] = orig + delta;
        return project(fn(), r);
      };
      const double a = analytic[li][i];
      double rel = 0.0;
      for (int attempt = 0; attempt < 3; ++attempt) {
        const double h = step * std::pow(0.01, attempt);
        const double q1 = (at(h) - at(-h)) / (2 * h);
        const double q2 = (at(2 * h) - at(-2 * h)) / (4 * h);
        // Richardson-extrapolated central difference, O(h^4).
        const double numeric = (4.0 * q1 - q2) / 3.0;
        rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
        // The two quotients agree unless the stencil straddles a ReLU or max
        // kink; only then is a narrower stencil tried.
        const double spread =
            std::abs(q1 - q2) / std::max({std::abs(q1), std::abs(q2), kGradcheckFloor});
        if (spread < kGradcheckTolerance) break;
      }
      data[i] = orig;
      ++res.coords;
      if (rel >= res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = std::to_string(li) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Suites

namespace {

using Leaves = std::vector<TensorD>;

TensorD rand_t(Shape s, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor<double>(std::move(s), lo, hi, rng);
}

/// Values spaced far apart relative to the probe step, so max and ReLU kinks
/// are never crossed by a perturbation.
TensorD separated(Shape s, SplitMix64& rng) {
  TensorD t(std::move(s));
  auto d = t.mutable_data();
  const auto n = d.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < n; ++i)
    d[i] = -1.0 + 2.0 * (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
  return t;
}

TensorD flat(const TensorD& t) { return reshape(t, {t.numel()}); }

TensorD join(const std::vector<TensorD>& parts) {
  std::vector<TensorD> f;
  for (const auto& p : parts) f.push_back(flat(p));
  return concat(f);
}

template <typename P>
Leaves params_of(P& p, const std::string& prefix = "p") {
  Leaves out;
  p.for_each(prefix, [&](const std::string&, TensorD& t) { out.push_back(t); });
  return out;
}

Leaves operator+(Leaves a, const Leaves& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

using Results = std::vector<GradcheckResult>;

struct Probe {
  std::function<TensorD()> fn;
  Leaves leaves;
};

/// Runs `make` at three shape variants and folds them into one result.
GradcheckResult multi_shape(const std::string& op, SplitMix64& rng,
                            const std::function<Probe(i64, i64, i64, SplitMix64&)>& make) {
  static constexpr i64 kC[] = {1, 2, 3}, kH[] = {2, 3, 5}, kW[] = {3, 4, 2};
  GradcheckResult all;
  all.op = op;
  for (int v = 0; v < 3; ++v) {
    auto probe = make(kC[v], kH[v], kW[v], rng);
    const auto r = gradcheck(op, probe.fn, probe.leaves, rng(), 24);
    all.coords += r.coords;
    if (r.max_rel_err >= all.max_rel_err) {
      all.max_rel_err = r.max_rel_err;
      all.worst = "shape" + std::to_string(v) + ":" + r.worst;
    }
  }
  return all;
}

Results tensor_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  auto check = [&](const std::string& op, std::function<Probe(i64, i64, i64, SplitMix64&)> make) {
    out.push_back(multi_shape(op, rng, make));
  };
  check("conv2d", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h + 1, w + 1}, g), k = rand_t({c + 1, c, 3, 3}, g), b = rand_t({c + 1}, g);
    return Probe{[=] { return join({conv2d(x, k, b, 1, 1), conv2d(x, k, b, 1, 2)}); }, {x, k, b}};
  });
  check("channel_pool", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = separated({c + 1, h, w}, g);
    return Probe{[=] {
      return join({channel_pool(x, PoolMode::Avg), channel_pool(x, PoolMode::Max)});
    }, {x}};
  });
  check("spatial_pool", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = separated({c, h, w}, g);
    return Probe{[=] {
      return join({spatial_pool(x, PoolMode::Avg), spatial_pool(x, PoolMode::Max)});
    }, {x}};
  });
  check("activation", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g, -2.0, 2.0);
    auto xr = separated({c, h, w}, g);
    return Probe{[=] {
      return join({activation(x, Activation::Sigmoid), activation(x, Activation::Softplus),
                   activation(x, Activation::Exp), activation(xr, Activation::Relu)});
    }, {x, xr}};
  });
  check("ewise", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto a = rand_t({c, h, w}, g), b = rand_t({c, h, w}, g);
    auto bc = rand_t({c, 1, 1}, g), bp = rand_t({1, h, w}, g);
    return Probe{[=] {
      return join({add(a, b), mul(a, b), add(a, bc), mul(a, bc), add(a, bp), mul(a, bp)});
    }, {a, b, bc, bp}};
  });
  check("scale", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g);
    return Probe{[=] { return scale(x, 1.7); }, {x}};
  });
  check("silu", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g, -3.0, 3.0);
    return Probe{[=] { return silu(x); }, {x}};
  });
  check("concat", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto a = rand_t({c, h, w}, g), b = rand_t({1, h, w}, g);
    return Probe{[=] { return concat<double>({a, b, a}); }, {a, b}};
  });
  check("split", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c + 2, h, w}, g);
    return Probe{[=] {
      const auto parts = split(x, {2, c});
      return join({scale(parts[0], 2.0), parts[1]});
    }, {x}};
  });
  check("interleave", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto a = rand_t({c, h, w}, g), b = rand_t({c, h, w}, g);
    return Probe{[=] { return interleave(a, b); }, {a, b}};
  });
  check("deinterleave", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({2 * c, h, w}, g);
    return Probe{[=] {
      const auto [a, b] = deinterleave(x);
      return join({a, scale(b, -0.5)});
    }, {x}};
  });
  check("reverse", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g);
    return Probe{[=] { return join({reverse(x, 0), reverse(x, 1), reverse(x, 2)}); }, {x}};
  });
  check("layernorm", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c + 1, h, w}, g), gam = rand_t({c + 1}, g, 0.5, 1.5), b = rand_t({c + 1}, g);
    return Probe{[=] { return layernorm(x, gam, b); }, {x, gam, b}};
  });
  check("reshape", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g);
    return Probe{[=] { return reshape(x, {c * h, w}); }, {x}};
  });
  check("resize_bilinear", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g);
    return Probe{[=] {
      return join({resize_bilinear(x, 2 * h + 1, w + 3), resize_bilinear(x, 2, 2)});
    }, {x}};
  });
  check("sum", [](i64 c, i64 h, i64 w, SplitMix64& g) {
    auto x = rand_t({c, h, w}, g);
    return Probe{[=] { return sum(x); }, {x}};
  });
  return out;
}

S6Params<double> random_s6(i64 d, i64 n, SplitMix64& rng) {
  auto p = S6Params<double>::init(d, n, rng);
  // Move off the default init so a_log and skip gradients are exercised at
  // generic points.
  for (auto& v : p.a_log.mutable_data()) v += rng.uniform(-0.3, 0.3);
  for (auto& v : p.skip_d.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return p;
}

Results scan_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  {
    auto p = random_s6(2, 4, rng);
    auto x = rand_t({8, 2}, rng);
    out.push_back(gradcheck("s6_scan", [=] { return scan_sequential(p, x); },
                            Leaves{x} + params_of(p), rng(), 24));
  }
  {
    auto f = random_s6(2, 3, rng), b = random_s6(2, 3, rng);
    auto x = rand_t({6, 2}, rng);
    out.push_back(gradcheck("scan_bidirectional", [=] { return scan_bidirectional(f, b, x); },
                            Leaves{x} + params_of(f) + params_of(b), rng(), 16));
  }
  return out;
}

Results ss2d_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  {
    auto x = rand_t({2, 3, 4}, rng);
    out.push_back(gradcheck("unfold", [=] {
      std::vector<TensorD> parts;
      for (auto d : kScanDirections) parts.push_back(unfold(x, d));
      return join(parts);
    }, {x}, rng(), 24));
  }
  {
    auto s = rand_t({12, 2}, rng);
    out.push_back(gradcheck("refold", [=] {
      std::vector<TensorD> parts;
      for (auto d : kScanDirections) parts.push_back(refold(s, d, 3, 4));
      return join(parts);
    }, {s}, rng(), 24));
  }
  {
    auto p = SS2DParams<double>::init(2, 3, rng);
    for (auto& d : p.dirs)
      for (auto& v : d.skip_d.mutable_data()) v = rng.uniform(-1.0, 1.0);
    auto x = rand_t({2, 3, 3}, rng);
    out.push_back(gradcheck("ss2d", [=] { return ss2d(x, p); }, Leaves{x} + params_of(p), rng(), 8));
  }
  return out;
}

ModalityPair<double> random_pair(i64 c, i64 h, i64 w, SplitMix64& rng) {
  return {rand_t({c, h, w}, rng), rand_t({c, h, w}, rng)};
}

Results csim_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  const i64 c = 2, h = 4, w = 4;
  {
    auto p = CsimParams<double>::init(c, 3, 2, rng);
    auto pr = random_pair(c, h, w, rng);
    out.push_back(gradcheck("csim_attention", [=] {
      const auto a = csim_attention(pr, p);
      return join({a.weights, a.combined});
    }, Leaves{pr.event, pr.image} + Leaves{p.conv1.w, p.conv1.b, p.conv2.w, p.conv2.b}, rng(), 12));
  }
  {
    auto conv = Conv2dParams<double>::same(2, 1, 3, rng);
    auto x = rand_t({3, h, w}, rng);
    out.push_back(gradcheck("spatial_attention", [=] { return spatial_attention(x, conv); },
                            {x, conv.w, conv.b}, rng(), 16));
  }
  {
    auto p = CsimParams<double>::init(c, 3, 2, rng);
    auto pr = random_pair(c, h, w, rng);
    out.push_back(gradcheck("csim", [=] {
      const auto r = csim(pr, p);
      return join({r.event, r.image});
    }, Leaves{pr.event, pr.image} + params_of(p), rng(), 6));
  }
  return out;
}

Results ctim_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  const i64 c = 3, h = 2, w = 3;
  {
    auto p = CtimParams<double>::init(c, h, w, 2, 2, rng);
    auto pr = random_pair(c, h, w, rng);
    out.push_back(gradcheck("ctim_attention", [=] {
      const auto a = ctim_attention(pr, p);
      return join({a.weights, a.event, a.image});
    }, Leaves{pr.event, pr.image} + params_of(p.shared), rng(), 12));
  }
  {
    auto mlp = MlpParams<double>::init(c, 2, c, rng);
    auto x = rand_t({c, h, w}, rng);
    out.push_back(gradcheck("temporal_attention", [=] { return temporal_attention(x, mlp); },
                            Leaves{x} + params_of(mlp), rng(), 16));
  }
  {
    auto p = CtimParams<double>::init(c, h, w, 2, 2, rng);
    auto pr = random_pair(c, h, w, rng);
    out.push_back(gradcheck("ctim", [=] {
      const auto r = ctim(pr, p);
      return join({r.event, r.image});
    }, Leaves{pr.event, pr.image} + params_of(p), rng(), 6));
  }
  {
    DdimParams<double> p;
    p.csim = CsimParams<double>::init(2, 3, 2, rng);
    p.ctim = CtimParams<double>::init(2, 3, 3, 2, 2, rng);
    auto pr = random_pair(2, 3, 3, rng);
    out.push_back(gradcheck("ddim", [=] {
      const auto r = ddim(pr, p, DdimOptions{});
      return join({r.event, r.image});
    }, Leaves{pr.event, pr.image} + params_of(p), rng(), 4));
  }
  return out;
}

/// Small four-stage config at 16 x 16 input.
ModelConfig gradcheck_model_config(bool csim_on, bool ctim_on, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.time_bins = 2;
  cfg.image_channels = 1;
  cfg.num_classes = 2;
  cfg.stages = {{2, 1, 1}, {3, 1, 2}, {4, 1, 2}, {4, 1, 1}};
  cfg.kernel = 3;
  cfg.reduction = 2;
  cfg.state_dim = 2;
  cfg.decoder_embed = 3;
  cfg.height = 16;
  cfg.width = 16;
  cfg.enable_csim = csim_on;
  cfg.enable_ctim = ctim_on;
  cfg.seed = seed;
  return cfg;
}

LabelMap random_labels(i64 h, i64 w, int k, SplitMix64& rng) {
  LabelMap l(h, w);
  for (auto& v : l.values) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  l.values[0] = kIgnoreIndex;
  return l;
}

Results model_suite(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Results out;
  {
    auto p = StemParams<double>::init(2, 3, rng);
    auto x = rand_t({2, 8, 8}, rng);
    out.push_back(gradcheck("stem", [=] { return stem(x, p); }, Leaves{x} + params_of(p), rng(), 8));
  }
  {
    auto p = VssParams<double>::init(2, 1, 2, rng);
    auto x = rand_t({2, 4, 4}, rng);
    out.push_back(gradcheck("vss_block", [=] { return vss_block(x, p); }, Leaves{x} + params_of(p),
                            rng(), 8));
  }
  {
    auto z = rand_t({3, 3, 4}, rng, -2.0, 2.0);
    const auto labels = random_labels(3, 4, 3, rng);
    out.push_back(gradcheck("cross_entropy", [=] { return cross_entropy(z, labels); }, {z}, rng(), 36));
  }
  const struct {
    const char* name;
    bool csim_on, ctim_on;
  } variants[] = {{"model_baseline", false, false},
                  {"model_csim", true, false},
                  {"model_ctim", false, true},
                  {"model", true, true}};
  for (const auto& v : variants) {
    const auto cfg = gradcheck_model_config(v.csim_on, v.ctim_on, seed);
    auto w = ModelWeights<double>::init(cfg);
    auto vox = rand_t({cfg.time_bins, cfg.height, cfg.width}, rng, -2.0, 2.0);
    auto img = rand_t({cfg.image_channels, cfg.height, cfg.width}, rng, 0.0, 1.0);
    const auto labels = random_labels(cfg.height, cfg.width, 2, rng);
    Leaves leaves{vox, img};
    w.for_each([&](const std::string&, TensorD& t) { leaves.push_back(t); });
    out.push_back(gradcheck(v.name, [=] {
      return cross_entropy(forward(cfg, w, vox, img).logits, labels);
    }, leaves, rng(), 3));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> scopes = {"tensor", "scan", "ss2d", "csim", "ctim", "model"};
  return scopes;
}

std::vector<GradcheckResult> run_gradcheck_suite(const std::string& scope, std::uint64_t seed) {
  if (scope == "tensor") return tensor_suite(seed);
  if (scope == "scan") return scan_suite(seed);
  if (scope == "ss2d") return ss2d_suite(seed);
  if (scope == "csim") return csim_suite(seed);
  if (scope == "ctim") return ctim_suite(seed);
  if (scope == "model") return model_suite(seed);
  throw ConfigError("unknown gradcheck scope \"" + scope + "\"");
}

}  // namespace mseg
