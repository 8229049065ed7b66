#include "mseg/model.hpp"

#include <algorithm>
#include <cmath>

namespace mseg {

using i64 = std::int64_t;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (time_bins < 1) fail("time_bins must be >= 1");
  if (image_channels != 1 && image_channels != 3) fail("image_channels must be 1 or 3");
  if (num_classes < 2 || num_classes > 255) fail("num_classes must be in [2, 255]");
  if (stages.empty()) fail("at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const auto tag = "stage " + std::to_string(i) + ": ";
    if (s.channels < 1) fail(tag + "channels must be >= 1");
    if (s.blocks < 0) fail(tag + "blocks must be >= 0");
    if (s.downsample != 1 && s.downsample != 2) fail(tag + "downsample must be 1 or 2");
  }
  if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd and positive");
  if (reduction < 1) fail("reduction must be >= 1");
  if (state_dim < 1) fail("state_dim must be >= 1");
  if (expand < 1) fail("expand must be >= 1");
  if (decoder_embed < 1) fail("decoder_embed must be >= 1");
  if (height < 1 || width < 1) fail("height and width must be positive");
  const i64 stride = total_stride();
  if (height % stride != 0 || width % stride != 0)
    fail("input " + std::to_string(height) + "x" + std::to_string(width) +
         " is not divisible by the total stride " + std::to_string(stride));
}

i64 ModelConfig::total_stride() const {
  i64 s = 4;
  for (const auto& st : stages) s *= st.downsample;
  return s;
}

i64 ModelConfig::stage_height(std::size_t stage) const {
  i64 h = height / 4;
  for (std::size_t i = 0; i <= stage && i < stages.size(); ++i) h /= stages[i].downsample;
  return h;
}

i64 ModelConfig::stage_width(std::size_t stage) const {
  i64 w = width / 4;
  for (std::size_t i = 0; i <= stage && i < stages.size(); ++i) w /= stages[i].downsample;
  return w;
}

// ---------------------------------------------------------------------------

template <typename T>
StemParams<T> StemParams<T>::init(i64 c_in, i64 c_out, SplitMix64& rng) {
  StemParams p;
  p.conv1 = Conv2dParams<T>::init(c_in, c_out, 3, 2, 1, rng);
  p.norm1 = LayerNormParams<T>::init(c_out);
  p.conv2 = Conv2dParams<T>::init(c_out, c_out, 3, 2, 1, rng);
  p.norm2 = LayerNormParams<T>::init(c_out);
  return p;
}

template <typename T>
VssParams<T> VssParams<T>::init(i64 channels, i64 expand, i64 state_dim, SplitMix64& rng) {
  const i64 inner = expand * channels;
  VssParams p;
  p.norm = LayerNormParams<T>::init(channels);
  p.in_proj = Conv2dParams<T>::same(channels, 2 * inner, 1, rng);
  p.ss2d = SS2DParams<T>::init(inner, state_dim, rng);
  p.out_proj = Conv2dParams<T>::same(inner, channels, 1, rng);
  return p;
}

namespace {

template <typename T>
BranchParams<T> init_branch(const ModelConfig& cfg, i64 c_in, SplitMix64& rng) {
  BranchParams<T> b;
  b.stem = StemParams<T>::init(c_in, cfg.stages[0].channels, rng);
  i64 prev = cfg.stages[0].channels;
  for (const auto& sc : cfg.stages) {
    BranchStage<T> st;
    if (sc.downsample == 2) {
      st.down.conv = Conv2dParams<T>::init(prev, sc.channels, 3, 2, 1, rng);
      st.down.norm = LayerNormParams<T>::init(sc.channels);
    } else if (sc.channels != prev) {
      st.down.conv = Conv2dParams<T>::same(prev, sc.channels, 1, rng);
      st.down.norm = LayerNormParams<T>::init(sc.channels);
    }
    for (int k = 0; k < sc.blocks; ++k)
      st.blocks.push_back(VssParams<T>::init(sc.channels, cfg.expand, cfg.state_dim, rng));
    b.stages.push_back(std::move(st));
    prev = sc.channels;
  }
  return b;
}

i64 merged_width(const ModelConfig& cfg, std::size_t stage) {
  const i64 c = cfg.stages[stage].channels;
  return cfg.merge == DecoderMerge::Sum ? c : 2 * c;
}

}  // namespace

template <typename T>
ModelWeights<T> ModelWeights<T>::init(const ModelConfig& cfg) {
  cfg.validate();
  SplitMix64 root(cfg.seed);
  auto ev_rng = root.fork(1);
  auto im_rng = root.fork(2);
  auto fu_rng = root.fork(3);
  auto de_rng = root.fork(4);
  ModelWeights w;
  w.event = init_branch<T>(cfg, cfg.time_bins, ev_rng);
  w.image = init_branch<T>(cfg, cfg.image_channels, im_rng);
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    DdimParams<T> d;
    const i64 c = cfg.stages[s].channels;
    if (cfg.enable_csim) d.csim = CsimParams<T>::init(c, cfg.kernel, cfg.state_dim, fu_rng);
    if (cfg.enable_ctim)
      d.ctim = CtimParams<T>::init(c, cfg.stage_height(s), cfg.stage_width(s), cfg.reduction,
                                   cfg.state_dim, fu_rng);
    w.fusion.push_back(std::move(d));
  }
  for (std::size_t s = 0; s < cfg.stages.size(); ++s)
    w.decoder.proj.push_back(Conv2dParams<T>::same(merged_width(cfg, s), cfg.decoder_embed, 1, de_rng));
  w.decoder.fuse = Conv2dParams<T>::same(static_cast<i64>(cfg.stages.size()) * cfg.decoder_embed,
                                         cfg.decoder_embed, 1, de_rng);
  w.decoder.classify = Conv2dParams<T>::same(cfg.decoder_embed, cfg.num_classes, 1, de_rng);
  return w;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> stem(const Tensor<T>& x, const StemParams<T>& p) {
  if (x.rank() != 3 || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0)
    throw DimensionError("stem: input " + shape_str(x.shape()) +
                         " must be C x H x W with H, W divisible by 4");
  const auto h = activation(p.norm1(p.conv1(x)), Activation::Relu);
  return p.norm2(p.conv2(h));
}

template <typename T>
Tensor<T> vss_block(const Tensor<T>& x, const VssParams<T>& p) {
  const auto uz = split_even(p.in_proj(p.norm(x)), 2);
  const auto y = mul(ss2d(uz[0], p.ss2d), silu(uz[1]));
  return add(x, p.out_proj(y));
}

namespace {

template <typename T>
Tensor<T> run_stage(const Tensor<T>& x, const BranchStage<T>& st) {
  auto h = x;
  if (st.down.conv) h = (*st.down.norm)((*st.down.conv)(h));
  for (const auto& b : st.blocks) h = vss_block(h, b);
  return h;
}

template <typename T>
void check_weights(const ModelConfig& cfg, const ModelWeights<T>& w) {
  const auto n = cfg.stages.size();
  if (w.event.stages.size() != n || w.image.stages.size() != n || w.fusion.size() != n ||
      w.decoder.proj.size() != n)
    throw ConfigError("forward: weights were built for a different stage count");
  if (w.event.stem.conv1.c_in() != cfg.time_bins ||
      w.image.stem.conv1.c_in() != cfg.image_channels ||
      w.decoder.classify.c_out() != cfg.num_classes)
    throw ConfigError("forward: weights do not match the configured input or class count");
  auto mismatch = [](const std::string& what, std::size_t s) {
    return ConfigError("forward: " + what + " at stage " + std::to_string(s) +
                       " does not match the config");
  };
  for (const auto* branch : {&w.event, &w.image}) {
    if (branch->stem.conv1.c_out() != cfg.stages[0].channels)
      throw ConfigError("forward: stem width does not match the config");
    i64 prev = cfg.stages[0].channels;
    for (std::size_t s = 0; s < n; ++s) {
      const auto& sc = cfg.stages[s];
      const auto& st = branch->stages[s];
      const bool want_conv = sc.downsample == 2 || sc.channels != prev;
      if (st.down.conv.has_value() != want_conv ||
          (want_conv && (st.down.conv->c_in() != prev || st.down.conv->c_out() != sc.channels ||
                         st.down.conv->stride != sc.downsample)))
        throw mismatch("stage entry", s);
      if (st.blocks.size() != static_cast<std::size_t>(sc.blocks)) throw mismatch("block count", s);
      for (const auto& b : st.blocks)
        if (b.norm.gamma.numel() != sc.channels || b.in_proj.c_out() != 2 * sc.channels * cfg.expand ||
            b.ss2d.dirs[0].state_dim() != cfg.state_dim)
          throw mismatch("block shape", s);
      prev = sc.channels;
    }
  }
  for (std::size_t s = 0; s < n; ++s)
    if (w.decoder.proj[s].c_in() != merged_width(cfg, s) || w.decoder.proj[s].c_out() != cfg.decoder_embed)
      throw mismatch("decoder projection", s);
  if (w.decoder.fuse.c_in() != static_cast<i64>(n) * cfg.decoder_embed ||
      w.decoder.classify.c_in() != cfg.decoder_embed)
    throw ConfigError("forward: decoder width does not match the config");
  for (std::size_t s = 0; s < n; ++s) {
    if (w.fusion[s].csim && w.fusion[s].csim->conv1.kernel() != cfg.kernel)
      throw mismatch("spatial fusion kernel", s);
    if (w.fusion[s].ctim &&
        w.fusion[s].ctim->ta_event.reduce.c_out() != ceil_div(cfg.stages[s].channels, cfg.reduction))
      throw mismatch("temporal fusion reduction", s);
    if (cfg.enable_csim != w.fusion[s].csim.has_value() ||
        cfg.enable_ctim != w.fusion[s].ctim.has_value())
      throw ConfigError("forward: fusion modules at stage " + std::to_string(s) +
                        " do not match enable flags");
    if (w.fusion[s].ctim &&
        w.fusion[s].ctim->scan_fwd.channels() != cfg.stage_height(s) * cfg.stage_width(s))
      throw ConfigError("forward: temporal scan at stage " + std::to_string(s) +
                        " was built for another resolution");
  }
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ModelConfig& cfg, const ModelWeights<T>& w, const Tensor<T>& voxels,
                         const Tensor<T>& image) {
  cfg.validate();
  check_weights(cfg, w);
  if (voxels.shape() != Shape{cfg.time_bins, cfg.height, cfg.width})
    throw DimensionError("forward: voxels " + shape_str(voxels.shape()) + " expected " +
                         shape_str({cfg.time_bins, cfg.height, cfg.width}));
  if (image.shape() != Shape{cfg.image_channels, cfg.height, cfg.width})
    throw DimensionError("forward: image " + shape_str(image.shape()) + " expected " +
                         shape_str({cfg.image_channels, cfg.height, cfg.width}));

  ForwardResult<T> out;
  ModalityPair<T> pair{stem(voxels, w.event.stem), stem(image, w.image.stem)};
  const auto opts = cfg.ddim_options();
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    pair.event = run_stage(pair.event, w.event.stages[s]);
    pair.image = run_stage(pair.image, w.image.stages[s]);
    pair = ddim(pair, w.fusion[s], opts);
    out.stages.push_back(pair);
  }

  const i64 qh = cfg.height / 4;
  const i64 qw = cfg.width / 4;
  std::vector<Tensor<T>> feats;
  for (std::size_t s = 0; s < out.stages.size(); ++s) {
    const auto& p = out.stages[s];
    const auto merged =
        cfg.merge == DecoderMerge::Sum ? add(p.event, p.image) : concat<T>({p.event, p.image});
    auto f = w.decoder.proj[s](merged);
    if (f.dim(1) != qh || f.dim(2) != qw) f = resize_bilinear(f, qh, qw);
    feats.push_back(f);
  }
  const auto fused = activation(w.decoder.fuse(concat(feats)), Activation::Relu);
  out.logits = resize_bilinear(w.decoder.classify(fused), cfg.height, cfg.width);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels, int ignore_index) {
  if (logits.rank() != 3 || logits.dim(1) != labels.height || logits.dim(2) != labels.width)
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width));
  const i64 k = logits.dim(0);
  const i64 px = labels.height * labels.width;
  const auto z = logits.data();
  std::vector<double> lse(static_cast<std::size_t>(px), 0.0);
  double total = 0.0;
  i64 counted = 0;
  for (i64 i = 0; i < px; ++i) {
    const int y = labels.values[static_cast<std::size_t>(i)];
    if (y == ignore_index) continue;
    if (y < 0 || y >= k)
      throw DataError("cross_entropy: label " + std::to_string(y) + " at pixel " +
                      std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    double m = -INFINITY;
    for (i64 c = 0; c < k; ++c) m = std::max(m, static_cast<double>(z[c * px + i]));
    double s = 0.0;
    for (i64 c = 0; c < k; ++c) s += std::exp(static_cast<double>(z[c * px + i]) - m);
    lse[i] = m + std::log(s);
    total += lse[i] - static_cast<double>(z[y * px + i]);
    ++counted;
  }
  if (counted == 0) throw DataError("cross_entropy: every pixel is ignored");
  Tensor<T> result = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(counted)));
  check_finite(result, "cross_entropy");
  if (auto* tape = tracking_tape<T>({&logits})) {
    tape->record("cross_entropy", 0, {logits}, {result},
                 [logits, result, labels, ignore_index, lse, k, px, counted]() {
                   const double g = static_cast<double>(result.grad()[0]) / counted;
                   const auto zz = logits.data();
                   auto gl = logits.grad_buffer();
                   for (i64 i = 0; i < px; ++i) {
                     const int y = labels.values[static_cast<std::size_t>(i)];
                     if (y == ignore_index) continue;
                     for (i64 c = 0; c < k; ++c) {
                       const double p = std::exp(static_cast<double>(zz[c * px + i]) - lse[i]);
                       gl[c * px + i] += static_cast<T>(g * (p - (c == y ? 1.0 : 0.0)));
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
LabelMap argmax(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax: logits must be K x H x W");
  const i64 k = logits.dim(0);
  LabelMap out(logits.dim(1), logits.dim(2));
  const i64 px = out.height * out.width;
  const auto z = logits.data();
  for (i64 i = 0; i < px; ++i) {
    int best = 0;
    for (i64 c = 1; c < k; ++c)
      if (z[c * px + i] > z[best * px + i]) best = static_cast<int>(c);
    out.values[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

#define MSEG_INSTANTIATE_MODEL(T)                                                              \
  template struct StemParams<T>;                                                               \
  template struct VssParams<T>;                                                                \
  template struct ModelWeights<T>;                                                             \
  template Tensor<T> stem(const Tensor<T>&, const StemParams<T>&);                             \
  template Tensor<T> vss_block(const Tensor<T>&, const VssParams<T>&);                         \
  template ForwardResult<T> forward(const ModelConfig&, const ModelWeights<T>&, const Tensor<T>&, \
                                    const Tensor<T>&);                                         \
  template Tensor<T> cross_entropy(const Tensor<T>&, const LabelMap&, int);                    \
  template LabelMap argmax(const Tensor<T>&);

MSEG_INSTANTIATE_MODEL(float)
MSEG_INSTANTIATE_MODEL(double)

}  // namespace mseg
