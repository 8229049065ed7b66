#include "mseg/ddim.hpp"

namespace mseg {

namespace {

using i64 = std::int64_t;
using u64 = std::uint64_t;

u64 conv_macs(i64 c_in, i64 c_out, i64 kernel, i64 pixels) {
  return static_cast<u64>(c_in * c_out * kernel * kernel * pixels);
}

u64 mlp_macs(i64 c_in, i64 hidden, i64 c_out) { return static_cast<u64>(c_in * hidden + hidden * c_out); }

}  // namespace

template <typename T>
void ModalityPair<T>::validate(const char* where) const {
  if (!event.defined() || !image.defined())
    throw DimensionError(std::string(where) + ": modality pair has an undefined tensor");
  if (event.rank() != 3 || event.shape() != image.shape())
    throw DimensionError(std::string(where) + ": event " + shape_str(event.shape()) +
                         " and image " + shape_str(image.shape()) + " must be equal C x H x W");
}

// ---------------------------------------------------------------------------
// CSIM

template <typename T>
CsimParams<T> CsimParams<T>::init(i64 channels, int kernel, i64 state_dim, SplitMix64& rng) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("csim: kernel size must be odd");
  CsimParams p;
  p.conv1 = Conv2dParams<T>::same(6, 3, kernel, rng);
  p.conv2 = Conv2dParams<T>::same(3, 3, kernel, rng);
  p.ss2d = SS2DParams<T>::init(2 * channels, state_dim, rng);
  p.sa_event = Conv2dParams<T>::same(2, 1, kernel, rng);
  p.sa_image = Conv2dParams<T>::same(2, 1, kernel, rng);
  return p;
}

template <typename T>
CsimAttention<T> csim_attention(const ModalityPair<T>& pair, const CsimParams<T>& p) {
  pair.validate("csim");
  const auto& e = pair.event;
  const auto& i = pair.image;
  const auto f = add(e, i);
  CsimAttention<T> out;
  out.stack = concat<T>({channel_pool(e, PoolMode::Avg), channel_pool(e, PoolMode::Max),
                         channel_pool(i, PoolMode::Avg), channel_pool(i, PoolMode::Max),
                         channel_pool(f, PoolMode::Avg), channel_pool(f, PoolMode::Max)});
  out.weights = activation(
      p.conv2(activation(p.conv1(out.stack), Activation::Relu)), Activation::Sigmoid);
  const auto w = split_even(out.weights, 3);  // W_E, W_I, W_F
  out.event = mul(mul(e, w[1]), w[2]);
  out.image = mul(mul(i, w[0]), w[2]);
  out.combined = concat<T>({out.event, out.image});
  return out;
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Conv2dParams<T>& conv) {
  const auto pooled = concat<T>({channel_pool(x, PoolMode::Avg), channel_pool(x, PoolMode::Max)});
  return activation(conv(pooled), Activation::Sigmoid);
}

template <typename T>
ModalityPair<T> csim(const ModalityPair<T>& pair, const CsimParams<T>& p) {
  const auto att = csim_attention(pair, p);
  const auto refined = split_even(ss2d(att.combined, p.ss2d), 2);
  const auto& es = refined[0];
  const auto& is = refined[1];
  return ModalityPair<T>{add(pair.event, mul(es, spatial_attention(es, p.sa_event))),
                         add(pair.image, mul(is, spatial_attention(is, p.sa_image)))};
}

u64 csim_macs(i64 channels, i64 height, i64 width, int kernel, i64 state_dim) {
  const i64 px = height * width;
  return conv_macs(6, 3, kernel, px) + conv_macs(3, 3, kernel, px) +
         ss2d_macs(2 * channels, height, width, state_dim) + 2 * conv_macs(2, 1, kernel, px);
}

// ---------------------------------------------------------------------------
// CTIM

template <typename T>
CtimParams<T> CtimParams<T>::init(i64 channels, i64 height, i64 width, i64 reduction,
                                  i64 state_dim, SplitMix64& rng) {
  if (reduction < 1) throw ConfigError("ctim: reduction ratio must be >= 1");
  CtimParams p;
  p.shared = MlpParams<T>::init(2 * channels, ceil_div(2 * channels, reduction), channels, rng);
  p.scan_fwd = S6Params<T>::init(height * width, state_dim, rng);
  p.scan_bwd = S6Params<T>::init(height * width, state_dim, rng);
  p.ta_event = MlpParams<T>::init(channels, ceil_div(channels, reduction), channels, rng);
  p.ta_image = MlpParams<T>::init(channels, ceil_div(channels, reduction), channels, rng);
  return p;
}

template <typename T>
CtimAttention<T> ctim_attention(const ModalityPair<T>& pair, const CtimParams<T>& p) {
  pair.validate("ctim");
  CtimAttention<T> out;
  out.interleaved = interleave(pair.image, pair.event);
  out.weights = activation(add(p.shared(spatial_pool(out.interleaved, PoolMode::Max)),
                               p.shared(spatial_pool(out.interleaved, PoolMode::Avg))),
                           Activation::Sigmoid);
  out.event = mul(pair.event, out.weights);
  out.image = mul(pair.image, out.weights);
  return out;
}

template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& x, const MlpParams<T>& mlp) {
  return activation(add(mlp(spatial_pool(x, PoolMode::Avg)), mlp(spatial_pool(x, PoolMode::Max))),
                    Activation::Sigmoid);
}

template <typename T>
ModalityPair<T> ctim(const ModalityPair<T>& pair, const CtimParams<T>& p) {
  const auto att = ctim_attention(pair, p);
  const auto fc = concat<T>({att.event, att.image});
  const i64 steps = fc.dim(0), h = fc.dim(1), w = fc.dim(2);
  if (p.scan_fwd.channels() != h * w)
    throw DimensionError("ctim: scan parameters expect " + std::to_string(p.scan_fwd.channels()) +
                         " pixels, feature map has " + std::to_string(h * w));
  // Channels are time steps; the flattened pixels are the feature dimension.
  const auto seq = reshape(fc, {steps, h * w});
  const auto fb = reshape(scan_bidirectional(p.scan_fwd, p.scan_bwd, seq), {steps, h, w});
  const auto parts = split_even(fb, 2);
  const auto& eb = parts[0];
  const auto& ib = parts[1];
  return ModalityPair<T>{add(pair.event, mul(eb, temporal_attention(eb, p.ta_event))),
                         add(pair.image, mul(ib, temporal_attention(ib, p.ta_image)))};
}

u64 ctim_macs(i64 channels, i64 height, i64 width, i64 reduction, i64 state_dim) {
  const i64 hidden2 = ceil_div(2 * channels, reduction);
  const i64 hidden = ceil_div(channels, reduction);
  return 2 * mlp_macs(2 * channels, hidden2, channels) +
         2 * scan_macs(2 * channels, height * width, state_dim) +
         4 * mlp_macs(channels, hidden, channels);
}

// ---------------------------------------------------------------------------
// DDIM

template <typename T>
ModalityPair<T> ddim(const ModalityPair<T>& pair, const DdimParams<T>& p, const DdimOptions& opts) {
  auto apply_csim = [&](const ModalityPair<T>& in) {
    if (!opts.enable_csim) return in;
    if (!p.csim) throw ConfigError("ddim: CSIM enabled but no parameters supplied");
    return csim(in, *p.csim);
  };
  auto apply_ctim = [&](const ModalityPair<T>& in) {
    if (!opts.enable_ctim) return in;
    if (!p.ctim) throw ConfigError("ddim: CTIM enabled but no parameters supplied");
    return ctim(in, *p.ctim);
  };
  return opts.csim_first ? apply_ctim(apply_csim(pair)) : apply_csim(apply_ctim(pair));
}

#define MSEG_INSTANTIATE_DDIM(T)                                                               \
  template struct ModalityPair<T>;                                                             \
  template struct CsimParams<T>;                                                               \
  template CsimAttention<T> csim_attention(const ModalityPair<T>&, const CsimParams<T>&);      \
  template Tensor<T> spatial_attention(const Tensor<T>&, const Conv2dParams<T>&);              \
  template ModalityPair<T> csim(const ModalityPair<T>&, const CsimParams<T>&);                 \
  template struct CtimParams<T>;                                                               \
  template CtimAttention<T> ctim_attention(const ModalityPair<T>&, const CtimParams<T>&);      \
  template Tensor<T> temporal_attention(const Tensor<T>&, const MlpParams<T>&);                \
  template ModalityPair<T> ctim(const ModalityPair<T>&, const CtimParams<T>&);                 \
  template ModalityPair<T> ddim(const ModalityPair<T>&, const DdimParams<T>&, const DdimOptions&);

MSEG_INSTANTIATE_DDIM(float)
MSEG_INSTANTIATE_DDIM(double)

}  // namespace mseg
