#pragma once

#include <optional>
#include <string>

#include "mseg/layers.hpp"
#include "mseg/scan.hpp"
#include "mseg/ss2d.hpp"

// Dual-dimensional interaction between the event and image feature maps of
// one encoder stage: a cross-spatial module (CSIM) followed by a
// cross-temporal module (CTIM).
namespace mseg {

template <typename T>
struct ModalityPair {
  Tensor<T> event;  // C x H x W
  Tensor<T> image;  // C x H x W

  void validate(const char* where) const;
};

// ---------------------------------------------------------------------------
// CSIM

template <typename T>
struct CsimParams {
  Conv2dParams<T> conv1;     // 6 -> 3, kernel k_s
  Conv2dParams<T> conv2;     // 3 -> 3, kernel k_s
  SS2DParams<T> ss2d;        // over the 2C concatenated channels
  Conv2dParams<T> sa_event;  // 2 -> 1, kernel k_s
  Conv2dParams<T> sa_image;  // 2 -> 1, kernel k_s

  static CsimParams init(std::int64_t channels, int kernel, std::int64_t state_dim,
                         SplitMix64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    conv1.for_each(prefix + ".conv1", f);
    conv2.for_each(prefix + ".conv2", f);
    ss2d.for_each(prefix + ".ss2d", f);
    sa_event.for_each(prefix + ".sa_event", f);
    sa_image.for_each(prefix + ".sa_image", f);
  }
};

template <typename T>
struct CsimAttention {
  Tensor<T> stack;     // 6 x H x W: avg/max of E, I, F = E + I
  Tensor<T> weights;   // 3 x H x W: W_E, W_I, W_F
  Tensor<T> event;     // E * W_I * W_F
  Tensor<T> image;     // I * W_E * W_F
  Tensor<T> combined;  // concat(event, image), 2C x H x W
};

template <typename T>
CsimAttention<T> csim_attention(const ModalityPair<T>& pair, const CsimParams<T>& p);

/// sigmoid(conv([avg_c(x); max_c(x)])), 1 x H x W.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Conv2dParams<T>& conv);

/// Attention, SS2D refinement and modality-aware residual update.
template <typename T>
ModalityPair<T> csim(const ModalityPair<T>& pair, const CsimParams<T>& p);

std::uint64_t csim_macs(std::int64_t channels, std::int64_t height, std::int64_t width,
                        int kernel, std::int64_t state_dim);

// ---------------------------------------------------------------------------
// CTIM

template <typename T>
struct CtimParams {
  MlpParams<T> shared;    // 2C -> ceil(2C/r) -> C, applied to max and avg descriptors
  S6Params<T> scan_fwd;   // D = H*W, time runs over the 2C channels
  S6Params<T> scan_bwd;
  MlpParams<T> ta_event;  // C -> ceil(C/r) -> C
  MlpParams<T> ta_image;

  static CtimParams init(std::int64_t channels, std::int64_t height, std::int64_t width,
                         std::int64_t reduction, std::int64_t state_dim, SplitMix64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    shared.for_each(prefix + ".shared", f);
    scan_fwd.for_each(prefix + ".scan_fwd", f);
    scan_bwd.for_each(prefix + ".scan_bwd", f);
    ta_event.for_each(prefix + ".ta_event", f);
    ta_image.for_each(prefix + ".ta_image", f);
  }
};

template <typename T>
struct CtimAttention {
  Tensor<T> interleaved;  // 2C x H x W, image channel k at 2k, event channel k at 2k+1
  Tensor<T> weights;      // C x 1 x 1
  Tensor<T> event;
  Tensor<T> image;
};

template <typename T>
CtimAttention<T> ctim_attention(const ModalityPair<T>& pair, const CtimParams<T>& p);

/// sigmoid(mlp(avg_s(x)) + mlp(max_s(x))), C x 1 x 1.
template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& x, const MlpParams<T>& mlp);

/// Attention, bidirectional selective scan over the channel axis and
/// modality-aware residual update.
template <typename T>
ModalityPair<T> ctim(const ModalityPair<T>& pair, const CtimParams<T>& p);

std::uint64_t ctim_macs(std::int64_t channels, std::int64_t height, std::int64_t width,
                        std::int64_t reduction, std::int64_t state_dim);

// ---------------------------------------------------------------------------
// DDIM

struct DdimOptions {
  bool enable_csim = true;
  bool enable_ctim = true;
  bool csim_first = true;
};

template <typename T>
struct DdimParams {
  std::optional<CsimParams<T>> csim;
  std::optional<CtimParams<T>> ctim;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    if (csim) csim->for_each(prefix + ".csim", f);
    if (ctim) ctim->for_each(prefix + ".ctim", f);
  }
};

/// Applies the enabled modules in the configured order; returns `pair`
/// untouched when both are disabled.
template <typename T>
ModalityPair<T> ddim(const ModalityPair<T>& pair, const DdimParams<T>& p, const DdimOptions& opts);

}  // namespace mseg
