#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mseg/ddim.hpp"
#include "mseg/layers.hpp"
#include "mseg/ss2d.hpp"

namespace mseg {

inline constexpr int kIgnoreIndex = 255;

struct StageConfig {
  std::int64_t channels = 10;
  int blocks = 1;
  int downsample = 2;  // 1 or 2, applied on entry to the stage (stage 0 follows the stem)

  bool operator==(const StageConfig&) const = default;
};

enum class DecoderMerge { Sum, Concat };

struct ModelConfig {
  std::int64_t time_bins = 10;
  std::int64_t image_channels = 1;
  std::int64_t num_classes = 2;
  std::vector<StageConfig> stages = {{10, 1, 1}, {20, 1, 2}, {40, 1, 2}, {80, 1, 2}};
  int kernel = 7;               // CSIM convolution size
  std::int64_t reduction = 4;   // CTIM MLP reduction ratio
  std::int64_t state_dim = 8;   // N
  std::int64_t expand = 1;      // VSS inner width = expand * C
  bool enable_csim = true;
  bool enable_ctim = true;
  bool csim_first = true;
  std::int64_t decoder_embed = 16;
  DecoderMerge merge = DecoderMerge::Sum;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  /// Product of the stem stride (4) and every stage downsample factor.
  std::int64_t total_stride() const;
  /// Spatial size at the given stage.
  std::int64_t stage_height(std::size_t stage) const;
  std::int64_t stage_width(std::size_t stage) const;
  DdimOptions ddim_options() const { return {enable_csim, enable_ctim, csim_first}; }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct StemParams {
  Conv2dParams<T> conv1;  // C_in -> C_1, 3x3 stride 2
  LayerNormParams<T> norm1;
  Conv2dParams<T> conv2;  // C_1 -> C_1, 3x3 stride 2
  LayerNormParams<T> norm2;

  static StemParams init(std::int64_t c_in, std::int64_t c_out, SplitMix64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    conv1.for_each(prefix + ".conv1", f);
    norm1.for_each(prefix + ".norm1", f);
    conv2.for_each(prefix + ".conv2", f);
    norm2.for_each(prefix + ".norm2", f);
  }
};

template <typename T>
struct VssParams {
  LayerNormParams<T> norm;
  Conv2dParams<T> in_proj;   // C -> 2E (value and gate)
  SS2DParams<T> ss2d;        // E channels
  Conv2dParams<T> out_proj;  // E -> C

  static VssParams init(std::int64_t channels, std::int64_t expand, std::int64_t state_dim,
                        SplitMix64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    norm.for_each(prefix + ".norm", f);
    in_proj.for_each(prefix + ".in_proj", f);
    ss2d.for_each(prefix + ".ss2d", f);
    out_proj.for_each(prefix + ".out_proj", f);
  }
};

/// Entry transition of a stage: strided 3x3 conv + norm when downsampling,
/// 1x1 conv + norm when only the width changes, nothing otherwise.
template <typename T>
struct DownsampleParams {
  std::optional<Conv2dParams<T>> conv;
  std::optional<LayerNormParams<T>> norm;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    if (conv) conv->for_each(prefix + ".conv", f);
    if (norm) norm->for_each(prefix + ".norm", f);
  }
};

template <typename T>
struct BranchStage {
  DownsampleParams<T> down;
  std::vector<VssParams<T>> blocks;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    down.for_each(prefix + ".down", f);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].for_each(prefix + ".block" + std::to_string(i), f);
  }
};

template <typename T>
struct BranchParams {
  StemParams<T> stem;
  std::vector<BranchStage<T>> stages;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    stem.for_each(prefix + ".stem", f);
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].for_each(prefix + ".stage" + std::to_string(i), f);
  }
};

template <typename T>
struct DecoderParams {
  std::vector<Conv2dParams<T>> proj;  // per stage, merged width -> embed, 1x1
  Conv2dParams<T> fuse;               // stages * embed -> embed, 1x1
  Conv2dParams<T> classify;           // embed -> K, 1x1

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i].for_each(prefix + ".proj" + std::to_string(i), f);
    fuse.for_each(prefix + ".fuse", f);
    classify.for_each(prefix + ".classify", f);
  }
};

template <typename T>
struct ModelWeights {
  BranchParams<T> event;
  BranchParams<T> image;
  std::vector<DdimParams<T>> fusion;  // one per stage
  DecoderParams<T> decoder;

  /// Seeded initialization (fan-in uniform, see S6Params::init for scans).
  static ModelWeights init(const ModelConfig& cfg);

  /// Visits every trainable tensor with a stable, unique name.
  template <typename F>
  void for_each(F&& f) {
    event.for_each("event", f);
    image.for_each("image", f);
    for (std::size_t i = 0; i < fusion.size(); ++i) fusion[i].for_each("ddim" + std::to_string(i), f);
    decoder.for_each("decoder", f);
  }
};

/// Trainable scalar count of a weight set.
template <typename T>
std::int64_t num_params(ModelWeights<T> w) {
  std::int64_t n = 0;
  w.for_each([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

/// Same weights in another precision (used for 64-bit shadow evaluation).
template <typename U, typename T>
ModelWeights<U> cast_weights(const ModelConfig& cfg, ModelWeights<T> src) {
  std::vector<Tensor<T>> flat;
  src.for_each([&](const std::string&, Tensor<T>& t) { flat.push_back(t); });
  auto dst = ModelWeights<U>::init(cfg);
  std::size_t i = 0;
  dst.for_each([&](const std::string& name, Tensor<U>& t) {
    if (i >= flat.size() || flat[i].shape() != t.shape())
      throw ConfigError("cast_weights: weights do not match config at " + name);
    t = flat[i++].template cast<U>();
  });
  if (i != flat.size()) throw ConfigError("cast_weights: weights have extra tensors");
  return dst;
}

template <typename T>
Tensor<T> stem(const Tensor<T>& x, const StemParams<T>& p);

template <typename T>
Tensor<T> vss_block(const Tensor<T>& x, const VssParams<T>& p);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                        // K x H x W
  std::vector<ModalityPair<T>> stages;     // refined pair at every stage
};

/// voxels: T x H x W, image: C_img x H x W.
template <typename T>
ForwardResult<T> forward(const ModelConfig& cfg, const ModelWeights<T>& w, const Tensor<T>& voxels,
                         const Tensor<T>& image);

/// Row-major H x W class map. kIgnoreIndex marks unlabelled pixels.
struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<int> values;

  LabelMap() = default;
  LabelMap(std::int64_t h, std::int64_t w, int fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}
  int& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
  int at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const LabelMap&) const = default;
};

/// Mean over non-ignored pixels of -log softmax(logits)[label]. Differentiable
/// in the logits. All pixels ignored raises DataError.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels, int ignore_index = kIgnoreIndex);

/// Per-pixel argmax, ties to the lowest class.
template <typename T>
LabelMap argmax(const Tensor<T>& logits);

}  // namespace mseg
