#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mseg/metrics.hpp"
#include "mseg/model.hpp"

namespace mseg {

nlohmann::json to_json(const ModelConfig& cfg);
/// Unknown keys raise ConfigError; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

/// FNV-1a over the canonical config JSON without the seed. A checkpoint
/// carries it so weights cannot be loaded into a differently shaped model.
std::uint64_t config_digest(const ModelConfig& cfg);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// Voxel grid: "MSVG", u32 T, H, W, then T*H*W float32, all little-endian.
std::string encode_voxels(const TensorF& grid);
TensorF decode_voxels(const std::string& bytes);

// Checkpoint: "MSWT", u64 config digest, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u32 extents, float32 values.
struct NamedTensor {
  std::string name;
  TensorF value;
};
std::string encode_checkpoint(std::uint64_t digest, const std::vector<NamedTensor>& tensors);
std::pair<std::uint64_t, std::vector<NamedTensor>> decode_checkpoint(const std::string& bytes);

std::string encode_weights(const ModelConfig& cfg, ModelWeights<float> w);
/// Throws ConfigError when the digest or any tensor name/shape disagrees with
/// the config.
ModelWeights<float> decode_weights(const ModelConfig& cfg, const std::string& bytes);

// Binary PGM (P5, maxval 255) and PPM (P6).
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};
std::string encode_pnm(const Image8& img);
Image8 decode_pnm(const std::string& bytes);

/// Class index k is stored as k * floor(255 / (K - 1)).
Image8 labels_to_pgm(const LabelMap& labels, std::int64_t num_classes);
/// Inverse of labels_to_pgm; values that are not a scaled class map to
/// kIgnoreIndex.
LabelMap pgm_to_labels(const Image8& img, std::int64_t num_classes);
/// Color render with a fixed 11-entry palette (class k uses entry k mod 11).
Image8 labels_to_ppm(const LabelMap& labels);
/// C x H x W tensor in [0, 1] from an 8-bit image.
TensorF image_to_tensor(const Image8& img);
Image8 tensor_to_image(const TensorF& t);

nlohmann::json metrics_json(const SegMetrics& m);

}  // namespace mseg
