#pragma once

#include <cstdint>

#include "mseg/events.hpp"
#include "mseg/model.hpp"

namespace mseg {

inline constexpr std::int64_t kFramePeriodUs = 10'000;
inline constexpr float kBackground = 0.1f;
inline constexpr float kForeground = 0.9f;
inline constexpr float kEventThreshold = 0.2f;

/// A bright rectangle sliding right by `speed` pixels per frame over a dark
/// background. Events are the per-pixel sign of intensity change between
/// consecutive frames, stamped k * kFramePeriodUs for the change into frame k.
struct SyntheticSample {
  TensorF image;  // 1 x H x W, final frame
  EventStream events;
  LabelMap label;  // 1 on the final rectangle footprint
  std::int64_t t0 = 0;
  std::int64_t t1 = 0;  // frames * kFramePeriodUs
  // Rectangle geometry in the final frame.
  std::int64_t rect_x = 0, rect_y = 0, rect_w = 0, rect_h = 0;
};

SyntheticSample gen_synthetic(std::uint64_t seed, std::int64_t height, std::int64_t width,
                              int frames, int speed);

/// Model inputs for a sample: voxels over [t0, t1) with `bins` bins, plus the
/// image.
struct ModelInput {
  TensorF voxels;
  TensorF image;
  LabelMap label;
};

ModelInput to_model_input(const SyntheticSample& s, std::int64_t bins);

}  // namespace mseg
