#include "mseg/synthetic.hpp"

#include <algorithm>

#include "mseg/rng.hpp"

namespace mseg {

using i64 = std::int64_t;

SyntheticSample gen_synthetic(std::uint64_t seed, i64 height, i64 width, int frames, int speed) {
  if (height < 16 || width < 16) throw ConfigError("gen_synthetic: H and W must be >= 16");
  if (frames < 1) throw ConfigError("gen_synthetic: frames must be >= 1");
  if (speed < 0) throw ConfigError("gen_synthetic: speed must be >= 0");
  SplitMix64 rng(seed);
  SyntheticSample s;
  s.rect_w = width / 4 + static_cast<i64>(rng.below(static_cast<std::uint64_t>(width / 4 + 1)));
  s.rect_h = height / 4 + static_cast<i64>(rng.below(static_cast<std::uint64_t>(height / 4 + 1)));
  const i64 travel = static_cast<i64>(frames - 1) * speed;
  const i64 x_room = std::max<i64>(0, width - s.rect_w - travel);
  const i64 x0 = static_cast<i64>(rng.below(static_cast<std::uint64_t>(x_room + 1)));
  s.rect_y = static_cast<i64>(rng.below(static_cast<std::uint64_t>(height - s.rect_h + 1)));
  auto left = [&](int k) { return std::min(x0 + static_cast<i64>(k) * speed, width - s.rect_w); };

  auto frame = [&](int k) {
    std::vector<float> f(static_cast<std::size_t>(height * width), kBackground);
    const i64 lx = left(k);
    for (i64 y = s.rect_y; y < s.rect_y + s.rect_h; ++y)
      for (i64 x = lx; x < lx + s.rect_w; ++x) f[static_cast<std::size_t>(y * width + x)] = kForeground;
    return f;
  };

  s.events.width = width;
  s.events.height = height;
  auto prev = frame(0);
  for (int k = 1; k < frames; ++k) {
    auto cur = frame(k);
    const i64 t = static_cast<i64>(k) * kFramePeriodUs;
    for (i64 y = 0; y < height; ++y)
      for (i64 x = 0; x < width; ++x) {
        const float d = cur[static_cast<std::size_t>(y * width + x)] -
                        prev[static_cast<std::size_t>(y * width + x)];
        if (d > kEventThreshold || d < -kEventThreshold)
          s.events.events.push_back(Event{t, static_cast<std::int32_t>(x),
                                          static_cast<std::int32_t>(y),
                                          static_cast<std::int8_t>(d > 0 ? 1 : -1)});
      }
    prev = std::move(cur);
  }

  s.rect_x = left(frames - 1);
  s.image = TensorF({1, height, width}, prev);
  s.label = LabelMap(height, width, 0);
  for (i64 y = s.rect_y; y < s.rect_y + s.rect_h; ++y)
    for (i64 x = s.rect_x; x < s.rect_x + s.rect_w; ++x) s.label.at(y, x) = 1;
  s.t0 = 0;
  s.t1 = static_cast<i64>(frames) * kFramePeriodUs;
  return s;
}

ModelInput to_model_input(const SyntheticSample& s, i64 bins) {
  return ModelInput{voxelize(s.events, s.t0, s.t1, bins).data, s.image, s.label};
}

}  // namespace mseg
