#include "mseg/train.hpp"

#include <algorithm>
#include <cmath>

#include "mseg/synthetic.hpp"

namespace mseg {

namespace {

constexpr std::uint64_t kEvalSeedOffset = 1'000'000;

std::vector<ModelInput> make_set(const ModelConfig& cfg, std::uint64_t first, int count,
                                 int frames, int speed) {
  std::vector<ModelInput> out;
  for (int i = 0; i < count; ++i)
    out.push_back(to_model_input(
        gen_synthetic(first + static_cast<std::uint64_t>(i), cfg.height, cfg.width, frames, speed),
        cfg.time_bins));
  return out;
}

double mean_loss(const ModelConfig& cfg, const ModelWeights<float>& w,
                 const std::vector<ModelInput>& set) {
  double total = 0.0;
  for (const auto& s : set)
    total += cross_entropy(forward(cfg, w, s.voxels, s.image).logits, s.label).item();
  return total / static_cast<double>(set.size());
}

}  // namespace

SegMetrics evaluate(const ModelConfig& cfg, const ModelWeights<float>& weights,
                    std::uint64_t first_seed, int count, int frames, int speed) {
  std::vector<std::int64_t> conf;
  for (const auto& s : make_set(cfg, first_seed, count, frames, speed))
    accumulate_confusion(conf, cfg.num_classes, argmax(forward(cfg, weights, s.voxels, s.image).logits),
                         s.label);
  auto m = metrics_from_confusion(std::move(conf), cfg.num_classes);
  const auto cost = count_params_macs(cfg);
  m.params = cost.params;
  m.macs = cost.macs;
  return m;
}

TrainResult train_toy(const ModelConfig& cfg, const TrainOptions& opts,
                      const std::function<void(int, double)>& on_step) {
  if (opts.steps < 0) throw ConfigError("train: steps must be >= 0");
  if (opts.batch < 1 || opts.train_samples < 1 || opts.eval_samples < 1)
    throw ConfigError("train: batch and sample counts must be >= 1");
  if (!(opts.lr > 0.0)) throw ConfigError("train: learning rate must be positive");

  TrainResult r;
  r.weights = ModelWeights<float>::init(cfg);
  std::vector<TensorF> params;
  r.weights.for_each([&](const std::string&, TensorF& t) {
    t.set_requires_grad(true);
    params.push_back(t);
  });

  const auto train_set = make_set(cfg, cfg.seed * 7919, opts.train_samples, opts.frames, opts.speed);
  r.initial_train_loss = mean_loss(cfg, r.weights, train_set);

  GradTape<float> tape;
  const float inv_batch = 1.0f / static_cast<float>(opts.batch);
  for (int step = 0; step <= opts.steps; ++step) {
    const bool update = step < opts.steps;
    double batch_loss = 0.0;
    for (int b = 0; b < opts.batch; ++b) {
      const auto& s = train_set[static_cast<std::size_t>((step * opts.batch + b) % opts.train_samples)];
      if (!update) {
        batch_loss += cross_entropy(forward(cfg, r.weights, s.voxels, s.image).logits, s.label).item();
        continue;
      }
      tape.reset();
      TapeScope<float> scope(tape);
      TensorF loss;
      try {
        loss = cross_entropy(forward(cfg, r.weights, s.voxels, s.image).logits, s.label);
      } catch (const NumericError& e) {
        throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
      }
      batch_loss += loss.item();
      tape.backward(scale(loss, inv_batch));
    }
    batch_loss /= opts.batch;
    if (!std::isfinite(batch_loss))
      throw NumericError("train: loss is not finite at step " + std::to_string(step));
    r.loss.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss);
    if (!update) break;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto d = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= static_cast<float>(opts.lr) * g[i];
      p.zero_grad();
    }
  }
  for (auto& p : params) p.set_requires_grad(false);
  tape.reset();

  double ema = r.loss.front();
  double best = ema;
  for (double l : r.loss) {
    ema = 0.9 * ema + 0.1 * l;
    best = std::min(best, ema);
    r.smoothed.push_back(best);
  }
  r.final_train_loss = mean_loss(cfg, r.weights, train_set);
  r.eval = evaluate(cfg, r.weights, cfg.seed * 7919 + kEvalSeedOffset, opts.eval_samples,
                    opts.frames, opts.speed);
  return r;
}

}  // namespace mseg
