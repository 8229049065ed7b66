#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mseg/metrics.hpp"
#include "mseg/model.hpp"

namespace mseg {

struct TrainOptions {
  int steps = 300;
  double lr = 1e-2;
  int batch = 4;
  int train_samples = 32;
  int eval_samples = 16;
  int frames = 10;
  int speed = 1;
};

struct TrainResult {
  ModelWeights<float> weights;
  std::vector<double> loss;      // steps + 1 minibatch losses, entry k after k updates
  std::vector<double> smoothed;  // running minimum of an exponential moving average of `loss`
  double initial_train_loss = 0.0;  // mean over the training set before any update
  double final_train_loss = 0.0;    // same, after the last update
  SegMetrics eval;                  // on held-out samples
};

/// Plain gradient descent on synthetic rectangle samples at the config's
/// resolution. Sample seeds derive from cfg.seed; training samples and
/// held-out samples never share a seed. A non-finite loss raises
/// NumericError naming the step.
TrainResult train_toy(const ModelConfig& cfg, const TrainOptions& opts,
                      const std::function<void(int, double)>& on_step = {});

/// Aggregate metrics of `weights` over `count` synthetic samples starting at
/// `first_seed`.
SegMetrics evaluate(const ModelConfig& cfg, const ModelWeights<float>& weights,
                    std::uint64_t first_seed, int count, int frames, int speed);

}  // namespace mseg
