#include "mseg/metrics.hpp"

#include <cmath>
#include <limits>

namespace mseg {

using i64 = std::int64_t;

void accumulate_confusion(std::vector<i64>& confusion, i64 num_classes, const LabelMap& pred,
                          const LabelMap& label, int ignore_index) {
  if (pred.height != label.height || pred.width != label.width)
    throw DimensionError("metrics: prediction " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " vs label " + std::to_string(label.height) +
                         "x" + std::to_string(label.width));
  if (confusion.size() != static_cast<std::size_t>(num_classes * num_classes))
    confusion.assign(static_cast<std::size_t>(num_classes * num_classes), 0);
  for (std::size_t i = 0; i < label.values.size(); ++i) {
    const int l = label.values[i];
    if (l == ignore_index) continue;
    const int p = pred.values[i];
    if (l < 0 || l >= num_classes || p < 0 || p >= num_classes)
      throw DataError("metrics: class value out of range at pixel " + std::to_string(i));
    ++confusion[static_cast<std::size_t>(l * num_classes + p)];
  }
}

SegMetrics metrics_from_confusion(std::vector<i64> confusion, i64 num_classes) {
  SegMetrics m;
  m.num_classes = num_classes;
  m.confusion = std::move(confusion);
  i64 total = 0, correct = 0;
  for (i64 k = 0; k < num_classes; ++k) {
    correct += m.at(k, k);
    for (i64 j = 0; j < num_classes; ++j) total += m.at(k, j);
  }
  if (total == 0) throw DataError("metrics: every pixel is ignored, metrics are undefined");
  m.pixel_acc = static_cast<double>(correct) / static_cast<double>(total);
  double sum = 0.0;
  i64 present = 0;
  for (i64 k = 0; k < num_classes; ++k) {
    i64 row = 0, col = 0;
    for (i64 j = 0; j < num_classes; ++j) {
      row += m.at(k, j);
      col += m.at(j, k);
    }
    const i64 tp = m.at(k, k);
    const i64 uni = row + col - tp;
    if (uni == 0) {
      m.per_class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    m.per_class_iou.push_back(iou);
    sum += iou;
    ++present;
  }
  m.miou = sum / static_cast<double>(present);
  return m;
}

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& label, i64 num_classes,
                           int ignore_index) {
  std::vector<i64> conf;
  accumulate_confusion(conf, num_classes, pred, label, ignore_index);
  return metrics_from_confusion(std::move(conf), num_classes);
}

// ---------------------------------------------------------------------------

namespace {

struct Tally {
  i64 params = 0;
  i64 macs = 0;

  void conv(i64 c_in, i64 c_out, i64 k, i64 out_pixels) {
    params += c_out * c_in * k * k + c_out;
    macs += c_out * c_in * k * k * out_pixels;
  }
  void norm(i64 c) { params += 2 * c; }
  void scan(i64 length, i64 d, i64 n) {
    params += d * d + 3 * n * d + 2 * d + 2 * n;
    macs += static_cast<i64>(scan_macs(length, d, n));
  }
  void ss2d(i64 c, i64 h, i64 w, i64 n) {
    for (int i = 0; i < 4; ++i) scan(h * w, c, n);
  }
  /// Parameters of a two-layer MLP; `uses` evaluations on C x 1 x 1 inputs.
  void mlp(i64 c_in, i64 hidden, i64 c_out, int uses) {
    params += c_in * hidden + hidden + hidden * c_out + c_out;
    macs += uses * (c_in * hidden + hidden * c_out);
  }
};

void branch(Tally& t, const ModelConfig& cfg, i64 c_in) {
  const i64 c1 = cfg.stages[0].channels;
  t.conv(c_in, c1, 3, (cfg.height / 2) * (cfg.width / 2));
  t.norm(c1);
  t.conv(c1, c1, 3, (cfg.height / 4) * (cfg.width / 4));
  t.norm(c1);
  i64 prev = c1;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& sc = cfg.stages[s];
    const i64 h = cfg.stage_height(s), w = cfg.stage_width(s);
    if (sc.downsample == 2) {
      t.conv(prev, sc.channels, 3, h * w);
      t.norm(sc.channels);
    } else if (sc.channels != prev) {
      t.conv(prev, sc.channels, 1, h * w);
      t.norm(sc.channels);
    }
    const i64 inner = cfg.expand * sc.channels;
    for (int b = 0; b < sc.blocks; ++b) {
      t.norm(sc.channels);
      t.conv(sc.channels, 2 * inner, 1, h * w);
      t.ss2d(inner, h, w, cfg.state_dim);
      t.conv(inner, sc.channels, 1, h * w);
    }
    prev = sc.channels;
  }
}

}  // namespace

ModelCost count_params_macs(const ModelConfig& cfg) {
  cfg.validate();
  Tally t;
  branch(t, cfg, cfg.time_bins);
  branch(t, cfg, cfg.image_channels);
  const i64 k = cfg.kernel;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const i64 c = cfg.stages[s].channels;
    const i64 h = cfg.stage_height(s), w = cfg.stage_width(s);
    if (cfg.enable_csim) {
      t.conv(6, 3, k, h * w);
      t.conv(3, 3, k, h * w);
      t.ss2d(2 * c, h, w, cfg.state_dim);
      t.conv(2, 1, k, h * w);
      t.conv(2, 1, k, h * w);
    }
    if (cfg.enable_ctim) {
      t.mlp(2 * c, ceil_div(2 * c, cfg.reduction), c, 2);
      t.scan(2 * c, h * w, cfg.state_dim);
      t.scan(2 * c, h * w, cfg.state_dim);
      t.mlp(c, ceil_div(c, cfg.reduction), c, 2);
      t.mlp(c, ceil_div(c, cfg.reduction), c, 2);
    }
  }
  const i64 quarter = (cfg.height / 4) * (cfg.width / 4);
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const i64 c = cfg.stages[s].channels;
    const i64 merged = cfg.merge == DecoderMerge::Sum ? c : 2 * c;
    t.conv(merged, cfg.decoder_embed, 1, cfg.stage_height(s) * cfg.stage_width(s));
  }
  t.conv(static_cast<i64>(cfg.stages.size()) * cfg.decoder_embed, cfg.decoder_embed, 1, quarter);
  t.conv(cfg.decoder_embed, cfg.num_classes, 1, quarter);
  return {t.params, t.macs};
}

}  // namespace mseg
