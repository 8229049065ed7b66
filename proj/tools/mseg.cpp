// Command-line front end. Exit codes: 0 success, 2 usage or parse error,
// 3 config/weights mismatch, 4 numeric divergence, 5 verification failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mseg/events.hpp"
#include "mseg/gradcheck.hpp"
#include "mseg/io.hpp"
#include "mseg/metrics.hpp"
#include "mseg/model.hpp"
#include "mseg/scan.hpp"
#include "mseg/synthetic.hpp"
#include "mseg/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMismatch = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitVerify = 5;

struct UsageError : Error {
  using Error::Error;
};
struct MismatchError : Error {
  using Error::Error;
};
struct VerifyError : Error {
  using Error::Error;
};

// Everything a command can read from --config. Model keys go to
// ModelConfig; the rest are paths and command knobs.
struct RunConfig {
  ModelConfig model;
  std::string events, voxels, image, labels, weights;
  std::int64_t t0 = 0;
  std::int64_t t1 = 100'000;
  TrainOptions train;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + ": expected a JSON object");
  json model = json::object();
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "events") rc.events = v.get<std::string>();
      else if (key == "voxels") rc.voxels = v.get<std::string>();
      else if (key == "image") rc.image = v.get<std::string>();
      else if (key == "labels") rc.labels = v.get<std::string>();
      else if (key == "weights") rc.weights = v.get<std::string>();
      else if (key == "t0") rc.t0 = v.get<std::int64_t>();
      else if (key == "t1") rc.t1 = v.get<std::int64_t>();
      else if (key == "steps") rc.train.steps = v.get<int>();
      else if (key == "lr") rc.train.lr = v.get<double>();
      else if (key == "batch") rc.train.batch = v.get<int>();
      else if (key == "train_samples") rc.train.train_samples = v.get<int>();
      else if (key == "eval_samples") rc.train.eval_samples = v.get<int>();
      else if (key == "frames") rc.train.frames = v.get<int>();
      else if (key == "speed") rc.train.speed = v.get<int>();
      else model[key] = v;
    }
    rc.model = model_config_from_json(model);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return rc;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string checksum(const std::string& bytes) { return hex64(fnv1a64(bytes.data(), bytes.size())); }

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir = ".";
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
};

class Printer {
 public:
  explicit Printer(const Globals& g) : quiet_(g.quiet) {}
  template <typename... A>
  void operator()(const A&... parts) const {
    if (quiet_) return;
    (std::cout << ... << parts) << '\n';
  }

 private:
  bool quiet_;
};

RunConfig resolve(const Globals& g) {
  auto rc = load_run_config(g.config);
  if (g.seed_opt->count()) rc.model.seed = g.seed;
  return rc;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

template <typename V>
void override_if(const CLI::Option* opt, V& target, const V& value) {
  if (opt->count()) target = value;
}

LabelMap read_labels(const std::string& path, std::int64_t k) {
  return pgm_to_labels(decode_pnm(read_file(path)), k);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale MambaSeg: voxelization, dual-branch segmentation and checks"};
  app.require_subcommand(1);
  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random draw (overrides config)");
  app.add_option("--config", g.config, "RunConfig JSON (model keys plus paths and knobs)");
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress informational output");

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "Accumulate a text event file into an MSVG voxel grid");
  std::string vox_events, vox_out = "voxels.msvg";
  std::int64_t vox_t0 = 0, vox_t1 = 0, vox_bins = 10;
  vox->add_option("--events", vox_events, "Event text file")->required();
  vox->add_option("--t0", vox_t0, "Window start (us, inclusive)")->required();
  vox->add_option("--t1", vox_t1, "Window end (us, exclusive)")->required();
  vox->add_option("--bins", vox_bins, "Temporal bins")->capture_default_str();
  vox->add_option("--out", vox_out, "Output file name inside --out-dir")->capture_default_str();

  // forward
  auto* fwd = app.add_subcommand("forward", "Run the model and write the predicted class map");
  std::string fwd_weights, fwd_events, fwd_voxels, fwd_image;
  std::int64_t fwd_t0 = 0, fwd_t1 = 0;
  bool fwd_render = false;
  auto* fwd_weights_opt = fwd->add_option("--weights", fwd_weights, "MSWT checkpoint (seeded init if absent)");
  auto* fwd_events_opt = fwd->add_option("--events", fwd_events, "Event text file");
  auto* fwd_voxels_opt = fwd->add_option("--voxels", fwd_voxels, "MSVG voxel grid");
  auto* fwd_image_opt = fwd->add_option("--image", fwd_image, "PGM/PPM image");
  auto* fwd_t0_opt = fwd->add_option("--t0", fwd_t0, "Event window start (us), default 0");
  auto* fwd_t1_opt = fwd->add_option("--t1", fwd_t1, "Event window end (us), default 100000");
  fwd->add_flag("--render", fwd_render, "Also write a palette PPM render");

  // train-toy
  auto* trn = app.add_subcommand("train-toy", "Gradient descent on synthetic rectangle data");
  int trn_steps = 0, trn_batch = 0, trn_train = 0, trn_eval = 0;
  double trn_lr = 0;
  auto* trn_steps_opt = trn->add_option("--steps", trn_steps, "Update steps, default 300");
  auto* trn_lr_opt = trn->add_option("--lr", trn_lr, "Learning rate, default 0.01");
  auto* trn_batch_opt = trn->add_option("--batch", trn_batch, "Samples per step, default 4");
  auto* trn_train_opt = trn->add_option("--train-samples", trn_train, "Training set size, default 32");
  auto* trn_eval_opt = trn->add_option("--eval-samples", trn_eval, "Held-out set size, default 16");

  // bench-scan
  auto* bench = app.add_subcommand("bench-scan", "Time the sequential scan over lengths");
  std::vector<std::int64_t> bench_lengths = {1024, 2048, 4096, 8192};
  std::int64_t bench_d = 16, bench_n = 8;
  int bench_repeats = 9;
  std::string bench_out = "bench_scan.csv";
  bench->add_option("--lengths", bench_lengths, "Strictly ascending sequence lengths")->capture_default_str();
  bench->add_option("--channels", bench_d, "D")->capture_default_str();
  bench->add_option("--state", bench_n, "N")->capture_default_str();
  bench->add_option("--repeats", bench_repeats, "Timed repeats per length (median)")->capture_default_str();
  bench->add_option("--out", bench_out, "CSV file name inside --out-dir")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::string gc_scope;
  gc->add_option("--scope", gc_scope, "tensor, scan, ss2d, csim, ctim or model")
      ->required()
      ->check(CLI::IsMember(gradcheck_scopes()));

  // metrics
  auto* met = app.add_subcommand("metrics", "mIoU and pixel accuracy of two PGM class maps");
  std::string met_pred, met_label, met_out = "metrics.json";
  std::int64_t met_k = 0;
  met->add_option("--pred", met_pred, "Predicted class PGM")->required();
  met->add_option("--label", met_label, "Label class PGM")->required();
  auto* met_k_opt = met->add_option("--classes", met_k, "K (default from config)");
  met->add_option("--out", met_out, "JSON file name inside --out-dir")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write one synthetic sample (events, image, label)");
  int gen_frames = 10, gen_speed = 1;
  gen->add_option("--frames", gen_frames, "Frames")->capture_default_str();
  gen->add_option("--speed", gen_speed, "Pixels per frame")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  const Printer say(g);
  try {
    if (vox->parsed()) {
      if (vox_t1 <= vox_t0) throw UsageError("voxelize: --t1 must be greater than --t0");
      if (vox_bins < 1) throw UsageError("voxelize: --bins must be >= 1");
      std::ifstream in(vox_events);
      if (!in) throw UsageError("cannot open " + vox_events);
      const auto stream = read_events_text(in);
      const auto grid = voxelize(stream, vox_t0, vox_t1, vox_bins);
      const auto bytes = encode_voxels(grid.data);
      write_file(out_path(g, vox_out).string(), bytes);
      double total = 0.0;
      for (float v : grid.data.data()) total += v;
      say("events=", stream.events.size(), " in_window=", grid.in_window, " sum=", total,
          " checksum=", checksum(bytes));
      return 0;
    }

    if (fwd->parsed()) {
      auto rc = resolve(g);
      override_if(fwd_weights_opt, rc.weights, fwd_weights);
      override_if(fwd_events_opt, rc.events, fwd_events);
      override_if(fwd_voxels_opt, rc.voxels, fwd_voxels);
      override_if(fwd_image_opt, rc.image, fwd_image);
      override_if(fwd_t0_opt, rc.t0, fwd_t0);
      override_if(fwd_t1_opt, rc.t1, fwd_t1);
      const auto& cfg = rc.model;
      ModelWeights<float> w;
      if (rc.weights.empty()) {
        w = ModelWeights<float>::init(cfg);
      } else {
        try {
          w = decode_weights(cfg, read_file(rc.weights));
        } catch (const ConfigError& e) {
          throw MismatchError(e.what());
        }
      }
      TensorF voxels, image;
      if (!rc.events.empty() && !rc.voxels.empty())
        throw UsageError("forward: give either events or voxels, not both");
      const bool have_events = !rc.events.empty() || !rc.voxels.empty();
      if (have_events != !rc.image.empty())
        throw UsageError("forward: events/voxels and image must be given together");
      if (have_events) {
        if (!rc.voxels.empty()) {
          voxels = decode_voxels(read_file(rc.voxels));
        } else {
          if (rc.t1 <= rc.t0) throw UsageError("forward: t1 must be greater than t0");
          std::ifstream in(rc.events);
          if (!in) throw UsageError("cannot open " + rc.events);
          voxels = voxelize(read_events_text(in), rc.t0, rc.t1, cfg.time_bins).data;
        }
        image = image_to_tensor(decode_pnm(read_file(rc.image)));
      } else {
        const auto s = gen_synthetic(cfg.seed, cfg.height, cfg.width, rc.train.frames, rc.train.speed);
        const auto in = to_model_input(s, cfg.time_bins);
        voxels = in.voxels;
        image = in.image;
      }
      if (voxels.shape() != Shape{cfg.time_bins, cfg.height, cfg.width} ||
          image.shape() != Shape{cfg.image_channels, cfg.height, cfg.width})
        throw UsageError("forward: inputs voxels " + shape_str(voxels.shape()) + " / image " +
                         shape_str(image.shape()) + " do not match the config");
      const auto pred = argmax(forward(cfg, w, voxels, image).logits);
      write_file(out_path(g, "pred.pgm").string(), encode_pnm(labels_to_pgm(pred, cfg.num_classes)));
      if (fwd_render) write_file(out_path(g, "pred.ppm").string(), encode_pnm(labels_to_ppm(pred)));
      const auto cost = count_params_macs(cfg);
      say("params=", cost.params, " macs=", cost.macs);
      return 0;
    }

    if (trn->parsed()) {
      auto rc = resolve(g);
      override_if(trn_steps_opt, rc.train.steps, trn_steps);
      override_if(trn_lr_opt, rc.train.lr, trn_lr);
      override_if(trn_batch_opt, rc.train.batch, trn_batch);
      override_if(trn_train_opt, rc.train.train_samples, trn_train);
      override_if(trn_eval_opt, rc.train.eval_samples, trn_eval);
      if (rc.train.steps < 0) throw UsageError("train-toy: --steps must be >= 0");
      const auto result = train_toy(rc.model, rc.train);
      std::ostringstream csv;
      csv << "step,loss\n" << std::setprecision(9);
      for (std::size_t i = 0; i < result.loss.size(); ++i) csv << i << ',' << result.loss[i] << '\n';
      write_file(out_path(g, "loss.csv").string(), csv.str());
      write_file(out_path(g, "weights.mswt").string(), encode_weights(rc.model, result.weights));
      write_file(out_path(g, "metrics.json").string(), metrics_json(result.eval).dump(2) + "\n");
      say("steps=", rc.train.steps, " loss_start=", result.initial_train_loss,
          " loss_end=", result.final_train_loss, " miou=", result.eval.miou,
          " pixel_acc=", result.eval.pixel_acc);
      return 0;
    }

    if (bench->parsed()) {
      const auto rows = bench_scan(bench_lengths, bench_d, bench_n, bench_repeats, g.seed);
      write_file(out_path(g, bench_out).string(), bench_csv(rows));
      const double ratio = doubling_ratio(rows);
      if (ratio < 0) {
        say("doubling ratio: n/a (the two largest lengths are not L and 2L)");
        return 0;
      }
      const bool ok = ratio >= kDoublingRatioMin && ratio <= kDoublingRatioMax;
      say("doubling ratio ", rows[rows.size() - 2].length, " -> ", rows.back().length, ": ", ratio,
          ok ? " PASS" : " FAIL", " (expected [", kDoublingRatioMin, ", ", kDoublingRatioMax, "])");
      if (!ok) throw VerifyError("bench-scan: doubling ratio outside the linear band");
      return 0;
    }

    if (gc->parsed()) {
      const auto results = run_gradcheck_suite(gc_scope, g.seed);
      std::vector<std::string> failing;
      for (const auto& r : results) {
        std::ostringstream line;
        line << std::left << std::setw(22) << r.op << " max_rel_err=" << std::scientific
             << std::setprecision(3) << r.max_rel_err << " coords=" << r.coords
             << (r.passed() ? " ok" : " FAIL");
        say(line.str());
        if (!r.passed()) failing.push_back(r.op);
      }
      if (!failing.empty()) {
        std::string list;
        for (const auto& f : failing) list += (list.empty() ? "" : ", ") + f;
        throw VerifyError("gradcheck failed: " + list);
      }
      return 0;
    }

    if (met->parsed()) {
      const auto rc = resolve(g);
      const std::int64_t k = met_k_opt->count() ? met_k : rc.model.num_classes;
      if (k < 2 || k > 255) throw UsageError("metrics: --classes must be in [2, 255]");
      const auto pred = read_labels(met_pred, k);
      const auto label = read_labels(met_label, k);
      if (pred.height != label.height || pred.width != label.width)
        throw UsageError("metrics: prediction and label sizes differ");
      auto m = compute_metrics(pred, label, k);
      const auto cost = count_params_macs(rc.model);
      m.params = cost.params;
      m.macs = cost.macs;
      const auto text = metrics_json(m).dump(2) + "\n";
      write_file(out_path(g, met_out).string(), text);
      say(text.substr(0, text.size() - 1));
      return 0;
    }

    if (gen->parsed()) {
      const auto rc = resolve(g);
      const auto s = gen_synthetic(rc.model.seed, rc.model.height, rc.model.width, gen_frames, gen_speed);
      std::ostringstream ev;
      write_events_text(ev, s.events);
      write_file(out_path(g, "events.txt").string(), ev.str());
      write_file(out_path(g, "image.pgm").string(), encode_pnm(tensor_to_image(s.image)));
      write_file(out_path(g, "label.pgm").string(), encode_pnm(labels_to_pgm(s.label, 2)));
      say("events=", s.events.events.size(), " window=[", s.t0, ", ", s.t1, ") rect=", s.rect_w,
          "x", s.rect_h, " at (", s.rect_x, ", ", s.rect_y, ")");
      return 0;
    }
  } catch (const MismatchError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMismatch;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const VerifyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitVerify;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
