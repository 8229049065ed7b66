#include "mseg/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace mseg {

using json = nlohmann::json;
using i64 = std::int64_t;

// ---------------------------------------------------------------------------
// Config JSON

json to_json(const ModelConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages)
    stages.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"downsample", s.downsample}});
  return json{{"time_bins", cfg.time_bins},
              {"image_channels", cfg.image_channels},
              {"num_classes", cfg.num_classes},
              {"stages", stages},
              {"kernel", cfg.kernel},
              {"reduction", cfg.reduction},
              {"state_dim", cfg.state_dim},
              {"expand", cfg.expand},
              {"enable_csim", cfg.enable_csim},
              {"enable_ctim", cfg.enable_ctim},
              {"csim_first", cfg.csim_first},
              {"decoder_embed", cfg.decoder_embed},
              {"merge", cfg.merge == DecoderMerge::Sum ? "sum" : "concat"},
              {"height", cfg.height},
              {"width", cfg.width},
              {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "time_bins") c.time_bins = v.get<i64>();
      else if (key == "image_channels") c.image_channels = v.get<i64>();
      else if (key == "num_classes") c.num_classes = v.get<i64>();
      else if (key == "kernel") c.kernel = v.get<int>();
      else if (key == "reduction") c.reduction = v.get<i64>();
      else if (key == "state_dim") c.state_dim = v.get<i64>();
      else if (key == "expand") c.expand = v.get<i64>();
      else if (key == "enable_csim") c.enable_csim = v.get<bool>();
      else if (key == "enable_ctim") c.enable_ctim = v.get<bool>();
      else if (key == "csim_first") c.csim_first = v.get<bool>();
      else if (key == "decoder_embed") c.decoder_embed = v.get<i64>();
      else if (key == "height") c.height = v.get<i64>();
      else if (key == "width") c.width = v.get<i64>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "merge") {
        const auto m = v.get<std::string>();
        if (m == "sum") c.merge = DecoderMerge::Sum;
        else if (m == "concat") c.merge = DecoderMerge::Concat;
        else throw ConfigError("config: merge must be \"sum\" or \"concat\"");
      } else if (key == "stages") {
        if (!v.is_array()) throw ConfigError("config: stages must be an array");
        c.stages.clear();
        for (const auto& s : v) {
          if (!s.is_object()) throw ConfigError("config: each stage must be an object");
          StageConfig sc;
          for (const auto& [sk, sv] : s.items()) {
            if (sk == "channels") sc.channels = sv.get<i64>();
            else if (sk == "blocks") sc.blocks = sv.get<int>();
            else if (sk == "downsample") sc.downsample = sv.get<int>();
            else throw ConfigError("config: unknown stage key \"" + sk + "\"");
          }
          c.stages.push_back(sc);
        }
      } else {
        throw ConfigError("config: unknown key \"" + key + "\"");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t config_digest(const ModelConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("seed");
  const auto s = j.dump();
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Files and little-endian primitives

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

class Reader {
 public:
  Reader(const std::string& bytes, const char* what) : b_(bytes), what_(what) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw DataError(std::string(what_) + ": truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const auto v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void magic(const char* m) {
    if (bytes(4) != m) throw DataError(std::string(what_) + ": bad magic, expected " + m);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Voxels and checkpoints

std::string encode_voxels(const TensorF& grid) {
  if (grid.rank() != 3) throw DimensionError("voxel file: grid must be T x H x W");
  std::string out = "MSVG";
  for (auto d : grid.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : grid.data()) put_f32(out, v);
  return out;
}

TensorF decode_voxels(const std::string& bytes) {
  Reader r(bytes, "voxel file");
  r.magic("MSVG");
  const i64 t = r.u32(), h = r.u32(), w = r.u32();
  if (t < 1 || h < 1 || w < 1) throw DataError("voxel file: zero extent");
  r.need(static_cast<std::size_t>(t * h * w) * 4);
  std::vector<float> data(static_cast<std::size_t>(t * h * w));
  for (auto& v : data) v = r.f32();
  if (!r.done()) throw DataError("voxel file: trailing bytes");
  return TensorF({t, h, w}, std::move(data));
}

std::string encode_checkpoint(std::uint64_t digest, const std::vector<NamedTensor>& tensors) {
  std::string out = "MSWT";
  put_u64(out, digest);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
    out += nt.name;
    put_u32(out, static_cast<std::uint32_t>(nt.value.rank()));
    for (auto d : nt.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : nt.value.data()) put_f32(out, v);
  }
  return out;
}

std::pair<std::uint64_t, std::vector<NamedTensor>> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  r.magic("MSWT");
  const auto digest = r.u64();
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.u32());
    const auto rank = r.u32();
    if (rank < 1 || rank > 8) throw DataError("checkpoint: bad rank for " + nt.name);
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    r.need(static_cast<std::size_t>(shape_numel(shape)) * 4);
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = r.f32();
    nt.value = TensorF(shape, std::move(data));
    out.push_back(std::move(nt));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return {digest, std::move(out)};
}

std::string encode_weights(const ModelConfig& cfg, ModelWeights<float> w) {
  std::vector<NamedTensor> tensors;
  w.for_each([&](const std::string& name, TensorF& t) { tensors.push_back({name, t}); });
  return encode_checkpoint(config_digest(cfg), tensors);
}

ModelWeights<float> decode_weights(const ModelConfig& cfg, const std::string& bytes) {
  auto [digest, tensors] = decode_checkpoint(bytes);
  if (digest != config_digest(cfg))
    throw ConfigError("checkpoint was written for a different model config");
  auto w = ModelWeights<float>::init(cfg);
  std::size_t i = 0;
  w.for_each([&](const std::string& name, TensorF& t) {
    if (i >= tensors.size() || tensors[i].name != name || tensors[i].value.shape() != t.shape())
      throw ConfigError("checkpoint tensor mismatch at " + name);
    t = tensors[i++].value;
  });
  if (i != tensors.size()) throw ConfigError("checkpoint has extra tensors");
  return w;
}

// ---------------------------------------------------------------------------
// PNM

std::string encode_pnm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("pnm: channels must be 1 or 3");
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Image8 decode_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> i64 {
    skip();
    i64 v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])) && pos - start < 9)
      v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw DataError("pnm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw DataError("pnm: only binary P5/P6 images are supported");
  Image8 img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  img.width = number();
  img.height = number();
  const i64 maxval = number();
  if (img.width < 1 || img.height < 1) throw DataError("pnm: empty image");
  if (maxval != 255) throw DataError("pnm: maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw DataError("pnm: malformed header");
  ++pos;
  const auto n = static_cast<std::size_t>(img.width * img.height * img.channels);
  if (bytes.size() - pos != n) throw DataError("pnm: pixel data size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

Image8 labels_to_pgm(const LabelMap& labels, i64 num_classes) {
  const int step = static_cast<int>(255 / (num_classes - 1));
  Image8 img{labels.width, labels.height, 1, {}};
  for (int v : labels.values) {
    if (v < 0 || v >= num_classes) throw DataError("pgm: class out of range");
    img.pixels.push_back(static_cast<std::uint8_t>(v * step));
  }
  return img;
}

LabelMap pgm_to_labels(const Image8& img, i64 num_classes) {
  if (img.channels != 1) throw DataError("label image must be single-channel PGM");
  const int step = static_cast<int>(255 / (num_classes - 1));
  LabelMap out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const int v = img.pixels[i];
    out.values[i] = (v % step == 0 && v / step < num_classes) ? v / step : kIgnoreIndex;
  }
  return out;
}

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 11> kPalette = {{
    {0, 0, 0},       {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
    {145, 30, 180},  {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {128, 128, 128},
}};

}  // namespace

Image8 labels_to_ppm(const LabelMap& labels) {
  Image8 img{labels.width, labels.height, 3, {}};
  for (int v : labels.values) {
    const auto& c = kPalette[static_cast<std::size_t>(v < 0 ? 0 : v) % kPalette.size()];
    img.pixels.insert(img.pixels.end(), c.begin(), c.end());
  }
  return img;
}

TensorF image_to_tensor(const Image8& img) {
  const i64 px = img.width * img.height;
  TensorF t({img.channels, img.height, img.width});
  auto d = t.mutable_data();
  for (i64 i = 0; i < px; ++i)
    for (int c = 0; c < img.channels; ++c)
      d[static_cast<std::size_t>(c * px + i)] = img.pixels[static_cast<std::size_t>(i * img.channels + c)] / 255.0f;
  return t;
}

Image8 tensor_to_image(const TensorF& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw DimensionError("image tensor must be 1 x H x W or 3 x H x W");
  Image8 img{t.dim(2), t.dim(1), static_cast<int>(t.dim(0)), {}};
  const i64 px = img.width * img.height;
  const auto d = t.data();
  for (i64 i = 0; i < px; ++i)
    for (int c = 0; c < img.channels; ++c) {
      const float v = std::clamp(d[static_cast<std::size_t>(c * px + i)], 0.0f, 1.0f);
      img.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  return img;
}

json metrics_json(const SegMetrics& m) {
  json iou = json::array();
  for (double v : m.per_class_iou) iou.push_back(std::isnan(v) ? json(nullptr) : json(v));
  json conf = json::array();
  for (i64 r = 0; r < m.num_classes; ++r) {
    json row = json::array();
    for (i64 c = 0; c < m.num_classes; ++c) row.push_back(m.at(r, c));
    conf.push_back(row);
  }
  return json{{"miou", m.miou},         {"pixel_acc", m.pixel_acc}, {"per_class_iou", iou},
              {"params", m.params},     {"macs", m.macs},           {"confusion", conf}};
}

}  // namespace mseg
