#include "lepa/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lepa/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace lepa {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

enum class PrimKind { kGrating, kPolygon, kBlob, kGradient };

const char* prim_name(PrimKind k) {
  switch (k) {
    case PrimKind::kGrating: return "grating";
    case PrimKind::kPolygon: return "polygon";
    case PrimKind::kBlob: return "blob";
    default: return "gradient";
  }
}

// One rendered primitive over the normalized [-1, 1]^2 frame, accumulated
// additively into the working buffer.
struct Primitive {
  PrimKind kind;
  double weight;
  double cx, cy, orient;
  double p0, p1, p2;  // kind-specific

  double eval(double x, double y) const {
    const double co = std::cos(orient);
    const double si = std::sin(orient);
    const double u = (x - cx) * co + (y - cy) * si;
    const double v = -(x - cx) * si + (y - cy) * co;
    switch (kind) {
      case PrimKind::kGrating:
        return 0.5 + 0.5 * std::sin(kTau * p0 * u + p1);
      case PrimKind::kPolygon: {
        // p0 = half width, p1 = half height, p2 = intensity: rotated box
        return (std::abs(u) <= p0 && std::abs(v) <= p1) ? p2 : 0.0;
      }
      case PrimKind::kBlob: {
        const double q = (u * u) / (p0 * p0) + (v * v) / (p1 * p1);
        return p2 * std::exp(-0.5 * q);
      }
      default:
        return 0.5 + p0 * u;  // linear gradient along the oriented axis
    }
  }

  void describe(std::ostringstream& os, int idx) const {
    os << " prim" << idx << ".kind=" << prim_name(kind)
       << " prim" << idx << ".weight=" << weight
       << " prim" << idx << ".cx=" << cx << " prim" << idx << ".cy=" << cy
       << " prim" << idx << ".orient=" << orient
       << " prim" << idx << ".p0=" << p0 << " prim" << idx << ".p1=" << p1
       << " prim" << idx << ".p2=" << p2;
  }
};

Primitive sample_primitive(Rng& rng, const std::array<double, 4>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double pick = rng.uniform() * total;
  int kind = 0;
  for (; kind < 3; ++kind) {
    if (pick < weights[kind]) break;
    pick -= weights[kind];
  }
  Primitive prim;
  prim.kind = static_cast<PrimKind>(kind);
  prim.weight = rng.uniform(0.5, 1.0);
  prim.cx = rng.uniform(-0.5, 0.5);
  prim.cy = rng.uniform(-0.5, 0.5);
  prim.orient = rng.uniform(0.0, kTau);
  switch (prim.kind) {
    case PrimKind::kGrating:
      // Several cycles per patch: embeddings that discard in-patch phase
      // cannot inpaint this, which keeps the encoder transform-sensitive.
      prim.p0 = rng.uniform(1.2, 4.0);   // cycles per unit
      prim.p1 = rng.uniform(0.0, kTau);  // phase
      prim.p2 = 0.0;
      break;
    case PrimKind::kPolygon:
      prim.p0 = rng.uniform(0.15, 0.5);
      prim.p1 = rng.uniform(0.15, 0.5);
      prim.p2 = rng.uniform(0.4, 1.0);
      break;
    case PrimKind::kBlob:
      prim.p0 = rng.uniform(0.1, 0.35);
      prim.p1 = rng.uniform(0.1, 0.35);
      prim.p2 = rng.uniform(0.5, 1.0);
      break;
    default:
      prim.p0 = rng.uniform(0.3, 0.8);
      prim.p1 = 0.0;
      prim.p2 = 0.0;
      break;
  }
  return prim;
}

float quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  const int byte = static_cast<int>(std::lround(clamped * 255.0));
  return static_cast<float>(byte) / 255.0f;
}

void append_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t take_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) {
    throw IoError(path + ": truncated header");
  }
  return v;
}

}  // namespace

GeneratedDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.n_images < 0 || spec.img_size <= 0 ||
      (spec.channels != 1 && spec.channels != 3)) {
    throw ConfigError("invalid dataset spec");
  }
  double wsum = 0.0;
  for (double w : spec.weights) {
    if (w < 0.0) throw ConfigError("dataset mix weights must be nonnegative");
    wsum += w;
  }
  if (wsum <= 0.0) throw ConfigError("dataset mix weights must sum to > 0");

  GeneratedDataset out;
  out.images.reserve(spec.n_images);
  out.metadata.reserve(spec.n_images);
  const int s = spec.img_size;
  std::vector<double> accum(static_cast<std::size_t>(s) * s);

  for (int n = 0; n < spec.n_images; ++n) {
    Rng rng = Rng(spec.seed).fork(0x646174).fork(static_cast<std::uint64_t>(n));
    const int n_prims = 3 + static_cast<int>(rng.uniform_int(3));
    std::vector<Primitive> prims;
    prims.reserve(n_prims);
    for (int k = 0; k < n_prims; ++k) {
      prims.push_back(sample_primitive(rng, spec.weights));
    }

    std::ostringstream meta;
    meta << "image=" << n << " primitives=" << n_prims;
    for (int k = 0; k < n_prims; ++k) prims[k].describe(meta, k);

    ImageTensor img = ImageTensor::zeros(spec.channels, s, s);
    std::array<double, 3> chan_gain = {1.0, 1.0, 1.0};
    for (int c = 1; c < spec.channels; ++c) chan_gain[c] = rng.uniform(0.6, 1.0);

    std::fill(accum.begin(), accum.end(), 0.0);
    double wtot = 0.0;
    for (const auto& prim : prims) wtot += prim.weight;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double xn = (2.0 * x - (s - 1)) / s;
        const double yn = (2.0 * y - (s - 1)) / s;
        double v = 0.0;
        for (const auto& prim : prims) v += prim.weight * prim.eval(xn, yn);
        accum[static_cast<std::size_t>(y) * s + x] = v / wtot;
      }
    }
    // Stretch to full contrast before quantization.
    const auto [mn_it, mx_it] = std::minmax_element(accum.begin(), accum.end());
    const double lo = *mn_it;
    const double range = std::max(*mx_it - lo, 1e-9);
    for (int c = 0; c < spec.channels; ++c) {
      float* plane = img.channel(c);
      for (std::size_t i = 0; i < accum.size(); ++i) {
        plane[i] = quantize(chan_gain[c] * (accum[i] - lo) / range);
      }
    }
    out.images.push_back(std::move(img));
    out.metadata.push_back(meta.str());
  }
  return out;
}

void write_pixmap(const std::string& path, const ImageTensor& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ConfigError("pixmap output supports 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {
int read_pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments per the PNM grammar.
  int ch = in.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
    }
    ch = in.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw IoError(path + ": malformed pixmap header");
  return value;
}
}  // namespace

ImageTensor read_pixmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  int channels = 0;
  if (magic[0] == 'P' && magic[1] == '5') channels = 1;
  else if (magic[0] == 'P' && magic[1] == '6') channels = 3;
  else throw IoError(path + ": not a binary P5/P6 pixmap");

  const int width = read_pnm_token(in, path);
  const int height = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path + ": unsupported pixmap header");
  }
  ImageTensor img = ImageTensor::zeros(channels, height, width);
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels);
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw IoError(path + ": truncated pixel data");
  }
  const float scale = static_cast<float>(maxval);
  std::size_t k = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = static_cast<float>(raw[k++]) / scale;
      }
    }
  }
  return img;
}

std::vector<ImageTensor> load_images(const std::string& dir, int expected_size,
                                     int expected_channels) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    std::cerr << "warning: no pixmap files in " << dir << "\n";
    return {};
  }
  std::vector<ImageTensor> images;
  images.reserve(paths.size());
  for (const auto& p : paths) {
    ImageTensor img = read_pixmap(p);
    if (img.height != expected_size || img.width != expected_size) {
      throw IoError(p + ": image size " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " does not match expected " +
                    std::to_string(expected_size));
    }
    if (img.channels != expected_channels) {
      throw IoError(p + ": channel count does not match expected " +
                    std::to_string(expected_channels));
    }
    images.push_back(std::move(img));
  }
  return images;
}

ChannelStats compute_channel_stats(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ConfigError("cannot compute stats of an empty set");
  const int channels = images[0].channels;
  ChannelStats stats;
  stats.mean.assign(channels, 0.0f);
  stats.std_dev.assign(channels, 0.0f);
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (const auto& img : images) {
      const float* plane = img.channel(c);
      const std::size_t n = img.pixel_count();
      for (std::size_t i = 0; i < n; ++i) {
        sum += plane[i];
        sq += static_cast<double>(plane[i]) * plane[i];
      }
      count += n;
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(sq / static_cast<double>(count) - mean * mean, 0.0);
    stats.mean[c] = static_cast<float>(mean);
    stats.std_dev[c] = static_cast<float>(std::sqrt(var));
  }
  return stats;
}

void normalize(ImageTensor& image, const ChannelStats& stats) {
  if (static_cast<int>(stats.mean.size()) != image.channels ||
      stats.std_dev.size() != stats.mean.size()) {
    throw ConfigError("normalization stats do not match channel count");
  }
  for (int c = 0; c < image.channels; ++c) {
    const float m = stats.mean[c];
    const float s = stats.std_dev[c];
    if (!(s > 0.0f) || !std::isfinite(s) || !std::isfinite(m)) {
      throw ConfigError("normalization std must be finite and positive");
    }
    float* plane = image.channel(c);
    const std::size_t n = image.pixel_count();
    for (std::size_t i = 0; i < n; ++i) plane[i] = (plane[i] - m) / s;
  }
}

void normalize(std::vector<ImageTensor>& images, const ChannelStats& stats) {
  for (auto& img : images) normalize(img, stats);
}

void write_grid(const std::string& path, const EmbeddingGrid& grid) {
  std::string buf;
  buf.reserve(20 + grid.data.size() * 4);
  buf.append("EGRD", 4);
  append_u32(buf, 1u);
  append_u32(buf, static_cast<std::uint32_t>(grid.grid_h));
  append_u32(buf, static_cast<std::uint32_t>(grid.grid_w));
  append_u32(buf, static_cast<std::uint32_t>(grid.dim));
  buf.append(reinterpret_cast<const char*>(grid.data.data()),
             grid.data.size() * sizeof(float));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

EmbeddingGrid read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "EGRD", 4) != 0) {
    throw IoError(path + ": not an embedding-grid file");
  }
  const std::uint32_t version = take_u32(in, path);
  if (version != 1u) {
    throw IoError(path + ": unsupported grid format version " +
                  std::to_string(version));
  }
  const std::uint32_t gh = take_u32(in, path);
  const std::uint32_t gw = take_u32(in, path);
  const std::uint32_t dim = take_u32(in, path);
  if (gh == 0 || gw == 0 || dim == 0) {
    throw IoError(path + ": degenerate grid dimensions");
  }
  EmbeddingGrid g = EmbeddingGrid::zeros(static_cast<int>(gh),
                                         static_cast<int>(gw),
                                         static_cast<int>(dim));
  if (!in.read(reinterpret_cast<char*>(g.data.data()),
               static_cast<std::streamsize>(g.data.size() * sizeof(float)))) {
    throw IoError(path + ": truncated payload");
  }
  char extra = 0;
  if (in.read(&extra, 1)) throw IoError(path + ": trailing bytes after payload");
  return g;
}

std::uint32_t crc32(const void* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::uint32_t crc32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string contents = buf.str();
  return crc32(contents.data(), contents.size());
}

}  // namespace lepa
