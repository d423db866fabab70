#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lepa/geometry.hpp"
#include "lepa/rng.hpp"

namespace lepa {

// Synthetic dataset recipe. Every generated image composites 2-5 primitives
// with continuous random position/orientation, which makes the content
// rotation-asymmetric and therefore transformation-identifiable.
struct DatasetSpec {
  int n_images = 256;
  int img_size = 32;
  int channels = 1;
  // Mix weights over {oriented gratings, filled polygons, Gaussian blobs,
  // linear gradients}; nonnegative, sum > 0.
  std::array<double, 4> weights = {1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
};

struct GeneratedDataset {
  std::vector<ImageTensor> images;     // values already quantized to 8 bits
  std::vector<std::string> metadata;   // one key=value line per image
};

// Deterministic given spec.seed; image values equal their on-disk pixmap
// representation exactly (quantized to maxval 255 and rescaled to [0,1]).
GeneratedDataset generate_dataset(const DatasetSpec& spec);

// Binary portable pixmaps, maxval 255. P5 for 1 channel, P6 for 3.
void write_pixmap(const std::string& path, const ImageTensor& img);
ImageTensor read_pixmap(const std::string& path);

// All .pgm/.ppm files in the directory, sorted by filename. Every image must
// already match expected_size (no resampling); values scaled to [0, 1].
// Empty directories yield an empty set with a warning on stderr.
std::vector<ImageTensor> load_images(const std::string& dir, int expected_size,
                                     int expected_channels);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std_dev;
};

ChannelStats compute_channel_stats(const std::vector<ImageTensor>& images);

// Per-channel (x - mean) / std in place. Zero or negative std is a
// configuration error.
void normalize(std::vector<ImageTensor>& images, const ChannelStats& stats);
void normalize(ImageTensor& image, const ChannelStats& stats);

// Embedding-grid file: magic "EGRD", u32 version, u32 grid_h/grid_w/dim,
// then row-major little-endian float32 payload. Round-trips bit-exactly.
void write_grid(const std::string& path, const EmbeddingGrid& grid);
EmbeddingGrid read_grid(const std::string& path);

std::uint32_t crc32(const void* data, std::size_t len);
std::uint32_t crc32_file(const std::string& path);

}  // namespace lepa
