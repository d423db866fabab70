#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "lepa/rng.hpp"

namespace lepa {

// Affine transformation about the image center, applied in the order
// scale, then rotate, then translate. A positive angle is a counterclockwise
// rotation of the content; translation is a fraction of the image extent so
// the parameters are resolution independent.
struct TransformParams {
  double tx = 0.0;     // fraction of width
  double ty = 0.0;     // fraction of height
  double angle = 0.0;  // radians
  double scale = 1.0;

  static TransformParams identity() { return {}; }

  std::array<double, 4> as_vector() const { return {tx, ty, angle, scale}; }

  bool is_identity() const {
    return tx == 0.0 && ty == 0.0 && angle == 0.0 && scale == 1.0;
  }

  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

// Throws ConfigError if any field is non-finite or scale <= 0.
void validate(const TransformParams& p);

// Per-field sampling intervals. Defaults keep most image content in-frame.
struct TransformRanges {
  double tx_min = -0.25, tx_max = 0.25;
  double ty_min = -0.25, ty_max = 0.25;
  double angle_min = -1.5707963267948966, angle_max = 1.5707963267948966;
  double scale_min = 0.7, scale_max = 1.4;
};

// Dense multi-channel raster; channel-major, row-major within a channel.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  static ImageTensor zeros(int channels, int height, int width);

  float& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float* channel(int c) {
    return values.data() + static_cast<std::size_t>(c) * height * width;
  }
  const float* channel(int c) const {
    return values.data() + static_cast<std::size_t>(c) * height * width;
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

// Grid of patch-embedding vectors; patches row-major, embedding dim fastest.
struct EmbeddingGrid {
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
  std::vector<float> data;

  static EmbeddingGrid zeros(int grid_h, int grid_w, int dim);

  float* vec(int i, int j) {
    return data.data() + (static_cast<std::size_t>(i) * grid_w + j) * dim;
  }
  const float* vec(int i, int j) const {
    return data.data() + (static_cast<std::size_t>(i) * grid_w + j) * dim;
  }
  int n_patches() const { return grid_h * grid_w; }

  // Row-major patch order, dim fastest; this is the flattened vector used
  // for cosine-similarity comparisons.
  const std::vector<float>& flatten() const { return data; }

  friend bool operator==(const EmbeddingGrid&, const EmbeddingGrid&) = default;
};

enum class Interp { kNearest, kBilinear };

// "nearest" | "bilinear"; anything else throws ConfigError.
Interp interp_from_string(const std::string& s);
std::string to_string(Interp mode);

// Shared inverse-mapped affine sampling kernel. Both warp_image and
// resample_grid route through this function so that warping a
// (grid_h x grid_w)-pixel D-channel image and resampling the grid are
// bit-identical. Out-of-frame samples fill with zero.
void affine_sample_plane(const float* src, int height, int width,
                         const TransformParams& p, Interp mode, float* dst);

// Bilinear warp of every channel; output shape equals input shape.
ImageTensor warp_image(const ImageTensor& img, const TransformParams& p);

// Parameters of the inverse transform. Exact for square frames; the
// translation fractions assume width == height because (tx, ty) are stored
// relative to the frame extent.
TransformParams invert(const TransformParams& p);

// k counterclockwise quarter-turns of the grid layout. Pure permutation:
// vector contents are untouched, which is exactly why this is a poor
// stand-in for true equivariance.
EmbeddingGrid rot90_grid(const EmbeddingGrid& g, int k);

// Treats each embedding vector as a multi-channel pixel at its patch center
// and applies the shared affine kernel per embedding dimension.
EmbeddingGrid resample_grid(const EmbeddingGrid& g, const TransformParams& p,
                            Interp mode);

// Each field drawn independently and uniformly from its interval, in the
// order tx, ty, angle, scale. Empty intervals throw ConfigError.
TransformParams sample_transform(Rng& rng, const TransformRanges& ranges);

}  // namespace lepa
