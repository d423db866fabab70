#include "lepa/posenc.hpp"

#include <cmath>

#include "lepa/errors.hpp"

namespace lepa {

std::vector<double> sincos_1d(double pos, int half_dim) {
  if (half_dim <= 0 || half_dim % 2 != 0) {
    throw ConfigError("sincos_1d requires a positive even half_dim");
  }
  std::vector<double> out(half_dim);
  for (int i = 0; i < half_dim / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / half_dim);
    out[2 * i] = std::sin(pos / freq);
    out[2 * i + 1] = std::cos(pos / freq);
  }
  return out;
}

CoordGrid default_grid(int grid_h, int grid_w) {
  if (grid_h <= 0 || grid_w <= 0) {
    throw ConfigError("grid dimensions must be positive");
  }
  CoordGrid g;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.coords.reserve(static_cast<std::size_t>(grid_h) * grid_w);
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      g.coords.push_back({static_cast<double>(i), static_cast<double>(j)});
    }
  }
  return g;
}

CoordGrid centered_grid(int grid_h, int grid_w) {
  CoordGrid g = default_grid(grid_h, grid_w);
  const double ch = 0.5 * (grid_h - 1);
  const double cw = 0.5 * (grid_w - 1);
  for (auto& c : g.coords) {
    c[0] -= ch;
    c[1] -= cw;
  }
  return g;
}

CoordGrid transform_coord_grid(const CoordGrid& g, const TransformParams& p) {
  validate(p);
  if (p.is_identity()) return g;
  // Same forward convention as warp_image: x = w, y = h, y axis down,
  // positive angle visually counterclockwise.
  const double c = std::cos(p.angle);
  const double s = std::sin(p.angle);
  CoordGrid out = g;
  for (auto& coord : out.coords) {
    const double y = coord[0] * p.scale;
    const double x = coord[1] * p.scale;
    const double xn = c * x + s * y + p.tx * g.grid_w;
    const double yn = -s * x + c * y + p.ty * g.grid_h;
    coord = {yn, xn};
  }
  return out;
}

PosEncoding encode_coords(const CoordGrid& g, int dim) {
  if (dim <= 0 || dim % 4 != 0) {
    throw ConfigError("positional encoding dim must be divisible by 4");
  }
  PosEncoding enc;
  enc.grid_h = g.grid_h;
  enc.grid_w = g.grid_w;
  enc.dim = dim;
  enc.values.resize(g.coords.size() * static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (std::size_t idx = 0; idx < g.coords.size(); ++idx) {
    const auto h_enc = sincos_1d(g.coords[idx][0], half);
    const auto w_enc = sincos_1d(g.coords[idx][1], half);
    double* dst = enc.values.data() + idx * dim;
    for (int k = 0; k < half; ++k) dst[k] = h_enc[k];
    for (int k = 0; k < half; ++k) dst[half + k] = w_enc[k];
  }
  return enc;
}

PosEncoding default_pos_encodings(int grid_h, int grid_w, int dim) {
  return encode_coords(default_grid(grid_h, grid_w), dim);
}

PosEncoding cond_pos_encodings(int grid_h, int grid_w, int dim,
                               const TransformParams& p) {
  return encode_coords(transform_coord_grid(centered_grid(grid_h, grid_w), p),
                       dim);
}

}  // namespace lepa
