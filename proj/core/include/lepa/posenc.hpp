#pragma once

#include <array>
#include <vector>

#include "lepa/geometry.hpp"

namespace lepa {

// Per-patch (h, w) coordinates, row-major. The default variant indexes
// patches from the corner; the centered variant is symmetric about (0, 0),
// which is what makes it transformable.
struct CoordGrid {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::array<double, 2>> coords;  // (h, w)

  const std::array<double, 2>& at(int i, int j) const {
    return coords[static_cast<std::size_t>(i) * grid_w + j];
  }
};

// Sinusoidal encoding per patch; the first dim/2 entries encode the
// h coordinate, the last dim/2 the w coordinate.
struct PosEncoding {
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
  std::vector<double> values;

  const double* vec(int i, int j) const {
    return values.data() + (static_cast<std::size_t>(i) * grid_w + j) * dim;
  }
  int n_patches() const { return grid_h * grid_w; }
};

// entry 2i = sin(pos / 10000^(2i/half_dim)), entry 2i+1 = cos(...).
// half_dim must be even.
std::vector<double> sincos_1d(double pos, int half_dim);

CoordGrid default_grid(int grid_h, int grid_w);
CoordGrid centered_grid(int grid_h, int grid_w);

// Forward-transforms every coordinate: where each patch lands under the
// image-space transform. Translation is expressed in patch units
// (tx * grid_w, ty * grid_h).
CoordGrid transform_coord_grid(const CoordGrid& g, const TransformParams& p);

// Concatenated h/w sinusoidal encodings evaluated on an arbitrary coordinate
// grid. dim must be divisible by 4.
PosEncoding encode_coords(const CoordGrid& g, int dim);

// Standard ViT construction: default corner-indexed grid.
PosEncoding default_pos_encodings(int grid_h, int grid_w, int dim);

// Conditioned encodings: the centered grid transformed by p. With
// p = identity this equals the centered-grid baseline bit-exactly.
PosEncoding cond_pos_encodings(int grid_h, int grid_w, int dim,
                               const TransformParams& p);

}  // namespace lepa
