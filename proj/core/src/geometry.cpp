#include "lepa/geometry.hpp"

#include <cmath>
#include <cstring>

#include "lepa/errors.hpp"

namespace lepa {

void validate(const TransformParams& p) {
  if (!std::isfinite(p.tx) || !std::isfinite(p.ty) || !std::isfinite(p.angle) ||
      !std::isfinite(p.scale)) {
    throw ConfigError("transform parameters must be finite");
  }
  if (p.scale <= 0.0) {
    throw ConfigError("transform scale must be positive");
  }
}

ImageTensor ImageTensor::zeros(int channels, int height, int width) {
  ImageTensor img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.values.assign(static_cast<std::size_t>(channels) * height * width, 0.0f);
  return img;
}

EmbeddingGrid EmbeddingGrid::zeros(int grid_h, int grid_w, int dim) {
  EmbeddingGrid g;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.dim = dim;
  g.data.assign(static_cast<std::size_t>(grid_h) * grid_w * dim, 0.0f);
  return g;
}

Interp interp_from_string(const std::string& s) {
  if (s == "nearest") return Interp::kNearest;
  if (s == "bilinear") return Interp::kBilinear;
  throw ConfigError("unknown interpolation mode: " + s);
}

std::string to_string(Interp mode) {
  return mode == Interp::kNearest ? "nearest" : "bilinear";
}

void affine_sample_plane(const float* src, int height, int width,
                         const TransformParams& p, Interp mode, float* dst) {
  // Inverse mapping: for each output pixel, find the source location under
  // the inverse of (scale, rotate, translate) about the frame center. The
  // image y axis points down, so a visually counterclockwise rotation by
  // `angle` uses R = [[cos, sin], [-sin, cos]] forward and its transpose here.
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  const double tx_pix = p.tx * width;
  const double ty_pix = p.ty * height;
  const double c = std::cos(p.angle);
  const double s = std::sin(p.angle);
  const double inv_scale = 1.0 / p.scale;

  for (int r = 0; r < height; ++r) {
    for (int col = 0; col < width; ++col) {
      const double dx = col - cx - tx_pix;
      const double dy = r - cy - ty_pix;
      const double sx = cx + (c * dx - s * dy) * inv_scale;
      const double sy = cy + (s * dx + c * dy) * inv_scale;
      float out = 0.0f;
      if (mode == Interp::kNearest) {
        const long nx = std::lround(sx);
        const long ny = std::lround(sy);
        if (nx >= 0 && nx < width && ny >= 0 && ny < height) {
          out = src[ny * width + nx];
        }
      } else {
        const double fx = std::floor(sx);
        const double fy = std::floor(sy);
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const double ax = sx - fx;
        const double ay = sy - fy;
        double acc = 0.0;
        for (int dyi = 0; dyi <= 1; ++dyi) {
          for (int dxi = 0; dxi <= 1; ++dxi) {
            const int xs = x0 + dxi;
            const int ys = y0 + dyi;
            if (xs < 0 || xs >= width || ys < 0 || ys >= height) continue;
            const double w =
                (dxi ? ax : 1.0 - ax) * (dyi ? ay : 1.0 - ay);
            acc += w * src[ys * width + xs];
          }
        }
        out = static_cast<float>(acc);
      }
      dst[r * width + col] = out;
    }
  }
}

ImageTensor warp_image(const ImageTensor& img, const TransformParams& p) {
  validate(p);
  ImageTensor out = ImageTensor::zeros(img.channels, img.height, img.width);
  for (int ch = 0; ch < img.channels; ++ch) {
    affine_sample_plane(img.channel(ch), img.height, img.width, p,
                        Interp::kBilinear, out.channel(ch));
  }
  return out;
}

TransformParams invert(const TransformParams& p) {
  validate(p);
  TransformParams q;
  q.scale = 1.0 / p.scale;
  q.angle = -p.angle;
  // Forward: y = R(a) * (s * x) + t  =>  x = R(-a) * (y - t) / s.
  // R(-a) in image coordinates (y down) applied to -t:
  const double c = std::cos(p.angle);
  const double s = std::sin(p.angle);
  q.tx = (-c * p.tx + s * p.ty) / p.scale;
  q.ty = (-s * p.tx - c * p.ty) / p.scale;
  return q;
}

EmbeddingGrid rot90_grid(const EmbeddingGrid& g, int k) {
  int r = ((k % 4) + 4) % 4;
  if (r == 0) return g;
  EmbeddingGrid out;
  const bool swap = (r % 2) == 1;
  out.grid_h = swap ? g.grid_w : g.grid_h;
  out.grid_w = swap ? g.grid_h : g.grid_w;
  out.dim = g.dim;
  out.data.resize(g.data.size());
  const std::size_t row_bytes = static_cast<std::size_t>(g.dim) * sizeof(float);
  for (int i = 0; i < out.grid_h; ++i) {
    for (int j = 0; j < out.grid_w; ++j) {
      int si = 0, sj = 0;
      switch (r) {
        case 1:  // out(i, j) = in(j, W-1-i)
          si = j;
          sj = g.grid_w - 1 - i;
          break;
        case 2:
          si = g.grid_h - 1 - i;
          sj = g.grid_w - 1 - j;
          break;
        default:  // 3: out(i, j) = in(H-1-j, i)
          si = g.grid_h - 1 - j;
          sj = i;
          break;
      }
      std::memcpy(out.vec(i, j), g.vec(si, sj), row_bytes);
    }
  }
  return out;
}

EmbeddingGrid resample_grid(const EmbeddingGrid& g, const TransformParams& p,
                            Interp mode) {
  validate(p);
  EmbeddingGrid out = EmbeddingGrid::zeros(g.grid_h, g.grid_w, g.dim);
  const int n = g.n_patches();
  std::vector<float> plane(n);
  std::vector<float> sampled(n);
  for (int d = 0; d < g.dim; ++d) {
    for (int idx = 0; idx < n; ++idx) {
      plane[idx] = g.data[static_cast<std::size_t>(idx) * g.dim + d];
    }
    affine_sample_plane(plane.data(), g.grid_h, g.grid_w, p, mode,
                        sampled.data());
    for (int idx = 0; idx < n; ++idx) {
      out.data[static_cast<std::size_t>(idx) * g.dim + d] = sampled[idx];
    }
  }
  return out;
}

namespace {
double sample_interval(Rng& rng, double lo, double hi, const char* name) {
  if (!(lo <= hi)) {
    throw ConfigError(std::string("empty sampling interval for ") + name);
  }
  if (lo == hi) return lo;
  return rng.uniform(lo, hi);
}
}  // namespace

TransformParams sample_transform(Rng& rng, const TransformRanges& ranges) {
  TransformParams p;
  p.tx = sample_interval(rng, ranges.tx_min, ranges.tx_max, "tx");
  p.ty = sample_interval(rng, ranges.ty_min, ranges.ty_max, "ty");
  p.angle = sample_interval(rng, ranges.angle_min, ranges.angle_max, "angle");
  p.scale = sample_interval(rng, ranges.scale_min, ranges.scale_max, "scale");
  validate(p);
  return p;
}

}  // namespace lepa
