#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lepa/data_io.hpp"
#include "lepa/geometry.hpp"
#include "lepa/nn.hpp"
#include "lepa/rng.hpp"

namespace lepa::eval {

// Behavioral contract: given an image, its encoder embedding grid, and
// transform parameters, produce the predicted embedding grid of the
// transformed image. Implementations must be safe to call concurrently.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual EmbeddingGrid predict(const ImageTensor& img,
                                const EmbeddingGrid& encoder_grid,
                                const TransformParams& p) const = 0;
  virtual std::string name() const = 0;
};

// Resamples the encoder grid geometrically; ignores any learned predictor.
std::unique_ptr<Predictor> interpolation_predictor(Interp mode);

// Student-encodes the unmodified image and runs the conditioned predictor
// over every grid position. The state must outlive the predictor.
std::unique_ptr<Predictor> learned_predictor(const nn::ModelState<float>& state);

// Calibration: returns the teacher embedding of the actually transformed
// image, so retrieval is perfect by construction.
std::unique_ptr<Predictor> oracle_predictor(const nn::ModelState<float>& state);

// Calibration: i.i.d. standard normal vectors, deterministic in
// (seed, image, params).
std::unique_ptr<Predictor> random_predictor(std::uint64_t seed, int grid_side,
                                            int dim);

// Runs the trained predictor directly on a stored embedding grid (the
// deployment path: no image, no encoder pass). The grid is fed to the
// cross-attention context in place of the student encoding.
EmbeddingGrid predict_from_grid(const nn::ModelState<float>& state,
                                const EmbeddingGrid& grid,
                                const TransformParams& p);

// Teacher embeddings of warp_image(img, p) for each p, order preserved.
// Parameters must be pairwise distinct.
std::vector<EmbeddingGrid> candidate_embeddings(
    const nn::ModelState<float>& state, const ImageTensor& img,
    const std::vector<TransformParams>& params_list);

// 1-based rank of the target candidate by cosine similarity of flattened
// grids to the prediction. Ties count against the target.
int rank_of_target(const EmbeddingGrid& predicted,
                   const std::vector<EmbeddingGrid>& candidates,
                   int target_index);

struct MrrReport {
  int n_images = 0;
  int n_candidates = 0;
  std::vector<int> ranks;                // 1-based, per image
  std::vector<double> reciprocal_ranks;  // per image
  double mrr = 0.0;

  // Aggregate recomputed from the stored ranks; must equal `mrr`.
  double recompute() const;
  std::string serialize() const;
};

struct MrrOptions {
  int n_candidates = 64;
  std::uint64_t seed = 0;
  TransformRanges ranges;
  int n_threads = 0;  // 0 = hardware concurrency
};

// For each image: sample n_candidates distinct transforms, pick one target
// uniformly, predict from the unmodified image, and rank the prediction
// against the teacher embeddings of all candidates.
MrrReport mrr(const Predictor& predictor, const nn::ModelState<float>& state,
              const std::vector<ImageTensor>& images, const MrrOptions& opts);

// Top-2 PCA projection of the grid's vectors mapped onto a color wheel:
// hue from the projection angle, saturation/value from the normalized
// magnitude. One pixel per patch. Zero-variance grids come out uniform gray.
ImageTensor pca_colorwheel(const EmbeddingGrid& grid);

}  // namespace lepa::eval
