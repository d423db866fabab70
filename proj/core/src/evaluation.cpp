#include "lepa/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "lepa/errors.hpp"

namespace lepa::eval {

namespace {

class InterpolationPredictor final : public Predictor {
 public:
  explicit InterpolationPredictor(Interp mode) : mode_(mode) {}
  EmbeddingGrid predict(const ImageTensor&, const EmbeddingGrid& grid,
                        const TransformParams& p) const override {
    return resample_grid(grid, p, mode_);
  }
  std::string name() const override { return to_string(mode_); }

 private:
  Interp mode_;
};

class LearnedPredictor final : public Predictor {
 public:
  explicit LearnedPredictor(const nn::ModelState<float>& state) : state_(state) {}

  EmbeddingGrid predict(const ImageTensor& img, const EmbeddingGrid&,
                        const TransformParams& p) const override {
    std::vector<float> cls;
    const EmbeddingGrid student = nn::encode_image(state_, state_.params, img, &cls);
    return run_predictor(state_, student, cls, p);
  }
  std::string name() const override { return "learned"; }

  static EmbeddingGrid run_predictor(const nn::ModelState<float>& state,
                                     const EmbeddingGrid& context_grid,
                                     const std::vector<float>& cls,
                                     const TransformParams& p) {
    const nn::ModelConfig& cfg = state.cfg;
    const int n = cfg.n_patches();
    if (context_grid.n_patches() != n || context_grid.dim != cfg.enc_dim) {
      throw ConfigError("context grid shape does not match the model config");
    }
    ad::Tape<float> tape;
    nn::ParamLeaves<float> leaves(tape, state.params, /*requires_grad=*/false);
    const bool has_cls = cfg.use_cls && !cls.empty();
    const int extra = has_cls ? 1 : 0;
    ad::Mat<float> ctx(n + extra, cfg.enc_dim);
    if (has_cls) std::copy(cls.begin(), cls.end(), ctx.row(0));
    std::copy(context_grid.data.begin(), context_grid.data.end(),
              ctx.a.begin() + static_cast<std::size_t>(extra) * cfg.enc_dim);

    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    auto pred = nn::predict(tape, leaves, tape.constant(std::move(ctx)), all,
                            has_cls, all, p, /*conditioned=*/true, cfg);
    const ad::Mat<float>& out = tape.val(pred);
    EmbeddingGrid g = EmbeddingGrid::zeros(cfg.grid_side(), cfg.grid_side(),
                                           cfg.enc_dim);
    std::copy(out.a.begin(), out.a.end(), g.data.begin());
    return g;
  }

 private:
  const nn::ModelState<float>& state_;
};

class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(const nn::ModelState<float>& state) : state_(state) {}
  EmbeddingGrid predict(const ImageTensor& img, const EmbeddingGrid&,
                        const TransformParams& p) const override {
    return nn::encode_image(state_, state_.teacher, warp_image(img, p));
  }
  std::string name() const override { return "oracle"; }

 private:
  const nn::ModelState<float>& state_;
};

class RandomPredictor final : public Predictor {
 public:
  RandomPredictor(std::uint64_t seed, int grid_side, int dim)
      : seed_(seed), grid_side_(grid_side), dim_(dim) {}

  EmbeddingGrid predict(const ImageTensor& img, const EmbeddingGrid&,
                        const TransformParams& p) const override {
    // Deterministic in (seed, image bytes, params) so parallel evaluation
    // order cannot change the result.
    std::uint64_t h = seed_;
    h = Rng::mix(h, crc32(img.values.data(), img.values.size() * sizeof(float)));
    for (double v : p.as_vector()) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h = Rng::mix(h, bits);
    }
    Rng rng(h);
    EmbeddingGrid g = EmbeddingGrid::zeros(grid_side_, grid_side_, dim_);
    for (auto& v : g.data) v = static_cast<float>(rng.normal());
    return g;
  }
  std::string name() const override { return "random"; }

 private:
  std::uint64_t seed_;
  int grid_side_;
  int dim_;
};

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw NumericError("cosine similarity undefined for zero-norm vectors");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  if (n_threads <= 0) {
    n_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads <= 0) n_threads = 1;
  }
  n_threads = std::min(n_threads, n);
  if (n_threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::unique_ptr<Predictor> interpolation_predictor(Interp mode) {
  return std::make_unique<InterpolationPredictor>(mode);
}

std::unique_ptr<Predictor> learned_predictor(const nn::ModelState<float>& state) {
  return std::make_unique<LearnedPredictor>(state);
}

std::unique_ptr<Predictor> oracle_predictor(const nn::ModelState<float>& state) {
  return std::make_unique<OraclePredictor>(state);
}

std::unique_ptr<Predictor> random_predictor(std::uint64_t seed, int grid_side,
                                            int dim) {
  return std::make_unique<RandomPredictor>(seed, grid_side, dim);
}

EmbeddingGrid predict_from_grid(const nn::ModelState<float>& state,
                                const EmbeddingGrid& grid,
                                const TransformParams& p) {
  return LearnedPredictor::run_predictor(state, grid, {}, p);
}

std::vector<EmbeddingGrid> candidate_embeddings(
    const nn::ModelState<float>& state, const ImageTensor& img,
    const std::vector<TransformParams>& params_list) {
  for (std::size_t i = 0; i < params_list.size(); ++i) {
    for (std::size_t j = i + 1; j < params_list.size(); ++j) {
      if (params_list[i] == params_list[j]) {
        throw ConfigError("candidate transform parameters must be pairwise distinct");
      }
    }
  }
  std::vector<EmbeddingGrid> out;
  out.reserve(params_list.size());
  for (const auto& p : params_list) {
    out.push_back(nn::encode_image(state, state.teacher, warp_image(img, p)));
  }
  return out;
}

int rank_of_target(const EmbeddingGrid& predicted,
                   const std::vector<EmbeddingGrid>& candidates,
                   int target_index) {
  if (candidates.empty()) throw ConfigError("rank_of_target: no candidates");
  if (target_index < 0 || target_index >= static_cast<int>(candidates.size())) {
    throw ConfigError("rank_of_target: target index out of range");
  }
  const double target_sim =
      cosine_similarity(predicted.flatten(), candidates[target_index].flatten());
  int rank = 1;
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    if (i == target_index) continue;
    const double sim = cosine_similarity(predicted.flatten(),
                                         candidates[i].flatten());
    if (sim >= target_sim) ++rank;  // pessimistic tie-breaking
  }
  return rank;
}

double MrrReport::recompute() const {
  double sum = 0.0;
  for (int r : ranks) sum += 1.0 / static_cast<double>(r);
  return ranks.empty() ? 0.0 : sum / static_cast<double>(ranks.size());
}

std::string MrrReport::serialize() const {
  std::ostringstream os;
  char buf[96];
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "image=%zu rank=%d rr=%.12f\n", i, ranks[i],
                  reciprocal_ranks[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mrr=%.12f n_images=%d n_candidates=%d\n",
                mrr, n_images, n_candidates);
  os << buf;
  return os.str();
}

MrrReport mrr(const Predictor& predictor, const nn::ModelState<float>& state,
              const std::vector<ImageTensor>& images, const MrrOptions& opts) {
  if (images.empty()) throw ConfigError("mrr: empty image set");
  if (opts.n_candidates < 2) throw ConfigError("mrr: need at least 2 candidates");

  MrrReport report;
  report.n_images = static_cast<int>(images.size());
  report.n_candidates = opts.n_candidates;
  report.ranks.assign(images.size(), 0);
  report.reciprocal_ranks.assign(images.size(), 0.0);

  parallel_for(static_cast<int>(images.size()), opts.n_threads, [&](int idx) {
    Rng rng = Rng(Rng::mix(opts.seed, 0x6d7272)).fork(static_cast<std::uint64_t>(idx));
    std::vector<TransformParams> params;
    params.reserve(opts.n_candidates);
    int guard = 0;
    while (static_cast<int>(params.size()) < opts.n_candidates) {
      TransformParams p = sample_transform(rng, opts.ranges);
      if (std::find(params.begin(), params.end(), p) == params.end()) {
        params.push_back(p);
      } else if (++guard > 4 * opts.n_candidates) {
        throw ConfigError("mrr: could not sample distinct transforms");
      }
    }
    const int target = static_cast<int>(rng.uniform_int(opts.n_candidates));
    const std::vector<EmbeddingGrid> candidates =
        candidate_embeddings(state, images[idx], params);
    const EmbeddingGrid enc = nn::encode_image(state, state.teacher, images[idx]);
    const EmbeddingGrid predicted =
        predictor.predict(images[idx], enc, params[target]);
    const int rank = rank_of_target(predicted, candidates, target);
    report.ranks[idx] = rank;
    report.reciprocal_ranks[idx] = 1.0 / static_cast<double>(rank);
  });

  report.mrr = report.recompute();
  return report;
}

namespace {

// Power iteration with deflation on the embedding covariance; deterministic
// start vector, enough iterations to converge at these tiny sizes.
void top2_components(const EmbeddingGrid& grid, std::vector<double>& c1,
                     std::vector<double>& c2, double& total_var) {
  const int n = grid.n_patches();
  const int d = grid.dim;
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const float* v = grid.data.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) mean[k] += v[k];
  }
  for (auto& m : mean) m /= n;

  std::vector<double> centered(static_cast<std::size_t>(n) * d);
  total_var = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) {
      const double c = grid.data[static_cast<std::size_t>(i) * d + k] - mean[k];
      centered[static_cast<std::size_t>(i) * d + k] = c;
      total_var += c * c;
    }
  }
  total_var /= n;

  auto cov_apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    // y = (1/n) C^T C x without forming the d x d covariance
    std::vector<double> proj(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* row = centered.data() + static_cast<std::size_t>(i) * d;
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += row[k] * x[k];
      proj[i] = acc;
    }
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double* row = centered.data() + static_cast<std::size_t>(i) * d;
      for (int k = 0; k < d; ++k) y[k] += proj[i] * row[k];
    }
    for (auto& v : y) v /= n;
  };

  auto power_iterate = [&](std::vector<double>& vec,
                           const std::vector<double>* deflate) {
    for (int k = 0; k < d; ++k) vec[k] = std::cos(0.7 * (k + 1));
    std::vector<double> next(d);
    for (int it = 0; it < 300; ++it) {
      if (deflate) {
        double dp = 0.0;
        for (int k = 0; k < d; ++k) dp += vec[k] * (*deflate)[k];
        for (int k = 0; k < d; ++k) vec[k] -= dp * (*deflate)[k];
      }
      cov_apply(vec, next);
      double norm = 0.0;
      for (double v : next) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-14) {
        std::fill(vec.begin(), vec.end(), 0.0);
        return;
      }
      for (int k = 0; k < d; ++k) vec[k] = next[k] / norm;
    }
    if (deflate) {
      double dp = 0.0;
      for (int k = 0; k < d; ++k) dp += vec[k] * (*deflate)[k];
      for (int k = 0; k < d; ++k) vec[k] -= dp * (*deflate)[k];
      double norm = 0.0;
      for (double v : vec) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 1e-14) {
        for (auto& v : vec) v /= norm;
      } else {
        std::fill(vec.begin(), vec.end(), 0.0);
      }
    }
  };

  c1.assign(d, 0.0);
  c2.assign(d, 0.0);
  if (total_var < 1e-18) return;
  power_iterate(c1, nullptr);
  power_iterate(c2, &c1);

  // Sign convention: largest-magnitude loading positive.
  for (auto* comp : {&c1, &c2}) {
    int arg = 0;
    double best = 0.0;
    for (int k = 0; k < d; ++k) {
      if (std::abs((*comp)[k]) > best) {
        best = std::abs((*comp)[k]);
        arg = k;
      }
    }
    if ((*comp)[arg] < 0.0) {
      for (auto& v : *comp) v = -v;
    }
  }
}

void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  h = h - std::floor(h);  // wrap into [0, 1)
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r, g, b;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

}  // namespace

ImageTensor pca_colorwheel(const EmbeddingGrid& grid) {
  if (grid.n_patches() < 3) {
    throw ConfigError("pca_colorwheel needs at least 3 patches");
  }
  std::vector<double> c1, c2;
  double total_var = 0.0;
  top2_components(grid, c1, c2, total_var);

  ImageTensor img = ImageTensor::zeros(3, grid.grid_h, grid.grid_w);
  if (total_var < 1e-18) {
    for (auto& v : img.values) v = 0.5f;
    return img;
  }

  const int n = grid.n_patches();
  const int d = grid.dim;
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const float* v = grid.data.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) mean[k] += v[k];
  }
  for (auto& m : mean) m /= n;

  std::vector<double> proj1(n), proj2(n);
  double max_mag = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* v = grid.data.data() + static_cast<std::size_t>(i) * d;
    double p1 = 0.0, p2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double c = v[k] - mean[k];
      p1 += c * c1[k];
      p2 += c * c2[k];
    }
    proj1[i] = p1;
    proj2[i] = p2;
    max_mag = std::max(max_mag, std::sqrt(p1 * p1 + p2 * p2));
  }
  if (max_mag < 1e-18) max_mag = 1.0;

  for (int i = 0; i < grid.grid_h; ++i) {
    for (int j = 0; j < grid.grid_w; ++j) {
      const int idx = i * grid.grid_w + j;
      const double mag = std::sqrt(proj1[idx] * proj1[idx] +
                                   proj2[idx] * proj2[idx]) / max_mag;
      const double hue = std::atan2(proj2[idx], proj1[idx]) /
                         6.283185307179586476925286766559;
      float rgb[3];
      hsv_to_rgb(hue, mag, 0.25 + 0.75 * mag, rgb);
      for (int c = 0; c < 3; ++c) img.at(c, i, j) = rgb[c];
    }
  }
  return img;
}

}  // namespace lepa::eval
