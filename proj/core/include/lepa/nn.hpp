#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lepa/autodiff.hpp"
#include "lepa/errors.hpp"
#include "lepa/geometry.hpp"
#include "lepa/posenc.hpp"
#include "lepa/rng.hpp"

namespace lepa::nn {

inline constexpr double kLayerNormEps = 1e-6;

enum class PosencMode { kDefault, kCondPos };

PosencMode posenc_mode_from_string(const std::string& s);
std::string to_string(PosencMode m);

// Architecture knobs. Desk-scale defaults: a 4x4 patch grid keeps every
// forward pass cheap enough that trends are observable in minutes on a CPU.
struct ModelConfig {
  int patch_size = 8;
  int channels = 1;
  int img_size = 32;
  int enc_dim = 64;
  int enc_depth = 3;
  int enc_heads = 4;
  int pred_dim = 32;
  int pred_depth = 2;
  int pred_heads = 4;
  double mlp_ratio = 4.0;
  bool use_cls = false;
  PosencMode posenc_mode = PosencMode::kCondPos;
  int cond_mlp_hidden = 64;

  int grid_side() const { return img_size / patch_size; }
  int n_patches() const { return grid_side() * grid_side(); }
  int patch_len() const { return channels * patch_size * patch_size; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Flat parameter storage with a named-tensor registry. The flat layout makes
// the optimizer, EMA updates, finite-difference checks, and checkpoint I/O
// all trivial loops.
template <class T>
struct ParamStore {
  struct Entry {
    std::string name;
    std::vector<int> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::vector<Entry> entries;
  std::vector<T> data;
  std::vector<T> grad;

  // Registers a tensor and returns its offset into the flat data array.
  std::size_t add(const std::string& name, std::vector<int> dims) {
    std::size_t sz = 1;
    for (int d : dims) sz *= static_cast<std::size_t>(d);
    const std::size_t offset = data.size();
    entries.push_back({name, std::move(dims), offset, sz});
    data.resize(data.size() + sz, T(0));
    grad.resize(data.size(), T(0));
    return offset;
  }

  const Entry* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  const Entry& at(std::string_view name) const {
    const Entry* e = find(name);
    if (!e) throw NumericError("unknown parameter: " + std::string(name));
    return *e;
  }

  // Registry value as a matrix leaf; rank-1 entries become row vectors.
  ad::Mat<T> matrix(std::string_view name) const {
    const Entry& e = at(name);
    int rows = 1, cols = static_cast<int>(e.size);
    if (e.dims.size() == 2) {
      rows = e.dims[0];
      cols = e.dims[1];
    }
    ad::Mat<T> m(rows, cols);
    std::copy(data.begin() + e.offset, data.begin() + e.offset + e.size,
              m.a.begin());
    return m;
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Tape handles for one store's parameters within a single step graph.
// Leaves are created lazily so the teacher forward never tracks gradients.
template <class T>
class ParamLeaves {
 public:
  ParamLeaves(ad::Tape<T>& tape, const ParamStore<T>& store, bool requires_grad)
      : tape_(tape), store_(store), requires_grad_(requires_grad),
        vars_(store.entries.size()) {}

  typename ad::Tape<T>::Var operator[](std::string_view name) {
    for (std::size_t i = 0; i < store_.entries.size(); ++i) {
      if (store_.entries[i].name == name) {
        if (!vars_[i].valid()) {
          vars_[i] = tape_.leaf(store_.matrix(name), requires_grad_);
        }
        return vars_[i];
      }
    }
    throw NumericError("unknown parameter: " + std::string(name));
  }

  // Accumulate tape gradients back into the store's flat grad buffer.
  void harvest_grads(ParamStore<T>& store) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (!vars_[i].valid()) continue;
      ad::Mat<T> g = tape_.grad(vars_[i]);
      const auto& e = store.entries[i];
      for (std::size_t k = 0; k < e.size; ++k) store.grad[e.offset + k] += g.a[k];
    }
  }

 private:
  ad::Tape<T>& tape_;
  const ParamStore<T>& store_;
  bool requires_grad_;
  std::vector<typename ad::Tape<T>::Var> vars_;
};

// Student encoder, EMA teacher mirror, predictor, and conditioning MLP.
// The teacher holds only "enc.*" entries and is never touched by gradients.
template <class T>
struct ModelState {
  ModelConfig cfg;
  ParamStore<T> params;   // enc.*, pred.*, cond.*
  ParamStore<T> teacher;  // enc.* mirror
  std::vector<float> norm_mean;  // per channel, filled by training
  std::vector<float> norm_std;
};

template <class T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

// Positional encodings the encoder adds to its tokens: the standard
// corner-indexed grid in default mode, the centered grid in condpos mode.
PosEncoding encoder_pos_encodings(const ModelConfig& cfg);
// Same choice at predictor width, used for the predictor's context tokens.
PosEncoding predictor_ctx_encodings(const ModelConfig& cfg);

template <class T>
using Var = typename ad::Tape<T>::Var;

// Rows of a positional encoding at the given patch positions, optionally
// preceded by a zero row (the CLS token carries no spatial position).
template <class T>
ad::Mat<T> posenc_rows(const PosEncoding& pe, const std::vector<int>& positions,
                       bool leading_zero_row);

// Learned linear projection of flattened patches; row-major patch order.
template <class T>
Var<T> patchify(ad::Tape<T>& tape, ParamLeaves<T>& leaves,
                const ImageTensor& img, const ModelConfig& cfg);

template <class T>
struct EncodeOut {
  Var<T> grid;  // [n_tokens, enc_dim]
  Var<T> cls;   // valid only when cfg.use_cls
};

// Pre-norm transformer over (tokens + posenc_rows). posenc_rows must align
// with the token rows; the CLS token, when enabled, is prepended internally
// with a zero positional encoding and split off from the returned grid.
// Throws NumericError naming the block if activations go non-finite.
template <class T>
EncodeOut<T> encode(ad::Tape<T>& tape, ParamLeaves<T>& leaves, Var<T> tokens,
                    const ad::Mat<T>& pe_rows, const ModelConfig& cfg);

// Cross-attention predictor. Context rows are student embeddings (projected
// to pred_dim internally, context positional encodings added); queries are
// mask tokens at target grid positions. When `conditioned` is set, p routes
// through conditioned positional encodings (condpos mode) or through the
// 3-layer MLP on (mask token ++ params) (default mode).
template <class T>
Var<T> predict(ad::Tape<T>& tape, ParamLeaves<T>& leaves, Var<T> ctx,
               const std::vector<int>& ctx_positions, bool ctx_has_cls,
               const std::vector<int>& target_positions,
               const std::optional<TransformParams>& p, bool conditioned,
               const ModelConfig& cfg);

// teacher <- m * teacher + (1 - m) * student, matched by entry name.
template <class T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, T momentum);

// Forward-only convenience: encode one image with the given store
// ("params" for the student, "teacher" for targets) into an EmbeddingGrid.
// When the config uses a CLS token it is split off into *cls_out.
template <class T>
EmbeddingGrid encode_image(const ModelState<T>& state, const ParamStore<T>& store,
                           const ImageTensor& img,
                           std::vector<float>* cls_out = nullptr);

// Max over parameters of |analytic - fd| / max(|analytic|, |fd|, 1e-8),
// central differences with step eps on every entry of `params`.
// build_loss must construct the full loss graph for the current params.
template <class T>
double grad_check(
    ParamStore<T>& params,
    const std::function<Var<T>(ad::Tape<T>&, ParamLeaves<T>&)>& build_loss,
    double eps);

// Finite-difference check of the full LEPA objective on a tiny model.
template <class T>
double grad_check_lepa(const ModelConfig& cfg, double eps, std::uint64_t seed);

ModelConfig tiny_gradcheck_config();

}  // namespace lepa::nn
