#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lepa/data_io.hpp"
#include "lepa/geometry.hpp"
#include "lepa/nn.hpp"
#include "lepa/rng.hpp"

namespace lepa::train {

enum class Objective { kIjepa, kLepa, kNomask, kFinetune };

Objective objective_from_string(const std::string& s);
std::string to_string(Objective o);

// Context/target patch-index sets for latent inpainting. The sampled sets
// are always disjoint; LEPA-style objectives keep the context but predict
// every grid position.
struct MaskSpec {
  std::vector<int> context_indices;
  std::vector<int> target_indices;
  // Sampled target rectangles as (top, left, height, width), before the
  // union; kept for coverage diagnostics.
  std::vector<std::array<int, 4>> target_blocks;
  int grid_h = 0;
  int grid_w = 0;
};

struct MaskSamplingConfig {
  int n_target_blocks = 4;
  double target_scale_min = 0.15;
  double target_scale_max = 0.2;
  double aspect_min = 0.75;
  double aspect_max = 1.5;
  double ctx_scale_min = 0.85;
  double ctx_scale_max = 1.0;
};

// N rectangular target blocks plus one context block with the targets
// removed. Resamples a bounded number of times if the context empties out.
MaskSpec sample_masks(Rng& rng, int grid_h, int grid_w,
                      const MaskSamplingConfig& cfg);

struct TrainConfig {
  Objective objective = Objective::kLepa;
  int epochs = 5;
  int batch_size = 8;
  int steps_per_epoch = 1000;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_frac = 0.1;
  double ema_start = 0.996;
  double ema_end = 1.0;
  MaskSamplingConfig mask;
  TransformRanges transforms;
  std::uint64_t seed = 0;
  int mrr_probe_every = 0;  // 0 disables the probe

  void validate() const;
};

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double momentum = 0.0;
  std::optional<double> mrr_probe;
  bool diverged = false;
};

// Serialized as one key=value line; wall-clock time is deliberately not part
// of the record so identical runs produce identical logs.
std::string format_loss_record(const LossRecord& r);

// Decoupled-weight-decay Adam over the flat parameter store. Weight decay
// applies to rank-2 weight matrices only.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(nn::ParamStore<float>& params, double lr,
            const std::function<bool(const std::string&)>& trainable);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Learning rate / EMA momentum at a given 0-based step.
double lr_at(const TrainConfig& cfg, int step, int total_steps);
double momentum_at(const TrainConfig& cfg, int step, int total_steps);

struct StepContext {
  int step = 0;
  double lr = 0.0;
  double momentum = 0.0;
};

struct StepOptions {
  // Calibration hook: replaces predictor output with the (normalized)
  // teacher targets, which must drive the loss to exactly zero.
  bool oracle_predictions = false;
};

LossRecord ijepa_step(nn::ModelState<float>& state,
                      const std::vector<const ImageTensor*>& batch,
                      const std::vector<MaskSpec>& masks, AdamW& opt,
                      const StepContext& ctx, const StepOptions& opts = {});

LossRecord lepa_step(nn::ModelState<float>& state,
                     const std::vector<const ImageTensor*>& batch,
                     const std::vector<MaskSpec>& masks, AdamW& opt, Rng& rng,
                     const TransformRanges& ranges, const StepContext& ctx,
                     const StepOptions& opts = {});

LossRecord nomask_step(nn::ModelState<float>& state,
                       const std::vector<const ImageTensor*>& batch, AdamW& opt,
                       Rng& rng, const TransformRanges& ranges,
                       const StepContext& ctx, const StepOptions& opts = {});

LossRecord finetune_predictor_step(nn::ModelState<float>& state,
                                   const std::vector<const ImageTensor*>& batch,
                                   AdamW& opt, Rng& rng,
                                   const TransformRanges& ranges,
                                   const StepContext& ctx,
                                   const StepOptions& opts = {});

using MrrProbe = std::function<double(const nn::ModelState<float>&)>;

struct TrainResult {
  std::vector<LossRecord> records;
  std::vector<std::string> checkpoint_paths;
  std::string loss_log_path;
};

// Runs the configured objective over an already-initialized state. Images
// are normalized internally with the stats recorded in the state. Writes a
// checkpoint per epoch plus the loss log into out_dir.
TrainResult train_loop(nn::ModelState<float>& state, const TrainConfig& cfg,
                       const std::vector<ImageTensor>& dataset,
                       const std::string& out_dir,
                       const MrrProbe& probe = nullptr);

// Fresh model (cfg.seed), dataset stats captured into the state, then the
// training loop. Objective kFinetune is rejected here: finetuning starts
// from a loaded checkpoint.
TrainResult train(const nn::ModelConfig& mcfg, const TrainConfig& cfg,
                  const std::vector<ImageTensor>& dataset,
                  const std::string& out_dir, const MrrProbe& probe = nullptr);

}  // namespace lepa::train
