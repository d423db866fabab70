#include "lepa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "lepa/checkpoint.hpp"
#include "lepa/errors.hpp"

namespace lepa::train {

Objective objective_from_string(const std::string& s) {
  if (s == "ijepa") return Objective::kIjepa;
  if (s == "lepa") return Objective::kLepa;
  if (s == "nomask") return Objective::kNomask;
  if (s == "finetune") return Objective::kFinetune;
  throw ConfigError("unknown objective: " + s);
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::kIjepa: return "ijepa";
    case Objective::kLepa: return "lepa";
    case Objective::kNomask: return "nomask";
    default: return "finetune";
  }
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (epochs < 0 || steps_per_epoch <= 0 || batch_size <= 0) {
    throw ConfigError("epochs/steps/batch_size must be positive");
  }
  if (ema_start < 0.0 || ema_end > 1.0 || ema_start > ema_end) {
    throw ConfigError("ema momentum schedule must be nondecreasing within [0, 1]");
  }
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) {
    throw ConfigError("warmup fraction must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (mask.n_target_blocks < 1) throw ConfigError("need at least one target block");
  if (!(mask.target_scale_min > 0.0 &&
        mask.target_scale_min <= mask.target_scale_max &&
        mask.target_scale_max <= 1.0) ||
      !(mask.ctx_scale_min > 0.0 && mask.ctx_scale_min <= mask.ctx_scale_max &&
        mask.ctx_scale_max <= 1.0) ||
      !(mask.aspect_min > 0.0 && mask.aspect_min <= mask.aspect_max)) {
    throw ConfigError("invalid mask sampling ranges");
  }
}

namespace {

struct Block {
  int top, left, h, w;
};

Block sample_block(Rng& rng, int gh, int gw, double scale_min, double scale_max,
                   double aspect_min, double aspect_max) {
  const double area = rng.uniform(scale_min, scale_max) * gh * gw;
  const double aspect = rng.uniform(aspect_min, aspect_max);
  const int bh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, gh);
  const int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, gw);
  const int top = static_cast<int>(rng.uniform_int(gh - bh + 1));
  const int left = static_cast<int>(rng.uniform_int(gw - bw + 1));
  return {top, left, bh, bw};
}

}  // namespace

MaskSpec sample_masks(Rng& rng, int grid_h, int grid_w,
                      const MaskSamplingConfig& cfg) {
  if (grid_h <= 0 || grid_w <= 0) {
    throw ConfigError("mask sampling needs a positive grid");
  }
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<char> is_target(static_cast<std::size_t>(grid_h) * grid_w, 0);
    std::vector<std::array<int, 4>> blocks;
    for (int b = 0; b < cfg.n_target_blocks; ++b) {
      const Block blk = sample_block(rng, grid_h, grid_w, cfg.target_scale_min,
                                     cfg.target_scale_max, cfg.aspect_min,
                                     cfg.aspect_max);
      blocks.push_back({blk.top, blk.left, blk.h, blk.w});
      for (int i = blk.top; i < blk.top + blk.h; ++i) {
        for (int j = blk.left; j < blk.left + blk.w; ++j) {
          is_target[static_cast<std::size_t>(i) * grid_w + j] = 1;
        }
      }
    }
    const Block ctx = sample_block(rng, grid_h, grid_w, cfg.ctx_scale_min,
                                   cfg.ctx_scale_max, 1.0, 1.0);
    MaskSpec spec;
    spec.grid_h = grid_h;
    spec.grid_w = grid_w;
    spec.target_blocks = std::move(blocks);
    for (int idx = 0; idx < grid_h * grid_w; ++idx) {
      if (is_target[idx]) spec.target_indices.push_back(idx);
    }
    for (int i = ctx.top; i < ctx.top + ctx.h; ++i) {
      for (int j = ctx.left; j < ctx.left + ctx.w; ++j) {
        const int idx = i * grid_w + j;
        if (!is_target[idx]) spec.context_indices.push_back(idx);
      }
    }
    if (!spec.context_indices.empty() && !spec.target_indices.empty()) {
      return spec;
    }
  }
  throw ConfigError("mask sampling failed to find a non-empty context");
}

std::string format_loss_record(const LossRecord& r) {
  char buf[192];
  int n = std::snprintf(buf, sizeof(buf),
                        "step=%d loss=%.9e lr=%.9e momentum=%.9f", r.step,
                        r.loss, r.lr, r.momentum);
  std::string line(buf, static_cast<std::size_t>(n));
  if (r.mrr_probe.has_value()) {
    n = std::snprintf(buf, sizeof(buf), " mrr=%.6f", *r.mrr_probe);
    line.append(buf, static_cast<std::size_t>(n));
  }
  if (r.diverged) line += " diverged=1";
  return line;
}

void AdamW::step(nn::ParamStore<float>& params, double lr,
                 const std::function<bool(const std::string&)>& trainable) {
  if (m_.size() != params.data.size()) {
    m_.assign(params.data.size(), 0.0);
    v_.assign(params.data.size(), 0.0);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& e : params.entries) {
    if (trainable && !trainable(e.name)) continue;
    const bool decay = e.dims.size() == 2 && e.name != "pred.mask" &&
                       e.name != "enc.cls";
    for (std::size_t i = e.offset; i < e.offset + e.size; ++i) {
      const double g = params.grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      double w = params.data[i];
      w -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (decay) w -= lr * weight_decay_ * w;
      params.data[i] = static_cast<float>(w);
    }
  }
}

double lr_at(const TrainConfig& cfg, int step, int total_steps) {
  const int warmup = std::max(
      1, static_cast<int>(std::lround(cfg.warmup_frac * total_steps)));
  if (step < warmup) {
    return cfg.lr * static_cast<double>(step + 1) / warmup;
  }
  if (total_steps <= warmup) return cfg.lr;
  const double progress =
      static_cast<double>(step - warmup) / (total_steps - warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double momentum_at(const TrainConfig& cfg, int step, int total_steps) {
  if (total_steps <= 1) return cfg.ema_end;
  const double progress = static_cast<double>(step) / (total_steps - 1);
  return cfg.ema_start + (cfg.ema_end - cfg.ema_start) * progress;
}

namespace {

using FVar = nn::Var<float>;

// One optimizer step of any objective. The teacher forward runs outside the
// gradient tape; the student context is a constant when the encoder is
// frozen (finetune), which makes a nonzero encoder gradient structurally
// impossible and cheap to assert.
LossRecord run_step(nn::ModelState<float>& state,
                    const std::vector<const ImageTensor*>& batch,
                    const std::vector<MaskSpec>* masks, Objective obj,
                    AdamW& opt, Rng* rng, const TransformRanges* ranges,
                    const StepContext& ctx, const StepOptions& opts) {
  if (batch.empty()) throw ConfigError("empty batch");
  if ((obj == Objective::kIjepa || obj == Objective::kLepa)) {
    if (!masks || masks->size() != batch.size()) {
      throw ConfigError("mask specs must match the batch");
    }
  }
  const nn::ModelConfig& cfg = state.cfg;
  const int n = cfg.n_patches();
  std::vector<int> all_positions(n);
  std::iota(all_positions.begin(), all_positions.end(), 0);
  const PosEncoding enc_pe = nn::encoder_pos_encodings(cfg);

  ad::Tape<float> tape;
  nn::ParamLeaves<float> leaves(tape, state.params, /*requires_grad=*/true);

  FVar loss_sum;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ImageTensor& img = *batch[b];
    std::optional<TransformParams> p;
    if (obj != Objective::kIjepa) {
      p = sample_transform(*rng, *ranges);
    }

    const ImageTensor teacher_input = p ? warp_image(img, *p) : img;
    const EmbeddingGrid teacher_grid =
        nn::encode_image(state, state.teacher, teacher_input);

    const std::vector<int>& target_positions =
        obj == Objective::kIjepa ? (*masks)[b].target_indices : all_positions;
    ad::Mat<float> targets(static_cast<int>(target_positions.size()), cfg.enc_dim);
    for (std::size_t i = 0; i < target_positions.size(); ++i) {
      const float* src = teacher_grid.data.data() +
                         static_cast<std::size_t>(target_positions[i]) * cfg.enc_dim;
      std::copy(src, src + cfg.enc_dim, targets.row(static_cast<int>(i)));
    }
    FVar target_ln = tape.layernorm_rows(tape.constant(std::move(targets)),
                                         static_cast<float>(nn::kLayerNormEps));

    FVar loss_b;
    if (opts.oracle_predictions) {
      loss_b = tape.mse(target_ln, target_ln);
    } else {
      const std::vector<int>& ctx_positions =
          (obj == Objective::kIjepa || obj == Objective::kLepa)
              ? (*masks)[b].context_indices
              : all_positions;

      FVar context;
      if (obj == Objective::kFinetune) {
        std::vector<float> cls;
        const EmbeddingGrid student_grid =
            nn::encode_image(state, state.params, img, &cls);
        const int extra = cfg.use_cls ? 1 : 0;
        ad::Mat<float> ctx_mat(static_cast<int>(ctx_positions.size()) + extra,
                               cfg.enc_dim);
        if (cfg.use_cls) {
          std::copy(cls.begin(), cls.end(), ctx_mat.row(0));
        }
        for (std::size_t i = 0; i < ctx_positions.size(); ++i) {
          const float* src = student_grid.data.data() +
                             static_cast<std::size_t>(ctx_positions[i]) * cfg.enc_dim;
          std::copy(src, src + cfg.enc_dim,
                    ctx_mat.row(static_cast<int>(i) + extra));
        }
        context = tape.constant(std::move(ctx_mat));
      } else {
        FVar tokens = nn::patchify(tape, leaves, img, cfg);
        if (static_cast<int>(ctx_positions.size()) != n) {
          tokens = tape.gather_rows(tokens, ctx_positions);
        }
        auto enc_out = nn::encode(
            tape, leaves, tokens,
            nn::posenc_rows<float>(enc_pe, ctx_positions, false), cfg);
        context = cfg.use_cls ? tape.concat_rows(enc_out.cls, enc_out.grid)
                              : enc_out.grid;
      }

      FVar pred = nn::predict(tape, leaves, context, ctx_positions, cfg.use_cls,
                              target_positions, p,
                              /*conditioned=*/obj != Objective::kIjepa, cfg);
      loss_b = tape.mse(pred, target_ln);
    }
    loss_sum = (b == 0) ? loss_b : tape.add(loss_sum, loss_b);
  }

  FVar loss = tape.scale(loss_sum, 1.0f / static_cast<float>(batch.size()));
  const double loss_value = static_cast<double>(tape.val(loss).a[0]);
  if (!std::isfinite(loss_value)) {
    throw NumericError("non-finite loss at step " + std::to_string(ctx.step));
  }

  tape.backward(loss);
  state.params.zero_grad();
  leaves.harvest_grads(state.params);

  if (obj == Objective::kFinetune) {
    for (const auto& e : state.params.entries) {
      if (e.name.rfind("enc.", 0) != 0) continue;
      for (std::size_t i = e.offset; i < e.offset + e.size; ++i) {
        if (state.params.grad[i] != 0.0f) {
          throw NumericError("frozen encoder received gradient: " + e.name);
        }
      }
    }
    opt.step(state.params, ctx.lr, [](const std::string& name) {
      return name.rfind("pred.", 0) == 0 || name.rfind("cond.", 0) == 0;
    });
  } else {
    opt.step(state.params, ctx.lr, nullptr);
    nn::ema_update(state.teacher, state.params,
                   static_cast<float>(ctx.momentum));
  }

  LossRecord rec;
  rec.step = ctx.step;
  rec.loss = loss_value;
  rec.lr = ctx.lr;
  rec.momentum = obj == Objective::kFinetune ? 1.0 : ctx.momentum;
  return rec;
}

}  // namespace

LossRecord ijepa_step(nn::ModelState<float>& state,
                      const std::vector<const ImageTensor*>& batch,
                      const std::vector<MaskSpec>& masks, AdamW& opt,
                      const StepContext& ctx, const StepOptions& opts) {
  return run_step(state, batch, &masks, Objective::kIjepa, opt, nullptr,
                  nullptr, ctx, opts);
}

LossRecord lepa_step(nn::ModelState<float>& state,
                     const std::vector<const ImageTensor*>& batch,
                     const std::vector<MaskSpec>& masks, AdamW& opt, Rng& rng,
                     const TransformRanges& ranges, const StepContext& ctx,
                     const StepOptions& opts) {
  return run_step(state, batch, &masks, Objective::kLepa, opt, &rng, &ranges,
                  ctx, opts);
}

LossRecord nomask_step(nn::ModelState<float>& state,
                       const std::vector<const ImageTensor*>& batch, AdamW& opt,
                       Rng& rng, const TransformRanges& ranges,
                       const StepContext& ctx, const StepOptions& opts) {
  return run_step(state, batch, nullptr, Objective::kNomask, opt, &rng, &ranges,
                  ctx, opts);
}

LossRecord finetune_predictor_step(nn::ModelState<float>& state,
                                   const std::vector<const ImageTensor*>& batch,
                                   AdamW& opt, Rng& rng,
                                   const TransformRanges& ranges,
                                   const StepContext& ctx,
                                   const StepOptions& opts) {
  return run_step(state, batch, nullptr, Objective::kFinetune, opt, &rng,
                  &ranges, ctx, opts);
}

namespace {

std::string epoch_checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-epoch%04d.lepa", epoch);
  return buf;
}

}  // namespace

TrainResult train_loop(nn::ModelState<float>& state, const TrainConfig& cfg,
                       const std::vector<ImageTensor>& dataset,
                       const std::string& out_dir, const MrrProbe& probe) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);

  TrainResult result;
  const auto save = [&](const std::string& name) {
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, state);
    result.checkpoint_paths.push_back(path);
  };
  save("ckpt-init.lepa");

  result.loss_log_path = (fs::path(out_dir) / "loss.log").string();
  std::ofstream log(result.loss_log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + result.loss_log_path);

  const int total_steps = cfg.epochs * cfg.steps_per_epoch;
  if (total_steps == 0) return result;
  if (dataset.empty()) throw ConfigError("training requires a non-empty dataset");

  ChannelStats stats;
  stats.mean = state.norm_mean;
  stats.std_dev = state.norm_std;
  std::vector<ImageTensor> normalized = dataset;
  normalize(normalized, stats);

  const int grid = state.cfg.grid_side();
  AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);

  std::vector<int> perm(normalized.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = perm.size();  // force initial shuffle
  std::uint64_t shuffle_round = 0;
  const auto next_index = [&]() {
    if (cursor >= perm.size()) {
      Rng shuffle_rng =
          Rng(Rng::mix(cfg.seed, 0x7065726d)).fork(shuffle_round++);
      for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[shuffle_rng.uniform_int(i)]);
      }
      cursor = 0;
    }
    return perm[cursor++];
  };

  double initial_loss = -1.0;
  for (int step = 0; step < total_steps; ++step) {
    StepContext sctx;
    sctx.step = step;
    sctx.lr = lr_at(cfg, step, total_steps);
    sctx.momentum = momentum_at(cfg, step, total_steps);

    std::vector<const ImageTensor*> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(&normalized[next_index()]);
    }

    LossRecord rec;
    Rng step_rng = Rng(Rng::mix(cfg.seed, 0x78666f72)).fork(step);
    switch (cfg.objective) {
      case Objective::kIjepa:
      case Objective::kLepa: {
        std::vector<MaskSpec> masks;
        masks.reserve(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
          Rng mask_rng = Rng(Rng::mix(cfg.seed, 0x6d61736b))
                             .fork(static_cast<std::uint64_t>(step))
                             .fork(b);
          masks.push_back(sample_masks(mask_rng, grid, grid, cfg.mask));
        }
        rec = cfg.objective == Objective::kIjepa
                  ? ijepa_step(state, batch, masks, opt, sctx)
                  : lepa_step(state, batch, masks, opt, step_rng,
                              cfg.transforms, sctx);
        break;
      }
      case Objective::kNomask:
        rec = nomask_step(state, batch, opt, step_rng, cfg.transforms, sctx);
        break;
      case Objective::kFinetune:
        rec = finetune_predictor_step(state, batch, opt, step_rng,
                                      cfg.transforms, sctx);
        break;
    }

    if (initial_loss < 0.0) initial_loss = std::max(rec.loss, 1e-12);
    if (cfg.objective == Objective::kNomask &&
        rec.loss > 1e3 * initial_loss) {
      rec.diverged = true;
    }
    if (probe && cfg.mrr_probe_every > 0 &&
        (step + 1) % cfg.mrr_probe_every == 0) {
      rec.mrr_probe = probe(state);
    }
    log << format_loss_record(rec) << "\n";
    result.records.push_back(rec);

    if ((step + 1) % cfg.steps_per_epoch == 0) {
      save(epoch_checkpoint_name((step + 1) / cfg.steps_per_epoch));
    }
  }
  save("ckpt-final.lepa");
  if (cfg.objective == Objective::kNomask && !result.records.empty()) {
    // No numeric target: transformation-only training is known to be
    // unstable, so the loss variance over the final window is reported for
    // inspection.
    const std::size_t window = std::min<std::size_t>(100, result.records.size());
    double mean = 0.0;
    for (std::size_t i = result.records.size() - window;
         i < result.records.size(); ++i) {
      mean += result.records[i].loss;
    }
    mean /= static_cast<double>(window);
    double var = 0.0;
    for (std::size_t i = result.records.size() - window;
         i < result.records.size(); ++i) {
      const double d = result.records[i].loss - mean;
      var += d * d;
    }
    var /= static_cast<double>(window);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "window=%zu loss_variance=%.9e", window, var);
    log << buf << "\n";
  }
  log.flush();
  if (!log) throw IoError("write failed: " + result.loss_log_path);
  return result;
}

TrainResult train(const nn::ModelConfig& mcfg, const TrainConfig& cfg,
                  const std::vector<ImageTensor>& dataset,
                  const std::string& out_dir, const MrrProbe& probe) {
  cfg.validate();
  if (cfg.objective == Objective::kFinetune) {
    throw ConfigError("finetuning starts from a checkpoint; use the finetune command");
  }
  nn::ModelState<float> state = nn::init_model<float>(mcfg, cfg.seed);
  if (!dataset.empty()) {
    const ChannelStats stats = compute_channel_stats(dataset);
    state.norm_mean = stats.mean;
    state.norm_std = stats.std_dev;
  }
  return train_loop(state, cfg, dataset, out_dir, probe);
}

}  // namespace lepa::train
