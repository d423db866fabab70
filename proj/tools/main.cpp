// lepa: command-line surface for the training/evaluation pipeline.
// Exit codes: 0 success, 2 usage, 3 config, 4 I/O, 5 numeric failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lepa/checkpoint.hpp"
#include "lepa/config.hpp"
#include "lepa/data_io.hpp"
#include "lepa/errors.hpp"
#include "lepa/evaluation.hpp"
#include "lepa/nn.hpp"
#include "lepa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;
constexpr int kExitNumeric = 5;

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Every command records what it read, what it wrote, and the checksums of
// the outputs; written atomically as the last step of the run.
class ManifestWriter {
 public:
  ManifestWriter(std::string command, std::string out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)),
        start_(iso_timestamp()) {}

  void set_config_path(const std::string& p) { config_path_ = p; }
  void set_seed(std::uint64_t s) { seed_ = s; }
  void add_output(const std::string& path) { outputs_.push_back(path); }

  void write() const {
    json j;
    j["command"] = command_;
    j["config"] = config_path_;
    j["seed"] = seed_;
    j["started"] = start_;
    j["finished"] = iso_timestamp();
    json outs = json::array();
    for (const auto& p : outputs_) {
      char crc[16];
      std::snprintf(crc, sizeof(crc), "%08x", lepa::crc32_file(p));
      outs.push_back({{"path", p}, {"crc32", crc}});
    }
    j["outputs"] = outs;
    const fs::path path = fs::path(out_dir_) / "manifest.json";
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw lepa::IoError("cannot open for writing: " + tmp.string());
      out << j.dump(2) << "\n";
      if (!out) throw lepa::IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
  }

 private:
  std::string command_;
  std::string out_dir_;
  std::string start_;
  std::string config_path_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> outputs_;
};

std::string default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("LEPA_OUT_DIR")) return env;
  return "lepa-out";
}

// Precedence: flag > file > default. The RunConfig starts at defaults, the
// file overwrites, and explicitly passed CLI flags overwrite last.
struct ConfigLayer {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value configuration file");
    cmd->add_option("--set", kv_flags_,
                    "config override as key=value (repeatable)")
        ->take_all();
  }

  lepa::RunConfig resolve() const {
    lepa::RunConfig cfg;
    if (!config_path.empty()) {
      lepa::apply_kv(cfg, lepa::read_kv_file(config_path));
    }
    lepa::KvMap flag_kv;
    for (const auto& kv : kv_flags_) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw lepa::ConfigError("--set expects key=value, got '" + kv + "'");
      }
      flag_kv[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    for (const auto& kv : overrides) flag_kv[kv.first] = kv.second;
    lepa::apply_kv(cfg, flag_kv);
    return cfg;
  }

 private:
  std::vector<std::string> kv_flags_;
};

lepa::TransformParams parse_params_flag(const std::string& s) {
  lepa::TransformParams p;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf", &p.tx, &p.ty, &p.angle,
                  &p.scale) != 4) {
    throw lepa::ConfigError("--params expects tx,ty,angle,scale");
  }
  lepa::validate(p);
  return p;
}

std::vector<lepa::ImageTensor> load_normalized(const std::string& data_dir,
                                               const lepa::nn::ModelState<float>& state) {
  auto images = lepa::load_images(data_dir, state.cfg.img_size, state.cfg.channels);
  if (images.empty()) throw lepa::IoError("no images in " + data_dir);
  lepa::ChannelStats stats{state.norm_mean, state.norm_std};
  lepa::normalize(images, stats);
  return images;
}

// ---- commands -------------------------------------------------------------

int cmd_synth_data(const std::string& out_flag, int n, int img_size,
                   int channels, std::uint64_t seed) {
  const std::string out_dir = default_out_dir(out_flag);
  fs::create_directories(out_dir);
  ManifestWriter manifest("synth-data", out_dir);
  manifest.set_seed(seed);

  lepa::DatasetSpec spec;
  spec.n_images = n;
  spec.img_size = img_size;
  spec.channels = channels;
  spec.seed = seed;
  const lepa::GeneratedDataset data = lepa::generate_dataset(spec);

  const char* ext = channels == 1 ? "pgm" : "ppm";
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05d.%s", i, ext);
    const std::string path = (fs::path(out_dir) / name).string();
    lepa::write_pixmap(path, data.images[i]);
    manifest.add_output(path);
  }
  const std::string meta_path = (fs::path(out_dir) / "metadata.txt").string();
  {
    std::ofstream meta(meta_path);
    if (!meta) throw lepa::IoError("cannot open for writing: " + meta_path);
    for (const auto& line : data.metadata) meta << line << "\n";
  }
  manifest.add_output(meta_path);
  manifest.write();
  std::printf("wrote %d images to %s\n", n, out_dir.c_str());
  return 0;
}

int run_training(const char* name, const ConfigLayer& layer,
                 const std::string& data_dir, const std::string& out_flag,
                 const std::string& init_ckpt) {
  const lepa::RunConfig cfg = layer.resolve();
  const std::string out_dir = default_out_dir(out_flag);
  fs::create_directories(out_dir);
  ManifestWriter manifest(name, out_dir);
  manifest.set_config_path(layer.config_path);
  manifest.set_seed(cfg.train.seed);

  lepa::train::TrainResult result;
  if (init_ckpt.empty()) {
    const auto images =
        lepa::load_images(data_dir, cfg.model.img_size, cfg.model.channels);
    result = lepa::train::train(cfg.model, cfg.train, images, out_dir);
  } else {
    lepa::nn::ModelState<float> state = lepa::load_checkpoint(init_ckpt);
    lepa::train::TrainConfig tcfg = cfg.train;
    tcfg.objective = lepa::train::Objective::kFinetune;
    const auto images =
        lepa::load_images(data_dir, state.cfg.img_size, state.cfg.channels);
    result = lepa::train::train_loop(state, tcfg, images, out_dir);
  }
  for (const auto& p : result.checkpoint_paths) manifest.add_output(p);
  manifest.add_output(result.loss_log_path);

  const std::string cfg_path = (fs::path(out_dir) / "config.resolved").string();
  {
    std::ofstream out(cfg_path);
    out << lepa::serialize(cfg);
  }
  manifest.add_output(cfg_path);
  manifest.write();
  if (!result.records.empty()) {
    std::printf("final loss %.6f after %zu steps\n", result.records.back().loss,
                result.records.size());
  }
  return 0;
}

int cmd_eval_mrr(const ConfigLayer& layer, const std::string& ckpt,
                 const std::string& data_dir, const std::string& out_flag,
                 const std::string& predictor_name, int n_candidates,
                 int n_images, std::uint64_t seed) {
  const lepa::RunConfig cfg = layer.resolve();
  const std::string out_dir = default_out_dir(out_flag);
  fs::create_directories(out_dir);
  ManifestWriter manifest("eval-mrr", out_dir);
  manifest.set_config_path(layer.config_path);
  manifest.set_seed(seed);

  const lepa::nn::ModelState<float> state = lepa::load_checkpoint(ckpt);
  auto images = load_normalized(data_dir, state);
  if (n_images > 0 && n_images < static_cast<int>(images.size())) {
    images.resize(n_images);
  }

  std::unique_ptr<lepa::eval::Predictor> predictor;
  if (predictor_name == "learned") {
    predictor = lepa::eval::learned_predictor(state);
  } else if (predictor_name == "oracle") {
    predictor = lepa::eval::oracle_predictor(state);
  } else if (predictor_name == "random") {
    predictor = lepa::eval::random_predictor(seed, state.cfg.grid_side(),
                                             state.cfg.enc_dim);
  } else {
    predictor = lepa::eval::interpolation_predictor(
        lepa::interp_from_string(predictor_name));
  }

  lepa::eval::MrrOptions opts;
  opts.n_candidates = n_candidates;
  opts.seed = seed;
  opts.ranges = cfg.train.transforms;
  const lepa::eval::MrrReport report =
      lepa::eval::mrr(*predictor, state, images, opts);

  const std::string report_path = (fs::path(out_dir) / "mrr-report.txt").string();
  {
    std::ofstream out(report_path);
    if (!out) throw lepa::IoError("cannot open for writing: " + report_path);
    out << report.serialize();
  }
  manifest.add_output(report_path);
  manifest.write();
  std::printf("%.4f\n", report.mrr);
  return 0;
}

int cmd_transform(const std::string& grid_path, const std::string& out_path,
                  const std::string& mode, const std::string& params_str,
                  const std::string& ckpt) {
  const lepa::TransformParams p = parse_params_flag(params_str);
  const lepa::EmbeddingGrid grid = lepa::read_grid(grid_path);
  lepa::EmbeddingGrid out;
  if (mode == "learned") {
    if (ckpt.empty()) {
      throw lepa::ConfigError("--mode learned requires --ckpt");
    }
    const lepa::nn::ModelState<float> state = lepa::load_checkpoint(ckpt);
    out = lepa::eval::predict_from_grid(state, grid, p);
  } else {
    out = lepa::resample_grid(grid, p, lepa::interp_from_string(mode));
  }
  lepa::write_grid(out_path, out);

  const std::string out_dir = fs::path(out_path).parent_path().string();
  ManifestWriter manifest("transform", out_dir.empty() ? "." : out_dir);
  manifest.add_output(out_path);
  manifest.write();
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_visualize(const std::string& grid_path, const std::string& out_path) {
  const lepa::EmbeddingGrid grid = lepa::read_grid(grid_path);
  const lepa::ImageTensor img = lepa::eval::pca_colorwheel(grid);
  lepa::write_pixmap(out_path, img);
  const std::string out_dir = fs::path(out_path).parent_path().string();
  ManifestWriter manifest("visualize", out_dir.empty() ? "." : out_dir);
  manifest.add_output(out_path);
  manifest.write();
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& dtype, double eps, std::uint64_t seed) {
  const lepa::nn::ModelConfig tiny = lepa::nn::tiny_gradcheck_config();
  bool ok = true;
  if (dtype == "float64" || dtype == "both") {
    const double err = lepa::nn::grad_check_lepa<double>(tiny, eps, seed);
    const bool pass = err < 1e-5;
    ok = ok && pass;
    std::printf("gradcheck float64: max relative error %.3e (threshold 1e-5) %s\n",
                err, pass ? "ok" : "FAILED");
  }
  if (dtype == "float32" || dtype == "both") {
    const double err = lepa::nn::grad_check_lepa<float>(tiny, eps, seed);
    const bool pass = err < 1e-3;
    ok = ok && pass;
    std::printf("gradcheck float32: max relative error %.3e (threshold 1e-3) %s\n",
                err, pass ? "ok" : "FAILED");
  }
  if (!ok) throw lepa::NumericError("gradient check exceeded its threshold");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEPA: transformation-conditioned embedding prediction at desk scale"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  std::string synth_out;
  int synth_n = 256, synth_size = 32, synth_channels = 1;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n", synth_n, "number of images");
  synth->add_option("--img-size", synth_size, "image side length");
  synth->add_option("--channels", synth_channels, "1 (pgm) or 3 (ppm)");
  synth->add_option("--seed", synth_seed, "generator seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "run a training objective");
  ConfigLayer train_layer;
  std::string train_data, train_out;
  train_layer.add_flags(train_cmd);
  train_cmd->add_option("--data", train_data, "directory of pgm/ppm images")
      ->required();
  train_cmd->add_option("--out", train_out, "output directory");

  // finetune
  auto* ft = app.add_subcommand("finetune", "finetune the predictor of a checkpoint");
  ConfigLayer ft_layer;
  std::string ft_data, ft_out, ft_ckpt;
  ft_layer.add_flags(ft);
  ft->add_option("--ckpt", ft_ckpt, "checkpoint to start from")->required();
  ft->add_option("--data", ft_data, "directory of pgm/ppm images")->required();
  ft->add_option("--out", ft_out, "output directory");

  // eval-mrr
  auto* em = app.add_subcommand("eval-mrr", "mean-reciprocal-rank benchmark");
  ConfigLayer em_layer;
  std::string em_ckpt, em_data, em_out, em_pred = "learned";
  int em_candidates = 64, em_images = 0;
  std::uint64_t em_seed = 0;
  em_layer.add_flags(em);
  em->add_option("--ckpt", em_ckpt, "trained checkpoint")->required();
  em->add_option("--data", em_data, "directory of evaluation images")->required();
  em->add_option("--out", em_out, "output directory");
  em->add_option("--predictor", em_pred,
                 "learned | nearest | bilinear | oracle | random");
  em->add_option("--candidates", em_candidates, "candidate transforms per image");
  em->add_option("--images", em_images, "cap on evaluation images (0 = all)");
  em->add_option("--seed", em_seed, "evaluation seed");

  // transform
  auto* tr = app.add_subcommand("transform", "transform a stored embedding grid");
  std::string tr_grid, tr_out, tr_mode = "nearest", tr_params = "0,0,0,1", tr_ckpt;
  tr->add_option("--grid", tr_grid, "input EGRD file")->required();
  tr->add_option("--out", tr_out, "output EGRD file")->required();
  tr->add_option("--mode", tr_mode, "nearest | bilinear | learned");
  tr->add_option("--params", tr_params, "tx,ty,angle,scale");
  tr->add_option("--ckpt", tr_ckpt, "checkpoint for --mode learned");

  // visualize
  auto* vis = app.add_subcommand("visualize", "PCA color-wheel image of a grid");
  std::string vis_grid, vis_out;
  vis->add_option("--grid", vis_grid, "input EGRD file")->required();
  vis->add_option("--out", vis_out, "output PPM file")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_dtype = "both";
  double gc_eps = 1e-3;
  std::uint64_t gc_seed = 7;
  gc->add_option("--dtype", gc_dtype, "float32 | float64 | both");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--seed", gc_seed, "check seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth_data(synth_out, synth_n, synth_size, synth_channels,
                            synth_seed);
    }
    if (train_cmd->parsed()) {
      return run_training("train", train_layer, train_data, train_out, "");
    }
    if (ft->parsed()) {
      return run_training("finetune", ft_layer, ft_data, ft_out, ft_ckpt);
    }
    if (em->parsed()) {
      return cmd_eval_mrr(em_layer, em_ckpt, em_data, em_out, em_pred,
                          em_candidates, em_images, em_seed);
    }
    if (tr->parsed()) {
      return cmd_transform(tr_grid, tr_out, tr_mode, tr_params, tr_ckpt);
    }
    if (vis->parsed()) {
      return cmd_visualize(vis_grid, vis_out);
    }
    if (gc->parsed()) {
      return cmd_gradcheck(gc_dtype, gc_eps, gc_seed);
    }
  } catch (const lepa::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const lepa::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const lepa::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
