#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lepa/checkpoint.hpp"
#include "lepa/errors.hpp"

using namespace lepa;
namespace fs = std::filesystem;

namespace {

nn::ModelConfig test_config() {
  nn::ModelConfig cfg;
  cfg.patch_size = 4;
  cfg.img_size = 16;
  cfg.enc_dim = 16;
  cfg.enc_depth = 2;
  cfg.enc_heads = 2;
  cfg.pred_dim = 8;
  cfg.pred_depth = 1;
  cfg.pred_heads = 2;
  cfg.use_cls = true;
  cfg.posenc_mode = nn::PosencMode::kDefault;
  cfg.mlp_ratio = 3.0;
  cfg.cond_mlp_hidden = 12;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto dir = fs::temp_directory_path() / "lepa_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.lepa").string();

  nn::ModelState<float> state = nn::init_model<float>(test_config(), 123);
  Rng rng(9);
  for (auto& v : state.params.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : state.teacher.data) v = static_cast<float>(rng.uniform(-1, 1));
  state.norm_mean = {0.43f};
  state.norm_std = {0.17f};

  save_checkpoint(path, state);
  const nn::ModelState<float> loaded = load_checkpoint(path);

  CHECK(loaded.cfg == state.cfg);
  CHECK(loaded.params.data == state.params.data);
  CHECK(loaded.teacher.data == state.teacher.data);
  CHECK(loaded.norm_mean == state.norm_mean);
  CHECK(loaded.norm_std == state.norm_std);

  // re-saving the loaded state produces identical bytes
  const std::string path2 = (dir / "model2.lepa").string();
  save_checkpoint(path2, loaded);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects foreign and truncated files") {
  const auto dir = fs::temp_directory_path() / "lepa_ckpt_bad";
  fs::create_directories(dir);

  const std::string wrong = (dir / "wrong.lepa").string();
  {
    std::ofstream out(wrong, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(wrong), IoError);

  const std::string path = (dir / "model.lepa").string();
  nn::ModelState<float> state = nn::init_model<float>(test_config(), 5);
  save_checkpoint(path, state);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.lepa").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint starts with the LEPA magic") {
  const auto dir = fs::temp_directory_path() / "lepa_ckpt_magic";
  fs::create_directories(dir);
  const std::string path = (dir / "m.lepa").string();
  save_checkpoint(path, nn::init_model<float>(test_config(), 3));
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "LEPA");
  fs::remove_all(dir);
}
