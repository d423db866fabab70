// End-to-end tests of the lepa binary: exit codes, file outputs, manifest
// checksums. The binary path arrives as argv[1] from ctest.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "lepa/data_io.hpp"
#include "lepa/geometry.hpp"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::string g_cli;

#define EXPECT(cond, msg)                                                  \
  do {                                                                     \
    if (!(cond)) {                                                         \
      std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << " " << msg  \
                << "\n";                                                   \
      ++g_failures;                                                        \
    }                                                                      \
  } while (0)

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string out_file =
      (fs::temp_directory_path() / "lepa_cli_out.txt").string();
  const std::string cmd = g_cli + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::ostringstream buf;
  buf << in.rdbuf();
  result.output = buf.str();
  return result;
}

std::string last_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: lepa_cli_tests <path-to-lepa-binary>\n";
    return 1;
  }
  g_cli = argv[1];
  const fs::path work = fs::temp_directory_path() / "lepa_cli_tests";
  fs::remove_all(work);
  fs::create_directories(work);

  // --- usage errors exit with 2 ---
  EXPECT(run_cli("").exit_code == 2, "no subcommand is a usage error");
  EXPECT(run_cli("--bogus").exit_code == 2, "unknown flag is a usage error");
  EXPECT(run_cli("frobnicate").exit_code == 2, "unknown subcommand is a usage error");

  // --- synth-data writes images, metadata, and a manifest ---
  const std::string data_dir = (work / "data").string();
  {
    const RunResult r = run_cli("synth-data --out " + data_dir +
                                " --n 24 --img-size 32 --seed 5");
    EXPECT(r.exit_code == 0, "synth-data succeeds: " << r.output);
    EXPECT(fs::exists(data_dir + "/00000.pgm"), "first image exists");
    EXPECT(fs::exists(data_dir + "/00023.pgm"), "last image exists");
    EXPECT(fs::exists(data_dir + "/metadata.txt"), "metadata exists");
    EXPECT(fs::exists(data_dir + "/manifest.json"), "manifest exists");
  }

  // manifest checksums match the files on disk
  {
    std::ifstream in(data_dir + "/manifest.json");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string manifest = buf.str();
    char expected[16];
    std::snprintf(expected, sizeof(expected), "%08x",
                  lepa::crc32_file(data_dir + "/00000.pgm"));
    EXPECT(manifest.find(expected) != std::string::npos,
           "manifest records the image checksum");
  }

  // --- config violations exit with 3, missing files with 4 ---
  {
    const std::string bad_cfg = (work / "bad.cfg").string();
    std::ofstream(bad_cfg) << "not_a_key=1\n";
    const RunResult r = run_cli("train --config " + bad_cfg + " --data " +
                                data_dir + " --out " + (work / "t0").string());
    EXPECT(r.exit_code == 3, "unknown config key exits 3, got " << r.exit_code);
    EXPECT(r.output.find("error: config") != std::string::npos,
           "machine-parsable error category");
  }
  {
    const RunResult r = run_cli("eval-mrr --ckpt " + (work / "no.lepa").string() +
                                " --data " + data_dir);
    EXPECT(r.exit_code == 4, "missing checkpoint exits 4, got " << r.exit_code);
    EXPECT(r.output.find("error: io") != std::string::npos, "io error category");
  }

  // --- a short training run produces checkpoints and a loss log ---
  const std::string run_dir = (work / "run").string();
  {
    const std::string cfg = (work / "train.cfg").string();
    std::ofstream(cfg) << "img_size=32\npatch_size=8\nenc_dim=16\nenc_depth=1\n"
                          "enc_heads=2\npred_dim=16\npred_depth=1\npred_heads=2\n"
                          "cond_mlp_hidden=8\nobjective=lepa\nepochs=1\n"
                          "steps_per_epoch=8\nbatch_size=2\nseed=3\n";
    const RunResult r = run_cli("train --config " + cfg + " --data " + data_dir +
                                " --out " + run_dir);
    EXPECT(r.exit_code == 0, "train succeeds: " << r.output);
    EXPECT(fs::exists(run_dir + "/ckpt-final.lepa"), "final checkpoint exists");
    EXPECT(fs::exists(run_dir + "/loss.log"), "loss log exists");
    EXPECT(fs::exists(run_dir + "/manifest.json"), "train manifest exists");
  }

  // --set overrides beat the config file
  {
    const std::string cfg = (work / "train2.cfg").string();
    std::ofstream(cfg) << "img_size=32\npatch_size=8\nenc_dim=16\nenc_depth=1\n"
                          "enc_heads=2\npred_dim=16\npred_depth=1\npred_heads=2\n"
                          "cond_mlp_hidden=8\nobjective=lepa\nepochs=2\n"
                          "steps_per_epoch=4\nbatch_size=2\nseed=3\n";
    const std::string dir2 = (work / "run2").string();
    const RunResult r = run_cli("train --config " + cfg + " --set epochs=1" +
                                " --data " + data_dir + " --out " + dir2);
    EXPECT(r.exit_code == 0, "train with override succeeds: " << r.output);
    std::ifstream resolved(dir2 + "/config.resolved");
    std::ostringstream buf;
    buf << resolved.rdbuf();
    EXPECT(buf.str().find("epochs=1") != std::string::npos,
           "flag override wins over the file");
  }

  // --- eval-mrr with the oracle predictor prints 1.0000 as the last line ---
  {
    const RunResult r = run_cli("eval-mrr --ckpt " + run_dir +
                                "/ckpt-final.lepa --data " + data_dir +
                                " --out " + (work / "mrr").string() +
                                " --predictor oracle --candidates 8 --images 5");
    EXPECT(r.exit_code == 0, "eval-mrr succeeds: " << r.output);
    EXPECT(last_line(r.output) == "1.0000",
           "oracle mrr prints 1.0000, got '" << last_line(r.output) << "'");
    EXPECT(fs::exists((work / "mrr" / "mrr-report.txt")), "report written");
  }

  // --- transform with identity params is byte-identical on the payload ---
  {
    lepa::EmbeddingGrid g = lepa::EmbeddingGrid::zeros(4, 4, 8);
    lepa::Rng rng(11);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1, 1));
    const std::string in_path = (work / "in.egrd").string();
    const std::string out_path = (work / "out.egrd").string();
    lepa::write_grid(in_path, g);
    const RunResult r = run_cli("transform --grid " + in_path + " --out " +
                                out_path + " --mode nearest --params 0,0,0,1");
    EXPECT(r.exit_code == 0, "transform succeeds: " << r.output);
    std::ifstream a(in_path, std::ios::binary), b(out_path, std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
    std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
    EXPECT(bytes_a == bytes_b, "identity transform is byte-identical");

    const RunResult bad = run_cli("transform --grid " + in_path + " --out " +
                                  out_path + " --mode cubic --params 0,0,0,1");
    EXPECT(bad.exit_code == 3, "unknown mode exits 3, got " << bad.exit_code);

    const RunResult learned = run_cli(
        "transform --grid " + in_path + " --out " + out_path +
        " --mode learned --params 0.1,0,0.5,1.1 --ckpt " + run_dir +
        "/ckpt-final.lepa");
    // grid dim 8 does not match the checkpoint's enc_dim 16
    EXPECT(learned.exit_code == 3,
           "mismatched grid/checkpoint exits 3, got " << learned.exit_code);
  }

  // --- learned transform on a matching grid works without any image ---
  {
    lepa::EmbeddingGrid g = lepa::EmbeddingGrid::zeros(4, 4, 16);
    lepa::Rng rng(13);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1, 1));
    const std::string in_path = (work / "in16.egrd").string();
    const std::string out_path = (work / "out16.egrd").string();
    lepa::write_grid(in_path, g);
    const RunResult r = run_cli("transform --grid " + in_path + " --out " +
                                out_path + " --mode learned --params 0,0,1.57,1" +
                                " --ckpt " + run_dir + "/ckpt-final.lepa");
    EXPECT(r.exit_code == 0, "learned transform succeeds: " << r.output);
    const lepa::EmbeddingGrid out = lepa::read_grid(out_path);
    EXPECT(out.dim == 16 && out.grid_h == 4, "learned output has grid shape");
  }

  // --- visualize renders a color-wheel pixmap ---
  {
    const std::string vis_path = (work / "vis.ppm").string();
    const RunResult r = run_cli("visualize --grid " + (work / "in16.egrd").string() +
                                " --out " + vis_path);
    EXPECT(r.exit_code == 0, "visualize succeeds: " << r.output);
    const lepa::ImageTensor img = lepa::read_pixmap(vis_path);
    EXPECT(img.channels == 3 && img.height == 4 && img.width == 4,
           "visualization is a 4x4 color image");
  }

  // --- gradcheck prints errors and passes its documented thresholds ---
  {
    const RunResult r = run_cli("gradcheck --dtype float64");
    EXPECT(r.exit_code == 0, "gradcheck float64 passes: " << r.output);
    EXPECT(r.output.find("max relative error") != std::string::npos,
           "gradcheck prints the error");
  }

  // --- determinism: same seed twice gives identical artifact checksums ---
  {
    const std::string cfg = (work / "det.cfg").string();
    std::ofstream(cfg) << "img_size=32\npatch_size=8\nenc_dim=16\nenc_depth=1\n"
                          "enc_heads=2\npred_dim=16\npred_depth=1\npred_heads=2\n"
                          "cond_mlp_hidden=8\nobjective=lepa\nepochs=1\n"
                          "steps_per_epoch=5\nbatch_size=2\nseed=9\n";
    const std::string d1 = (work / "det1").string();
    const std::string d2 = (work / "det2").string();
    EXPECT(run_cli("train --config " + cfg + " --data " + data_dir + " --out " +
                   d1).exit_code == 0, "det run 1");
    EXPECT(run_cli("train --config " + cfg + " --data " + data_dir + " --out " +
                   d2).exit_code == 0, "det run 2");
    EXPECT(lepa::crc32_file(d1 + "/ckpt-final.lepa") ==
               lepa::crc32_file(d2 + "/ckpt-final.lepa"),
           "identical seeds give identical checkpoints");
    EXPECT(lepa::crc32_file(d1 + "/loss.log") == lepa::crc32_file(d2 + "/loss.log"),
           "identical seeds give identical loss logs");
  }

  fs::remove_all(work);
  if (g_failures == 0) {
    std::printf("all cli tests passed\n");
    return 0;
  }
  std::printf("%d cli test(s) failed\n", g_failures);
  return 1;
}
