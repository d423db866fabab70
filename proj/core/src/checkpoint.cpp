#include "lepa/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lepa/errors.hpp"

namespace lepa {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}

void put_f64(std::string& buf, double v) {
  buf.append(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) {
    throw IoError(path + ": truncated checkpoint");
  }
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) {
    throw IoError(path + ": truncated checkpoint");
  }
  return v;
}

void put_config(std::string& buf, const nn::ModelConfig& cfg) {
  put_u32(buf, static_cast<std::uint32_t>(cfg.patch_size));
  put_u32(buf, static_cast<std::uint32_t>(cfg.channels));
  put_u32(buf, static_cast<std::uint32_t>(cfg.img_size));
  put_u32(buf, static_cast<std::uint32_t>(cfg.enc_dim));
  put_u32(buf, static_cast<std::uint32_t>(cfg.enc_depth));
  put_u32(buf, static_cast<std::uint32_t>(cfg.enc_heads));
  put_u32(buf, static_cast<std::uint32_t>(cfg.pred_dim));
  put_u32(buf, static_cast<std::uint32_t>(cfg.pred_depth));
  put_u32(buf, static_cast<std::uint32_t>(cfg.pred_heads));
  put_f64(buf, cfg.mlp_ratio);
  put_u32(buf, cfg.use_cls ? 1u : 0u);
  put_u32(buf, cfg.posenc_mode == nn::PosencMode::kCondPos ? 1u : 0u);
  put_u32(buf, static_cast<std::uint32_t>(cfg.cond_mlp_hidden));
}

nn::ModelConfig get_config(std::istream& in, const std::string& path) {
  nn::ModelConfig cfg;
  cfg.patch_size = static_cast<int>(get_u32(in, path));
  cfg.channels = static_cast<int>(get_u32(in, path));
  cfg.img_size = static_cast<int>(get_u32(in, path));
  cfg.enc_dim = static_cast<int>(get_u32(in, path));
  cfg.enc_depth = static_cast<int>(get_u32(in, path));
  cfg.enc_heads = static_cast<int>(get_u32(in, path));
  cfg.pred_dim = static_cast<int>(get_u32(in, path));
  cfg.pred_depth = static_cast<int>(get_u32(in, path));
  cfg.pred_heads = static_cast<int>(get_u32(in, path));
  cfg.mlp_ratio = get_f64(in, path);
  cfg.use_cls = get_u32(in, path) != 0;
  cfg.posenc_mode = get_u32(in, path) != 0 ? nn::PosencMode::kCondPos
                                           : nn::PosencMode::kDefault;
  cfg.cond_mlp_hidden = static_cast<int>(get_u32(in, path));
  return cfg;
}

void put_tensor(std::string& buf, const std::string& name,
                const std::vector<int>& dims, const float* data,
                std::size_t size) {
  put_u32(buf, static_cast<std::uint32_t>(name.size()));
  buf.append(name);
  put_u32(buf, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) put_u32(buf, static_cast<std::uint32_t>(d));
  buf.append(reinterpret_cast<const char*>(data), size * sizeof(float));
}

struct RawTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

RawTensor get_tensor(std::istream& in, const std::string& path) {
  RawTensor t;
  const std::uint32_t name_len = get_u32(in, path);
  if (name_len > 4096) throw IoError(path + ": implausible tensor name length");
  t.name.resize(name_len);
  if (!in.read(t.name.data(), name_len)) {
    throw IoError(path + ": truncated checkpoint");
  }
  const std::uint32_t rank = get_u32(in, path);
  if (rank > 8) throw IoError(path + ": implausible tensor rank");
  std::size_t size = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    const std::uint32_t d = get_u32(in, path);
    t.dims.push_back(static_cast<int>(d));
    size *= d;
  }
  t.data.resize(size);
  if (!in.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(size * sizeof(float)))) {
    throw IoError(path + ": truncated tensor data");
  }
  return t;
}

void fill_entry(nn::ParamStore<float>& store, const RawTensor& t,
                const std::string& name, const std::string& path) {
  const auto* e = store.find(name);
  if (!e) throw IoError(path + ": unexpected tensor " + t.name);
  if (e->size != t.data.size() || e->dims != t.dims) {
    throw IoError(path + ": tensor shape mismatch for " + t.name);
  }
  std::copy(t.data.begin(), t.data.end(), store.data.begin() + e->offset);
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ModelState<float>& state) {
  std::string buf;
  buf.append("LEPA", 4);
  put_u32(buf, kVersion);
  put_config(buf, state.cfg);

  const std::uint32_t count =
      static_cast<std::uint32_t>(state.params.entries.size() +
                                 state.teacher.entries.size() + 2);
  put_u32(buf, count);
  for (const auto& e : state.params.entries) {
    put_tensor(buf, e.name, e.dims, state.params.data.data() + e.offset, e.size);
  }
  for (const auto& e : state.teacher.entries) {
    put_tensor(buf, "teacher." + e.name, e.dims,
               state.teacher.data.data() + e.offset, e.size);
  }
  const std::vector<int> cdims = {state.cfg.channels};
  put_tensor(buf, "norm.mean", cdims, state.norm_mean.data(),
             state.norm_mean.size());
  put_tensor(buf, "norm.std", cdims, state.norm_std.data(),
             state.norm_std.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

nn::ModelState<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "LEPA", 4) != 0) {
    throw IoError(path + ": not a LEPA checkpoint");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  }
  const nn::ModelConfig cfg = get_config(in, path);
  cfg.validate();
  nn::ModelState<float> state = nn::init_model<float>(cfg, /*seed=*/0);

  const std::uint32_t count = get_u32(in, path);
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t = get_tensor(in, path);
    if (t.name == "norm.mean") {
      if (t.data.size() != state.norm_mean.size()) {
        throw IoError(path + ": norm.mean size mismatch");
      }
      state.norm_mean = t.data;
    } else if (t.name == "norm.std") {
      if (t.data.size() != state.norm_std.size()) {
        throw IoError(path + ": norm.std size mismatch");
      }
      state.norm_std = t.data;
    } else if (t.name.rfind("teacher.", 0) == 0) {
      fill_entry(state.teacher, t, t.name.substr(8), path);
    } else {
      fill_entry(state.params, t, t.name, path);
    }
    ++filled;
  }
  const std::size_t expected =
      state.params.entries.size() + state.teacher.entries.size() + 2;
  if (filled != expected) {
    throw IoError(path + ": checkpoint tensor count mismatch");
  }
  return state;
}

}  // namespace lepa
