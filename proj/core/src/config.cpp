#include "lepa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "lepa/errors.hpp"

namespace lepa {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected unsigned integer, got '" +
                      value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch_size = parse_int(k, v); }},
      {"channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.channels = parse_int(k, v); }},
      {"img_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.img_size = parse_int(k, v); }},
      {"enc_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.enc_dim = parse_int(k, v); }},
      {"enc_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.enc_depth = parse_int(k, v); }},
      {"enc_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.enc_heads = parse_int(k, v); }},
      {"pred_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.pred_dim = parse_int(k, v); }},
      {"pred_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.pred_depth = parse_int(k, v); }},
      {"pred_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.pred_heads = parse_int(k, v); }},
      {"mlp_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mlp_ratio = parse_double(k, v); }},
      {"use_cls", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_cls = parse_bool(k, v); }},
      {"posenc_mode", [](RunConfig& c, const std::string&, const std::string& v) { c.model.posenc_mode = nn::posenc_mode_from_string(v); }},
      {"cond_mlp_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.cond_mlp_hidden = parse_int(k, v); }},

      {"objective", [](RunConfig& c, const std::string&, const std::string& v) { c.train.objective = train::objective_from_string(v); }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_int(k, v); }},
      {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_int(k, v); }},
      {"steps_per_epoch", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.steps_per_epoch = parse_int(k, v); }},
      {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); }},
      {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_double(k, v); }},
      {"warmup_frac", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.warmup_frac = parse_double(k, v); }},
      {"ema_start", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.ema_start = parse_double(k, v); }},
      {"ema_end", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.ema_end = parse_double(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); }},
      {"mrr_probe_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mrr_probe_every = parse_int(k, v); }},

      {"mask_blocks", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.n_target_blocks = parse_int(k, v); }},
      {"target_scale_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.target_scale_min = parse_double(k, v); }},
      {"target_scale_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.target_scale_max = parse_double(k, v); }},
      {"aspect_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.aspect_min = parse_double(k, v); }},
      {"aspect_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.aspect_max = parse_double(k, v); }},
      {"ctx_scale_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.ctx_scale_min = parse_double(k, v); }},
      {"ctx_scale_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mask.ctx_scale_max = parse_double(k, v); }},

      {"tx_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.tx_min = parse_double(k, v); }},
      {"tx_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.tx_max = parse_double(k, v); }},
      {"ty_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.ty_min = parse_double(k, v); }},
      {"ty_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.ty_max = parse_double(k, v); }},
      {"angle_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.angle_min = parse_double(k, v); }},
      {"angle_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.angle_max = parse_double(k, v); }},
      {"scale_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.scale_min = parse_double(k, v); }},
      {"scale_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.transforms.scale_max = parse_double(k, v); }},
  };
  return table;
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (out.count(key)) {
      throw ConfigError("config key '" + key + "' appears more than once");
    }
    out[key] = value;
  }
  return out;
}

KvMap read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

void apply_kv(RunConfig& cfg, const KvMap& kv) {
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    if (it == table.end()) {
      throw ConfigError("unknown config key: " + key);
    }
    it->second(cfg, key, value);
  }
}

bool is_known_config_key(const std::string& key) {
  return setters().count(key) > 0;
}

std::string serialize(const RunConfig& cfg) {
  std::ostringstream os;
  os << "patch_size=" << cfg.model.patch_size << "\n"
     << "channels=" << cfg.model.channels << "\n"
     << "img_size=" << cfg.model.img_size << "\n"
     << "enc_dim=" << cfg.model.enc_dim << "\n"
     << "enc_depth=" << cfg.model.enc_depth << "\n"
     << "enc_heads=" << cfg.model.enc_heads << "\n"
     << "pred_dim=" << cfg.model.pred_dim << "\n"
     << "pred_depth=" << cfg.model.pred_depth << "\n"
     << "pred_heads=" << cfg.model.pred_heads << "\n"
     << "mlp_ratio=" << cfg.model.mlp_ratio << "\n"
     << "use_cls=" << (cfg.model.use_cls ? "true" : "false") << "\n"
     << "posenc_mode=" << nn::to_string(cfg.model.posenc_mode) << "\n"
     << "cond_mlp_hidden=" << cfg.model.cond_mlp_hidden << "\n"
     << "objective=" << train::to_string(cfg.train.objective) << "\n"
     << "epochs=" << cfg.train.epochs << "\n"
     << "batch_size=" << cfg.train.batch_size << "\n"
     << "steps_per_epoch=" << cfg.train.steps_per_epoch << "\n"
     << "lr=" << cfg.train.lr << "\n"
     << "weight_decay=" << cfg.train.weight_decay << "\n"
     << "warmup_frac=" << cfg.train.warmup_frac << "\n"
     << "ema_start=" << cfg.train.ema_start << "\n"
     << "ema_end=" << cfg.train.ema_end << "\n"
     << "seed=" << cfg.train.seed << "\n"
     << "mrr_probe_every=" << cfg.train.mrr_probe_every << "\n"
     << "mask_blocks=" << cfg.train.mask.n_target_blocks << "\n"
     << "target_scale_min=" << cfg.train.mask.target_scale_min << "\n"
     << "target_scale_max=" << cfg.train.mask.target_scale_max << "\n"
     << "aspect_min=" << cfg.train.mask.aspect_min << "\n"
     << "aspect_max=" << cfg.train.mask.aspect_max << "\n"
     << "ctx_scale_min=" << cfg.train.mask.ctx_scale_min << "\n"
     << "ctx_scale_max=" << cfg.train.mask.ctx_scale_max << "\n"
     << "tx_min=" << cfg.train.transforms.tx_min << "\n"
     << "tx_max=" << cfg.train.transforms.tx_max << "\n"
     << "ty_min=" << cfg.train.transforms.ty_min << "\n"
     << "ty_max=" << cfg.train.transforms.ty_max << "\n"
     << "angle_min=" << cfg.train.transforms.angle_min << "\n"
     << "angle_max=" << cfg.train.transforms.angle_max << "\n"
     << "scale_min=" << cfg.train.transforms.scale_min << "\n"
     << "scale_max=" << cfg.train.transforms.scale_max << "\n";
  return os.str();
}

}  // namespace lepa
