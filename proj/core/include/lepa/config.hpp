#pragma once

#include <map>
#include <string>

#include "lepa/nn.hpp"
#include "lepa/training.hpp"

namespace lepa {

// Flat key=value configuration. '#' starts a comment; blank lines ignored.
// Precedence is handled by the caller: flag > file > default. Unknown keys
// are hard errors so drift cannot pass silently.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap read_kv_file(const std::string& path);

struct RunConfig {
  nn::ModelConfig model;
  train::TrainConfig train;
};

// Applies every key in the map onto cfg; throws ConfigError on unknown keys
// or unparseable values.
void apply_kv(RunConfig& cfg, const KvMap& kv);

// The full key set, for documentation and CLI override validation.
bool is_known_config_key(const std::string& key);

std::string serialize(const RunConfig& cfg);

}  // namespace lepa
