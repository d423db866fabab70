#include <doctest.h>

#include "lepa/config.hpp"
#include "lepa/errors.hpp"

using namespace lepa;

TEST_CASE("key=value parsing handles comments, blanks, and whitespace") {
  const KvMap kv = parse_kv_text(
      "# a comment\n"
      "\n"
      "objective = lepa\n"
      "epochs=3   # trailing comment\n"
      "  lr = 0.002\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("objective") == "lepa");
  CHECK(kv.at("epochs") == "3");
  CHECK(kv.at("lr") == "0.002");
}

TEST_CASE("config parsing rejects malformed lines and duplicates") {
  CHECK_THROWS_AS(parse_kv_text("novalue\n"), ConfigError);
  CHECK_THROWS_AS(parse_kv_text("=3\n"), ConfigError);
  CHECK_THROWS_AS(parse_kv_text("a=1\na=2\n"), ConfigError);
}

TEST_CASE("apply_kv sets model and training fields") {
  RunConfig cfg;
  apply_kv(cfg, parse_kv_text("enc_dim=32\n"
                              "posenc_mode=default\n"
                              "use_cls=true\n"
                              "objective=nomask\n"
                              "batch_size=4\n"
                              "ema_start=0.99\n"
                              "angle_max=0.5\n"
                              "mask_blocks=2\n"));
  CHECK(cfg.model.enc_dim == 32);
  CHECK(cfg.model.posenc_mode == nn::PosencMode::kDefault);
  CHECK(cfg.model.use_cls);
  CHECK(cfg.train.objective == train::Objective::kNomask);
  CHECK(cfg.train.batch_size == 4);
  CHECK(cfg.train.ema_start == 0.99);
  CHECK(cfg.train.transforms.angle_max == 0.5);
  CHECK(cfg.train.mask.n_target_blocks == 2);
}

TEST_CASE("unknown config keys are hard errors") {
  RunConfig cfg;
  CHECK_THROWS_AS(apply_kv(cfg, parse_kv_text("learning_rate=0.1\n")), ConfigError);
  CHECK(is_known_config_key("lr"));
  CHECK(!is_known_config_key("learning_rate"));
}

TEST_CASE("unparseable values report the key") {
  RunConfig cfg;
  try {
    apply_kv(cfg, parse_kv_text("epochs=three\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epochs") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_kv(cfg, parse_kv_text("use_cls=maybe\n")), ConfigError);
  CHECK_THROWS_AS(apply_kv(cfg, parse_kv_text("objective=sgd\n")), ConfigError);
  CHECK_THROWS_AS(apply_kv(cfg, parse_kv_text("posenc_mode=learned\n")), ConfigError);
}

TEST_CASE("serialize emits every known key and round-trips") {
  RunConfig cfg;
  cfg.model.enc_dim = 48;
  cfg.train.lr = 0.0042;
  cfg.train.objective = train::Objective::kIjepa;
  const KvMap kv = parse_kv_text(serialize(cfg));
  for (const auto& [key, value] : kv) {
    CHECK(is_known_config_key(key));
  }
  RunConfig back;
  apply_kv(back, kv);
  CHECK(back.model.enc_dim == 48);
  CHECK(back.train.lr == 0.0042);
  CHECK(back.train.objective == train::Objective::kIjepa);
}
