#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lepa/errors.hpp"
#include "lepa/nn.hpp"

using namespace lepa;
using namespace lepa::nn;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.patch_size = 4;
  cfg.channels = 1;
  cfg.img_size = 16;  // 4x4 grid
  cfg.enc_dim = 16;
  cfg.enc_depth = 1;
  cfg.enc_heads = 2;
  cfg.pred_dim = 16;
  cfg.pred_depth = 1;
  cfg.pred_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.use_cls = false;
  cfg.posenc_mode = PosencMode::kCondPos;
  cfg.cond_mlp_hidden = 8;
  return cfg;
}

ImageTensor random_image(const ModelConfig& cfg, std::uint64_t seed) {
  ImageTensor img = ImageTensor::zeros(cfg.channels, cfg.img_size, cfg.img_size);
  Rng rng(seed);
  for (auto& v : img.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return img;
}

// ---- straight-line double-precision re-implementations (test oracles) ----

using DMat = std::vector<std::vector<double>>;

DMat param_matrix(const ParamStore<float>& store, const std::string& name) {
  const auto& e = store.at(name);
  int rows = 1, cols = static_cast<int>(e.size);
  if (e.dims.size() == 2) {
    rows = e.dims[0];
    cols = e.dims[1];
  }
  DMat m(rows, std::vector<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m[i][j] = store.data[e.offset + static_cast<std::size_t>(i) * cols + j];
  return m;
}

DMat linear_ref(const DMat& x, const DMat& w, const DMat* b) {
  DMat y(x.size(), std::vector<double>(w.size(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.size(); ++o) {
      double acc = b ? (*b)[0][o] : 0.0;
      for (std::size_t k = 0; k < x[0].size(); ++k) acc += x[i][k] * w[o][k];
      y[i][o] = acc;
    }
  return y;
}

DMat layernorm_ref(const DMat& x, const DMat* gamma, const DMat* beta) {
  DMat y = x;
  for (auto& row : y) {
    double mean = std::accumulate(row.begin(), row.end(), 0.0) / row.size();
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = (row[j] - mean) * inv;
      if (gamma) row[j] = row[j] * (*gamma)[0][j] + (*beta)[0][j];
    }
  }
  return y;
}

DMat attention_ref(const ParamStore<float>& store, const std::string& prefix,
                   const DMat& q_in, const DMat& kv_in, int heads) {
  const int dim = static_cast<int>(q_in[0].size());
  const int hd = dim / heads;
  const DMat wq = param_matrix(store, prefix + ".wq");
  const DMat bq = param_matrix(store, prefix + ".bq");
  const DMat wk = param_matrix(store, prefix + ".wk");
  const DMat wv = param_matrix(store, prefix + ".wv");
  const DMat bv = param_matrix(store, prefix + ".bv");
  const DMat q = linear_ref(q_in, wq, &bq);
  const DMat k = linear_ref(kv_in, wk, nullptr);
  const DMat v = linear_ref(kv_in, wv, &bv);
  DMat merged(q.size(), std::vector<double>(dim, 0.0));
  for (int h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> logits(kv_in.size());
      for (std::size_t j = 0; j < kv_in.size(); ++j) {
        double acc = 0;
        for (int d = 0; d < hd; ++d) acc += q[i][h * hd + d] * k[j][h * hd + d];
        logits[j] = acc / std::sqrt(double(hd));
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double denom = 0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        denom += l;
      }
      for (std::size_t j = 0; j < kv_in.size(); ++j) {
        for (int d = 0; d < hd; ++d) {
          merged[i][h * hd + d] += logits[j] / denom * v[j][h * hd + d];
        }
      }
    }
  }
  const DMat wo = param_matrix(store, prefix + ".wo");
  const DMat bo = param_matrix(store, prefix + ".bo");
  return linear_ref(merged, wo, &bo);
}

DMat mlp_ref(const ParamStore<float>& store, const std::string& prefix,
             const DMat& x) {
  const DMat w1 = param_matrix(store, prefix + ".mlp.w1");
  const DMat b1 = param_matrix(store, prefix + ".mlp.b1");
  const DMat w2 = param_matrix(store, prefix + ".mlp.w2");
  const DMat b2 = param_matrix(store, prefix + ".mlp.b2");
  DMat h = linear_ref(x, w1, &b1);
  for (auto& row : h)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475));
  return linear_ref(h, w2, &b2);
}

DMat add_ref(const DMat& a, const DMat& b) {
  DMat y = a;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += b[i][j];
  return y;
}

DMat block_ref(const ParamStore<float>& store, const std::string& blk,
               const std::string& attn_name, const DMat& x_in, const DMat* ctx,
               int heads) {
  const DMat ln1g = param_matrix(store, blk + ".ln1.g");
  const DMat ln1b = param_matrix(store, blk + ".ln1.b");
  DMat x = x_in;
  const DMat normed = layernorm_ref(x, &ln1g, &ln1b);
  x = add_ref(x, attention_ref(store, blk + attn_name, normed, normed, heads));
  if (ctx) {
    const DMat lnxg = param_matrix(store, blk + ".ln_x.g");
    const DMat lnxb = param_matrix(store, blk + ".ln_x.b");
    const DMat lncg = param_matrix(store, blk + ".ln_ctx.g");
    const DMat lncb = param_matrix(store, blk + ".ln_ctx.b");
    x = add_ref(x, attention_ref(store, blk + ".cross",
                                 layernorm_ref(x, &lnxg, &lnxb),
                                 layernorm_ref(*ctx, &lncg, &lncb), heads));
  }
  const DMat ln2g = param_matrix(store, blk + ".ln2.g");
  const DMat ln2b = param_matrix(store, blk + ".ln2.b");
  return add_ref(x, mlp_ref(store, blk, layernorm_ref(x, &ln2g, &ln2b)));
}

DMat patch_rows_ref(const ImageTensor& img, const ModelConfig& cfg) {
  const int ps = cfg.patch_size, gs = cfg.grid_side();
  DMat rows(cfg.n_patches(), std::vector<double>(cfg.patch_len()));
  for (int pi = 0; pi < gs; ++pi)
    for (int pj = 0; pj < gs; ++pj) {
      int k = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            rows[pi * gs + pj][k++] = img.at(c, pi * ps + y, pj * ps + x);
    }
  return rows;
}

DMat encode_ref(const ModelState<float>& state, const ImageTensor& img) {
  const ModelConfig& cfg = state.cfg;
  const DMat pw = param_matrix(state.params, "enc.patch.w");
  const DMat pb = param_matrix(state.params, "enc.patch.b");
  DMat x = linear_ref(patch_rows_ref(img, cfg), pw, &pb);
  const PosEncoding pe = encoder_pos_encodings(cfg);
  for (int i = 0; i < cfg.n_patches(); ++i)
    for (int d = 0; d < cfg.enc_dim; ++d)
      x[i][d] += pe.values[static_cast<std::size_t>(i) * cfg.enc_dim + d];
  for (int k = 0; k < cfg.enc_depth; ++k) {
    x = block_ref(state.params, "enc.blk" + std::to_string(k), ".attn", x,
                  nullptr, cfg.enc_heads);
  }
  return layernorm_ref(x, nullptr, nullptr);
}

EmbeddingGrid tape_encode(const ModelState<float>& state, const ImageTensor& img) {
  return encode_image(state, state.params, img);
}

}  // namespace

TEST_CASE("patchify produces zero tokens for a zero image with zero bias") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 1);
  const ImageTensor img = ImageTensor::zeros(cfg.channels, cfg.img_size, cfg.img_size);
  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  auto tokens = patchify(tape, leaves, img, cfg);
  const auto& v = tape.val(tokens);
  CHECK(v.rows == cfg.n_patches());
  CHECK(v.cols == cfg.enc_dim);
  for (float x : v.a) CHECK(x == 0.0f);
}

TEST_CASE("patchify token count for a 32px image with patch 8 is 16") {
  ModelConfig cfg;  // defaults: img 32, patch 8
  ModelState<float> state = init_model<float>(cfg, 2);
  const ImageTensor img = ImageTensor::zeros(1, 32, 32);
  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  CHECK(tape.val(patchify(tape, leaves, img, cfg)).rows == 16);
}

TEST_CASE("patchify one-hot pixel lands in exactly one patch row at the right offset") {
  ModelConfig cfg = small_config();
  cfg.enc_dim = cfg.patch_len();  // identity projection possible
  ModelState<float> state = init_model<float>(cfg, 3);
  // overwrite the patch projection with the identity
  const auto& e = state.params.at("enc.patch.w");
  std::fill(state.params.data.begin() + e.offset,
            state.params.data.begin() + e.offset + e.size, 0.0f);
  for (int i = 0; i < cfg.patch_len(); ++i) {
    state.params.data[e.offset + static_cast<std::size_t>(i) * cfg.patch_len() + i] = 1.0f;
  }
  ImageTensor img = ImageTensor::zeros(cfg.channels, cfg.img_size, cfg.img_size);
  const int y = 9, x = 6;  // patch (2, 1), offset (1, 2) within the patch
  img.at(0, y, x) = 1.0f;

  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  const auto& tokens = tape.val(patchify(tape, leaves, img, cfg));
  const int expected_row = (y / cfg.patch_size) * cfg.grid_side() + x / cfg.patch_size;
  const int expected_col = (y % cfg.patch_size) * cfg.patch_size + x % cfg.patch_size;
  for (int i = 0; i < tokens.rows; ++i) {
    for (int j = 0; j < tokens.cols; ++j) {
      CHECK(tokens(i, j) == (i == expected_row && j == expected_col ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("patchify rejects mismatched image shapes") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 4);
  const ImageTensor img = ImageTensor::zeros(1, 8, 8);
  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  CHECK_THROWS_AS(patchify(tape, leaves, img, cfg), ConfigError);
}

TEST_CASE("encode with depth 0 reduces to normalized tokens plus encodings") {
  ModelConfig cfg = small_config();
  cfg.enc_depth = 0;
  ModelState<float> state = init_model<float>(cfg, 5);
  const ImageTensor img = random_image(cfg, 6);
  const EmbeddingGrid out = tape_encode(state, img);

  const DMat pw = param_matrix(state.params, "enc.patch.w");
  const DMat pb = param_matrix(state.params, "enc.patch.b");
  DMat x = linear_ref(patch_rows_ref(img, cfg), pw, &pb);
  const PosEncoding pe = encoder_pos_encodings(cfg);
  for (int i = 0; i < cfg.n_patches(); ++i)
    for (int d = 0; d < cfg.enc_dim; ++d)
      x[i][d] += pe.values[static_cast<std::size_t>(i) * cfg.enc_dim + d];
  x = layernorm_ref(x, nullptr, nullptr);
  for (int i = 0; i < cfg.n_patches(); ++i)
    for (int d = 0; d < cfg.enc_dim; ++d)
      CHECK(std::abs(out.data[static_cast<std::size_t>(i) * cfg.enc_dim + d] - x[i][d]) < 1e-5);
}

TEST_CASE("encode matches a straight-line double-precision oracle") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 7);
  const ImageTensor img = random_image(cfg, 8);
  const EmbeddingGrid got = tape_encode(state, img);
  const DMat expected = encode_ref(state, img);
  for (int i = 0; i < cfg.n_patches(); ++i) {
    for (int d = 0; d < cfg.enc_dim; ++d) {
      CHECK(std::abs(got.data[static_cast<std::size_t>(i) * cfg.enc_dim + d] -
                     expected[i][d]) < 1e-5);
    }
  }
}

TEST_CASE("encode is permutation-equivariant over token/posenc pairs") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 9);
  const int n = cfg.n_patches();
  Rng rng(10);
  ad::Mat<float> tokens(n, cfg.enc_dim);
  for (auto& v : tokens.a) v = static_cast<float>(rng.uniform(-1, 1));
  const PosEncoding pe = encoder_pos_encodings(cfg);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const ad::Mat<float> pe_rows = posenc_rows<float>(pe, all, false);

  // swap tokens 3 and 5 together with their encodings
  ad::Mat<float> tokens_p = tokens;
  ad::Mat<float> pe_p = pe_rows;
  for (int d = 0; d < cfg.enc_dim; ++d) {
    std::swap(tokens_p(3, d), tokens_p(5, d));
    std::swap(pe_p(3, d), pe_p(5, d));
  }

  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  const auto& a = tape.val(encode(tape, leaves, tape.constant(tokens), pe_rows, cfg).grid);
  const auto& b = tape.val(encode(tape, leaves, tape.constant(tokens_p), pe_p, cfg).grid);
  for (int i = 0; i < n; ++i) {
    const int src = i == 3 ? 5 : i == 5 ? 3 : i;
    for (int d = 0; d < cfg.enc_dim; ++d) {
      CHECK(b(i, d) == doctest::Approx(a(src, d)).epsilon(1e-6));
    }
  }
}

TEST_CASE("encode raises a numeric error naming the failing stage") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 11);
  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  ad::Mat<float> tokens(cfg.n_patches(), cfg.enc_dim);
  tokens.a[0] = std::numeric_limits<float>::infinity();
  const PosEncoding pe = encoder_pos_encodings(cfg);
  std::vector<int> all(cfg.n_patches());
  std::iota(all.begin(), all.end(), 0);
  try {
    encode(tape, leaves, tape.constant(tokens), posenc_rows<float>(pe, all, false), cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("encoder input") != std::string::npos);
  }

  // inf weight inside block 0 must name the block
  ModelState<float> bad = init_model<float>(cfg, 12);
  const auto& e = bad.params.at("enc.blk0.attn.wo");
  bad.params.data[e.offset] = std::numeric_limits<float>::infinity();
  const ImageTensor img = random_image(cfg, 13);
  try {
    encode_image(bad, bad.params, img);
    FAIL("expected NumericError");
  } catch (const NumericError& err) {
    CHECK(std::string(err.what()).find("block 0") != std::string::npos);
  }
}

TEST_CASE("encode with CLS splits the token off and still returns the full grid") {
  ModelConfig cfg = small_config();
  cfg.use_cls = true;
  ModelState<float> state = init_model<float>(cfg, 14);
  const ImageTensor img = random_image(cfg, 15);
  std::vector<float> cls;
  const EmbeddingGrid grid = encode_image(state, state.params, img, &cls);
  CHECK(grid.grid_h == cfg.grid_side());
  CHECK(grid.grid_w == cfg.grid_side());
  CHECK(cls.size() == static_cast<std::size_t>(cfg.enc_dim));
}

TEST_CASE("forward passes are deterministic") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 16);
  const ImageTensor img = random_image(cfg, 17);
  CHECK(tape_encode(state, img) == tape_encode(state, img));
}

TEST_CASE("predict with zeroed cross-attention values ignores the context") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 18);
  for (int k = 0; k < cfg.pred_depth; ++k) {
    for (const char* leaf : {".cross.wv", ".cross.bv"}) {
      const auto& e = state.params.at("pred.blk" + std::to_string(k) + leaf);
      std::fill(state.params.data.begin() + e.offset,
                state.params.data.begin() + e.offset + e.size, 0.0f);
    }
  }
  const int n = cfg.n_patches();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(19);

  auto run = [&](std::uint64_t ctx_seed) {
    ad::Tape<float> tape;
    ParamLeaves<float> leaves(tape, state.params, false);
    ad::Mat<float> ctx(n, cfg.enc_dim);
    Rng crng(ctx_seed);
    for (auto& v : ctx.a) v = static_cast<float>(crng.uniform(-1, 1));
    auto out = predict(tape, leaves, tape.constant(std::move(ctx)), all, false,
                       all, std::nullopt, false, cfg);
    return tape.val(out);
  };
  const auto a = run(100);
  const auto b = run(200);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.a[i] == b.a[i]);
}

TEST_CASE("predict responds to the conditioning parameters in both modes") {
  for (const auto mode : {PosencMode::kCondPos, PosencMode::kDefault}) {
    ModelConfig cfg = small_config();
    cfg.posenc_mode = mode;
    ModelState<float> state = init_model<float>(cfg, 20);
    const int n = cfg.n_patches();
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    ad::Mat<float> ctx(n, cfg.enc_dim);
    Rng rng(21);
    for (auto& v : ctx.a) v = static_cast<float>(rng.uniform(-1, 1));

    auto run = [&](const TransformParams& p) {
      ad::Tape<float> tape;
      ParamLeaves<float> leaves(tape, state.params, false);
      auto out = predict(tape, leaves, tape.constant(ctx), all, false, all, {p},
                         true, cfg);
      return tape.val(out);
    };
    TransformParams p2;
    p2.angle = 0.9;
    p2.tx = 0.2;
    const auto a = run(TransformParams::identity());
    const auto b = run(p2);
    float max_diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      max_diff = std::max(max_diff, std::abs(a.a[i] - b.a[i]));
    }
    CHECK(max_diff > 0.0f);
  }
}

TEST_CASE("predict matches a straight-line oracle") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 22);
  const int n = cfg.n_patches();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(23);
  ad::Mat<float> ctx(n, cfg.enc_dim);
  for (auto& v : ctx.a) v = static_cast<float>(rng.uniform(-1, 1));
  TransformParams p;
  p.angle = 0.4;
  p.scale = 1.1;

  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  const auto& got =
      tape.val(predict(tape, leaves, tape.constant(ctx), all, false, all, {p},
                       true, cfg));

  // reference: project context, add identity encodings; queries from the
  // conditioned encodings; one cross block; final norm + output projection
  DMat ctx_ref(n, std::vector<double>(cfg.enc_dim));
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < cfg.enc_dim; ++d) ctx_ref[i][d] = ctx(i, d);
  const DMat in_w = param_matrix(state.params, "pred.in.w");
  const DMat in_b = param_matrix(state.params, "pred.in.b");
  DMat ctx_p = linear_ref(ctx_ref, in_w, &in_b);
  const PosEncoding ctx_pe = predictor_ctx_encodings(cfg);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < cfg.pred_dim; ++d)
      ctx_p[i][d] += ctx_pe.values[static_cast<std::size_t>(i) * cfg.pred_dim + d];

  const DMat mask = param_matrix(state.params, "pred.mask");
  // mask tokens carry the source coordinates: inverse-transformed grid
  const PosEncoding qpe = cond_pos_encodings(cfg.grid_side(), cfg.grid_side(),
                                             cfg.pred_dim, invert(p));
  DMat q(n, std::vector<double>(cfg.pred_dim));
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < cfg.pred_dim; ++d)
      q[i][d] = mask[0][d] + qpe.values[static_cast<std::size_t>(i) * cfg.pred_dim + d];

  q = block_ref(state.params, "pred.blk0", ".self", q, &ctx_p, cfg.pred_heads);
  const DMat ng = param_matrix(state.params, "pred.norm.g");
  const DMat nb = param_matrix(state.params, "pred.norm.b");
  q = layernorm_ref(q, &ng, &nb);
  const DMat ow = param_matrix(state.params, "pred.out.w");
  const DMat ob = param_matrix(state.params, "pred.out.b");
  const DMat expected = linear_ref(q, ow, &ob);

  for (int i = 0; i < n; ++i)
    for (int d = 0; d < cfg.enc_dim; ++d)
      CHECK(std::abs(got(i, d) - expected[i][d]) < 1e-5);
}

TEST_CASE("predict requires parameters when conditioning is enabled") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 24);
  const int n = cfg.n_patches();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  ad::Tape<float> tape;
  ParamLeaves<float> leaves(tape, state.params, false);
  ad::Mat<float> ctx(n, cfg.enc_dim);
  CHECK_THROWS_AS(predict(tape, leaves, tape.constant(std::move(ctx)), all,
                          false, all, std::nullopt, true, cfg),
                  ConfigError);
}

TEST_CASE("ema_update matches the closed-form formula bit-exactly") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 25);
  Rng rng(26);
  for (auto& v : state.teacher.data) v = static_cast<float>(rng.uniform(-1, 1));

  for (const float m : {0.0f, 0.5f, 0.99f, 1.0f}) {
    ModelState<float> s2 = state;
    ema_update(s2.teacher, s2.params, m);
    for (const auto& te : state.teacher.entries) {
      const auto& se = state.params.at(te.name);
      for (std::size_t i = 0; i < te.size; ++i) {
        const float expected = m * state.teacher.data[te.offset + i] +
                               (1.0f - m) * state.params.data[se.offset + i];
        CHECK(s2.teacher.data[te.offset + i] == expected);
      }
    }
  }
}

TEST_CASE("ema_update rejects momentum outside [0, 1] and mismatched shapes") {
  const ModelConfig cfg = small_config();
  ModelState<float> state = init_model<float>(cfg, 27);
  CHECK_THROWS_AS(ema_update(state.teacher, state.params, 1.5f), ConfigError);
  ModelConfig other = cfg;
  other.enc_dim = 32;
  ModelState<float> bigger = init_model<float>(other, 28);
  CHECK_THROWS_AS(ema_update(state.teacher, bigger.params, 0.5f), NumericError);
}

TEST_CASE("model config validation catches bad dimensions") {
  ModelConfig cfg = small_config();
  cfg.img_size = 30;  // not divisible by patch 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.enc_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.enc_dim = 18;  // not divisible by 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("teacher starts as an exact copy of the student encoder") {
  const ModelConfig cfg = small_config();
  const ModelState<float> state = init_model<float>(cfg, 29);
  for (const auto& te : state.teacher.entries) {
    const auto& se = state.params.at(te.name);
    for (std::size_t i = 0; i < te.size; ++i) {
      CHECK(state.teacher.data[te.offset + i] == state.params.data[se.offset + i]);
    }
  }
}
