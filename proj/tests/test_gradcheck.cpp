#include <doctest.h>

#include <cmath>

#include "lepa/nn.hpp"

using namespace lepa;
using namespace lepa::nn;

TEST_CASE("grad_check on a quadratic toy loss is exact to 1e-9") {
  // single linear layer, squared-error loss against a fixed target
  ParamStore<double> params;
  params.add("w", {2, 3});
  params.add("b", {2});
  Rng rng(5);
  for (auto& v : params.data) v = rng.uniform(-1.0, 1.0);

  ad::Mat<double> x(4, 3);
  ad::Mat<double> target(4, 2);
  for (auto& v : x.a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : target.a) v = rng.uniform(-1.0, 1.0);

  const double err = grad_check<double>(
      params,
      [&](ad::Tape<double>& tape, ParamLeaves<double>& leaves) {
        return tape.mse(tape.linear(tape.constant(x), leaves["w"], leaves["b"]),
                        tape.constant(target));
      },
      1e-5);
  CHECK(err < 1e-9);
}

TEST_CASE("grad_check_lepa full tiny model passes at both precisions") {
  const ModelConfig tiny = tiny_gradcheck_config();
  const double err64 = grad_check_lepa<double>(tiny, 1e-3, 7);
  CHECK(err64 < 1e-5);
  const double err32 = grad_check_lepa<float>(tiny, 1e-3, 7);
  CHECK(err32 < 1e-3);
}

TEST_CASE("tiny gradcheck config stays small") {
  const ModelConfig tiny = tiny_gradcheck_config();
  tiny.validate();
  ModelState<float> state = init_model<float>(tiny, 1);
  CHECK(state.params.data.size() <= 5000);
}
