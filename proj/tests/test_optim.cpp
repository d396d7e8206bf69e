#include <doctest.h>

#include <cmath>

#include "pneumo/optim.hpp"
#include "pneumo/rng.hpp"

using namespace pneumo;

TEST_SUITE("optim") {

TEST_CASE("adam: zero gradient is a fixed point") {
  Tensor p({4}, {1.0, -2.0, 0.5, 3.25});
  Tensor copy = p;
  auto st = make_adam_state(p);
  Tensor zero({4});
  for (int i = 0; i < 25; ++i) adam_step(p, zero, st, 0.1);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == copy[i]);
  CHECK(st.step == 25);
}

TEST_CASE("adam: first-step magnitude is ~lr regardless of gradient scale") {
  // Hand-computed first step: m-hat = g, v-hat = g^2, so the update is
  // lr * g / (|g| + eps) which has magnitude ~lr for |g| >> eps.
  for (double scale : {1e-3, 1.0, 1e4}) {
    Tensor p({2}, {0.0, 0.0});
    Tensor g({2}, {scale, -scale});
    auto st = make_adam_state(p);
    adam_step(p, g, st, 0.01);
    CHECK(std::abs(std::abs(p[0]) - 0.01) / 0.01 < 1e-5);
    CHECK(p[0] < 0.0);  // moves against the gradient
    CHECK(p[1] > 0.0);
  }
}

TEST_CASE("adam: converges on f(w) = w^2") {
  Tensor w({1}, {1.0});
  auto st = make_adam_state(w);
  for (int i = 0; i < 200; ++i) {
    Tensor g({1}, {2.0 * w[0]});
    adam_step(w, g, st, 0.1);
  }
  CHECK(std::abs(w[0]) < 0.1);
}

TEST_CASE("adam: shape mismatch is rejected") {
  Tensor p({2});
  auto st = make_adam_state(p);
  CHECK_THROWS_AS(adam_step(p, Tensor({3}), st, 0.1), DimensionError);
}

TEST_CASE("lr_at_epoch follows the step decay") {
  LrSchedule s;  // 1e-5, 0.9, 50
  CHECK(lr_at_epoch(s, 0) == 1e-5);
  CHECK(lr_at_epoch(s, 49) == 1e-5);
  CHECK(lr_at_epoch(s, 50) == doctest::Approx(9e-6).epsilon(1e-15));
  CHECK(lr_at_epoch(s, 125) == doctest::Approx(8.1e-6).epsilon(1e-15));
}

TEST_CASE("lr_at_epoch is non-increasing and piecewise constant") {
  LrSchedule s{1e-3, 0.7, 4};
  double prev = lr_at_epoch(s, 0);
  for (int e = 1; e < 40; ++e) {
    const double lr = lr_at_epoch(s, e);
    CHECK(lr <= prev);
    if (e % s.period_epochs != 0) CHECK(lr == prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at_epoch(s, -1), ParameterError);
}

}  // TEST_SUITE
