#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pneumo/error.hpp"
#include "pneumo/metrics.hpp"
#include "pneumo/rng.hpp"
#include "support/oracles.hpp"

using namespace pneumo;

TEST_SUITE("metrics") {

TEST_CASE("confusion: perfect scores have no errors") {
  auto c = confusion({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
  CHECK(c.tp == 2);
  CHECK(c.tn == 2);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);
  CHECK(c.total() == 4);
}

TEST_CASE("confusion: threshold boundary is inclusive") {
  auto c = confusion({0.5, 0.5, 0.5}, {1, 0, 1}, 0.5);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.tn == 0);
  CHECK(c.fn == 0);
}

TEST_CASE("confusion matches the loop oracle on random input") {
  Rng rng(50);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    scores.push_back(rng.next_double());
    labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
  }
  auto got = confusion(scores, labels, 0.35);
  auto want = oracle::confusion(scores, labels, 0.35);
  CHECK(got.tp == want.tp);
  CHECK(got.fp == want.fp);
  CHECK(got.tn == want.tn);
  CHECK(got.fn == want.fn);
  CHECK(got.total() == 50);
  CHECK_THROWS_AS(confusion({0.5}, {1, 0}, 0.5), ParameterError);
}

TEST_CASE("prf1: the reported operating point rounds to the reported f1") {
  // precision 0.84 (tp 84 / fp 16), recall 0.80 (fn 21)
  ConfusionCounts c{84, 16, 100, 21};
  auto m = prf1(c);
  REQUIRE(m.precision);
  REQUIRE(m.recall);
  REQUIRE(m.f1);
  CHECK(*m.precision == doctest::Approx(0.84).epsilon(1e-12));
  CHECK(*m.recall == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(std::abs(*m.f1 - 0.8195121951219512) < 1e-4);
  char rounded[8];
  std::snprintf(rounded, sizeof rounded, "%.2f", *m.f1);
  CHECK(std::string(rounded) == "0.82");
}

TEST_CASE("prf1: undefined denominators stay undefined") {
  auto m = prf1(ConfusionCounts{0, 0, 10, 5});
  CHECK(!m.precision);
  REQUIRE(m.recall);
  CHECK(*m.recall == 0.0);
  CHECK(!m.f1);
}

TEST_CASE("prf1: tp==fn with no false positives") {
  auto m = prf1(ConfusionCounts{7, 0, 3, 7});
  CHECK(*m.precision == 1.0);
  CHECK(*m.recall == 0.5);
  CHECK(*m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("f1 never exceeds the arithmetic mean or twice the minimum") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionCounts c{rng.uniform_int(0, 40), rng.uniform_int(0, 40), rng.uniform_int(0, 40),
                      rng.uniform_int(0, 40)};
    auto m = prf1(c);
    if (!m.f1) continue;
    const double p = *m.precision, r = *m.recall;
    CHECK(*m.f1 <= (p + r) / 2.0 + 1e-12);
    CHECK(*m.f1 <= 2.0 * std::min(p, r) + 1e-12);
  }
}

TEST_CASE("auroc: separable, mixed and tied cases") {
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // 3 of the 4 (pos,neg) pairs are concordant
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auroc({0.5, 0.6}, {1, 1}), ParameterError);
  CHECK(!maybe_auroc({0.5, 0.6}, {1, 1}));
}

TEST_CASE("auroc equals the all-pairs oracle on 100 random instances with ties") {
  Rng rng(777);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(2, 200);
    std::vector<double> scores;
    std::vector<int> labels;
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      // coarse quantization forces heavy ties
      scores.push_back(rng.uniform_int(0, 9) / 10.0);
      const int y = rng.bernoulli(0.5) ? 1 : 0;
      labels.push_back(y);
      (y ? has1 : has0) = true;
    }
    if (!has0) labels[0] = 0;
    if (!has1) labels[static_cast<std::size_t>(n) - 1] = 1;
    CHECK(std::abs(auroc(scores, labels) - oracle::auroc_all_pairs(scores, labels)) < 1e-12);
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  Rng rng(888);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    scores.push_back(rng.uniform(-4.0, 4.0));
    labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  labels[0] = 0;
  labels[1] = 1;
  const double base = auroc(scores, labels);
  std::vector<double> squashed, shifted;
  for (double s : scores) {
    squashed.push_back(std::atan(s));
    shifted.push_back(3.0 * s + 11.0);
  }
  CHECK(auroc(squashed, labels) == doctest::Approx(base).epsilon(1e-12));
  CHECK(auroc(shifted, labels) == doctest::Approx(base).epsilon(1e-12));
}

}  // TEST_SUITE
