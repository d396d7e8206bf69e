#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pneumo/gradcheck.hpp"
#include "pneumo/ops.hpp"
#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"
#include "support/oracles.hpp"

using namespace pneumo;
using namespace pneumo::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("tensor_ops") {

TEST_CASE("tensor shape/data invariants") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), ParameterError);
}

TEST_CASE("conv2d: zero input yields per-channel bias") {
  Tensor in({1, 3, 3});
  Rng rng(7);
  Tensor w = random_tensor({2, 1, 3, 3}, rng);
  Tensor b({2}, {0.25, -1.5});
  Tensor out = conv2d(in, w, b, 1, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      CHECK(out.at(0, y, x) == 0.25);
      CHECK(out.at(1, y, x) == -1.5);
    }
}

TEST_CASE("conv2d: same padding preserves spatial size") {
  Rng rng(3);
  Tensor in = random_tensor({1, 5, 5}, rng);
  Tensor w = random_tensor({1, 1, 3, 3}, rng);
  Tensor b({1});
  Tensor out = conv2d(in, w, b, 1, 1);
  CHECK(out.shape() == std::vector<int>{1, 5, 5});
}

TEST_CASE("conv2d matches the naive quadruple-loop oracle") {
  Rng rng(42);
  Tensor in = random_tensor({2, 8, 8}, rng);
  Tensor w = random_tensor({4, 2, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor out = conv2d(in, w, b, 1, 0);
  CHECK(out.shape() == std::vector<int>{4, 6, 6});
  auto ref = oracle::conv2d(std::vector<double>(in.data(), in.data() + in.size()), 2, 8, 8,
                            std::vector<double>(w.data(), w.data() + w.size()), 4, 3,
                            std::vector<double>(b.data(), b.data() + b.size()), 1, 0);
  double max_diff = 0;
  for (std::size_t i = 0; i < out.size(); ++i) max_diff = std::max(max_diff, std::abs(out[i] - ref[i]));
  CHECK(max_diff < 1e-12);
}

TEST_CASE("conv2d shape law over random parameter draws") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = rng.uniform_int(3, 12), w = rng.uniform_int(3, 12);
    const int k = rng.uniform_int(1, std::min(h, w));
    const int stride = rng.uniform_int(1, 3);
    const int pad = rng.uniform_int(0, 2);
    Tensor in = random_tensor({1, h, w}, rng);
    Tensor wt = random_tensor({2, 1, k, k}, rng);
    Tensor out = conv2d(in, wt, Tensor({2}), stride, pad);
    CHECK(out.dim(1) == (h + 2 * pad - k) / stride + 1);
    CHECK(out.dim(2) == (w + 2 * pad - k) / stride + 1);
    CHECK(out.all_finite());
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor in({2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(in, w, Tensor({1}), 1, 0), DimensionError);
}

TEST_CASE("maxpool2 basics") {
  Tensor in({1, 2, 2}, {1, 2, 3, 4});
  auto out = maxpool2(in);
  CHECK(out.output.size() == 1);
  CHECK(out.output[0] == 4);

  Tensor constant = Tensor::full({3, 4, 4}, 0.7);
  auto cp = maxpool2(constant);
  for (std::size_t i = 0; i < cp.output.size(); ++i) CHECK(cp.output[i] == 0.7);

  CHECK_THROWS_AS(maxpool2(Tensor({1, 3, 4})), DimensionError);
}

TEST_CASE("maxpool2 matches the window-max oracle") {
  Rng rng(5);
  Tensor in = random_tensor({3, 16, 16}, rng);
  auto out = maxpool2(in);
  auto ref = oracle::maxpool2(std::vector<double>(in.data(), in.data() + in.size()), 3, 16, 16);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.output[i] == ref[i]);
}

TEST_CASE("maxpool2 gradient mass is conserved") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor in = random_tensor({2, 8, 8}, rng);
    auto fwd = maxpool2(in);
    Tensor gout = random_tensor(fwd.output.shape(), rng);
    Tensor gin = maxpool2_backward(fwd.argmax, in.shape(), gout);
    CHECK(gin.sum() == doctest::Approx(gout.sum()).epsilon(1e-12));
  }
}

TEST_CASE("maxpool2 ties route gradient to the first row-major position") {
  Tensor in = Tensor::full({1, 2, 2}, 1.0);
  auto fwd = maxpool2(in);
  Tensor gout({1, 1, 1}, {2.5});
  Tensor gin = maxpool2_backward(fwd.argmax, in.shape(), gout);
  CHECK(gin[0] == 2.5);
  CHECK(gin[1] == 0.0);
  CHECK(gin[2] == 0.0);
  CHECK(gin[3] == 0.0);
}

TEST_CASE("dense: identity weights pass input through") {
  Tensor in({3}, {1.5, -2.0, 0.25});
  Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = dense(in, w, Tensor({3}));
  for (int i = 0; i < 3; ++i) CHECK(out.at(i) == in.at(i));
}

TEST_CASE("dense: zero input yields bias") {
  Tensor in({4});
  Rng rng(2);
  Tensor w = random_tensor({2, 4}, rng);
  Tensor b({2}, {0.5, -0.5});
  Tensor out = dense(in, w, b);
  CHECK(out.at(0) == 0.5);
  CHECK(out.at(1) == -0.5);
}

TEST_CASE("dense matches the double-loop oracle") {
  Rng rng(13);
  Tensor in = random_tensor({7}, rng);
  Tensor w = random_tensor({4, 7}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor out = dense(in, w, b);
  auto ref = oracle::matvec(std::vector<double>(w.data(), w.data() + w.size()), 4, 7,
                            std::vector<double>(in.data(), in.data() + in.size()),
                            std::vector<double>(b.data(), b.data() + b.size()));
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out.at(i) - ref[static_cast<std::size_t>(i)]) < 1e-12);
  CHECK_THROWS_AS(dense(Tensor({3}), w, b), DimensionError);
}

TEST_CASE("activation values") {
  Tensor z({3}, {0.0, -3.0, 3.0});
  Tensor s = activation(z, Activation::sigmoid);
  CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  Tensor r = activation(z, Activation::relu);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 3.0);
}

TEST_CASE("sigmoid(x) + sigmoid(-x) == 1") {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-20.0, 20.0);
    CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) < 1e-12);
  }
}

TEST_CASE("sigmoid stays strictly inside (0,1) for extreme finite inputs") {
  for (double x : {-1e6, -745.0, -40.0, 0.0, 40.0, 745.0, 1e6}) {
    const double s = sigmoid(x);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("dropout: rate 0 and inference mode are identities") {
  Rng rng(4);
  Tensor in = random_tensor({50}, rng);
  auto a = dropout(in, 0.0, rng, true);
  auto b = dropout(in, 0.8, rng, false);
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK(a.output[i] == in[i]);
    CHECK(b.output[i] == in[i]);
  }
  CHECK_THROWS_AS(dropout(in, 1.0, rng, true), ParameterError);
}

TEST_CASE("dropout: Monte-Carlo expectation at rate 0.5") {
  Rng rng(1234);
  const std::size_t n = 10000;
  Tensor in = Tensor::full({static_cast<int>(n)}, 1.0);
  auto out = dropout(in, 0.5, rng, true);
  std::size_t kept = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.output[i] != 0.0) ++kept;
    total += out.output[i];
  }
  const double kept_frac = static_cast<double>(kept) / static_cast<double>(n);
  CHECK(kept_frac > 0.48);
  CHECK(kept_frac < 0.52);
  // survivors are scaled by 2, so the mean should stay near the input mean
  CHECK(std::abs(total / static_cast<double>(n) - 1.0) < 0.03);
}

TEST_CASE("bce_loss analytic values") {
  auto l1 = bce_loss(0.5, 1);
  CHECK(l1.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto l2 = bce_loss(1.0 - 1e-7, 1);
  CHECK(l2.loss < 1.5e-7);
  CHECK_THROWS_AS(bce_loss(0.5, 2), ParameterError);
}

TEST_CASE("bce_loss matches the closed-form recomputation on a random batch") {
  Rng rng(77);
  double mean_impl = 0.0, mean_ref = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const double p = rng.next_double();
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    mean_impl += bce_loss(p, y).loss / n;
    mean_ref += oracle::bce(p, y) / n;
  }
  CHECK(std::abs(mean_impl - mean_ref) < 1e-12);
}

TEST_CASE("grad_check: dense layer") {
  Rng rng(100);
  for (int seed = 1; seed <= 20; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed));
    Tensor x = random_tensor({3}, r);
    Tensor w = random_tensor({5, 3}, r);
    Tensor b = random_tensor({5}, r);
    auto forward = [](const std::vector<Tensor>& in) { return dense(in[0], in[1], in[2]); };
    auto adjoint = [](const std::vector<Tensor>& in, const Tensor& g) {
      auto gr = dense_backward(in[0], in[1], g);
      return std::vector<Tensor>{gr.input, gr.weights, gr.bias};
    };
    CHECK(grad_check(forward, adjoint, {x, w, b}, 1e-5, rng) < 1e-6);
  }
}

TEST_CASE("grad_check: conv2d") {
  Rng rng(200);
  for (int seed = 1; seed <= 20; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed) * 31 + 7);
    Tensor x = random_tensor({2, 6, 6}, r);
    Tensor w = random_tensor({3, 2, 3, 3}, r);
    Tensor b = random_tensor({3}, r);
    const int stride = seed % 2 ? 1 : 2;
    const int pad = seed % 3 == 0 ? 1 : 0;
    auto forward = [=](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], stride, pad); };
    auto adjoint = [=](const std::vector<Tensor>& in, const Tensor& g) {
      auto gr = conv2d_backward(in[0], in[1], stride, pad, g);
      return std::vector<Tensor>{gr.input, gr.weights, gr.bias};
    };
    CHECK(grad_check(forward, adjoint, {x, w, b}, 1e-5, rng) < 1e-6);
  }
}

TEST_CASE("grad_check: sigmoid") {
  Rng rng(300);
  for (int seed = 1; seed <= 20; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed) * 97 + 1);
    Tensor x = random_tensor({16}, r, -3.0, 3.0);
    auto forward = [](const std::vector<Tensor>& in) { return activation(in[0], Activation::sigmoid); };
    auto adjoint = [](const std::vector<Tensor>& in, const Tensor& g) {
      Tensor out = activation(in[0], Activation::sigmoid);
      return std::vector<Tensor>{activation_backward(out, Activation::sigmoid, g)};
    };
    CHECK(grad_check(forward, adjoint, {x}, 1e-5, rng) < 1e-8);
  }
}

TEST_CASE("grad_check: relu away from the kink") {
  Rng rng(400);
  for (int seed = 1; seed <= 20; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed) * 13 + 5);
    Tensor x({24});
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = r.uniform(0.05, 1.0);
      x[i] = r.bernoulli(0.5) ? v : -v;
    }
    auto forward = [](const std::vector<Tensor>& in) { return activation(in[0], Activation::relu); };
    auto adjoint = [](const std::vector<Tensor>& in, const Tensor& g) {
      Tensor out = activation(in[0], Activation::relu);
      return std::vector<Tensor>{activation_backward(out, Activation::relu, g)};
    };
    CHECK(grad_check(forward, adjoint, {x}, 1e-5, rng) < 1e-6);
  }
}

TEST_CASE("grad_check rejects eps outside its window") {
  Rng rng(1);
  auto forward = [](const std::vector<Tensor>& in) { return in[0]; };
  auto adjoint = [](const std::vector<Tensor>&, const Tensor& g) { return std::vector<Tensor>{g}; };
  CHECK_THROWS_AS(grad_check(forward, adjoint, {Tensor({1})}, 1e-2, rng), ParameterError);
}

TEST_CASE("determinism: equal seeds give bit-identical tensors") {
  Rng a(987654321), b(987654321);
  Tensor ta = random_tensor({64}, a);
  Tensor tb = random_tensor({64}, b);
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
  auto da = dropout(ta, 0.3, a, true);
  auto db = dropout(tb, 0.3, b, true);
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(da.output[i] == db.output[i]);
}

}  // TEST_SUITE
