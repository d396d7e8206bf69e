#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pneumo/checkpoint.hpp"
#include "pneumo/gradcheck.hpp"
#include "pneumo/models.hpp"

using namespace pneumo;
namespace fs = std::filesystem;

namespace {

Tensor random_image(int side, Rng& rng) {
  Tensor t({1, side, side});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_double();
  return t;
}

void zero_params(std::vector<NamedParam> params) {
  for (auto& p : params) p.value->fill(0.0);
}

std::int64_t actual_param_count(std::vector<NamedParam> params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += static_cast<std::int64_t>(p.value->size());
  return n;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("paper configuration has exactly 13 conv layers") {
  PatchNetConfig paper;
  paper.input_side = 256;
  paper.base_channels = 32;
  paper.blocks = 6;
  paper.extra_conv = true;
  CHECK(conv_layer_count(paper) == 13);
  // width doubles per block and saturates at the cap
  const auto plan = channel_plan(paper);
  REQUIRE(plan.size() == 13);
  CHECK(plan[0] == 32);
  CHECK(plan[5] == 128);
  CHECK(plan[10] == 256);
  CHECK(plan[12] == 256);
}

TEST_CASE("desk configuration: 7 conv layers, 4x4 spatial before the head") {
  PatchNetConfig desk;
  desk.input_side = 32;
  desk.base_channels = 8;
  desk.blocks = 3;
  desk.extra_conv = true;
  CHECK(conv_layer_count(desk) == 7);
  CHECK((desk.input_side >> desk.blocks) == 4);
  const auto plan = channel_plan(desk);
  CHECK(plan == std::vector<int>{8, 8, 16, 16, 32, 32, 64});
}

TEST_CASE("invalid configurations are rejected") {
  PatchNetConfig c;
  c.input_side = 48;  // not divisible by 2^6
  CHECK_THROWS_AS(validate_patchnet_config(c), ConfigError);
}

TEST_CASE("parameter-count formula matches initialization for random configs") {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    PatchNetConfig c;
    c.blocks = rng.uniform_int(1, 4);
    c.input_side = (1 << c.blocks) * rng.uniform_int(1, 4) * 2;
    c.base_channels = rng.uniform_int(2, 8);
    c.extra_conv = rng.bernoulli(0.5);
    c.channel_cap = rng.uniform_int(16, 64);
    Rng init(rng.next_u64());
    PatchNet net(c, init);
    CHECK(actual_param_count(net.params()) == patchnet_param_count(c));
  }
  FusionNetConfig fc;
  fc.heatmap_side = 17;
  fc.heatmap_channels = 4;
  fc.image = PatchNetConfig{32, 4, 3, true, 0.5, 3, 256};
  Rng init(7);
  FusionNet fnet(fc, init);
  CHECK(actual_param_count(fnet.params()) == fusionnet_param_count(fc));
}

TEST_CASE("patchnet forward: range, determinism, zero-weight midpoint") {
  PatchNetConfig c{32, 4, 3, true, 0.5, 3, 256};
  Rng init(5);
  PatchNet net(c, init);
  Rng rng(6);
  Tensor patch = random_image(32, rng);
  const double p1 = net.forward(patch);
  const double p2 = net.forward(patch);
  CHECK(p1 > 0.0);
  CHECK(p1 < 1.0);
  CHECK(p1 == p2);

  zero_params(net.params());
  CHECK(net.forward(patch) == 0.5);

  CHECK_THROWS_AS(net.forward(random_image(16, rng)), DimensionError);
}

TEST_CASE("fusionnet forward: zero weights give 0.5, desk config in range") {
  FusionNetConfig fc;
  fc.heatmap_side = 17;
  fc.heatmap_channels = 4;
  fc.image = PatchNetConfig{32, 4, 3, true, 0.5, 3, 256};
  Rng init(11);
  FusionNet net(fc, init);
  Rng rng(12);
  Tensor img = random_image(32, rng);
  Tensor hm({1, 17, 17});
  const double p = net.forward(img, hm);
  CHECK(p > 0.0);
  CHECK(p < 1.0);

  FusionNet zeroed = net;
  zero_params(zeroed.params());
  CHECK(zeroed.forward(Tensor({1, 32, 32}), hm) == 0.5);

  CHECK_THROWS_AS(net.forward(img, Tensor({1, 5, 5})), DimensionError);
}

TEST_CASE("fusionnet output reacts to a single heatmap bit flip") {
  FusionNetConfig fc;
  fc.heatmap_side = 9;
  fc.heatmap_channels = 4;
  fc.image = PatchNetConfig{16, 4, 2, true, 0.5, 3, 256};
  Rng init(21);
  FusionNet net(fc, init);
  Rng rng(22);
  Tensor img = random_image(16, rng);
  Tensor hm({1, 9, 9});
  const double before = net.forward(img, hm);
  hm.at(0, 4, 4) = 1.0;
  const double after = net.forward(img, hm);
  CHECK(before != after);
}

TEST_CASE("end-to-end patchnet gradient matches finite differences") {
  for (int seed = 1; seed <= 20; ++seed) {
    PatchNetConfig c{8, 4, 1, true, 0.0, 3, 256};  // dropout 0: deterministic loss
    Rng init(static_cast<std::uint64_t>(seed));
    PatchNet net(c, init);
    Rng data_rng(static_cast<std::uint64_t>(seed) + 1000);
    Tensor patch = random_image(8, data_rng);
    const int label = seed % 2;

    auto params = net.params();
    std::vector<Tensor> inputs;
    for (const auto& p : params) inputs.push_back(*p.value);

    auto set_params = [&](const std::vector<Tensor>& values) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = values[i];
    };

    auto forward = [&](const std::vector<Tensor>& values) {
      set_params(values);
      Rng dummy(0);
      PatchNet::Tape tape;
      const double p = net.forward_train(patch, dummy, tape);
      return Tensor({1}, {ops::bce_loss(p, label).loss});
    };
    auto adjoint = [&](const std::vector<Tensor>& values, const Tensor& gout) {
      set_params(values);
      Rng dummy(0);
      PatchNet::Tape tape;
      const double p = net.forward_train(patch, dummy, tape);
      auto grads = net.zero_grads();
      net.backward(tape, ops::bce_loss(p, label).dloss_dp * gout[0], grads);
      return grads;
    };

    Rng check_rng(static_cast<std::uint64_t>(seed) + 5000);
    const double err = grad_check(forward, adjoint, inputs, 1e-6, check_rng);
    set_params(inputs);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("end-to-end fusionnet gradient matches finite differences") {
  for (int seed = 1; seed <= 5; ++seed) {
    FusionNetConfig fc;
    fc.heatmap_side = 5;
    fc.heatmap_channels = 2;
    fc.image = PatchNetConfig{8, 3, 1, true, 0.0, 3, 256};
    fc.dropout_rate = 0.0;
    Rng init(static_cast<std::uint64_t>(seed) * 3 + 1);
    FusionNet net(fc, init);
    Rng data_rng(static_cast<std::uint64_t>(seed) + 100);
    // nudge biases off zero so no relu sits exactly on its kink, where
    // central differences straddle the corner
    for (auto& p : net.params())
      if (p.name.ends_with(".b"))
        for (std::size_t i = 0; i < p.value->size(); ++i) (*p.value)[i] = data_rng.uniform(0.01, 0.1);
    Tensor img = random_image(8, data_rng);
    Tensor hm({1, 5, 5});
    for (std::size_t i = 0; i < hm.size(); ++i) hm[i] = data_rng.bernoulli(0.4) ? 1.0 : 0.0;

    auto params = net.params();
    std::vector<Tensor> inputs;
    for (const auto& p : params) inputs.push_back(*p.value);
    auto set_params = [&](const std::vector<Tensor>& values) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = values[i];
    };
    auto forward = [&](const std::vector<Tensor>& values) {
      set_params(values);
      Rng dummy(0);
      FusionNet::Tape tape;
      const double p = net.forward_train(img, hm, dummy, tape);
      return Tensor({1}, {ops::bce_loss(p, 1).loss});
    };
    auto adjoint = [&](const std::vector<Tensor>& values, const Tensor& gout) {
      set_params(values);
      Rng dummy(0);
      FusionNet::Tape tape;
      const double p = net.forward_train(img, hm, dummy, tape);
      auto grads = net.zero_grads();
      net.backward(tape, ops::bce_loss(p, 1).dloss_dp * gout[0], grads);
      return grads;
    };
    Rng check_rng(static_cast<std::uint64_t>(seed) + 7000);
    const double err = grad_check(forward, adjoint, inputs, 1e-6, check_rng);
    set_params(inputs);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("predict composes the stages; stubs behave as configured") {
  // stage 1 pinned to ~0 (dark heatmap), stage 2 pinned to 0.9
  PatchNetConfig pc{32, 4, 3, true, 0.5, 3, 256};
  Rng init(3);
  Pipeline pipe;
  pipe.stage1 = PatchNet(pc, init);
  zero_params(pipe.stage1.params());
  pipe.stage1.head_b().at(0) = -40.0;  // sigmoid(-40) ~ 4e-18

  FusionNetConfig fc;
  fc.heatmap_side = 17;
  fc.heatmap_channels = 4;
  fc.image = pc;
  pipe.stage2 = FusionNet(fc, init);
  zero_params(pipe.stage2.params());
  // pin the fusion output at sigmoid(logit) = 0.9
  auto params = pipe.stage2.params();
  for (auto& p : params)
    if (p.name == "fuse.b") p.value->at(0) = std::log(0.9 / 0.1);

  pipe.grid = window_grid(64, 32, 2);

  ImageSample sample;
  sample.id = "t";
  sample.pixels = Tensor::full({1, 64, 64}, 0.3);
  sample.label = 0;

  auto pred = predict(pipe, sample);
  CHECK(pred.diagnosis == 1);  // stage 2 decides
  CHECK(pred.probability == doctest::Approx(0.9).epsilon(1e-12));
  for (auto b : pred.heatmap.bits) CHECK(b == 0);

  auto again = predict(pipe, sample);
  CHECK(again.probability == pred.probability);
  CHECK(again.diagnosis == pred.diagnosis);
  for (std::size_t i = 0; i < pred.heatmap.probs.size(); ++i)
    CHECK(again.heatmap.probs[i] == pred.heatmap.probs[i]);
}

}  // TEST_SUITE

TEST_SUITE("checkpoint") {

TEST_CASE("save -> load -> save is byte-identical and preserves inference") {
  auto dir = fs::temp_directory_path() / "pneumo_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  PatchNetConfig pc{32, 4, 3, true, 0.5, 3, 256};
  Rng init(9);
  PatchNet net(pc, init);
  quantize_params_f32(net.params());
  TrainMeta meta{12, 777, 9e-6};
  save_patchnet(dir / "a.ckpt", net, meta);

  TrainMeta back_meta;
  PatchNet back = load_patchnet(dir / "a.ckpt", &back_meta);
  CHECK(back_meta.epoch == 12);
  CHECK(back_meta.seed == 777);
  CHECK(back_meta.final_lr == 9e-6);
  save_patchnet(dir / "b.ckpt", back, back_meta);

  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(da == db);

  Rng rng(10);
  Tensor patch({1, 32, 32});
  for (std::size_t i = 0; i < patch.size(); ++i) patch[i] = rng.next_double();
  CHECK(net.forward(patch) == back.forward(patch));
}

TEST_CASE("fusion checkpoint round trip") {
  auto dir = fs::temp_directory_path() / "pneumo_test_ckpt2";
  fs::remove_all(dir);
  fs::create_directories(dir);
  FusionNetConfig fc;
  fc.heatmap_side = 17;
  fc.heatmap_channels = 4;
  fc.image = PatchNetConfig{32, 4, 3, true, 0.5, 3, 256};
  Rng init(31);
  FusionNet net(fc, init);
  quantize_params_f32(net.params());
  save_fusionnet(dir / "f.ckpt", net, {3, 1, 1e-5});
  FusionNet back = load_fusionnet(dir / "f.ckpt");
  Rng rng(32);
  Tensor img({1, 32, 32});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  Tensor hm({1, 17, 17});
  for (std::size_t i = 0; i < hm.size(); ++i) hm[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  CHECK(net.forward(img, hm) == back.forward(img, hm));
}

TEST_CASE("truncated checkpoint is a load error, not a crash") {
  auto dir = fs::temp_directory_path() / "pneumo_test_ckpt3";
  fs::remove_all(dir);
  fs::create_directories(dir);
  PatchNetConfig pc{16, 2, 2, false, 0.5, 3, 256};
  Rng init(1);
  PatchNet net(pc, init);
  save_patchnet(dir / "a.ckpt", net, {});
  const auto size = fs::file_size(dir / "a.ckpt");
  fs::resize_file(dir / "a.ckpt", size - 1);
  CHECK_THROWS_AS(load_patchnet(dir / "a.ckpt"), DataError);
  CHECK_THROWS_AS(load_patchnet(dir / "missing.ckpt"), MissingInputError);
  CHECK_THROWS_AS(load_fusionnet(dir / "a.ckpt"), DataError);  // wrong kind
}

}  // TEST_SUITE
