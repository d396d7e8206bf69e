#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "pneumo/dataset.hpp"
#include "pneumo/image_io.hpp"
#include "pneumo/synth.hpp"
#include "support/oracles.hpp"

using namespace pneumo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("pneumo_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ImageSample make_sample(const std::string& id, int side, int label, std::vector<BBox> boxes) {
  ImageSample s;
  s.id = id;
  s.pixels = Tensor::full({1, side, side}, 0.5);
  s.label = label;
  s.boxes = std::move(boxes);
  s.category = label ? Category::pneumonia : Category::normal;
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("pgm round trip") {
  auto dir = temp_dir("pgm");
  Rng rng(5);
  Tensor img({1, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  write_pgm(dir / "a.pgm", img);
  Tensor back = read_pgm(dir / "a.pgm");
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
  // writing the loaded image again is byte-stable
  write_pgm(dir / "b.pgm", back);
  Tensor twice = read_pgm(dir / "b.pgm");
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(twice[i] == back[i]);
}

TEST_CASE("manifest: empty record list loads fine") {
  auto dir = temp_dir("manifest_empty");
  DatasetManifest m;
  m.image_side = 16;
  m.root = dir;
  save_manifest(dir / "m.manifest", m);
  auto back = load_manifest(dir / "m.manifest");
  CHECK(back.records.empty());
  CHECK(back.image_side == 16);
}

TEST_CASE("manifest: label/box inconsistency is rejected with the record id") {
  auto dir = temp_dir("manifest_bad");
  std::ofstream out(dir / "m.manifest");
  out << "pneumoscan-manifest 1 16\n";
  out << "bad1 images/bad1.pgm 1 pneumonia -\n";
  out.close();
  CHECK_THROWS_WITH_AS(load_manifest(dir / "m.manifest"),
                       doctest::Contains("bad1"), DataError);
}

TEST_CASE("manifest: three-record round trip preserves everything") {
  auto dir = temp_dir("manifest_rt");
  fs::create_directories(dir / "images");
  Tensor img = Tensor::full({1, 16, 16}, 0.25);
  DatasetManifest m;
  m.image_side = 16;
  m.root = dir;
  m.records = {
      {"r0", "images/r0.pgm", 0, Category::normal, {}},
      {"r1", "images/r1.pgm", 1, Category::pneumonia, {{2, 3, 4, 5}}},
      {"r2", "images/r2.pgm", 1, Category::pneumonia, {{0, 0, 8, 8}, {9, 9, 7, 7}}},
  };
  for (const auto& rec : m.records) write_pgm(dir / rec.path, img);
  save_manifest(dir / "m.manifest", m);
  auto back = load_manifest(dir / "m.manifest");
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].id == m.records[i].id);
    CHECK(back.records[i].label == m.records[i].label);
    CHECK(back.records[i].category == m.records[i].category);
    CHECK(back.records[i].boxes == m.records[i].boxes);
  }
  auto s = load_sample(back, back.records[1]);
  CHECK(s.pixels.dim(1) == 16);
}

TEST_CASE("manifest: missing image path is reported") {
  auto dir = temp_dir("manifest_missing");
  std::ofstream out(dir / "m.manifest");
  out << "pneumoscan-manifest 1 16\n";
  out << "r0 images/nope.pgm 0 normal -\n";
  out.close();
  CHECK_THROWS_AS(load_manifest(dir / "m.manifest"), DataError);
  CHECK_NOTHROW(load_manifest(dir / "m.manifest", /*check_paths=*/false));
}

TEST_CASE("resize_area: identity and constants") {
  Tensor img = Tensor::full({1, 8, 8}, 0.37);
  Tensor same = resize_area(img, 8);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);
  Tensor down = resize_area(img, 4);
  for (std::size_t i = 0; i < down.size(); ++i) CHECK(down[i] == doctest::Approx(0.37).epsilon(1e-15));
  CHECK_THROWS_AS(resize_area(img, 3), ParameterError);
}

TEST_CASE("resize_area matches the block-mean oracle and preserves the mean") {
  Rng rng(8);
  Tensor img({1, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  Tensor out = resize_area(img, 4);
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) {
      double acc = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) acc += img.at(0, oy * 2 + dy, ox * 2 + dx);
      CHECK(std::abs(out.at(0, oy, ox) - acc / 4.0) < 1e-12);
    }
  CHECK(out.sum() / out.size() == doctest::Approx(img.sum() / img.size()).epsilon(1e-12));
}

TEST_CASE("scale_boxes arithmetic") {
  std::vector<BBox> boxes{{100, 100, 200, 200}};
  auto same = scale_boxes(boxes, 1024, 1024);
  CHECK(same == boxes);
  auto half = scale_boxes(boxes, 1024, 512);
  REQUIRE(half.size() == 1);
  CHECK(half[0] == BBox{50, 50, 100, 100});
  // width-1 box scaled down by 2 becomes zero-area and is dropped
  auto dropped = scale_boxes({{10, 10, 1, 12}}, 64, 32);
  CHECK(dropped.empty());
}

TEST_CASE("augment: identity policy changes nothing") {
  auto s = make_sample("x", 16, 1, {{4, 4, 6, 6}});
  Rng rng(3);
  AugmentPolicy identity;  // zero translation/rotation, brightness 1
  auto out = augment(s, rng, identity);
  REQUIRE(out.has_value());
  CHECK(out->id == "x-aug");
  CHECK(out->label == 1);
  CHECK(out->boxes == s.boxes);
  for (std::size_t i = 0; i < s.pixels.size(); ++i)
    CHECK(out->pixels[i] == doctest::Approx(s.pixels[i]).epsilon(1e-12));
}

TEST_CASE("augment: pure translation shifts boxes exactly") {
  auto s = make_sample("x", 64, 1, {{10, 20, 8, 8}});
  AugmentPolicy policy;
  policy.max_translate_px = 10;
  // Draw until the translation comes out as (+10, 0); deterministic seed scan.
  bool found = false;
  for (std::uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    Rng probe(seed);
    const int tx = probe.uniform_int(-10, 10);
    const int ty = probe.uniform_int(-10, 10);
    if (tx == 10 && ty == 0) {
      Rng rng(seed);
      auto out = augment(s, rng, policy);
      REQUIRE(out.has_value());
      REQUIRE(out->boxes.size() == 1);
      CHECK(out->boxes[0] == BBox{20, 20, 8, 8});
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("augment: label preserved, positives never lose all boxes silently") {
  Rng rng(17);
  auto policy = default_augment_policy(64);
  auto s = make_sample("p", 64, 1, {{28, 28, 8, 8}});
  for (int i = 0; i < 50; ++i) {
    auto out = augment(s, rng, policy, "a" + std::to_string(i));
    REQUIRE(out.has_value());
    CHECK(out->label == 1);
    CHECK(!out->boxes.empty());
    for (const auto& b : out->boxes) {
      CHECK(b.w > 0);
      CHECK(b.h > 0);
      CHECK(b.x + b.w <= 64);
      CHECK(b.y + b.h <= 64);
    }
  }
}

TEST_CASE("expand_with_augmentation reaches the exact target count") {
  // mirrors the paper-scale 21,347 -> 33,463 expansion at toy size
  std::vector<ImageSample> base;
  for (int i = 0; i < 213; ++i)
    base.push_back(make_sample("b" + std::to_string(i), 16, i % 2,
                               i % 2 ? std::vector<BBox>{{4, 4, 8, 8}} : std::vector<BBox>{}));
  Rng rng(99);
  auto expanded = expand_with_augmentation(base, 334, rng, default_augment_policy(16));
  CHECK(expanded.size() == 334);
  // ids stay unique
  std::set<std::string> ids;
  for (const auto& s : expanded) CHECK(ids.insert(s.id).second);
}

TEST_CASE("split: sizes follow floor-plus-remainder") {
  DatasetManifest m;
  m.image_side = 16;
  for (int i = 0; i < 10; ++i)
    m.records.push_back({"r" + std::to_string(i), "p", 0, Category::none, {}});
  auto parts = split(m, 0.8, 0.2, 7);
  CHECK(parts.first.records.size() == 8);
  CHECK(parts.second.records.size() == 2);
}

TEST_CASE("split: deterministic, disjoint, covering") {
  DatasetManifest m;
  m.image_side = 16;
  for (int i = 0; i < 101; ++i)
    m.records.push_back({"r" + std::to_string(i), "p", 0, Category::none, {}});
  auto a = split(m, 0.8, 0.2, 42);
  auto b = split(m, 0.8, 0.2, 42);
  REQUIRE(a.first.records.size() == b.first.records.size());
  for (std::size_t i = 0; i < a.first.records.size(); ++i)
    CHECK(a.first.records[i].id == b.first.records[i].id);
  std::set<std::string> seen;
  for (const auto& r : a.first.records) CHECK(seen.insert(r.id).second);
  for (const auto& r : a.second.records) CHECK(seen.insert(r.id).second);
  CHECK(seen.size() == 101);
}

TEST_CASE("split: paper-scale sizes (26,684 at 80/20 gives 21,348/5,336)") {
  DatasetManifest m;
  m.image_side = 16;
  m.records.resize(26684);
  for (std::size_t i = 0; i < m.records.size(); ++i) m.records[i].id = "r" + std::to_string(i);
  auto parts = split(m, 0.8, 0.2, 1);
  CHECK(parts.first.records.size() == 21348);
  CHECK(parts.second.records.size() == 5336);
}

TEST_CASE("split: empty manifest gives empty partitions") {
  DatasetManifest m;
  m.image_side = 16;
  auto parts = split(m, 0.8, 0.2, 7);
  CHECK(parts.first.records.empty());
  CHECK(parts.second.records.empty());
  CHECK_THROWS_AS(split(m, 0.8, 0.1, 7), ParameterError);
}

}  // TEST_SUITE

TEST_SUITE("synth") {

TEST_CASE("count 0 gives an empty dataset") {
  SynthConfig c;
  c.count = 0;
  Rng rng(1);
  CHECK(synth_generate(c, rng).empty());
}

TEST_CASE("positive fraction 1.0 gives boxes on every sample") {
  SynthConfig c;
  c.count = 10;
  c.side = 64;
  c.positive_fraction = 1.0;
  Rng rng(2);
  auto samples = synth_generate(c, rng);
  REQUIRE(samples.size() == 10);
  for (const auto& s : samples) {
    CHECK(s.label == 1);
    CHECK(!s.boxes.empty());
    CHECK(s.category == Category::pneumonia);
  }
}

TEST_CASE("review-area fraction agrees with region_of") {
  SynthConfig c;
  c.count = 200;
  c.side = 64;
  c.positive_fraction = 0.5;
  c.review_fraction = 0.5;
  Rng rng(31);
  auto samples = synth_generate(c, rng);
  int pos = 0, review = 0;
  for (const auto& s : samples) {
    if (s.label != 1) continue;
    ++pos;
    if (region_of(s.boxes, c.side, c.regions) == Region::review_area) ++review;
  }
  REQUIRE(pos == 100);
  const double frac = static_cast<double>(review) / pos;
  CHECK(frac >= 0.4);
  CHECK(frac <= 0.6);
}

TEST_CASE("generator determinism: same config + seed, bit-identical output") {
  SynthConfig c;
  c.count = 12;
  c.side = 64;
  c.positive_fraction = 0.5;
  c.review_fraction = 0.25;
  Rng r1(77), r2(77);
  auto a = synth_generate(c, r1);
  auto b = synth_generate(c, r2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].boxes == b[i].boxes);
    for (std::size_t p = 0; p < a[i].pixels.size(); ++p) CHECK(a[i].pixels[p] == b[i].pixels[p]);
  }
}

TEST_CASE("samples satisfy the dataset invariants and land on disk") {
  SynthConfig c;
  c.count = 8;
  c.side = 32;
  c.positive_fraction = 0.5;
  Rng rng(5);
  auto dir = std::filesystem::temp_directory_path() / "pneumo_test_synthdisk";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto manifest = synth_to_disk(c, rng, dir);
  CHECK(manifest.records.size() == 8);
  auto loaded = load_manifest(dir / "dataset.manifest");
  CHECK(loaded.records.size() == 8);
  for (const auto& rec : loaded.records) CHECK_NOTHROW(load_sample(loaded, rec));
}

TEST_CASE("unsatisfiable config is rejected") {
  SynthConfig c;
  c.count = 1;
  c.blob_radius_max = 0.6;  // diameter > side
  Rng rng(1);
  CHECK_THROWS_AS(synth_generate(c, rng), ParameterError);
}

}  // TEST_SUITE
