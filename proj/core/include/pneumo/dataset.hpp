#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

// Axis-aligned box in pixel coordinates; covers pixels [x, x+w) x [y, y+h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const BBox&) const = default;
};

enum class Category { none, pneumonia, other_disease, normal };

std::string category_name(Category c);
Category category_from_name(const std::string& name);

// Grayscale image + binary label + pneumonia boxes in the image's own
// pixel coordinates.
struct ImageSample {
  std::string id;
  Tensor pixels;  // 1 x H x W, values in [0,1]
  int label = 0;
  std::vector<BBox> boxes;
  Category category = Category::none;
};

// Checks the sample invariants: label <=> non-empty boxes, square image,
// boxes inside the frame. Throws DataError naming the sample.
void validate_sample(const ImageSample& sample);

struct ManifestRecord {
  std::string id;
  std::string path;  // image path relative to the manifest's directory
  int label = 0;
  Category category = Category::none;
  std::vector<BBox> boxes;
};

struct DatasetManifest {
  int image_side = 0;
  std::filesystem::path root;  // directory paths are resolved against
  std::vector<ManifestRecord> records;
};

// Line-oriented manifest: a header carrying the format version and image
// side, then one record per line:
//   <id> <relpath> <label> <category|-> <x,y,w,h;...|->
// check_paths verifies every referenced image exists.
DatasetManifest load_manifest(const std::filesystem::path& file, bool check_paths = true);
void save_manifest(const std::filesystem::path& file, const DatasetManifest& manifest);

// Record-level validation shared by load_manifest and the generator.
void validate_record(const ManifestRecord& record, int image_side);

ImageSample load_sample(const DatasetManifest& manifest, const ManifestRecord& record);

// Block-mean downscale of a square image; target must divide the side.
Tensor resize_area(const Tensor& image, int target_side);

// Rescales boxes between resolutions: positions round half-up, extents
// floor, results clamped to the frame, zero-area boxes dropped.
std::vector<BBox> scale_boxes(const std::vector<BBox>& boxes, int from_side, int to_side);

struct AugmentPolicy {
  int max_translate_px = 0;       // draws are uniform integers in [-max, max]
  double max_rotate_deg = 0.0;    // uniform in [-max, max]
  double brightness_lo = 1.0;
  double brightness_hi = 1.0;
};

// 5% translation, 5 degrees, brightness in [0.9, 1.1]. No horizontal flip:
// mirroring swaps the cardiac side the region analysis depends on.
AugmentPolicy default_augment_policy(int side);

// Affine jitter + brightness. Boxes follow the same map and are replaced
// by the axis-aligned hull of their transformed corners. Returns nullopt
// when the draw pushes every box of a positive sample out of the frame.
std::optional<ImageSample> augment(const ImageSample& sample, Rng& rng, const AugmentPolicy& policy,
                                   const std::string& suffix = "aug");

// Appends augmented copies (cycling over the base set) until exactly
// target_total samples exist. Rejected draws are retried with fresh
// randomness.
std::vector<ImageSample> expand_with_augmentation(std::vector<ImageSample> samples,
                                                  std::size_t target_total, Rng& rng,
                                                  const AugmentPolicy& policy);

// Seed-deterministic two-way split. Sizes are floor(N * fraction) with the
// remainder assigned to the first partition.
struct SplitResult {
  DatasetManifest first;
  DatasetManifest second;
};
SplitResult split(const DatasetManifest& manifest, double first_fraction, double second_fraction,
                  std::uint64_t seed);

}  // namespace pneumo
