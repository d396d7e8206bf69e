#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "pneumo/dataset.hpp"
#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

// Square sub-window of the working-resolution image.
struct PatchRect {
  int x = 0;
  int y = 0;
  int side = 0;
};

// Sliding-window layout over a square working image. The stride must
// tile exactly: (full_side - patch_side) % stride == 0.
struct WindowGrid {
  int full_side = 0;
  int patch_side = 0;
  int stride = 0;
  int grid_side = 0;

  PatchRect rect(int row, int col) const { return {col * stride, row * stride, patch_side}; }
};

WindowGrid window_grid(int full_side, int patch_side, int stride);

// Fraction of the boxes' union area covered by the rect, computed exactly
// on the integer pixel grid. Empty boxes yield 0.
double overlap_fraction(const std::vector<BBox>& boxes, const PatchRect& rect);

// 1 iff fraction >= threshold (inclusive boundary).
int label_patch(double fraction, double threshold = 0.10);

Tensor crop(const Tensor& image, const PatchRect& rect);

struct PatchSample {
  Tensor patch;
  int label = 0;
  PatchRect rect;
};

struct PatchSamplerOptions {
  double label_threshold = 0.10;
  // With bias > 0, that fraction of draws on positive images is forced to
  // intersect the box union (class-balance aid; off by default).
  double positive_bias = 0.0;
};

// count rects drawn uniformly over valid top-left positions; labels come
// from overlap_fraction + label_patch. Patches of label-0 images are
// labeled 0 without computing overlap.
std::vector<PatchSample> sample_patches(const ImageSample& sample, int patch_side, int count,
                                        Rng& rng, const PatchSamplerOptions& options = {});

// Stage-1 predictions over every window. bits[i] == 1 <=> probs[i] >= threshold.
struct Heatmap {
  int grid_side = 0;
  Tensor probs;                 // grid_side x grid_side
  std::vector<std::uint8_t> bits;
  double threshold = 0.5;

  Tensor bits_tensor() const;   // 1 x grid_side x grid_side of {0,1}
};

// model maps a patch tensor (1 x patch_side x patch_side) to a probability.
using PatchScorer = std::function<double(const Tensor&)>;

Heatmap build_heatmap(const PatchScorer& model, const Tensor& image, const WindowGrid& grid,
                      double threshold = 0.5);

// Text export: probabilities at 6 decimals, one grid row per line, plus a
// companion binary grid. Filenames are <id>.probs.txt / <id>.bits.txt.
void write_heatmap(const std::filesystem::path& dir, const std::string& id, const Heatmap& map);
Tensor read_heatmap_bits(const std::filesystem::path& file);
Tensor read_heatmap_probs(const std::filesystem::path& file);

}  // namespace pneumo
