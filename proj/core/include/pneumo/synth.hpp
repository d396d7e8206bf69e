#pragma once

#include <filesystem>
#include <vector>

#include "pneumo/dataset.hpp"
#include "pneumo/regions.hpp"
#include "pneumo/rng.hpp"

namespace pneumo {

// Synthetic chest-film stand-in: soft elliptical opacity blobs on a
// textured background, with rib-band and cardiac-silhouette distractors.
// Positives record the exact bounding box of each blob's support.
struct SynthConfig {
  int count = 0;
  int side = 64;
  double positive_fraction = 0.5;
  // Fraction of positives whose first blob is forced into a review area
  // (apex band or heart zone); the rest keep all blobs outside them.
  double review_fraction = 0.0;
  int blobs_min = 1;
  int blobs_max = 3;
  double blob_radius_min = 0.08;  // fractions of the image side
  double blob_radius_max = 0.18;
  double blob_intensity_min = 0.25;
  double blob_intensity_max = 0.55;
  double texture = 0.08;          // background texture amplitude
  double distractor_prob = 0.7;   // per distractor kind, per image
  RegionRule regions;
};

void validate_synth_config(const SynthConfig& config);

// Deterministic in (config, rng seed): equal inputs give bit-identical
// samples. Positive/review counts are exact (rounded, not sampled).
std::vector<ImageSample> synth_generate(const SynthConfig& config, Rng& rng);

// Writes images/<id>.pgm plus a manifest file named dataset.manifest in
// dir; returns the manifest.
DatasetManifest synth_to_disk(const SynthConfig& config, Rng& rng,
                              const std::filesystem::path& dir);

}  // namespace pneumo
