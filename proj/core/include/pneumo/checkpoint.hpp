#pragma once

#include <cstdint>
#include <filesystem>

#include "pneumo/models.hpp"

namespace pneumo {

// Training provenance stored alongside the parameters.
struct TrainMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  double final_lr = 0.0;
};

// Binary checkpoint: magic + version, architecture descriptor, training
// metadata, then named parameter blobs as little-endian 32-bit floats.
// save(load(f)) reproduces f byte for byte.
void save_patchnet(const std::filesystem::path& file, const PatchNet& model, const TrainMeta& meta);
PatchNet load_patchnet(const std::filesystem::path& file, TrainMeta* meta = nullptr);

void save_fusionnet(const std::filesystem::path& file, const FusionNet& model, const TrainMeta& meta);
FusionNet load_fusionnet(const std::filesystem::path& file, TrainMeta* meta = nullptr);

}  // namespace pneumo
