#include "pneumo/patching.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pneumo/error.hpp"

namespace pneumo {

WindowGrid window_grid(int full_side, int patch_side, int stride) {
  if (full_side <= 0 || patch_side <= 0 || stride < 1)
    throw ParameterError("window_grid: sides and stride must be positive");
  if (patch_side > full_side)
    throw ParameterError("window_grid: patch side exceeds image side");
  if ((full_side - patch_side) % stride != 0)
    throw ParameterError("window_grid: (full - patch) = " + std::to_string(full_side - patch_side) +
                         " is not divisible by stride " + std::to_string(stride));
  WindowGrid g{full_side, patch_side, stride, (full_side - patch_side) / stride + 1};
  return g;
}

double overlap_fraction(const std::vector<BBox>& boxes, const PatchRect& rect) {
  if (boxes.empty()) return 0.0;
  int y_lo = boxes[0].y, y_hi = boxes[0].y + boxes[0].h;
  for (const auto& b : boxes) {
    y_lo = std::min(y_lo, b.y);
    y_hi = std::max(y_hi, b.y + b.h);
  }
  long long union_area = 0, inter_area = 0;
  std::vector<std::pair<int, int>> spans;
  for (int y = y_lo; y < y_hi; ++y) {
    spans.clear();
    for (const auto& b : boxes)
      if (y >= b.y && y < b.y + b.h) spans.emplace_back(b.x, b.x + b.w);
    if (spans.empty()) continue;
    std::sort(spans.begin(), spans.end());
    // merge and accumulate; clip against the rect row range on the fly
    const bool row_in_rect = y >= rect.y && y < rect.y + rect.side;
    int cur_lo = spans[0].first, cur_hi = spans[0].second;
    auto flush = [&](int lo, int hi) {
      union_area += hi - lo;
      if (row_in_rect) {
        const int clo = std::max(lo, rect.x), chi = std::min(hi, rect.x + rect.side);
        if (chi > clo) inter_area += chi - clo;
      }
    };
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first <= cur_hi) {
        cur_hi = std::max(cur_hi, spans[i].second);
      } else {
        flush(cur_lo, cur_hi);
        cur_lo = spans[i].first;
        cur_hi = spans[i].second;
      }
    }
    flush(cur_lo, cur_hi);
  }
  if (union_area == 0) return 0.0;
  return static_cast<double>(inter_area) / static_cast<double>(union_area);
}

int label_patch(double fraction, double threshold) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ParameterError("label_patch: fraction must lie in [0,1]");
  return fraction >= threshold ? 1 : 0;
}

Tensor crop(const Tensor& image, const PatchRect& rect) {
  if (image.rank() != 3) throw DimensionError("crop: image must be C x H x W");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.side > w || rect.y + rect.side > h)
    throw ParameterError("crop: rect exceeds image bounds");
  Tensor out({c, rect.side, rect.side});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < rect.side; ++y)
      for (int x = 0; x < rect.side; ++x)
        out.at(ch, y, x) = image.at(ch, rect.y + y, rect.x + x);
  return out;
}

std::vector<PatchSample> sample_patches(const ImageSample& sample, int patch_side, int count,
                                        Rng& rng, const PatchSamplerOptions& options) {
  const int side = sample.pixels.dim(1);
  if (patch_side > side) throw ParameterError("sample_patches: patch side exceeds image side");
  const int max_off = side - patch_side;

  const auto intersects_union = [&](const PatchRect& r) {
    for (const auto& b : sample.boxes)
      if (r.x < b.x + b.w && b.x < r.x + r.side && r.y < b.y + b.h && b.y < r.y + r.side)
        return true;
    return false;
  };

  std::vector<PatchSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    PatchRect rect{rng.uniform_int(0, max_off), rng.uniform_int(0, max_off), patch_side};
    if (sample.label == 1 && options.positive_bias > 0.0 && rng.bernoulli(options.positive_bias)) {
      for (int attempt = 0; attempt < 100 && !intersects_union(rect); ++attempt)
        rect = {rng.uniform_int(0, max_off), rng.uniform_int(0, max_off), patch_side};
    }
    int label = 0;
    if (sample.label == 1)
      label = label_patch(overlap_fraction(sample.boxes, rect), options.label_threshold);
    out.push_back({crop(sample.pixels, rect), label, rect});
  }
  return out;
}

Tensor Heatmap::bits_tensor() const {
  Tensor t({1, grid_side, grid_side});
  for (std::size_t i = 0; i < bits.size(); ++i) t[i] = bits[i] ? 1.0 : 0.0;
  return t;
}

Heatmap build_heatmap(const PatchScorer& model, const Tensor& image, const WindowGrid& grid,
                      double threshold) {
  if (image.rank() != 3 || image.dim(1) != grid.full_side || image.dim(2) != grid.full_side)
    throw ParameterError("build_heatmap: image " + image.shape_str() +
                         " does not match grid side " + std::to_string(grid.full_side));
  Heatmap map;
  map.grid_side = grid.grid_side;
  map.threshold = threshold;
  map.probs = Tensor({grid.grid_side, grid.grid_side});
  map.bits.resize(static_cast<std::size_t>(grid.grid_side) * grid.grid_side);
  for (int row = 0; row < grid.grid_side; ++row) {
    for (int col = 0; col < grid.grid_side; ++col) {
      const double p = model(crop(image, grid.rect(row, col)));
      map.probs.at(row, col) = p;
      map.bits[static_cast<std::size_t>(row) * grid.grid_side + col] = p >= threshold ? 1 : 0;
    }
  }
  return map;
}

void write_heatmap(const std::filesystem::path& dir, const std::string& id, const Heatmap& map) {
  const int g = map.grid_side;
  std::ofstream probs(dir / (id + ".probs.txt"));
  std::ofstream bits(dir / (id + ".bits.txt"));
  if (!probs || !bits) throw DataError("cannot write heatmap files for " + id);
  char buf[32];
  for (int row = 0; row < g; ++row) {
    for (int col = 0; col < g; ++col) {
      std::snprintf(buf, sizeof buf, "%.6f", map.probs.at(row, col));
      probs << (col ? " " : "") << buf;
      bits << (col ? " " : "") << int(map.bits[static_cast<std::size_t>(row) * g + col]);
    }
    probs << '\n';
    bits << '\n';
  }
}

namespace {

Tensor read_grid_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingInputError("cannot open heatmap file " + file.string());
  std::vector<double> values;
  int rows = 0, cols = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v;
    int c = 0;
    while (ls >> v) {
      values.push_back(v);
      ++c;
    }
    if (cols == -1) cols = c;
    if (c != cols) throw DataError("heatmap file " + file.string() + " has ragged rows");
    ++rows;
  }
  if (rows == 0 || rows != cols)
    throw DataError("heatmap file " + file.string() + " is not a square grid");
  return Tensor({1, rows, cols}, std::move(values));
}

}  // namespace

Tensor read_heatmap_bits(const std::filesystem::path& file) {
  Tensor t = read_grid_file(file);
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw DataError("heatmap bits file " + file.string() + " contains non-binary values");
  return t;
}

Tensor read_heatmap_probs(const std::filesystem::path& file) { return read_grid_file(file); }

}  // namespace pneumo
