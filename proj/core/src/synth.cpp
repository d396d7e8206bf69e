#include "pneumo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pneumo/error.hpp"
#include "pneumo/image_io.hpp"

namespace pneumo {

namespace {

// Contribution threshold that survives 8-bit quantization.
constexpr double kSupportTau = 2.0 / 255.0;

struct Ellipse {
  double cx, cy, rx, ry, phi, amp, falloff;
};

// Adds a soft finite-support ellipse; returns the bounding box of pixels
// whose contribution reached kSupportTau (empty w/h if none).
BBox render_ellipse(Tensor& img, const Ellipse& e) {
  const int side = img.dim(1);
  const double cphi = std::cos(e.phi), sphi = std::sin(e.phi);
  const double reach = std::max(e.rx, e.ry);
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - reach)));
  const int x1 = std::min(side - 1, static_cast<int>(std::ceil(e.cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - reach)));
  const int y1 = std::min(side - 1, static_cast<int>(std::ceil(e.cy + reach)));
  int bx0 = side, by0 = side, bx1 = -1, by1 = -1;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - e.cx, dy = y - e.cy;
      const double u = (cphi * dx + sphi * dy) / e.rx;
      const double v = (-sphi * dx + cphi * dy) / e.ry;
      const double d2 = u * u + v * v;
      if (d2 >= 1.0) continue;
      const double contrib = e.amp * std::pow(1.0 - d2, e.falloff);
      img.at(0, y, x) += contrib;
      if (contrib >= kSupportTau) {
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      }
    }
  if (bx1 < bx0) return {0, 0, 0, 0};
  return {bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1};
}

void render_background(Tensor& img, Rng& rng, double texture) {
  const int side = img.dim(1);
  const double base = rng.uniform(0.15, 0.30);
  // low-frequency value noise on a coarse grid, bilinearly upsampled
  const int g = 5;
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double gx = static_cast<double>(x) / (side - 1) * (g - 1);
      const double gy = static_cast<double>(y) / (side - 1) * (g - 1);
      const int ix = std::min(g - 2, static_cast<int>(gx));
      const int iy = std::min(g - 2, static_cast<int>(gy));
      const double fx = gx - ix, fy = gy - iy;
      const double v00 = grid[static_cast<std::size_t>(iy) * g + ix];
      const double v01 = grid[static_cast<std::size_t>(iy) * g + ix + 1];
      const double v10 = grid[static_cast<std::size_t>(iy + 1) * g + ix];
      const double v11 = grid[static_cast<std::size_t>(iy + 1) * g + ix + 1];
      const double smooth = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
      img.at(0, y, x) = base + smooth * texture;
    }
  // fine grain
  for (std::size_t i = 0; i < img.size(); ++i) img[i] += rng.uniform(-0.015, 0.015);
}

// Rib-like bands: slightly sloped soft horizontal stripes.
void render_ribs(Tensor& img, Rng& rng) {
  const int side = img.dim(1);
  const int bands = rng.uniform_int(3, 5);
  for (int b = 0; b < bands; ++b) {
    const double y0 = rng.uniform(0.1, 0.9) * side;
    const double slope = rng.uniform(-0.08, 0.08);
    const double amp = rng.uniform(0.05, 0.11);
    const double sigma = rng.uniform(1.0, 2.0);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double d = y - (y0 + slope * x);
        img.at(0, y, x) += amp * std::exp(-d * d / (2.0 * sigma * sigma));
      }
  }
}

// Large soft ellipse low on the image-right side; not a labeled opacity.
void render_cardiac(Tensor& img, Rng& rng) {
  const int side = img.dim(1);
  Ellipse e;
  e.cx = rng.uniform(0.58, 0.68) * side;
  e.cy = rng.uniform(0.66, 0.78) * side;
  e.rx = rng.uniform(0.18, 0.26) * side;
  e.ry = rng.uniform(0.14, 0.22) * side;
  e.phi = rng.uniform(-0.3, 0.3);
  e.amp = rng.uniform(0.07, 0.13);
  e.falloff = rng.uniform(1.5, 2.5);
  render_ellipse(img, e);
}

bool center_in_review(double cx, double cy, int side, const RegionRule& r, double margin) {
  const double nx = cx / side, ny = cy / side;
  if (ny <= r.apex_y1 + margin && ny >= r.apex_y0) return true;
  return nx >= r.heart_x0 - margin && nx <= r.heart_x1 + margin && ny >= r.heart_y0 - margin &&
         ny <= r.heart_y1 + margin;
}

}  // namespace

void validate_synth_config(const SynthConfig& c) {
  if (c.count < 0) throw ParameterError("synth: count must be >= 0");
  if (c.side < 8) throw ParameterError("synth: side must be >= 8");
  if (c.positive_fraction < 0.0 || c.positive_fraction > 1.0 || c.review_fraction < 0.0 ||
      c.review_fraction > 1.0)
    throw ParameterError("synth: fractions must lie in [0,1]");
  if (c.blobs_min < 1 || c.blobs_max < c.blobs_min)
    throw ParameterError("synth: blob count range is invalid");
  if (c.blob_radius_min <= 0.0 || c.blob_radius_max < c.blob_radius_min)
    throw ParameterError("synth: blob radius range is invalid");
  if (c.blob_radius_max >= 0.5)
    throw ParameterError("synth: blob diameter would exceed the image side");
  if (c.blob_intensity_min < kSupportTau || c.blob_intensity_max < c.blob_intensity_min)
    throw ParameterError("synth: blob intensity range is invalid");
  if (c.review_fraction > 0.0 && c.side < 32)
    throw ParameterError("synth: review-area placement needs side >= 32");
}

std::vector<ImageSample> synth_generate(const SynthConfig& config, Rng& rng) {
  validate_synth_config(config);
  const int n = config.count;
  std::vector<ImageSample> out;
  if (n == 0) return out;

  // Exact label and review allocation: counts are rounded, then assigned
  // to shuffled index sets.
  const int n_pos = static_cast<int>(std::llround(config.positive_fraction * n));
  std::vector<int> indices(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
  rng.shuffle(indices);
  std::vector<char> is_pos(static_cast<std::size_t>(n), 0);
  std::vector<int> positives;
  for (int i = 0; i < n_pos; ++i) {
    is_pos[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])] = 1;
    positives.push_back(indices[static_cast<std::size_t>(i)]);
  }
  std::sort(positives.begin(), positives.end());
  rng.shuffle(positives);
  const int n_rev = static_cast<int>(std::llround(config.review_fraction * n_pos));
  std::vector<char> is_review(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n_rev; ++i) is_review[static_cast<std::size_t>(positives[static_cast<std::size_t>(i)])] = 1;

  // Pre-drawn per-image seeds keep images independent of generation order.
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
  for (auto& s : seeds) s = rng.next_u64();

  const int side = config.side;
  const double margin = 0.03;
  const RegionRule& rr = config.regions;

  for (int i = 0; i < n; ++i) {
    Rng r(seeds[static_cast<std::size_t>(i)]);
    ImageSample s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "s%06d", i);
    s.id = idbuf;
    s.pixels = Tensor({1, side, side});

    render_background(s.pixels, r, config.texture);
    const bool ribs = r.bernoulli(config.distractor_prob);
    const bool cardiac = r.bernoulli(config.distractor_prob);
    if (ribs) render_ribs(s.pixels, r);
    if (cardiac) render_cardiac(s.pixels, r);

    if (is_pos[static_cast<std::size_t>(i)]) {
      s.label = 1;
      s.category = Category::pneumonia;
      const int blobs = r.uniform_int(config.blobs_min, config.blobs_max);
      for (int b = 0; b < blobs; ++b) {
        const bool want_review = b == 0 && is_review[static_cast<std::size_t>(i)];
        Ellipse e;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
          e.rx = r.uniform(config.blob_radius_min, config.blob_radius_max) * side;
          e.ry = r.uniform(config.blob_radius_min, config.blob_radius_max) * side;
          e.phi = r.uniform(0.0, std::numbers::pi);
          e.amp = r.uniform(config.blob_intensity_min, config.blob_intensity_max);
          e.falloff = r.uniform(1.5, 3.0);
          if (want_review && r.bernoulli(0.5)) {
            // apex band: smaller blobs fit above the band's lower edge
            const double ry_cap = rr.apex_y1 * side - margin * side - 2.0;
            e.ry = std::min(e.ry, ry_cap);
            if (e.ry < 1.5) continue;
            const double lo = e.ry + 1.0, hi = rr.apex_y1 * side - margin * side;
            if (lo >= hi) continue;
            e.cy = r.uniform(lo, hi);
            e.cx = r.uniform(e.rx + 1.0, side - e.rx - 2.0);
            placed = true;
          } else if (want_review) {
            const double lox = std::max(e.rx + 1.0, (rr.heart_x0 + margin) * side);
            const double hix = std::min(side - e.rx - 2.0, (rr.heart_x1 - margin) * side);
            const double loy = std::max(e.ry + 1.0, (rr.heart_y0 + margin) * side);
            const double hiy = std::min(side - e.ry - 2.0, (rr.heart_y1 - margin) * side);
            if (lox >= hix || loy >= hiy) continue;
            e.cx = r.uniform(lox, hix);
            e.cy = r.uniform(loy, hiy);
            placed = true;
          } else {
            e.cx = r.uniform(e.rx + 1.0, side - e.rx - 2.0);
            e.cy = r.uniform(e.ry + 1.0, side - e.ry - 2.0);
            placed = !center_in_review(e.cx, e.cy, side, rr, margin);
          }
        }
        if (!placed)
          throw ParameterError("synth: could not place blob for sample " + s.id +
                               " (region geometry too tight)");
        const BBox box = render_ellipse(s.pixels, e);
        if (box.w > 0 && box.h > 0) s.boxes.push_back(box);
      }
      if (s.boxes.empty())
        throw ParameterError("synth: positive sample " + s.id + " rendered no visible blob");
    } else {
      s.label = 0;
      s.category = (ribs || cardiac) ? Category::other_disease : Category::normal;
    }

    for (std::size_t p = 0; p < s.pixels.size(); ++p)
      s.pixels[p] = std::clamp(s.pixels[p], 0.0, 1.0);
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest synth_to_disk(const SynthConfig& config, Rng& rng,
                              const std::filesystem::path& dir) {
  auto samples = synth_generate(config, rng);
  std::filesystem::create_directories(dir / "images");
  DatasetManifest m;
  m.image_side = config.side;
  m.root = dir;
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".pgm";
    write_pgm(dir / rel, s.pixels);
    m.records.push_back({s.id, rel, s.label, s.category, s.boxes});
  }
  save_manifest(dir / "dataset.manifest", m);
  return m;
}

}  // namespace pneumo
