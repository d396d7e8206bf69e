#include "pneumo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "pneumo/error.hpp"
#include "pneumo/image_io.hpp"

namespace pneumo {

namespace {

constexpr const char* kManifestMagic = "pneumoscan-manifest";
constexpr int kManifestVersion = 1;

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.')
      return false;
  return true;
}

std::vector<BBox> parse_boxes(const std::string& field, const std::string& id) {
  std::vector<BBox> boxes;
  if (field == "-") return boxes;
  std::stringstream ss(field);
  std::string quad;
  while (std::getline(ss, quad, ';')) {
    BBox b;
    if (std::sscanf(quad.c_str(), "%d,%d,%d,%d", &b.x, &b.y, &b.w, &b.h) != 4)
      throw DataError("record '" + id + "': malformed box quadruple '" + quad + "'");
    boxes.push_back(b);
  }
  return boxes;
}

std::string format_boxes(const std::vector<BBox>& boxes) {
  if (boxes.empty()) return "-";
  std::ostringstream out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i) out << ';';
    out << boxes[i].x << ',' << boxes[i].y << ',' << boxes[i].w << ',' << boxes[i].h;
  }
  return out.str();
}

}  // namespace

std::string category_name(Category c) {
  switch (c) {
    case Category::pneumonia: return "pneumonia";
    case Category::other_disease: return "other_disease";
    case Category::normal: return "normal";
    case Category::none: return "-";
  }
  return "-";
}

Category category_from_name(const std::string& name) {
  if (name == "pneumonia") return Category::pneumonia;
  if (name == "other_disease") return Category::other_disease;
  if (name == "normal") return Category::normal;
  if (name == "-" || name.empty()) return Category::none;
  throw DataError("unknown category tag '" + name + "'");
}

void validate_record(const ManifestRecord& record, int image_side) {
  const std::string where = "record '" + record.id + "'";
  if (!valid_id(record.id)) throw DataError("manifest id '" + record.id + "' is not filesystem-safe");
  if (record.label != 0 && record.label != 1) throw DataError(where + ": label must be 0 or 1");
  if ((record.label == 1) != !record.boxes.empty())
    throw DataError(where + ": label 1 requires boxes and label 0 forbids them");
  if (record.category == Category::pneumonia && record.label != 1)
    throw DataError(where + ": category pneumonia requires label 1");
  if (record.category != Category::pneumonia && record.category != Category::none &&
      record.label != 0)
    throw DataError(where + ": label 1 requires category pneumonia");
  for (const auto& b : record.boxes) {
    if (b.w <= 0 || b.h <= 0) throw DataError(where + ": box extents must be positive");
    if (b.x < 0 || b.y < 0 || b.x + b.w > image_side || b.y + b.h > image_side)
      throw DataError(where + ": box exceeds image bounds");
  }
}

void validate_sample(const ImageSample& sample) {
  if (sample.pixels.rank() != 3 || sample.pixels.dim(0) != 1)
    throw DataError("sample '" + sample.id + "': pixels must be 1 x H x W");
  if (sample.pixels.dim(1) != sample.pixels.dim(2))
    throw DataError("sample '" + sample.id + "': image must be square");
  ManifestRecord rec{sample.id, "", sample.label, sample.category, sample.boxes};
  validate_record(rec, sample.pixels.dim(1));
}

DatasetManifest load_manifest(const std::filesystem::path& file, bool check_paths) {
  std::ifstream in(file);
  if (!in) throw MissingInputError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + file.string() + " is empty");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version >> m.image_side) || magic != kManifestMagic)
      throw DataError("manifest " + file.string() + ": bad header '" + line + "'");
    if (version != kManifestVersion)
      throw DataError("manifest " + file.string() + ": unsupported version");
    if (m.image_side <= 0) throw DataError("manifest " + file.string() + ": bad image side");
  }

  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRecord rec;
    std::string cat, boxes;
    if (!(ls >> rec.id >> rec.path >> rec.label >> cat >> boxes))
      throw DataError("manifest " + file.string() + " line " + std::to_string(lineno) +
                      ": malformed record");
    rec.category = category_from_name(cat);
    rec.boxes = parse_boxes(boxes, rec.id);
    validate_record(rec, m.image_side);
    if (!seen.insert(rec.id).second)
      throw DataError("manifest " + file.string() + ": duplicate id '" + rec.id + "'");
    if (check_paths && !std::filesystem::exists(m.root / rec.path))
      throw DataError("record '" + rec.id + "': image path " + (m.root / rec.path).string() +
                      " does not exist");
    m.records.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const std::filesystem::path& file, const DatasetManifest& manifest) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write manifest " + file.string());
  out << kManifestMagic << ' ' << kManifestVersion << ' ' << manifest.image_side << '\n';
  for (const auto& rec : manifest.records) {
    out << rec.id << ' ' << rec.path << ' ' << rec.label << ' ' << category_name(rec.category)
        << ' ' << format_boxes(rec.boxes) << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + file.string());
}

ImageSample load_sample(const DatasetManifest& manifest, const ManifestRecord& record) {
  ImageSample s;
  s.id = record.id;
  s.label = record.label;
  s.boxes = record.boxes;
  s.category = record.category;
  s.pixels = read_pgm(manifest.root / record.path);
  if (s.pixels.dim(1) != manifest.image_side || s.pixels.dim(2) != manifest.image_side)
    throw DataError("record '" + record.id + "': image side does not match manifest header");
  validate_sample(s);
  return s;
}

Tensor resize_area(const Tensor& image, int target_side) {
  if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != image.dim(2))
    throw DimensionError("resize_area: image must be square 1 x H x H");
  const int h = image.dim(1);
  if (target_side <= 0 || h % target_side != 0)
    throw ParameterError("resize_area: target " + std::to_string(target_side) +
                         " does not divide side " + std::to_string(h));
  if (target_side == h) return image;
  const int block = h / target_side;
  const double inv = 1.0 / (static_cast<double>(block) * block);
  Tensor out({1, target_side, target_side});
  for (int oy = 0; oy < target_side; ++oy)
    for (int ox = 0; ox < target_side; ++ox) {
      double acc = 0.0;
      for (int dy = 0; dy < block; ++dy)
        for (int dx = 0; dx < block; ++dx) acc += image.at(0, oy * block + dy, ox * block + dx);
      out.at(0, oy, ox) = acc * inv;
    }
  return out;
}

std::vector<BBox> scale_boxes(const std::vector<BBox>& boxes, int from_side, int to_side) {
  if (from_side <= 0 || to_side <= 0) throw ParameterError("scale_boxes: sides must be positive");
  const double f = static_cast<double>(to_side) / from_side;
  std::vector<BBox> out;
  for (const auto& b : boxes) {
    BBox s;
    s.x = round_half_up(b.x * f);
    s.y = round_half_up(b.y * f);
    s.w = static_cast<int>(std::floor(b.w * f));
    s.h = static_cast<int>(std::floor(b.h * f));
    s.x = std::clamp(s.x, 0, to_side);
    s.y = std::clamp(s.y, 0, to_side);
    s.w = std::min(s.w, to_side - s.x);
    s.h = std::min(s.h, to_side - s.y);
    if (s.w > 0 && s.h > 0) out.push_back(s);
  }
  return out;
}

AugmentPolicy default_augment_policy(int side) {
  AugmentPolicy p;
  p.max_translate_px = static_cast<int>(std::floor(side * 0.05));
  p.max_rotate_deg = 5.0;
  p.brightness_lo = 0.9;
  p.brightness_hi = 1.1;
  return p;
}

std::optional<ImageSample> augment(const ImageSample& sample, Rng& rng, const AugmentPolicy& policy,
                                   const std::string& suffix) {
  const int side = sample.pixels.dim(1);
  const int tx = policy.max_translate_px == 0 ? 0
                                              : rng.uniform_int(-policy.max_translate_px, policy.max_translate_px);
  const int ty = policy.max_translate_px == 0 ? 0
                                              : rng.uniform_int(-policy.max_translate_px, policy.max_translate_px);
  const double theta = policy.max_rotate_deg == 0.0
                           ? 0.0
                           : rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg) *
                                 std::numbers::pi / 180.0;
  const double bright = rng.uniform(policy.brightness_lo, policy.brightness_hi);

  const double c = (side - 1) / 2.0;
  const double cosT = std::cos(theta), sinT = std::sin(theta);

  ImageSample out;
  out.id = sample.id + "-" + suffix;
  out.label = sample.label;
  out.category = sample.category;
  out.pixels = Tensor({1, side, side});

  // Inverse map with bilinear sampling; outside the frame reads as 0.
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double rx = x - c - tx, ry = y - c - ty;
      const double sx = cosT * rx + sinT * ry + c;
      const double sy = -sinT * rx + cosT * ry + c;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      double acc = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int px = x0 + dx, py = y0 + dy;
          if (px < 0 || px >= side || py < 0 || py >= side) continue;
          const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
          acc += wgt * sample.pixels.at(0, py, px);
        }
      double v = acc * bright;
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
      out.pixels.at(0, y, x) = v;
    }
  }

  // Boxes follow the forward map; keep the axis-aligned hull of the corners.
  for (const auto& b : sample.boxes) {
    const double xs[2] = {static_cast<double>(b.x), static_cast<double>(b.x + b.w)};
    const double ys[2] = {static_cast<double>(b.y), static_cast<double>(b.y + b.h)};
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    for (double bx : xs)
      for (double by : ys) {
        const double rx = bx - c, ry = by - c;
        const double px = cosT * rx - sinT * ry + c + tx;
        const double py = sinT * rx + cosT * ry + c + ty;
        minx = std::min(minx, px);
        maxx = std::max(maxx, px);
        miny = std::min(miny, py);
        maxy = std::max(maxy, py);
      }
    int x0 = std::max(0, static_cast<int>(std::floor(minx)));
    int y0 = std::max(0, static_cast<int>(std::floor(miny)));
    int x1 = std::min(side, static_cast<int>(std::ceil(maxx)));
    int y1 = std::min(side, static_cast<int>(std::ceil(maxy)));
    if (x1 - x0 > 0 && y1 - y0 > 0) out.boxes.push_back({x0, y0, x1 - x0, y1 - y0});
  }

  if (sample.label == 1 && out.boxes.empty()) return std::nullopt;
  return out;
}

std::vector<ImageSample> expand_with_augmentation(std::vector<ImageSample> samples,
                                                  std::size_t target_total, Rng& rng,
                                                  const AugmentPolicy& policy) {
  if (target_total < samples.size())
    throw ParameterError("expand_with_augmentation: target below current count");
  const std::size_t base = samples.size();
  if (base == 0 && target_total > 0)
    throw ParameterError("expand_with_augmentation: cannot expand an empty set");
  std::size_t cursor = 0, pass = 1;
  while (samples.size() < target_total) {
    if (cursor == base) {
      cursor = 0;
      ++pass;
    }
    const ImageSample& src = samples[cursor++];
    for (int attempt = 0; attempt < 20; ++attempt) {
      auto aug = augment(src, rng, policy, "a" + std::to_string(pass));
      if (aug) {
        samples.push_back(std::move(*aug));
        break;
      }
    }
  }
  return samples;
}

SplitResult split(const DatasetManifest& manifest, double first_fraction, double second_fraction,
                  std::uint64_t seed) {
  if (first_fraction <= 0.0 || second_fraction <= 0.0 ||
      std::abs(first_fraction + second_fraction - 1.0) > 1e-9)
    throw ParameterError("split: fractions must be positive and sum to 1");
  const std::size_t n = manifest.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::size_t n1 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * first_fraction));
  const std::size_t n2 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * second_fraction));
  n1 += n - n1 - n2;  // remainder goes to the first partition

  SplitResult out;
  out.first.image_side = out.second.image_side = manifest.image_side;
  out.first.root = out.second.root = manifest.root;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = manifest.records[order[i]];
    (i < n1 ? out.first : out.second).records.push_back(rec);
  }
  return out;
}

}  // namespace pneumo
