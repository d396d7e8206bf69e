#include "pneumo/regions.hpp"

#include "pneumo/error.hpp"

namespace pneumo {

const char* region_name(Region r) { return r == Region::review_area ? "review_area" : "other"; }

Region region_of(const std::vector<BBox>& boxes, int side, const RegionRule& rule) {
  if (boxes.empty()) throw ParameterError("region_of: boxes must be non-empty (positives only)");
  for (const auto& b : boxes) {
    const double cx = (b.x + b.w / 2.0) / side;
    const double cy = (b.y + b.h / 2.0) / side;
    if (cy >= rule.apex_y0 && cy <= rule.apex_y1) return Region::review_area;
    if (cx >= rule.heart_x0 && cx <= rule.heart_x1 && cy >= rule.heart_y0 && cy <= rule.heart_y1)
      return Region::review_area;
  }
  return Region::other;
}

}  // namespace pneumo
