#pragma once

#include <vector>

#include "pneumo/dataset.hpp"

namespace pneumo {

// Radiological review areas in normalized image coordinates. The apex band
// is a y-interval across the full width; the behind-heart zone is a
// rectangle on the image-right side (patient left in frontal display).
struct RegionRule {
  double apex_y0 = 0.0;
  double apex_y1 = 0.20;
  double heart_x0 = 0.55;
  double heart_x1 = 0.90;
  double heart_y0 = 0.55;
  double heart_y1 = 0.95;
};

enum class Region { review_area, other };

const char* region_name(Region r);

// review_area iff any box center (normalized by side) lies in the apex
// band or inside the heart zone. Boxes must be non-empty: regions only
// apply to positives.
Region region_of(const std::vector<BBox>& boxes, int side, const RegionRule& rule);

}  // namespace pneumo
