// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xgrain/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xgrain/errors.hpp"

namespace xgrain {

namespace {
constexpr double kEdgeSlack = 1e-9;
}

NormBox NormBox::from_corners(double x1, double y1, double x2, double y2) {
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

bool NormBox::valid() const {
  if (!(w > 0 && w <= 1 + kEdgeSlack && h > 0 && h <= 1 + kEdgeSlack)) return false;
  return x1() >= -kEdgeSlack && x2() <= 1 + kEdgeSlack && y1() >= -kEdgeSlack &&
         y2() <= 1 + kEdgeSlack;
}

void NormBox::validate() const {
  if (!valid()) throw ContractError("invalid box " + str());
}

std::string NormBox::str() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "(cx=%.6g, cy=%.6g, w=%.6g, h=%.6g)", cx, cy, w, h);
  return buf;
}

namespace {

struct Overlap {
  double inter = 0;
  double uni = 0;
  double hull = 0;
};

Overlap overlap(const NormBox& a, const NormBox& b) {
  a.validate();
  b.validate();
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  Overlap o;
  o.inter = iw * ih;
  // Areas from corners, union as larger + (smaller - inter): for nested boxes the
  // second term is exactly zero and the union equals the hull bit for bit.
  const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
  const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
  o.uni = std::max(area_a, area_b) + (std::min(area_a, area_b) - o.inter);
  o.hull = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
           (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  return o;
}

}  // namespace

double iou(const NormBox& a, const NormBox& b) {
  const Overlap o = overlap(a, b);
  return o.inter / o.uni;
}

double giou(const NormBox& a, const NormBox& b) {
  const Overlap o = overlap(a, b);
  return o.inter / o.uni - (o.hull - o.uni) / o.hull;
}

double l1_box(const NormBox& a, const NormBox& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

PatchGrid PatchGrid::square(std::size_t image_size, std::size_t patch_size) {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw DimensionError("image size " + std::to_string(image_size) +
                         " is not a positive multiple of patch size " +
                         std::to_string(patch_size));
  }
  const std::size_t side = image_size / patch_size;
  return {side, side, patch_size, image_size};
}

NormBox PatchGrid::cell_box(std::size_t index) const {
  const double cw = 1.0 / static_cast<double>(grid_w);
  const double ch = 1.0 / static_cast<double>(grid_h);
  const double col = static_cast<double>(index % grid_w);
  const double row = static_cast<double>(index / grid_w);
  return NormBox::from_corners(col * cw, row * ch, (col + 1) * cw, (row + 1) * ch);
}

PatchSet patches_for_box(const NormBox& box, const PatchGrid& grid) {
  box.validate();
  if (grid.count() == 0) throw DimensionError("patches_for_box: empty grid");
  auto covered = [](double lo, double hi, std::size_t cells) {
    std::vector<std::size_t> out;
    const double step = 1.0 / static_cast<double>(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      const double len = std::min(hi, (i + 1) * step) - std::max(lo, i * step);
      if (len > kEdgeSlack) out.push_back(i);
    }
    return out;
  };
  auto cols = covered(box.x1(), box.x2(), grid.grid_w);
  auto rows = covered(box.y1(), box.y2(), grid.grid_h);
  // Boxes thinner than the slack still own the cell holding their center.
  if (cols.empty()) {
    cols.push_back(std::min(grid.grid_w - 1, static_cast<std::size_t>(box.cx * grid.grid_w)));
  }
  if (rows.empty()) {
    rows.push_back(std::min(grid.grid_h - 1, static_cast<std::size_t>(box.cy * grid.grid_h)));
  }
  PatchSet out;
  out.reserve(rows.size() * cols.size());
  for (auto r : rows) {
    for (auto c : cols) out.push_back(r * grid.grid_w + c);
  }
  return out;
}

}  // namespace xgrain
