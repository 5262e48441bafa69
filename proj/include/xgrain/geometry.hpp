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

// Normalized box algebra and the box-to-patch mapping.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace xgrain {

/// Box in (center x, center y, width, height), all fractions of the image
/// side. Validity: 0 < w <= 1, 0 < h <= 1, and the box lies inside the unit
/// square up to 1e-9.
struct NormBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  static constexpr NormBox whole_image() { return {0.5, 0.5, 1.0, 1.0}; }
  static NormBox from_corners(double x1, double y1, double x2, double y2);

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }

  bool valid() const;
  /// Throws ContractError naming the box when invalid.
  void validate() const;
  std::string str() const;

  friend bool operator==(const NormBox&, const NormBox&) = default;
};

double iou(const NormBox& a, const NormBox& b);
/// IoU minus the fraction of the enclosing box not covered by the union.
double giou(const NormBox& a, const NormBox& b);
/// Sum of absolute differences of (cx, cy, w, h).
double l1_box(const NormBox& a, const NormBox& b);

/// Square patch grid of a square image.
struct PatchGrid {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch_size = 0;
  std::size_t image_size = 0;

  /// Throws DimensionError unless image_size is a positive multiple of
  /// patch_size.
  static PatchGrid square(std::size_t image_size, std::size_t patch_size);
  std::size_t count() const { return grid_h * grid_w; }
  /// Normalized rectangle of cell `index` (row-major).
  NormBox cell_box(std::size_t index) const;
};

/// Strictly increasing row-major patch indices.
using PatchSet = std::vector<std::size_t>;

/// Every cell whose half-open interval [i*s, (i+1)*s) overlaps the box with
/// positive area. Overlaps below 1e-9 (one grid line touching an edge) do not
/// count.
PatchSet patches_for_box(const NormBox& box, const PatchGrid& grid);

}  // namespace xgrain
