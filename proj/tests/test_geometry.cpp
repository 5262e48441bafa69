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

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/geometry.hpp"

using namespace xgrain;

TEST_CASE("giou examples") {
  const NormBox a{0.25, 0.25, 0.5, 0.5};
  const NormBox b{0.75, 0.75, 0.5, 0.5};
  CHECK(giou(a, a) == 1.0);
  CHECK(giou(a, b) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(testing::rasterized_overlap(a, b).giou - (-0.5)) < 5e-3);

  const NormBox whole = NormBox::whole_image();
  const NormBox inner{0.5, 0.5, 0.5, 0.5};
  CHECK(giou(whole, inner) == 0.25);
  CHECK(iou(whole, inner) == 0.25);
  CHECK(std::abs(testing::rasterized_overlap(whole, inner).giou - 0.25) < 5e-3);
}

TEST_CASE("giou rejects degenerate boxes") {
  CHECK_THROWS_AS(giou(NormBox{0.5, 0.5, 0.0, 0.2}, NormBox::whole_image()), ContractError);
  CHECK_THROWS_AS(giou(NormBox{0.9, 0.5, 0.4, 0.2}, NormBox::whole_image()), ContractError);
}

TEST_CASE("giou agrees with rasterization and never exceeds iou") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 50; ++i) {
    const NormBox a = testing::random_box(rng);
    const NormBox b = testing::random_box(rng);
    const double g = giou(a, b);
    CHECK(std::abs(g - testing::rasterized_overlap(a, b, 400).giou) < 1.5e-2);
    CHECK(g <= iou(a, b) + 1e-15);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
  }
}

TEST_CASE("giou equals iou exactly for nested boxes") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const NormBox outer = testing::random_box(rng, 0.2);
    const double w = outer.w * (0.1 + 0.9 * unit(rng));
    const double h = outer.h * (0.1 + 0.9 * unit(rng));
    const double x1 = outer.x1() + unit(rng) * (outer.w - w);
    const double y1 = outer.y1() + unit(rng) * (outer.h - h);
    const NormBox inner = NormBox::from_corners(x1, y1, x1 + w, y1 + h);
    CHECK(giou(outer, inner) == iou(outer, inner));
    CHECK(giou(inner, outer) == iou(inner, outer));
  }
  CHECK(giou(NormBox::whole_image(), NormBox::whole_image()) == 1.0);
}

TEST_CASE("giou is invariant under joint rescaling") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> s_dist(0.05, 1.0);
  for (int i = 0; i < 200; ++i) {
    const NormBox a = testing::random_box(rng);
    const NormBox b = testing::random_box(rng);
    const double s = s_dist(rng);
    auto shrink = [s](const NormBox& x) { return NormBox{x.cx * s, x.cy * s, x.w * s, x.h * s}; };
    CHECK(std::abs(giou(shrink(a), shrink(b)) - giou(a, b)) < 1e-9);
  }
}

TEST_CASE("l1_box examples") {
  const NormBox a{0.3, 0.4, 0.2, 0.1};
  CHECK(l1_box(a, a) == 0.0);
  CHECK(l1_box(NormBox::whole_image(), NormBox{0.5, 0.5, 0.5, 0.5}) == 1.0);
  const NormBox b{0.6, 0.2, 0.3, 0.3};
  CHECK(l1_box(a, b) == l1_box(b, a));
}

TEST_CASE("patches_for_box examples") {
  const PatchGrid grid = PatchGrid::square(224, 32);
  CHECK(grid.count() == 49);
  const PatchSet all = patches_for_box(NormBox::whole_image(), grid);
  CHECK(all.size() == 49);
  CHECK(all.front() == 0);
  CHECK(all.back() == 48);

  CHECK(patches_for_box(NormBox{1.0 / 14, 1.0 / 14, 1.0 / 7, 1.0 / 7}, grid) == PatchSet{0});

  const double side = 1.0 / 7 + 0.01;
  const PatchSet corner = patches_for_box(NormBox{2.0 / 7, 2.0 / 7, side, side}, grid);
  CHECK(corner == PatchSet{8, 9, 15, 16});
}

TEST_CASE("patch grid rejects non-divisible sizes") {
  CHECK_THROWS_AS(PatchGrid::square(100, 32), DimensionError);
}

TEST_CASE("patches_for_box is sorted, nonempty, and monotone under enlargement") {
  std::mt19937_64 rng(11);
  const PatchGrid grid = PatchGrid::square(64, 8);
  std::uniform_real_distribution<double> grow(0.0, 0.2);
  for (int i = 0; i < 300; ++i) {
    const NormBox box = testing::random_box(rng, 0.01);
    const PatchSet ps = patches_for_box(box, grid);
    REQUIRE(!ps.empty());
    CHECK(std::is_sorted(ps.begin(), ps.end()));
    CHECK(std::adjacent_find(ps.begin(), ps.end()) == ps.end());
    const NormBox bigger = NormBox::from_corners(
        std::max(0.0, box.x1() - grow(rng)), std::max(0.0, box.y1() - grow(rng)),
        std::min(1.0, box.x2() + grow(rng)), std::min(1.0, box.y2() + grow(rng)));
    const PatchSet more = patches_for_box(bigger, grid);
    CHECK(std::includes(more.begin(), more.end(), ps.begin(), ps.end()));
  }
}

TEST_CASE("patch membership matches a pixel-level rasterization of the cells") {
  std::mt19937_64 rng(12);
  const PatchGrid grid = PatchGrid::square(64, 8);
  for (int i = 0; i < 100; ++i) {
    const NormBox box = testing::random_box(rng, 0.02);
    PatchSet expected;
    for (std::size_t c = 0; c < grid.count(); ++c) {
      const NormBox cell = grid.cell_box(c);
      const double ow = std::min(box.x2(), cell.x2()) - std::max(box.x1(), cell.x1());
      const double oh = std::min(box.y2(), cell.y2()) - std::max(box.y1(), cell.y1());
      if (ow > 1e-9 && oh > 1e-9) expected.push_back(c);
    }
    CHECK(patches_for_box(box, grid) == expected);
  }
}
