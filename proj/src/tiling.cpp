// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/tiling.hpp"

#include <algorithm>

namespace seenflow {

namespace {

std::vector<int> axis_origins(int extent, int chunk, double overlap) {
    if (chunk >= extent) return {0};
    const int stride = static_cast<int>(std::ceil(chunk * (1.0 - overlap)));
    std::vector<int> out;
    for (int o = 0; o + chunk < extent; o += std::max(1, stride)) out.push_back(o);
    out.push_back(extent - chunk);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

TilePlan plan_tiles(const Vec3i& extent, const Vec3i& chunk_shape, double overlap_ratio) {
    if ((extent.array() <= 0).any() || (chunk_shape.array() <= 0).any())
        throw std::invalid_argument("plan_tiles: extent and chunk shape must be positive");
    if (overlap_ratio < 0.0 || overlap_ratio >= 1.0)
        throw std::invalid_argument("plan_tiles: overlap_ratio must be in [0,1)");
    TilePlan plan;
    plan.extent = extent;
    plan.chunk_shape = chunk_shape;
    plan.overlap_ratio = overlap_ratio;
    std::vector<int> xs = axis_origins(extent.x(), chunk_shape.x(), overlap_ratio);
    std::vector<int> ys = axis_origins(extent.y(), chunk_shape.y(), overlap_ratio);
    std::vector<int> zs = axis_origins(extent.z(), chunk_shape.z(), overlap_ratio);
    for (int x : xs)
        for (int y : ys)
            for (int z : zs) plan.origins.emplace_back(x, y, z);
    std::sort(plan.origins.begin(), plan.origins.end(), Vec3iLess());
    plan.origins.erase(std::unique(plan.origins.begin(), plan.origins.end()), plan.origins.end());

    plan.weight_sum.assign(static_cast<std::size_t>(plan.cells()), 0.0);
    for (const Vec3i& o : plan.origins)
        for (int i = 0; i < chunk_shape.x() && o.x() + i < extent.x(); ++i)
            for (int j = 0; j < chunk_shape.y() && o.y() + j < extent.y(); ++j)
                for (int k = 0; k < chunk_shape.z() && o.z() + k < extent.z(); ++k)
                    plan.weight_sum[static_cast<std::size_t>(
                        plan.cell_index(o.x() + i, o.y() + j, o.z() + k))] += 1.0;
    for (double w : plan.weight_sum)
        if (!(w > 0.0)) throw std::logic_error("plan_tiles: coverage hole");
    return plan;
}

}  // namespace seenflow
