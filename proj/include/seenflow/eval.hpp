// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "seenflow/surface.hpp"

namespace seenflow {

using PointCloud = std::vector<Vec3d>;

// Area-weighted uniform surface samples, deterministic per seed.
PointCloud sample_points(const Mesh& mesh, std::int64_t n, std::uint64_t seed);

// Symmetric squared-distance Chamfer: mean squared nearest-neighbor distance
// in both directions, summed. Uses an exact KD-tree; agrees with brute force.
double chamfer(const PointCloud& a, const PointCloud& b);

// Mean squared tsdf difference over voxels known in the target (optionally
// restricted to a voxel-space region). Voxels the prediction does not know
// count with the prediction's sentinel value. Empty known set -> nullopt.
struct VoxelRegion {
    Vec3i min = Vec3i::Zero();
    Vec3i max = Vec3i::Zero();
    bool whole = true;  // default region: every known target voxel

    bool contains(const Vec3i& v) const {
        return whole || ((v.array() >= min.array()).all() && (v.array() <= max.array()).all());
    }
};

std::optional<double> masked_l2(const SparseTsdfVolume& pred, const SparseTsdfVolume& target,
                                const VoxelRegion& region = {});

// Observed-region mean absolute tsdf difference (same masking as masked_l2).
std::optional<double> masked_l1(const SparseTsdfVolume& pred, const SparseTsdfVolume& target,
                                const VoxelRegion& region = {});

// Total Mutual Difference: pairwise Chamfer between two completions.
double tmd(const Mesh& completion_a, const Mesh& completion_b, std::int64_t n,
           std::uint64_t seed);

// Surface-voxel IoU restricted to the reference's known region: of the voxels
// the reference observed, how well do the two surface sets agree.
double surface_iou_on_known(const SparseTsdfVolume& pred, const SparseTsdfVolume& reference);

// Structured text record for metric outputs.
struct MetricRecord {
    std::string name;
    double value = 0.0;
    std::vector<std::pair<std::string, std::string>> tags;  // convention notes, seeds

    std::string to_line() const;
};

}  // namespace seenflow
