// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "seenflow/voxgrid.hpp"

namespace seenflow {

struct Mesh {
    std::vector<Vec3d> vertices;
    std::vector<Vec3i> triangles;

    bool empty() const { return triangles.empty(); }
};

double triangle_area(const Vec3d& a, const Vec3d& b, const Vec3d& c);

// Classic 15-case marching cubes over voxel-center samples. Cells touching an
// Unknown voxel emit no geometry; triangle winding puts outward normals toward
// positive tsdf. Vertices land on sign-changing edges by linear interpolation
// and are deduplicated within 1e-9 m; degenerate triangles are dropped.
Mesh marching_cubes(const DenseTsdfBlock& block, double voxel_size, double iso = 0.0,
                    const Vec3d& world_origin = Vec3d::Zero());

// Per-block extraction with a one-voxel apron so surfaces are crack-free
// across block boundaries.
Mesh extract_scene_mesh(const SparseTsdfVolume& volume);

enum class MeshFormat { kObj, kPlyBinary };

void write_mesh(const Mesh& mesh, const std::string& path, MeshFormat format);
Mesh read_mesh(const std::string& path);  // detects OBJ vs binary PLY

namespace detail {
// Shared marching-cubes case tables.
extern const int kMcEdgeTable[256];
extern const int kMcTriTable[256][16];
}  // namespace detail

}  // namespace seenflow
