// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>

#include "seenflow/common.hpp"

namespace seenflow {

// Three-way voxel semantics. Unknown voxels were never observed by any camera
// and carry the sentinel tsdf value of -truncation with zero fusion weight.
enum class VoxelClass : std::uint8_t { kUnknown = 0, kEmpty = 1, kSurface = 2 };

struct VoxelState {
    VoxelClass cls = VoxelClass::kUnknown;
    float tsdf = 0.0f;  // meaningful for all classes; sentinel for Unknown
};

// Dense cubic crop of a volume; the unit of training and sampling.
struct DenseTsdfBlock {
    Vec3i origin = Vec3i::Zero();  // in voxel coordinates
    Vec3i shape = Vec3i::Zero();
    std::vector<float> tsdf;
    std::vector<VoxelClass> mask;

    std::int64_t size() const {
        return static_cast<std::int64_t>(shape.x()) * shape.y() * shape.z();
    }
    // C-order: x outermost, z fastest.
    std::int64_t index(int i, int j, int k) const {
        return (static_cast<std::int64_t>(i) * shape.y() + j) * shape.z() + k;
    }
    std::int64_t known_count() const;
};

// Block-sparse TSDF grid. Absent blocks are semantically all-Unknown.
class SparseTsdfVolume {
public:
    struct Block {
        std::vector<float> tsdf;
        std::vector<float> weight;
    };

    SparseTsdfVolume() : SparseTsdfVolume(0.02) {}
    explicit SparseTsdfVolume(double voxel_size, double truncation = -1.0, int block_edge = 8,
                              Vec3d origin = Vec3d::Zero())
        : voxel_size_(voxel_size),
          truncation_(truncation > 0 ? truncation : 3.0 * voxel_size),
          block_edge_(block_edge),
          origin_(origin) {
        if (voxel_size_ <= 0) throw std::invalid_argument("voxel_size must be positive");
        if (block_edge_ <= 0) throw std::invalid_argument("block_edge must be positive");
    }

    double voxel_size() const { return voxel_size_; }
    double truncation() const { return truncation_; }
    int block_edge() const { return block_edge_; }
    const Vec3d& origin() const { return origin_; }
    // Tolerance absorbing float rounding when classifying Empty voxels.
    double class_epsilon() const { return 1e-6 * truncation_; }

    const std::map<Vec3i, Block, Vec3iLess>& blocks() const { return blocks_; }

    Vec3i block_coord(const Vec3i& voxel) const {
        return Vec3i(floor_div(voxel.x(), block_edge_), floor_div(voxel.y(), block_edge_),
                     floor_div(voxel.z(), block_edge_));
    }
    std::int64_t local_index(const Vec3i& voxel) const {
        int lx = voxel.x() - floor_div(voxel.x(), block_edge_) * block_edge_;
        int ly = voxel.y() - floor_div(voxel.y(), block_edge_) * block_edge_;
        int lz = voxel.z() - floor_div(voxel.z(), block_edge_) * block_edge_;
        return (static_cast<std::int64_t>(lx) * block_edge_ + ly) * block_edge_ + lz;
    }

    // Center of the voxel in world coordinates.
    Vec3d voxel_center(const Vec3i& voxel) const {
        return origin_ + (voxel.cast<double>() + Vec3d::Constant(0.5)) * voxel_size_;
    }
    Vec3i world_to_voxel(const Vec3d& p) const {
        Vec3d q = (p - origin_) / voxel_size_;
        return Vec3i(static_cast<int>(std::floor(q.x())), static_cast<int>(std::floor(q.y())),
                     static_cast<int>(std::floor(q.z())));
    }

    float tsdf_at(const Vec3i& voxel) const;
    float weight_at(const Vec3i& voxel) const;

    // Weighted running-average observation of a clamped in-band distance.
    void apply_surface_observation(const Vec3i& voxel, float distance);
    // Space-carving observation: pull toward +truncation with incremented weight.
    void apply_carve_observation(const Vec3i& voxel);

    Block& get_or_create_block(const Vec3i& block);
    const Block* find_block(const Vec3i& block) const;

    // Axis-aligned hull of all known voxels; nullopt for an empty volume.
    std::optional<std::pair<Vec3i, Vec3i>> known_bounds() const;

    std::int64_t known_voxel_count() const;

private:
    double voxel_size_;
    double truncation_;
    int block_edge_;
    Vec3d origin_;
    std::map<Vec3i, Block, Vec3iLess> blocks_;
};

// Unknown if never fused (weight 0 or absent block); Empty if at the positive
// truncation bound; Surface otherwise.
VoxelState classify_voxel(const SparseTsdfVolume& volume, const Vec3i& coord);

// Dense crop; out-of-volume regions come back Unknown with the sentinel value.
DenseTsdfBlock extract_dense(const SparseTsdfVolume& volume, const Vec3i& origin,
                             const Vec3i& shape);

// true exactly where the block mask is not Unknown.
std::vector<std::uint8_t> visibility_mask(const DenseTsdfBlock& block);

// Write a dense block back into a volume (known voxels get weight 1).
void insert_dense(SparseTsdfVolume& volume, const DenseTsdfBlock& block);

// Volume file format "STSD" (little-endian).
void save_volume(const SparseTsdfVolume& volume, const std::string& path);
SparseTsdfVolume load_volume(const std::string& path);

// Chunk file format "CHNK" (little-endian).
void save_block(const DenseTsdfBlock& block, const std::string& path);
DenseTsdfBlock load_block(const std::string& path);

}  // namespace seenflow
