// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/voxgrid.hpp"

namespace seenflow {

std::int64_t DenseTsdfBlock::known_count() const {
    std::int64_t n = 0;
    for (VoxelClass c : mask)
        if (c != VoxelClass::kUnknown) ++n;
    return n;
}

float SparseTsdfVolume::tsdf_at(const Vec3i& voxel) const {
    const Block* b = find_block(block_coord(voxel));
    if (!b) return static_cast<float>(-truncation_);
    return b->tsdf[local_index(voxel)];
}

float SparseTsdfVolume::weight_at(const Vec3i& voxel) const {
    const Block* b = find_block(block_coord(voxel));
    if (!b) return 0.0f;
    return b->weight[local_index(voxel)];
}

SparseTsdfVolume::Block& SparseTsdfVolume::get_or_create_block(const Vec3i& block) {
    auto it = blocks_.find(block);
    if (it == blocks_.end()) {
        Block b;
        std::size_t n = static_cast<std::size_t>(block_edge_) * block_edge_ * block_edge_;
        b.tsdf.assign(n, static_cast<float>(-truncation_));
        b.weight.assign(n, 0.0f);
        it = blocks_.emplace(block, std::move(b)).first;
    }
    return it->second;
}

const SparseTsdfVolume::Block* SparseTsdfVolume::find_block(const Vec3i& block) const {
    auto it = blocks_.find(block);
    return it == blocks_.end() ? nullptr : &it->second;
}

void SparseTsdfVolume::apply_surface_observation(const Vec3i& voxel, float distance) {
    float t = static_cast<float>(truncation_);
    float d = std::min(t, std::max(-t, distance));
    Block& b = get_or_create_block(block_coord(voxel));
    std::int64_t li = local_index(voxel);
    float w = b.weight[li];
    float prev = (w > 0.0f) ? b.tsdf[li] : 0.0f;
    float next = (prev * w + d) / (w + 1.0f);
    b.tsdf[li] = std::min(t, std::max(-t, next));
    b.weight[li] = w + 1.0f;
}

void SparseTsdfVolume::apply_carve_observation(const Vec3i& voxel) {
    apply_surface_observation(voxel, static_cast<float>(truncation_));
}

std::optional<std::pair<Vec3i, Vec3i>> SparseTsdfVolume::known_bounds() const {
    bool any = false;
    Vec3i lo = Vec3i::Zero(), hi = Vec3i::Zero();
    for (const auto& [bc, blk] : blocks_) {
        for (int i = 0; i < block_edge_; ++i)
            for (int j = 0; j < block_edge_; ++j)
                for (int k = 0; k < block_edge_; ++k) {
                    std::int64_t li = (static_cast<std::int64_t>(i) * block_edge_ + j) * block_edge_ + k;
                    if (blk.weight[li] <= 0.0f) continue;
                    Vec3i v = bc * block_edge_ + Vec3i(i, j, k);
                    if (!any) {
                        lo = hi = v;
                        any = true;
                    } else {
                        lo = lo.cwiseMin(v);
                        hi = hi.cwiseMax(v);
                    }
                }
    }
    if (!any) return std::nullopt;
    return std::make_pair(lo, hi);
}

std::int64_t SparseTsdfVolume::known_voxel_count() const {
    std::int64_t n = 0;
    for (const auto& [bc, blk] : blocks_)
        for (float w : blk.weight)
            if (w > 0.0f) ++n;
    return n;
}

VoxelState classify_voxel(const SparseTsdfVolume& volume, const Vec3i& coord) {
    const SparseTsdfVolume::Block* b = volume.find_block(volume.block_coord(coord));
    float t = static_cast<float>(volume.truncation());
    if (!b) return {VoxelClass::kUnknown, -t};
    std::int64_t li = volume.local_index(coord);
    if (b->weight[li] <= 0.0f) return {VoxelClass::kUnknown, -t};
    float v = b->tsdf[li];
    if (v >= t - static_cast<float>(volume.class_epsilon())) return {VoxelClass::kEmpty, v};
    return {VoxelClass::kSurface, v};
}

DenseTsdfBlock extract_dense(const SparseTsdfVolume& volume, const Vec3i& origin,
                             const Vec3i& shape) {
    if ((shape.array() <= 0).any()) throw std::invalid_argument("extract_dense: shape must be positive");
    DenseTsdfBlock out;
    out.origin = origin;
    out.shape = shape;
    out.tsdf.resize(static_cast<std::size_t>(out.size()));
    out.mask.resize(static_cast<std::size_t>(out.size()));
    std::int64_t n = 0;
    for (int i = 0; i < shape.x(); ++i)
        for (int j = 0; j < shape.y(); ++j)
            for (int k = 0; k < shape.z(); ++k, ++n) {
                VoxelState s = classify_voxel(volume, origin + Vec3i(i, j, k));
                out.tsdf[n] = s.tsdf;
                out.mask[n] = s.cls;
            }
    return out;
}

std::vector<std::uint8_t> visibility_mask(const DenseTsdfBlock& block) {
    std::vector<std::uint8_t> m(block.mask.size());
    for (std::size_t i = 0; i < block.mask.size(); ++i)
        m[i] = block.mask[i] != VoxelClass::kUnknown ? 1 : 0;
    return m;
}

void insert_dense(SparseTsdfVolume& volume, const DenseTsdfBlock& block) {
    std::int64_t n = 0;
    for (int i = 0; i < block.shape.x(); ++i)
        for (int j = 0; j < block.shape.y(); ++j)
            for (int k = 0; k < block.shape.z(); ++k, ++n) {
                if (block.mask[n] == VoxelClass::kUnknown) continue;
                Vec3i v = block.origin + Vec3i(i, j, k);
                SparseTsdfVolume::Block& b = volume.get_or_create_block(volume.block_coord(v));
                std::int64_t li = volume.local_index(v);
                b.tsdf[li] = block.tsdf[n];
                b.weight[li] = std::max(b.weight[li], 1.0f);
            }
}

void save_volume(const SparseTsdfVolume& volume, const std::string& path) {
    std::ofstream os = io::open_out(path);
    io::write_magic(os, "STSD");
    io::write_pod<std::uint32_t>(os, 1u);
    io::write_pod<double>(os, volume.voxel_size());
    io::write_pod<double>(os, volume.truncation());
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(volume.block_edge()));
    io::write_pod<std::uint64_t>(os, volume.blocks().size());
    std::size_t n = static_cast<std::size_t>(volume.block_edge()) * volume.block_edge() *
                    volume.block_edge();
    for (const auto& [bc, blk] : volume.blocks()) {
        io::write_pod<std::int32_t>(os, bc.x());
        io::write_pod<std::int32_t>(os, bc.y());
        io::write_pod<std::int32_t>(os, bc.z());
        for (std::size_t i = 0; i < n; ++i) {
            io::write_pod<float>(os, blk.tsdf[i]);
            io::write_pod<float>(os, blk.weight[i]);
        }
    }
    if (!os) throw std::runtime_error("failed writing volume: " + path);
}

SparseTsdfVolume load_volume(const std::string& path) {
    std::ifstream is = io::open_in(path);
    io::expect_magic(is, "STSD", path);
    std::uint32_t version = io::read_pod<std::uint32_t>(is);
    if (version != 1u) throw std::runtime_error("unsupported STSD version in " + path);
    double voxel_size = io::read_pod<double>(is);
    double truncation = io::read_pod<double>(is);
    std::uint32_t edge = io::read_pod<std::uint32_t>(is);
    std::uint64_t count = io::read_pod<std::uint64_t>(is);
    SparseTsdfVolume volume(voxel_size, truncation, static_cast<int>(edge));
    std::size_t n = static_cast<std::size_t>(edge) * edge * edge;
    for (std::uint64_t b = 0; b < count; ++b) {
        Vec3i bc;
        bc.x() = io::read_pod<std::int32_t>(is);
        bc.y() = io::read_pod<std::int32_t>(is);
        bc.z() = io::read_pod<std::int32_t>(is);
        SparseTsdfVolume::Block& blk = volume.get_or_create_block(bc);
        for (std::size_t i = 0; i < n; ++i) {
            blk.tsdf[i] = io::read_pod<float>(is);
            blk.weight[i] = io::read_pod<float>(is);
        }
    }
    return volume;
}

void save_block(const DenseTsdfBlock& block, const std::string& path) {
    std::ofstream os = io::open_out(path);
    io::write_magic(os, "CHNK");
    for (int a = 0; a < 3; ++a) io::write_pod<std::int32_t>(os, block.origin[a]);
    for (int a = 0; a < 3; ++a) io::write_pod<std::int32_t>(os, block.shape[a]);
    io::write_array(os, block.tsdf.data(), block.tsdf.size());
    static_assert(sizeof(VoxelClass) == 1);
    io::write_array(os, reinterpret_cast<const std::uint8_t*>(block.mask.data()), block.mask.size());
    if (!os) throw std::runtime_error("failed writing chunk: " + path);
}

DenseTsdfBlock load_block(const std::string& path) {
    std::ifstream is = io::open_in(path);
    io::expect_magic(is, "CHNK", path);
    DenseTsdfBlock block;
    for (int a = 0; a < 3; ++a) block.origin[a] = io::read_pod<std::int32_t>(is);
    for (int a = 0; a < 3; ++a) block.shape[a] = io::read_pod<std::int32_t>(is);
    if ((block.shape.array() <= 0).any()) throw std::runtime_error("bad chunk shape in " + path);
    std::size_t n = static_cast<std::size_t>(block.size());
    block.tsdf.resize(n);
    block.mask.resize(n);
    io::read_array(is, block.tsdf.data(), n);
    io::read_array(is, reinterpret_cast<std::uint8_t*>(block.mask.data()), n);
    return block;
}

}  // namespace seenflow
