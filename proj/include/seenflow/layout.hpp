// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <mutex>

#include "seenflow/common.hpp"

namespace seenflow {

// Labeled axis-aligned box: centroid, size, semantic label.
struct LayoutBox {
    Vec3d centroid = Vec3d::Zero();
    Vec3d size = Vec3d::Ones();
    std::string label;

    Aabb aabb() const { return {centroid - 0.5 * size, centroid + 0.5 * size}; }
};

// Label embeddings painted onto a grid aligned with the latent. A null map
// (condition dropped) is all zeros with the flag set.
struct LayoutMap {
    Vec3i shape = Vec3i::Zero();
    int channels = 0;
    Eigen::ArrayXd values;  // [cells x channels], C-order cells, channels fastest
    bool null_flag = false;

    std::int64_t cells() const {
        return static_cast<std::int64_t>(shape.x()) * shape.y() * shape.z();
    }
    static LayoutMap null_map(const Vec3i& shape, int channels) {
        LayoutMap m;
        m.shape = shape;
        m.channels = channels;
        m.values = Eigen::ArrayXd::Zero(m.cells() * channels);
        m.null_flag = true;
        return m;
    }
};

// Grid frame the layout is painted in: world origin, voxel size, and the
// downsampling factor between voxels and latent cells.
struct LatentFrame {
    Vec3d world_origin = Vec3d::Zero();
    double voxel_size = 0.02;
    int downsample = 4;
    Vec3i voxel_origin = Vec3i::Zero();  // voxel coordinate of latent cell (0,0,0)

    Vec3d cell_center(const Vec3i& cell) const {
        Vec3d v = voxel_origin.cast<double>() +
                  (cell.cast<double>() * downsample + Vec3d::Constant(downsample * 0.5));
        return world_origin + v * voxel_size;
    }
};

// Pluggable semantic-label embedding provider.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual int dimension() const = 0;
    virtual Eigen::VectorXd embed(const std::string& label) = 0;
};

// Default provider: hash of the normalized label seeds a PRNG emitting a
// unit-norm vector. Deterministic, needs no I/O.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(int dimension = 32) : dim_(dimension) {}
    int dimension() const override { return dim_; }
    Eigen::VectorXd embed(const std::string& label) override;

private:
    int dim_;
};

// Provider backed by a subprocess speaking the line-delimited protocol:
// request is the UTF-8 label plus newline; response is dimension as u32
// followed by dimension little-endian f32 values. Results are memoized per
// label under a lock (single-flight per label).
class PipeEmbeddingProvider : public EmbeddingProvider {
public:
    explicit PipeEmbeddingProvider(const std::string& command);
    ~PipeEmbeddingProvider() override;
    int dimension() const override;
    Eigen::VectorXd embed(const std::string& label) override;

private:
    Eigen::VectorXd request(const std::string& label);

    int to_child_ = -1;
    int from_child_ = -1;
    long pid_ = -1;
    mutable std::mutex mutex_;
    mutable int dim_ = -1;
    std::map<std::string, Eigen::VectorXd> cache_;
};

std::string normalize_label(const std::string& label);

Eigen::VectorXd embed_label(const std::string& label, EmbeddingProvider& provider);

// Paint mean label embeddings into latent cells whose centers fall inside at
// least one box (closed intervals); uncovered cells stay zero.
LayoutMap paint_layout(const std::vector<LayoutBox>& boxes, const LatentFrame& frame,
                       const Vec3i& shape, EmbeddingProvider& provider);

// Exactly the boxes whose AABB intersects the chunk AABB (closed intervals).
std::vector<LayoutBox> boxes_for_chunk(const std::vector<LayoutBox>& scene_boxes,
                                       const Aabb& chunk_bounds);

// With probability p, replace the map by the null map.
LayoutMap drop_condition(const LayoutMap& map, double p, Rng& rng);
LayoutMap drop_condition(const LayoutMap& map, double p, std::uint64_t seed);

// Plain text layout file: six floats (centroid, size) then the label, which
// may contain spaces, one box per line.
void save_layout(const std::vector<LayoutBox>& boxes, const std::string& path);
std::vector<LayoutBox> load_layout(const std::string& path);

}  // namespace seenflow
