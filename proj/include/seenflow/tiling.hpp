// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "seenflow/tensor.hpp"

namespace seenflow {

// Overlapping chunk decomposition of a scene extent with per-voxel blend
// weights (uniform box weights; the accumulated field counts covering chunks).
struct TilePlan {
    Vec3i extent = Vec3i::Zero();
    Vec3i chunk_shape = Vec3i::Zero();
    double overlap_ratio = 0.0;
    std::vector<Vec3i> origins;       // lexicographically sorted, deduplicated
    std::vector<double> weight_sum;   // per extent voxel, > 0 everywhere

    std::int64_t cells() const {
        return static_cast<std::int64_t>(extent.x()) * extent.y() * extent.z();
    }
    std::int64_t cell_index(int i, int j, int k) const {
        return (static_cast<std::int64_t>(i) * extent.y() + j) * extent.z() + k;
    }
};

// Stride is ceil(chunk * (1 - overlap)) per axis; the last chunk per axis is
// clamped flush to the boundary. Chunks larger than the extent degenerate to
// a single clipped chunk at the origin.
TilePlan plan_tiles(const Vec3i& extent, const Vec3i& chunk_shape, double overlap_ratio);

// Per-voxel weighted mean of per-chunk dense arrays with `channels` values per
// cell. Summation runs in plan-origin order so results do not depend on any
// worker scheduling upstream.
template <typename S>
ArrayX<S> blend_chunks(const std::vector<ArrayX<S>>& chunk_values, const TilePlan& plan,
                       int channels) {
    if (chunk_values.size() != plan.origins.size())
        throw std::invalid_argument("blend_chunks: value count does not match plan origins");
    const Vec3i cs = plan.chunk_shape;
    const std::int64_t chunk_cells = static_cast<std::int64_t>(cs.x()) * cs.y() * cs.z();
    ArrayX<S> acc = ArrayX<S>::Zero(plan.cells() * channels);
    ArrayX<S> wsum = ArrayX<S>::Zero(plan.cells());
    for (std::size_t c = 0; c < plan.origins.size(); ++c) {
        if (chunk_values[c].size() != chunk_cells * channels)
            throw std::invalid_argument("blend_chunks: chunk " + std::to_string(c) +
                                        " has wrong size");
        const Vec3i o = plan.origins[c];
        for (int i = 0; i < cs.x(); ++i) {
            if (o.x() + i >= plan.extent.x()) break;
            for (int j = 0; j < cs.y(); ++j) {
                if (o.y() + j >= plan.extent.y()) break;
                for (int k = 0; k < cs.z(); ++k) {
                    if (o.z() + k >= plan.extent.z()) break;
                    const std::int64_t dst = plan.cell_index(o.x() + i, o.y() + j, o.z() + k);
                    const std::int64_t src =
                        (static_cast<std::int64_t>(i) * cs.y() + j) * cs.z() + k;
                    acc.segment(dst * channels, channels) +=
                        chunk_values[c].segment(src * channels, channels);
                    wsum[dst] += S(1);
                }
            }
        }
    }
    for (std::int64_t v = 0; v < plan.cells(); ++v)
        acc.segment(v * channels, channels) /= wsum[v];
    return acc;
}

// Slice the global array back into per-chunk arrays (cells outside the extent
// read as zero; they only occur for chunks larger than the extent).
template <typename S>
std::vector<ArrayX<S>> slice_chunks(const ArrayX<S>& global, const TilePlan& plan, int channels) {
    const Vec3i cs = plan.chunk_shape;
    const std::int64_t chunk_cells = static_cast<std::int64_t>(cs.x()) * cs.y() * cs.z();
    std::vector<ArrayX<S>> out(plan.origins.size());
    for (std::size_t c = 0; c < plan.origins.size(); ++c) {
        ArrayX<S> slice = ArrayX<S>::Zero(chunk_cells * channels);
        const Vec3i o = plan.origins[c];
        for (int i = 0; i < cs.x() && o.x() + i < plan.extent.x(); ++i)
            for (int j = 0; j < cs.y() && o.y() + j < plan.extent.y(); ++j)
                for (int k = 0; k < cs.z() && o.z() + k < plan.extent.z(); ++k) {
                    const std::int64_t src = plan.cell_index(o.x() + i, o.y() + j, o.z() + k);
                    const std::int64_t dst =
                        (static_cast<std::int64_t>(i) * cs.y() + j) * cs.z() + k;
                    slice.segment(dst * channels, channels) =
                        global.segment(src * channels, channels);
                }
        out[c] = std::move(slice);
    }
    return out;
}

// One synchronized sampler step across all chunks: per-chunk Euler updates,
// then a global blend, then a re-slice, so every chunk sees a consistent
// global state. The velocity callback gets (chunk index, chunk state) and
// returns the chunk velocity.
template <typename S, typename VelocityFn>
std::vector<ArrayX<S>> tiled_sample_step(const std::vector<ArrayX<S>>& states,
                                         const TilePlan& plan, int channels, double dt,
                                         const VelocityFn& velocity) {
    if (states.size() != plan.origins.size())
        throw std::invalid_argument("tiled_sample_step: state count does not match plan");
    std::vector<ArrayX<S>> updated(states.size());
    for (std::size_t c = 0; c < states.size(); ++c) {
        ArrayX<S> v = velocity(c, states[c]);
        if (v.size() != states[c].size())
            throw std::invalid_argument("tiled_sample_step: velocity size mismatch");
        updated[c] = states[c] + static_cast<S>(dt) * v;
    }
    ArrayX<S> global = blend_chunks(updated, plan, channels);
    return slice_chunks(global, plan, channels);
}

}  // namespace seenflow
