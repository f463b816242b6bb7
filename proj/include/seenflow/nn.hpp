// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Small network building blocks on top of the tensor graph: linear layers,
// 3-D convolutions as gather + GEMM over cached neighbor tables, nearest
// upsampling, sinusoidal time features, and rotary position tables.
#pragma once

#include "seenflow/tensor.hpp"

namespace seenflow {

// Voxel (i,j,k) of a (nx,ny,nz) grid in C-order, z fastest.
inline std::int64_t grid_index(const Vec3i& shape, int i, int j, int k) {
    return (static_cast<std::int64_t>(i) * shape.y() + j) * shape.z() + k;
}

using IndexTable = std::shared_ptr<const std::vector<std::int64_t>>;

// Neighbor table for a dense kxkxk convolution, stride 1, zero padding.
inline IndexTable conv_neighbor_table(const Vec3i& shape, int kernel) {
    const int r = kernel / 2;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(shape.prod()) * kernel * kernel * kernel);
    for (int i = 0; i < shape.x(); ++i)
        for (int j = 0; j < shape.y(); ++j)
            for (int k = 0; k < shape.z(); ++k)
                for (int di = -r; di <= r; ++di)
                    for (int dj = -r; dj <= r; ++dj)
                        for (int dk = -r; dk <= r; ++dk) {
                            int a = i + di, b = j + dj, c = k + dk;
                            bool in = a >= 0 && a < shape.x() && b >= 0 && b < shape.y() &&
                                      c >= 0 && c < shape.z();
                            idx->push_back(in ? grid_index(shape, a, b, c) : -1);
                        }
    return idx;
}

// Table for a strided sxsxs patch aggregation (downsampling): each output
// cell gathers its s^3 input voxels.
inline IndexTable patch_table(const Vec3i& in_shape, int s) {
    if (in_shape.x() % s || in_shape.y() % s || in_shape.z() % s)
        throw std::invalid_argument("patch_table: shape not divisible by stride");
    Vec3i out = in_shape / s;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(out.prod()) * s * s * s);
    for (int i = 0; i < out.x(); ++i)
        for (int j = 0; j < out.y(); ++j)
            for (int k = 0; k < out.z(); ++k)
                for (int di = 0; di < s; ++di)
                    for (int dj = 0; dj < s; ++dj)
                        for (int dk = 0; dk < s; ++dk)
                            idx->push_back(
                                grid_index(in_shape, i * s + di, j * s + dj, k * s + dk));
    return idx;
}

// Nearest-neighbor upsampling table: fine cell -> coarse source cell.
inline IndexTable upsample_table(const Vec3i& coarse_shape, int s) {
    Vec3i fine = coarse_shape * s;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(fine.prod()));
    for (int i = 0; i < fine.x(); ++i)
        for (int j = 0; j < fine.y(); ++j)
            for (int k = 0; k < fine.z(); ++k)
                idx->push_back(grid_index(coarse_shape, i / s, j / s, k / s));
    return idx;
}

template <typename S>
struct Linear {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out], undefined when bias-free

    Tensor<S> operator()(const Tensor<S>& x) const {
        Tensor<S> y = matmul(x, w);
        return b.defined() ? add_rowwise(y, b) : y;
    }
};

template <typename S>
Linear<S> make_linear(ParamSet<S>& ps, const std::string& name, int in, int out, Rng& rng,
                      bool bias = true, bool zero_init = false) {
    Linear<S> l;
    if (zero_init)
        l.w = ps.add_zeros(name + "/w", {in, out});
    else
        l.w = ps.add_normal(name + "/w", {in, out}, rng, std::sqrt(2.0 / (in + out)));
    if (bias) l.b = ps.add_zeros(name + "/b", {out});
    return l;
}

// Convolution applied to [V, Cin] voxel features via an index table whose rows
// hold K source voxels per output cell.
template <typename S>
Tensor<S> conv_gather(const Tensor<S>& x, const IndexTable& table, int taps,
                      const Linear<S>& proj) {
    const int cin = x.shape()[1];
    const std::int64_t out_cells = static_cast<std::int64_t>(table->size()) / taps;
    Tensor<S> patches = gather_rows(x, table);                       // [V*K, Cin]
    patches = reshape(patches, {static_cast<int>(out_cells), taps * cin});
    return proj(patches);
}

template <typename S>
Linear<S> make_conv(ParamSet<S>& ps, const std::string& name, int taps, int cin, int cout,
                    Rng& rng, bool zero_init = false) {
    Linear<S> l;
    if (zero_init)
        l.w = ps.add_zeros(name + "/w", {taps * cin, cout});
    else
        l.w = ps.add_normal(name + "/w", {taps * cin, cout}, rng,
                            std::sqrt(2.0 / (taps * cin + cout)));
    l.b = ps.add_zeros(name + "/b", {cout});
    return l;
}

// Sinusoidal features of a scalar timestep in [0,1].
template <typename S>
ArrayX<S> sinusoidal_features(double t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_features: dim must be even");
    ArrayX<S> out(dim);
    const int half = dim / 2;
    const double scaled = 1000.0 * t;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        out[i] = static_cast<S>(std::sin(scaled * freq));
        out[half + i] = static_cast<S>(std::cos(scaled * freq));
    }
    return out;
}

// Rotary tables for tokens on a 3-D grid: pair slots are split across the
// three axes, leftovers unrotated.
template <typename S>
struct RopeTables {
    std::shared_ptr<const ArrayX<S>> cos_tab;
    std::shared_ptr<const ArrayX<S>> sin_tab;
    int pairs = 0;
};

template <typename S>
RopeTables<S> make_rope_tables(const Vec3i& grid, int head_dim) {
    const int pairs = head_dim / 2;
    const std::int64_t tokens = static_cast<std::int64_t>(grid.prod());
    auto cos_tab = std::make_shared<ArrayX<S>>(tokens * pairs);
    auto sin_tab = std::make_shared<ArrayX<S>>(tokens * pairs);
    const int per_axis = std::max(1, pairs / 3);
    std::int64_t tok = 0;
    for (int i = 0; i < grid.x(); ++i)
        for (int j = 0; j < grid.y(); ++j)
            for (int k = 0; k < grid.z(); ++k, ++tok) {
                const double pos[3] = {static_cast<double>(i), static_cast<double>(j),
                                       static_cast<double>(k)};
                for (int p = 0; p < pairs; ++p) {
                    const int axis = std::min(p / per_axis, 2);
                    const int slot = p - axis * per_axis;
                    const double freq = std::pow(100.0, -static_cast<double>(slot) / per_axis);
                    const double ang = pos[axis] * freq;
                    (*cos_tab)[tok * pairs + p] = static_cast<S>(std::cos(ang));
                    (*sin_tab)[tok * pairs + p] = static_cast<S>(std::sin(ang));
                }
            }
    RopeTables<S> t;
    t.cos_tab = cos_tab;
    t.sin_tab = sin_tab;
    t.pairs = pairs;
    return t;
}

}  // namespace seenflow
