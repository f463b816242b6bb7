// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/eval.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace seenflow {

PointCloud sample_points(const Mesh& mesh, std::int64_t n, std::uint64_t seed) {
    if (mesh.triangles.empty()) throw std::invalid_argument("sample_points: empty mesh");
    if (n < 1) throw std::invalid_argument("sample_points: n must be >= 1");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Vec3i& tri = mesh.triangles[t];
        total += triangle_area(mesh.vertices[tri.x()], mesh.vertices[tri.y()],
                               mesh.vertices[tri.z()]);
        cumulative[t] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("sample_points: zero-area mesh");

    Rng rng(seed);
    PointCloud out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double r = rng.uniform() * total;
        std::size_t t = static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
        if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
        const Vec3i& tri = mesh.triangles[t];
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const Vec3d& a = mesh.vertices[tri.x()];
        const Vec3d& b = mesh.vertices[tri.y()];
        const Vec3d& c = mesh.vertices[tri.z()];
        out.push_back(a + u * (b - a) + v * (c - a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact nearest neighbor via a median-split KD-tree.
// ---------------------------------------------------------------------------
namespace {

class KdTree {
public:
    explicit KdTree(const PointCloud& points) : points_(points) {
        order_.resize(points.size());
        std::iota(order_.begin(), order_.end(), 0u);
        root_ = build(0, points.size(), 0);
    }

    double nearest_sq(const Vec3d& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(root_, q, 0, &best);
        return best;
    }

private:
    struct Node {
        std::size_t point = 0;
        int left = -1, right = -1;
    };

    int build(std::size_t begin, std::size_t end, int depth) {
        if (begin >= end) return -1;
        const int axis = depth % 3;
        std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::size_t a, std::size_t b) {
                             return points_[a][axis] < points_[b][axis];
                         });
        Node node;
        node.point = order_[mid];
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        int left = build(begin, mid, depth + 1);
        int right = build(mid + 1, end, depth + 1);
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(int id, const Vec3d& q, int depth, double* best) const {
        if (id < 0) return;
        const Node& node = nodes_[id];
        const Vec3d& p = points_[node.point];
        double d = (q - p).squaredNorm();
        if (d < *best) *best = d;
        const int axis = depth % 3;
        const double delta = q[axis] - p[axis];
        const int near = delta < 0 ? node.left : node.right;
        const int far = delta < 0 ? node.right : node.left;
        search(near, q, depth + 1, best);
        if (delta * delta < *best) search(far, q, depth + 1, best);
    }

    const PointCloud& points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

double directed_mean_sq(const PointCloud& from, const KdTree& to_tree) {
    double sum = 0.0;
    for (const Vec3d& p : from) sum += to_tree.nearest_sq(p);
    return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point cloud");
    KdTree ta(a), tb(b);
    return directed_mean_sq(a, tb) + directed_mean_sq(b, ta);
}

// ---------------------------------------------------------------------------
// Masked volumetric metrics.
// ---------------------------------------------------------------------------
namespace {

template <typename Accum>
std::optional<double> masked_reduce(const SparseTsdfVolume& pred, const SparseTsdfVolume& target,
                                    const VoxelRegion& region, Accum accum) {
    if (std::abs(pred.voxel_size() - target.voxel_size()) > 1e-12 ||
        (pred.origin() - target.origin()).norm() > 1e-12)
        throw std::invalid_argument("masked metric: prediction and target grids are not aligned");
    const float pred_sentinel = static_cast<float>(-pred.truncation());
    double sum = 0.0;
    std::int64_t count = 0;
    const int edge = target.block_edge();
    for (const auto& [bc, blk] : target.blocks()) {
        for (int i = 0; i < edge; ++i)
            for (int j = 0; j < edge; ++j)
                for (int k = 0; k < edge; ++k) {
                    const std::int64_t li = (static_cast<std::int64_t>(i) * edge + j) * edge + k;
                    if (blk.weight[li] <= 0.0f) continue;
                    const Vec3i v = bc * edge + Vec3i(i, j, k);
                    if (!region.contains(v)) continue;
                    VoxelState ps = classify_voxel(pred, v);
                    const float pv = ps.cls == VoxelClass::kUnknown ? pred_sentinel : ps.tsdf;
                    sum += accum(static_cast<double>(pv) - static_cast<double>(blk.tsdf[li]));
                    ++count;
                }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

}  // namespace

std::optional<double> masked_l2(const SparseTsdfVolume& pred, const SparseTsdfVolume& target,
                                const VoxelRegion& region) {
    return masked_reduce(pred, target, region, [](double d) { return d * d; });
}

std::optional<double> masked_l1(const SparseTsdfVolume& pred, const SparseTsdfVolume& target,
                                const VoxelRegion& region) {
    return masked_reduce(pred, target, region, [](double d) { return std::abs(d); });
}

double tmd(const Mesh& completion_a, const Mesh& completion_b, std::int64_t n,
           std::uint64_t seed) {
    return chamfer(sample_points(completion_a, n, seed), sample_points(completion_b, n, seed));
}

double surface_iou_on_known(const SparseTsdfVolume& pred, const SparseTsdfVolume& reference) {
    std::int64_t intersection = 0, union_count = 0;
    const int edge = reference.block_edge();
    for (const auto& [bc, blk] : reference.blocks()) {
        for (int i = 0; i < edge; ++i)
            for (int j = 0; j < edge; ++j)
                for (int k = 0; k < edge; ++k) {
                    const std::int64_t li = (static_cast<std::int64_t>(i) * edge + j) * edge + k;
                    if (blk.weight[li] <= 0.0f) continue;
                    const Vec3i v = bc * edge + Vec3i(i, j, k);
                    const bool ref_surf =
                        classify_voxel(reference, v).cls == VoxelClass::kSurface;
                    const bool pred_surf = classify_voxel(pred, v).cls == VoxelClass::kSurface;
                    if (ref_surf && pred_surf) ++intersection;
                    if (ref_surf || pred_surf) ++union_count;
                }
    }
    if (union_count == 0) return 1.0;
    return static_cast<double>(intersection) / static_cast<double>(union_count);
}

std::string MetricRecord::to_line() const {
    std::ostringstream ss;
    ss.precision(12);
    ss << "metric=" << name << " value=" << value;
    for (const auto& [k, v] : tags) ss << " " << k << "=" << v;
    return ss.str();
}

}  // namespace seenflow
