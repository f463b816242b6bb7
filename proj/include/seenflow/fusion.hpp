// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "seenflow/layout.hpp"
#include "seenflow/voxgrid.hpp"

namespace seenflow {

// Pinhole depth frame. Depth 0 marks invalid pixels. Camera frame is x right,
// y down, z forward; pose maps camera to world.
struct DepthFrame {
    int width = 0;
    int height = 0;
    std::vector<float> depth;  // row-major, row 0 first
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3d rotation = Mat3d::Identity();
    Vec3d translation = Vec3d::Zero();

    float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
    void validate() const;  // throws invalid-pose on violated invariants
};

void save_frame(const DepthFrame& frame, const std::string& path);
DepthFrame load_frame(const std::string& path);

struct OrientedBox {
    Vec3d center = Vec3d::Zero();
    Vec3d half_extents = Vec3d::Ones();
    double yaw = 0.0;  // about world z
    std::string label;

    // Axis-aligned hull of the rotated box.
    Aabb aabb() const;
    bool contains(const Vec3d& p) const;
};

// Single room with implicit floor (z = 0) and four walls; no ceiling.
struct ProceduralScene {
    Aabb room;  // min z is the floor height (0), max z the wall top
    std::vector<OrientedBox> objects;

    std::vector<LayoutBox> layout_boxes() const;
};

void save_scene(const ProceduralScene& scene, const std::string& path);
ProceduralScene load_scene(const std::string& path);

struct SceneSpec {
    double room_min = 2.0, room_max = 2.6;  // x/y extents in meters
    double room_height = 2.0;
    int objects_min = 3, objects_max = 6;
    double object_half_min = 0.12, object_half_max = 0.40;
    double object_height_min = 0.25, object_height_max = 0.75;
    std::vector<std::string> vocabulary = {"table", "chair", "sofa", "bed",
                                           "cabinet", "shelf", "lamp", "desk"};
    void validate() const;
};

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;

    static CameraIntrinsics from_fov(double fov_deg, int width, int height) {
        CameraIntrinsics k;
        k.fx = k.fy = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
        k.cx = 0.5 * width;
        k.cy = 0.5 * height;
        return k;
    }
};

struct ScanParams {
    int image_width = 96;
    int image_height = 96;
    double fov_deg = 70.0;
    double max_depth = 8.0;
    double camera_height_min = 1.2, camera_height_max = 1.8;
    double wall_margin = 0.25;  // camera standoff from walls
};

// Deterministic function of the seed; object count and labels per the scene spec.
ProceduralScene make_scene(std::uint64_t seed, const SceneSpec& spec);

// First-hit z-depth against the union of room planes and object boxes.
DepthFrame render_depth(const ProceduralScene& scene, const Mat3d& rotation,
                        const Vec3d& translation, const CameraIntrinsics& intrinsics, int width,
                        int height, double max_depth = 8.0);

// Exact per-pixel ray cast used by tests as an independent oracle and by
// render_depth itself (single implementation; the oracle variant below
// brute-forces candidate ordering).
double cast_ray(const ProceduralScene& scene, const Vec3d& origin, const Vec3d& dir_world,
                double max_depth);

// Weighted-average TSDF fusion with space carving. Weight increments by 1 per
// observation; carving reaches at most 8 x truncation in front of the surface.
void integrate_frame(SparseTsdfVolume& volume, const DepthFrame& frame);

// Camera poses sampled in free space looking at the room interior.
std::vector<DepthFrame> sample_scan_frames(const ProceduralScene& scene, int n_frames,
                                           std::uint64_t seed, const ScanParams& params);

std::pair<SparseTsdfVolume, std::vector<LayoutBox>> simulate_partial_scan(
    const ProceduralScene& scene, int n_frames, std::uint64_t seed, const ScanParams& params,
    double voxel_size);

// Deterministic subset of ceil(keep_fraction * n) frames preserving order.
std::vector<DepthFrame> degrade_scan(const std::vector<DepthFrame>& frames, double keep_fraction,
                                     std::uint64_t seed);

// Look-at pose builder (camera z toward target, image y downward).
Mat3d look_at_rotation(const Vec3d& eye, const Vec3d& target);

// Fraction of Unknown voxels strictly inside the room interior.
double unknown_fraction_inside(const SparseTsdfVolume& volume, const ProceduralScene& scene);

}  // namespace seenflow
