// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "seenflow/fusion.hpp"

using namespace seenflow;

namespace {

// Scene with a single wall facing the camera: the room's x=2 wall acts as an
// axis-aligned plane at depth 2 m from a camera at the origin looking along x.
ProceduralScene wall_scene(double depth_m = 2.0) {
    ProceduralScene scene;
    scene.room.min = Vec3d(-10.0, -10.0, -10.0);
    scene.room.max = Vec3d(depth_m, 10.0, 10.0);
    return scene;
}

Mat3d camera_facing_x() {
    // camera z -> world +x, image x -> world -y, image y -> world -z
    Mat3d r;
    r.col(0) = Vec3d(0, -1, 0);
    r.col(1) = Vec3d(0, 0, -1);
    r.col(2) = Vec3d(1, 0, 0);
    return r;
}

// Independent oracle: does this frame observe the voxel (surface band or
// carve band)? Re-derives the projection directly from frame data.
bool frame_observes(const DepthFrame& f, const Vec3d& voxel_center, double trunc) {
    Vec3d pc = f.rotation.transpose() * (voxel_center - f.translation);
    if (pc.z() <= 0.0) return false;
    int u = static_cast<int>(std::floor(f.fx * pc.x() / pc.z() + f.cx));
    int v = static_cast<int>(std::floor(f.fy * pc.y() / pc.z() + f.cy));
    if (u < 0 || u >= f.width || v < 0 || v >= f.height) return false;
    float depth = f.at(u, v);
    if (depth <= 0.0f) return false;
    double d = depth - pc.z();
    return d >= -trunc && d <= 8.0 * trunc;
}

}  // namespace

TEST_CASE("render_depth basics") {
    ProceduralScene scene = wall_scene(2.0);
    CameraIntrinsics k = CameraIntrinsics::from_fov(60.0, 64, 64);

    SUBCASE("camera facing a wall 2 m away reads exactly 2.0 at the center") {
        DepthFrame f = render_depth(scene, camera_facing_x(), Vec3d::Zero(), k, 64, 64, 10.0);
        CHECK(f.at(32, 32) == doctest::Approx(2.0).epsilon(1e-12));
        // z-depth of a perpendicular wall is constant across the image
        CHECK(f.at(5, 50) == doctest::Approx(2.0).epsilon(1e-9));
    }

    SUBCASE("no surface hit renders all-zero depth") {
        ProceduralScene tiny;
        tiny.room.min = Vec3d(0, 0, 0);
        tiny.room.max = Vec3d(1, 1, 1);
        // camera above and beyond the open-top room, looking away from it
        DepthFrame f =
            render_depth(tiny, camera_facing_x(), Vec3d(5, 5, 5), k, 32, 32, 10.0);
        for (float d : f.depth) CHECK(d == 0.0f);
    }

    SUBCASE("box in front of wall occludes it") {
        ProceduralScene scene2 = wall_scene(3.0);
        OrientedBox box;
        box.center = Vec3d(1.0, 0.0, 0.0);
        box.half_extents = Vec3d(0.2, 0.4, 0.4);
        box.yaw = 0.0;
        box.label = "cabinet";
        scene2.objects.push_back(box);
        DepthFrame f = render_depth(scene2, camera_facing_x(), Vec3d::Zero(), k, 64, 64, 10.0);
        CHECK(f.at(32, 32) == doctest::Approx(0.8).epsilon(1e-6));  // box front face
        CHECK(f.at(2, 2) > 2.0);                                    // past the box edge
    }

    SUBCASE("rendered depths match per-pixel exhaustive ray casting") {
        ProceduralScene scene2 = wall_scene(3.0);
        OrientedBox box;
        box.center = Vec3d(1.4, 0.3, 0.2);
        box.half_extents = Vec3d(0.25, 0.3, 0.35);
        box.yaw = 0.7;
        box.label = "chair";
        scene2.objects.push_back(box);
        Mat3d rot = look_at_rotation(Vec3d(-0.5, 0.4, 0.3), Vec3d(1.5, 0.0, 0.0));
        DepthFrame f = render_depth(scene2, rot, Vec3d(-0.5, 0.4, 0.3), k, 48, 48, 10.0);
        for (int v = 0; v < 48; v += 3)
            for (int u = 0; u < 48; u += 3) {
                Vec3d dc((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0);
                double expected = cast_ray(scene2, f.translation, rot * dc, 10.0);
                CHECK(f.at(u, v) == doctest::Approx(expected).epsilon(1e-6));
            }
    }
}

TEST_CASE("integrate_frame against the analytic plane oracle") {
    ProceduralScene scene = wall_scene(2.0);
    CameraIntrinsics k = CameraIntrinsics::from_fov(60.0, 96, 96);
    DepthFrame f = render_depth(scene, camera_facing_x(), Vec3d::Zero(), k, 96, 96, 10.0);
    SparseTsdfVolume vol(0.02);
    integrate_frame(vol, f);
    const double trunc = vol.truncation();
    REQUIRE(vol.known_voxel_count() > 1000);
    std::int64_t checked = 0;
    for (const auto& [bc, blk] : vol.blocks()) {
        for (int i = 0; i < vol.block_edge(); ++i)
            for (int j = 0; j < vol.block_edge(); ++j)
                for (int l = 0; l < vol.block_edge(); ++l) {
                    Vec3i voxel = bc * vol.block_edge() + Vec3i(i, j, l);
                    std::int64_t li = vol.local_index(voxel);
                    if (blk.weight[li] <= 0) continue;
                    // analytic plane tsdf: distance from voxel center to x=2 plane
                    double analytic = std::min(trunc, 2.0 - vol.voxel_center(voxel).x());
                    CHECK(std::abs(blk.tsdf[li] - analytic) <= 0.5 * vol.voxel_size());
                    ++checked;
                }
    }
    CHECK(checked > 1000);
}

TEST_CASE("integrate_frame edge cases") {
    CameraIntrinsics k = CameraIntrinsics::from_fov(60.0, 32, 32);

    SUBCASE("all-invalid depth leaves the volume unchanged") {
        DepthFrame f;
        f.width = f.height = 32;
        f.depth.assign(32 * 32, 0.0f);
        f.fx = k.fx;
        f.fy = k.fy;
        f.cx = k.cx;
        f.cy = k.cy;
        SparseTsdfVolume vol(0.02);
        integrate_frame(vol, f);
        CHECK(vol.blocks().empty());
    }

    SUBCASE("two identical frames double the weights, keep the tsdf") {
        ProceduralScene scene = wall_scene(1.5);
        DepthFrame f = render_depth(scene, camera_facing_x(), Vec3d::Zero(), k, 32, 32, 10.0);
        SparseTsdfVolume once(0.02), twice(0.02);
        integrate_frame(once, f);
        integrate_frame(twice, f);
        integrate_frame(twice, f);
        for (const auto& [bc, blk] : once.blocks()) {
            const auto* other = twice.find_block(bc);
            REQUIRE(other != nullptr);
            for (std::size_t i = 0; i < blk.tsdf.size(); ++i) {
                if (blk.weight[i] <= 0) continue;
                CHECK(other->weight[i] == 2.0f * blk.weight[i]);
                CHECK(std::abs(other->tsdf[i] - blk.tsdf[i]) <= 1e-6f);
            }
        }
    }

    SUBCASE("invalid pose is rejected") {
        DepthFrame f;
        f.width = f.height = 8;
        f.depth.assign(64, 1.0f);
        f.fx = f.fy = 10.0;
        f.cx = f.cy = 4.0;
        f.rotation(0, 0) = 2.0;  // not orthonormal
        SparseTsdfVolume vol(0.02);
        CHECK_THROWS_AS(integrate_frame(vol, f), std::invalid_argument);
    }
}

TEST_CASE("fusion order invariance") {
    SceneSpec spec;
    ProceduralScene scene = make_scene(11, spec);
    ScanParams params;
    params.image_width = params.image_height = 40;
    std::vector<DepthFrame> frames = sample_scan_frames(scene, 6, 123, params);

    SparseTsdfVolume fwd(0.02), rev(0.02);
    for (const auto& f : frames) integrate_frame(fwd, f);
    for (auto it = frames.rbegin(); it != frames.rend(); ++it) integrate_frame(rev, *it);

    REQUIRE(fwd.blocks().size() == rev.blocks().size());
    for (const auto& [bc, blk] : fwd.blocks()) {
        const auto* other = rev.find_block(bc);
        REQUIRE(other != nullptr);
        for (std::size_t i = 0; i < blk.tsdf.size(); ++i) {
            CHECK(blk.weight[i] == other->weight[i]);
            CHECK(std::abs(blk.tsdf[i] - other->tsdf[i]) <= 1e-6f);
        }
    }
}

TEST_CASE("single-frame crop visibility matches the brute-force oracle") {
    ProceduralScene scene = wall_scene(2.0);
    CameraIntrinsics k = CameraIntrinsics::from_fov(60.0, 96, 96);
    DepthFrame f = render_depth(scene, camera_facing_x(), Vec3d::Zero(), k, 96, 96, 10.0);
    SparseTsdfVolume vol(0.02);
    integrate_frame(vol, f);

    // crop fully inside the observed frustum, right at the wall band
    Vec3i origin = vol.world_to_voxel(Vec3d(1.90, -0.1, -0.1));
    DenseTsdfBlock crop = extract_dense(vol, origin, {8, 8, 8});
    std::int64_t n = 0;
    std::int64_t oracle_unknown = 0, got_unknown = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            for (int l = 0; l < 8; ++l, ++n) {
                Vec3i voxel = origin + Vec3i(i, j, l);
                bool oracle = frame_observes(f, vol.voxel_center(voxel), vol.truncation());
                bool known = crop.mask[n] != VoxelClass::kUnknown;
                CHECK(known == oracle);
                if (!oracle) ++oracle_unknown;
                if (!known) ++got_unknown;
            }
    CHECK(got_unknown == oracle_unknown);
    CHECK(got_unknown == 0);  // this crop is fully observed

    // a crop straddling the frustum boundary: unknown counts must agree
    Vec3i origin2 = vol.world_to_voxel(Vec3d(0.1, 1.2, 1.2));
    DenseTsdfBlock crop2 = extract_dense(vol, origin2, {10, 10, 10});
    n = 0;
    std::int64_t mismatch = 0, unknown2 = 0;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j)
            for (int l = 0; l < 10; ++l, ++n) {
                Vec3i voxel = origin2 + Vec3i(i, j, l);
                bool oracle = frame_observes(f, vol.voxel_center(voxel), vol.truncation());
                bool known = crop2.mask[n] != VoxelClass::kUnknown;
                if (known != oracle) ++mismatch;
                if (!known) ++unknown2;
            }
    CHECK(mismatch == 0);
    CHECK(unknown2 > 0);
}

TEST_CASE("make_scene determinism and spec bounds") {
    SceneSpec spec;
    spec.objects_min = spec.objects_max = 3;

    SUBCASE("same seed gives identical scenes") {
        ProceduralScene a = make_scene(99, spec), b = make_scene(99, spec);
        REQUIRE(a.objects.size() == b.objects.size());
        CHECK(a.room.max == b.room.max);
        for (std::size_t i = 0; i < a.objects.size(); ++i) {
            CHECK(a.objects[i].center == b.objects[i].center);
            CHECK(a.objects[i].label == b.objects[i].label);
        }
    }

    SUBCASE("object count honors a degenerate range") {
        for (int s = 0; s < 5; ++s) CHECK(make_scene(s, spec).objects.size() == 3);
    }

    SUBCASE("label histogram covers the vocabulary over many seeds") {
        std::set<std::string> seen;
        for (std::uint64_t s = 0; s < 1000; ++s)
            for (const auto& o : make_scene(s, spec).objects) seen.insert(o.label);
        CHECK(seen.size() == spec.vocabulary.size());
    }

    SUBCASE("degenerate spec is rejected") {
        SceneSpec bad;
        bad.room_min = 2.0;
        bad.room_max = 1.0;
        CHECK_THROWS_AS(make_scene(1, bad), std::invalid_argument);
    }

    SUBCASE("object boxes intersect the room interior") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            ProceduralScene sc = make_scene(s, spec);
            for (const auto& o : sc.objects) CHECK(sc.room.intersects(o.aabb()));
        }
    }
}

TEST_CASE("degrade_scan") {
    SceneSpec spec;
    ProceduralScene scene = make_scene(5, spec);
    ScanParams params;
    params.image_width = params.image_height = 24;
    std::vector<DepthFrame> frames = sample_scan_frames(scene, 10, 77, params);

    SUBCASE("keep_fraction 1 is the identity") {
        auto out = degrade_scan(frames, 1.0, 3);
        REQUIRE(out.size() == frames.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i].translation == frames[i].translation);
    }

    SUBCASE("keep 0.5 of 10 frames keeps exactly 5, a subset in order") {
        auto out = degrade_scan(frames, 0.5, 3);
        CHECK(out.size() == 5);
        std::size_t cursor = 0;
        for (const auto& f : out) {
            while (cursor < frames.size() && frames[cursor].translation != f.translation) ++cursor;
            CHECK(cursor < frames.size());
        }
    }

    SUBCASE("degraded scan's known set is a subset of the full scan's") {
        SparseTsdfVolume full(0.02), part(0.02);
        for (const auto& f : frames) integrate_frame(full, f);
        for (const auto& f : degrade_scan(frames, 0.4, 9)) integrate_frame(part, f);
        std::int64_t part_known = 0;
        for (const auto& [bc, blk] : part.blocks())
            for (int i = 0; i < part.block_edge(); ++i)
                for (int j = 0; j < part.block_edge(); ++j)
                    for (int l = 0; l < part.block_edge(); ++l) {
                        Vec3i v = bc * part.block_edge() + Vec3i(i, j, l);
                        if (part.weight_at(v) > 0) {
                            ++part_known;
                            CHECK(full.weight_at(v) > 0);
                        }
                    }
        CHECK(part_known > 0);
        CHECK(part_known < full.known_voxel_count());
    }
}

TEST_CASE("mirror symmetry across x") {
    ProceduralScene scene;
    scene.room.min = Vec3d(-1.2, 0.0, 0.0);
    scene.room.max = Vec3d(1.2, 2.4, 2.0);
    OrientedBox box;
    box.center = Vec3d(0.4, 1.2, 0.3);
    box.half_extents = Vec3d(0.2, 0.3, 0.3);
    box.yaw = 0.0;
    box.label = "table";
    scene.objects.push_back(box);

    ProceduralScene mirrored = scene;
    mirrored.room.min.x() = -scene.room.max.x();
    mirrored.room.max.x() = -scene.room.min.x();
    mirrored.objects[0].center.x() = -box.center.x();

    CameraIntrinsics k = CameraIntrinsics::from_fov(70.0, 48, 48);
    Vec3d eye(0.3, 0.4, 1.5), target(0.1, 2.0, 0.5);
    Mat3d rot = look_at_rotation(eye, target);

    Vec3d eye_m(-eye.x(), eye.y(), eye.z()), target_m(-target.x(), target.y(), target.z());
    Mat3d mirror = Vec3d(-1, 1, 1).asDiagonal();
    Mat3d rot_m = mirror * rot * mirror;  // det stays +1
    CameraIntrinsics k_m = k;
    k_m.cx = 48 - k.cx;

    DepthFrame f = render_depth(scene, rot, eye, k, 48, 48, 10.0);
    DepthFrame f_m = render_depth(mirrored, rot_m, eye_m, k_m, 48, 48, 10.0);

    SparseTsdfVolume vol(0.02), vol_m(0.02);
    integrate_frame(vol, f);
    integrate_frame(vol_m, f_m);

    std::int64_t known = 0;
    for (const auto& [bc, blk] : vol.blocks())
        for (int i = 0; i < vol.block_edge(); ++i)
            for (int j = 0; j < vol.block_edge(); ++j)
                for (int l = 0; l < vol.block_edge(); ++l) {
                    Vec3i v = bc * vol.block_edge() + Vec3i(i, j, l);
                    if (vol.weight_at(v) <= 0) continue;
                    Vec3i vm(-v.x() - 1, v.y(), v.z());
                    CHECK(vol_m.weight_at(vm) == vol.weight_at(v));
                    CHECK(std::abs(vol_m.tsdf_at(vm) - vol.tsdf_at(v)) <= 1e-6f);
                    ++known;
                }
    CHECK(known > 500);
}

TEST_CASE("simulate_partial_scan visibility properties") {
    SceneSpec spec;
    spec.room_min = 2.0;
    spec.room_max = 2.2;
    ProceduralScene scene = make_scene(2, spec);
    ScanParams params;
    params.image_width = params.image_height = 64;

    auto [vol_many, boxes] = simulate_partial_scan(scene, 64, 21, params, 0.04);
    CHECK(boxes.size() == scene.objects.size());
    double frac_many = unknown_fraction_inside(vol_many, scene);
    CHECK(frac_many < 0.2);

    auto [vol_one, boxes1] = simulate_partial_scan(scene, 1, 21, params, 0.04);
    double frac_one = unknown_fraction_inside(vol_one, scene);
    CHECK(frac_one > frac_many);
}

TEST_CASE("occluded region behind a tall box stays unknown") {
    ProceduralScene scene;
    scene.room.min = Vec3d(0, 0, 0);
    scene.room.max = Vec3d(3.0, 3.0, 2.0);
    OrientedBox box;
    box.center = Vec3d(2.2, 1.5, 0.9);
    box.half_extents = Vec3d(0.15, 0.6, 0.9);
    box.yaw = 0.0;
    box.label = "shelf";
    scene.objects.push_back(box);

    CameraIntrinsics k = CameraIntrinsics::from_fov(70.0, 64, 64);
    // all cameras on the low-x side looking toward the box
    SparseTsdfVolume vol(0.02);
    std::vector<DepthFrame> frames;
    for (int i = 0; i < 5; ++i) {
        Vec3d eye(0.4, 0.8 + 0.35 * i, 1.2);
        Mat3d rot = look_at_rotation(eye, box.center);
        frames.push_back(render_depth(scene, rot, eye, k, 64, 64, 10.0));
        integrate_frame(vol, frames.back());
    }
    // probe point directly behind the box, shadowed from every camera
    Vec3i probe = vol.world_to_voxel(Vec3d(2.75, 1.5, 0.9));
    CHECK(classify_voxel(vol, probe).cls == VoxelClass::kUnknown);

    // oracle agreement: no frame observes it
    for (const auto& f : frames)
        CHECK(!frame_observes(f, vol.voxel_center(probe), vol.truncation()));
}

TEST_CASE("frame file round-trip") {
    DepthFrame f;
    f.width = 6;
    f.height = 4;
    f.fx = 10.5;
    f.fy = 11.5;
    f.cx = 3.0;
    f.cy = 2.0;
    f.rotation = look_at_rotation(Vec3d(0, 0, 1), Vec3d(2, 1, 0.5));
    f.translation = Vec3d(0.1, -0.2, 0.3);
    Rng rng(8);
    for (int i = 0; i < 24; ++i) f.depth.push_back(static_cast<float>(rng.uniform(0.0, 4.0)));
    save_frame(f, "frame_test.dpth");
    DepthFrame g = load_frame("frame_test.dpth");
    CHECK(g.width == f.width);
    CHECK(g.fx == f.fx);
    CHECK((g.rotation - f.rotation).norm() == 0.0);
    CHECK(g.translation == f.translation);
    for (int i = 0; i < 24; ++i) CHECK(g.depth[i] == f.depth[i]);
    std::remove("frame_test.dpth");
}
