// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>

#include "seenflow/voxgrid.hpp"

using namespace seenflow;

TEST_CASE("classify_voxel semantics") {
    SparseTsdfVolume vol(0.02);
    const float t = static_cast<float>(vol.truncation());

    SUBCASE("voxel never touched by fusion is Unknown") {
        VoxelState s = classify_voxel(vol, {5, -3, 99});
        CHECK(s.cls == VoxelClass::kUnknown);
        CHECK(s.tsdf == -t);
    }

    SUBCASE("weight > 0 at +truncation is Empty") {
        auto& blk = vol.get_or_create_block(vol.block_coord({1, 2, 3}));
        blk.tsdf[vol.local_index({1, 2, 3})] = t;
        blk.weight[vol.local_index({1, 2, 3})] = 2.0f;
        CHECK(classify_voxel(vol, {1, 2, 3}).cls == VoxelClass::kEmpty);
    }

    SUBCASE("in-band value with weight is Surface") {
        Vec3i v{0, 0, 0};
        auto& blk = vol.get_or_create_block(vol.block_coord(v));
        blk.tsdf[vol.local_index(v)] = 0.5f * 0.02f;
        blk.weight[vol.local_index(v)] = 1.0f;
        VoxelState s = classify_voxel(vol, v);
        CHECK(s.cls == VoxelClass::kSurface);
        CHECK(s.tsdf == doctest::Approx(0.01).epsilon(1e-6));
    }

    SUBCASE("unknown iff weight zero, everywhere") {
        vol.apply_surface_observation({-9, 4, 7}, 0.01f);
        vol.apply_carve_observation({3, 3, 3});
        for (int x = -12; x < 12; x += 3)
            for (int y = -6; y < 9; y += 4)
                for (int z = 0; z < 10; z += 5) {
                    Vec3i v{x, y, z};
                    bool unknown = classify_voxel(vol, v).cls == VoxelClass::kUnknown;
                    CHECK(unknown == (vol.weight_at(v) == 0.0f));
                }
    }
}

TEST_CASE("extract_dense on an empty volume is all-Unknown sentinel") {
    SparseTsdfVolume vol(0.02);
    DenseTsdfBlock b = extract_dense(vol, {-4, 2, 0}, {8, 8, 8});
    CHECK(b.size() == 512);
    for (std::int64_t i = 0; i < b.size(); ++i) {
        CHECK(b.mask[i] == VoxelClass::kUnknown);
        CHECK(b.tsdf[i] == static_cast<float>(-vol.truncation()));
    }
}

TEST_CASE("visibility_mask counts") {
    DenseTsdfBlock b;
    b.origin = {0, 0, 0};
    b.shape = {3, 3, 3};
    b.tsdf.assign(27, 0.0f);
    b.mask.assign(27, VoxelClass::kUnknown);

    SUBCASE("all unknown gives all-false") {
        auto m = visibility_mask(b);
        for (auto v : m) CHECK(v == 0);
    }
    SUBCASE("fully observed gives all-true") {
        b.mask.assign(27, VoxelClass::kSurface);
        auto m = visibility_mask(b);
        for (auto v : m) CHECK(v == 1);
    }
    SUBCASE("k unknown voxels give exactly k false entries") {
        b.mask.assign(27, VoxelClass::kEmpty);
        b.mask[3] = VoxelClass::kUnknown;
        b.mask[11] = VoxelClass::kUnknown;
        b.mask[26] = VoxelClass::kUnknown;
        auto m = visibility_mask(b);
        int false_count = 0;
        for (auto v : m)
            if (!v) ++false_count;
        CHECK(false_count == 3);
    }
}

TEST_CASE("extract then re-insert agrees at every in-crop coordinate") {
    SparseTsdfVolume vol(0.02);
    Rng rng(7);
    for (int n = 0; n < 200; ++n) {
        Vec3i v(static_cast<int>(rng.uniform_int(-6, 10)), static_cast<int>(rng.uniform_int(-6, 10)),
                static_cast<int>(rng.uniform_int(-6, 10)));
        if (rng.uniform() < 0.5)
            vol.apply_surface_observation(v, static_cast<float>(rng.uniform(-0.06, 0.06)));
        else
            vol.apply_carve_observation(v);
    }
    Vec3i origin{-8, -8, -8}, shape{20, 20, 20};
    DenseTsdfBlock crop = extract_dense(vol, origin, shape);
    SparseTsdfVolume reinserted(vol.voxel_size(), vol.truncation(), vol.block_edge());
    insert_dense(reinserted, crop);
    for (int i = 0; i < shape.x(); ++i)
        for (int j = 0; j < shape.y(); ++j)
            for (int k = 0; k < shape.z(); ++k) {
                Vec3i c = origin + Vec3i(i, j, k);
                VoxelState a = classify_voxel(vol, c);
                VoxelState b = classify_voxel(reinserted, c);
                CHECK(a.cls == b.cls);
                if (a.cls != VoxelClass::kUnknown) CHECK(a.tsdf == b.tsdf);
            }
}

TEST_CASE("volume serialization round-trips bit-exactly") {
    SparseTsdfVolume vol(0.013, -1.0, 8);
    Rng rng(42);
    for (int n = 0; n < 500; ++n) {
        Vec3i v(static_cast<int>(rng.uniform_int(-20, 20)),
                static_cast<int>(rng.uniform_int(-20, 20)),
                static_cast<int>(rng.uniform_int(-20, 20)));
        vol.apply_surface_observation(v, static_cast<float>(rng.uniform(-0.039, 0.039)));
    }
    std::string path = "roundtrip_test.stsd";
    save_volume(vol, path);
    SparseTsdfVolume back = load_volume(path);
    CHECK(back.voxel_size() == vol.voxel_size());
    CHECK(back.truncation() == vol.truncation());
    CHECK(back.blocks().size() == vol.blocks().size());
    for (const auto& [bc, blk] : vol.blocks()) {
        const auto* other = back.find_block(bc);
        REQUIRE(other != nullptr);
        for (std::size_t i = 0; i < blk.tsdf.size(); ++i) {
            CHECK(blk.tsdf[i] == other->tsdf[i]);
            CHECK(blk.weight[i] == other->weight[i]);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("chunk file round-trip") {
    DenseTsdfBlock b;
    b.origin = {4, -2, 8};
    b.shape = {5, 6, 7};
    Rng rng(3);
    for (std::int64_t i = 0; i < b.size(); ++i) {
        b.tsdf.push_back(static_cast<float>(rng.uniform(-0.06, 0.06)));
        b.mask.push_back(static_cast<VoxelClass>(rng.uniform_int(0, 2)));
    }
    std::string path = "roundtrip_test.chnk";
    save_block(b, path);
    DenseTsdfBlock back = load_block(path);
    CHECK(back.origin == b.origin);
    CHECK(back.shape == b.shape);
    for (std::int64_t i = 0; i < b.size(); ++i) {
        CHECK(back.tsdf[i] == b.tsdf[i]);
        CHECK(back.mask[i] == b.mask[i]);
    }
    std::remove(path.c_str());
}
