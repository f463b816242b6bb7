// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstdio>

#include "seenflow/layout.hpp"

using namespace seenflow;

TEST_CASE("hash embedding provider") {
    HashEmbeddingProvider provider(32);

    SUBCASE("equal labels give identical vectors; normalization applies") {
        Eigen::VectorXd a = embed_label("chair", provider);
        Eigen::VectorXd b = embed_label("chair", provider);
        Eigen::VectorXd c = embed_label("  CHAIR ", provider);
        CHECK((a - b).norm() == 0.0);
        CHECK((a - c).norm() == 0.0);
    }

    SUBCASE("unit norm") {
        for (const char* l : {"chair", "table", "sofa", "bed", "floor lamp"})
            CHECK(std::abs(embed_label(l, provider).norm() - 1.0) <= 1e-9);
    }

    SUBCASE("distinct labels are not near-collinear") {
        std::vector<std::string> vocab = {"chair", "table", "sofa",  "bed",
                                          "cabinet", "shelf", "lamp", "desk"};
        for (std::size_t i = 0; i < vocab.size(); ++i)
            for (std::size_t j = i + 1; j < vocab.size(); ++j) {
                double cos = embed_label(vocab[i], provider).dot(embed_label(vocab[j], provider));
                CHECK(std::abs(cos) < 0.9);
            }
    }

    SUBCASE("empty label rejected") {
        CHECK_THROWS_AS(embed_label("", provider), std::invalid_argument);
        CHECK_THROWS_AS(embed_label("   ", provider), std::invalid_argument);
    }
}

TEST_CASE("paint_layout") {
    HashEmbeddingProvider provider(16);
    LatentFrame frame;
    frame.world_origin = Vec3d::Zero();
    frame.voxel_size = 0.02;
    frame.downsample = 4;
    const Vec3i shape(8, 8, 8);  // cells cover 0.08 m each

    SUBCASE("no boxes paints all zeros, not null") {
        LayoutMap map = paint_layout({}, frame, shape, provider);
        CHECK(!map.null_flag);
        for (std::int64_t i = 0; i < map.values.size(); ++i) CHECK(map.values[i] == 0.0);
    }

    SUBCASE("one covering box paints its embedding everywhere") {
        LayoutBox box;
        box.centroid = Vec3d(0.32, 0.32, 0.32);
        box.size = Vec3d(2, 2, 2);
        box.label = "table";
        LayoutMap map = paint_layout({box}, frame, shape, provider);
        Eigen::VectorXd e = embed_label("table", provider);
        for (std::int64_t cell = 0; cell < map.cells(); ++cell)
            for (int c = 0; c < 16; ++c)
                CHECK(map.values[cell * 16 + c] == doctest::Approx(e[c]).epsilon(1e-12));
    }

    SUBCASE("overlaps take the mean; verified against brute-force point tests") {
        LayoutBox a, b;
        a.centroid = Vec3d(0.2, 0.3, 0.3);
        a.size = Vec3d(0.4, 0.5, 0.6);
        a.label = "chair";
        b.centroid = Vec3d(0.35, 0.3, 0.25);
        b.size = Vec3d(0.3, 0.45, 0.5);
        b.label = "desk";
        std::vector<LayoutBox> boxes = {a, b};
        LayoutMap map = paint_layout(boxes, frame, shape, provider);
        Eigen::VectorXd ea = embed_label("chair", provider), eb = embed_label("desk", provider);
        std::int64_t cell = 0;
        int covered_cells = 0, overlap_cells = 0;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 8; ++k, ++cell) {
                    Vec3d center = frame.cell_center({i, j, k});
                    bool in_a = a.aabb().contains(center), in_b = b.aabb().contains(center);
                    Eigen::VectorXd expect = Eigen::VectorXd::Zero(16);
                    if (in_a && in_b)
                        expect = (ea + eb) / 2.0;
                    else if (in_a)
                        expect = ea;
                    else if (in_b)
                        expect = eb;
                    if (in_a || in_b) ++covered_cells;
                    if (in_a && in_b) ++overlap_cells;
                    for (int c = 0; c < 16; ++c)
                        REQUIRE(map.values[cell * 16 + c] ==
                                doctest::Approx(expect[c]).epsilon(1e-12));
                }
        CHECK(covered_cells > 0);
        CHECK(overlap_cells > 0);
    }

    SUBCASE("permutation invariance in box order") {
        LayoutBox a, b, c;
        a.centroid = Vec3d(0.2, 0.2, 0.2);
        a.size = Vec3d(0.3, 0.3, 0.3);
        a.label = "sofa";
        b.centroid = Vec3d(0.25, 0.25, 0.2);
        b.size = Vec3d(0.3, 0.2, 0.4);
        b.label = "bed";
        c.centroid = Vec3d(0.3, 0.2, 0.25);
        c.size = Vec3d(0.2, 0.35, 0.3);
        c.label = "lamp";
        LayoutMap m1 = paint_layout({a, b, c}, frame, shape, provider);
        LayoutMap m2 = paint_layout({c, a, b}, frame, shape, provider);
        for (std::int64_t i = 0; i < m1.values.size(); ++i)
            CHECK(m1.values[i] == doctest::Approx(m2.values[i]).epsilon(1e-15));
    }

    SUBCASE("translating boxes and frame together leaves the map unchanged") {
        LayoutBox box;
        box.centroid = Vec3d(0.2, 0.3, 0.25);
        box.size = Vec3d(0.3, 0.25, 0.35);
        box.label = "cabinet";
        LayoutMap m1 = paint_layout({box}, frame, shape, provider);
        LatentFrame shifted = frame;
        Vec3d delta(1.25, -0.5, 0.75);
        shifted.world_origin += delta;
        LayoutBox moved = box;
        moved.centroid += delta;
        LayoutMap m2 = paint_layout({moved}, shifted, shape, provider);
        for (std::int64_t i = 0; i < m1.values.size(); ++i)
            CHECK(m1.values[i] == doctest::Approx(m2.values[i]).epsilon(1e-9));
    }
}

TEST_CASE("boxes_for_chunk closed-interval semantics") {
    LayoutBox inside, touching, outside;
    inside.centroid = Vec3d(0.5, 0.5, 0.5);
    inside.size = Vec3d(0.2, 0.2, 0.2);
    inside.label = "a";
    touching.centroid = Vec3d(1.1, 0.5, 0.5);  // face exactly at x = 1.0
    touching.size = Vec3d(0.2, 0.2, 0.2);
    touching.label = "b";
    outside.centroid = Vec3d(2.0, 2.0, 2.0);
    outside.size = Vec3d(0.2, 0.2, 0.2);
    outside.label = "c";
    Aabb chunk{Vec3d::Zero(), Vec3d::Ones()};

    auto got = boxes_for_chunk({inside, touching, outside}, chunk);
    REQUIRE(got.size() == 2);
    CHECK(got[0].label == "a");
    CHECK(got[1].label == "b");

    SUBCASE("random boxes match the brute-force interval test") {
        Rng rng(5);
        std::vector<LayoutBox> boxes;
        for (int i = 0; i < 200; ++i) {
            LayoutBox b;
            b.centroid = Vec3d(rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2));
            b.size = Vec3d(rng.uniform(0.05, 1), rng.uniform(0.05, 1), rng.uniform(0.05, 1));
            b.label = "x";
            boxes.push_back(b);
        }
        auto result = boxes_for_chunk(boxes, chunk);
        std::size_t expect = 0;
        for (const LayoutBox& b : boxes) {
            Aabb bb = b.aabb();
            bool overlap = true;
            for (int a = 0; a < 3; ++a)
                overlap = overlap && bb.min[a] <= chunk.max[a] && chunk.min[a] <= bb.max[a];
            if (overlap) ++expect;
        }
        CHECK(result.size() == expect);
    }
}

TEST_CASE("layout file round-trip") {
    std::vector<LayoutBox> boxes(2);
    boxes[0].centroid = Vec3d(0.1, 0.2, 0.3);
    boxes[0].size = Vec3d(0.4, 0.5, 0.6);
    boxes[0].label = "office chair";
    boxes[1].centroid = Vec3d(-1, -2, -3);
    boxes[1].size = Vec3d(1, 1, 1);
    boxes[1].label = "bed";
    save_layout(boxes, "layout_test.txt");
    auto back = load_layout("layout_test.txt");
    REQUIRE(back.size() == 2);
    CHECK(back[0].label == "office chair");
    CHECK(back[0].centroid == boxes[0].centroid);
    CHECK(back[1].size == boxes[1].size);
    std::remove("layout_test.txt");
}

TEST_CASE("pipe embedding provider speaks the wire protocol") {
    // stub subprocess: answers each label line with dim=4 then 4 f32 values
    // derived from the label length
    PipeEmbeddingProvider provider(
        "while IFS= read -r label; do "
        "python3 -c \"import struct,sys; n=len('$label'); "
        "sys.stdout.buffer.write(struct.pack('<I4f', 4, n, n+1, n+2, n+3)); "
        "sys.stdout.flush()\"; done");
    CHECK(provider.dimension() == 4);
    Eigen::VectorXd v = provider.embed("chair");
    REQUIRE(v.size() == 4);
    CHECK(v[0] == 5.0);
    CHECK(v[3] == 8.0);
    // memoized: identical result object
    Eigen::VectorXd w = provider.embed("chair");
    CHECK((v - w).norm() == 0.0);
    Eigen::VectorXd u = provider.embed("no");
    CHECK(u[0] == 2.0);
}
