// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "seenflow/eval.hpp"

using namespace seenflow;

namespace {

// O(n^2) oracle.
double brute_chamfer(const PointCloud& a, const PointCloud& b) {
    auto directed = [](const PointCloud& from, const PointCloud& to) {
        double sum = 0;
        for (const Vec3d& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3d& q : to) best = std::min(best, (p - q).squaredNorm());
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    return directed(a, b) + directed(b, a);
}

PointCloud random_cloud(int n, std::uint64_t seed, double spread = 1.0) {
    Rng rng(seed);
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.emplace_back(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                       rng.uniform(-spread, spread));
    return c;
}

Mesh unit_square() {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

}  // namespace

TEST_CASE("sample_points") {
    SUBCASE("area weighting splits a unit square evenly") {
        Mesh m = unit_square();
        PointCloud pts = sample_points(m, 10000, 3);
        int lower = 0;
        for (const Vec3d& p : pts)
            if (p.y() <= p.x()) ++lower;  // triangle 0 is the lower-right half
        CHECK(lower > 4800);
        CHECK(lower < 5200);
    }

    SUBCASE("all samples stay inside a single triangle") {
        Mesh m;
        m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 3, 0}};
        m.triangles = {{0, 1, 2}};
        for (const Vec3d& p : sample_points(m, 500, 7)) {
            CHECK(p.x() >= -1e-12);
            CHECK(p.y() >= -1e-12);
            CHECK(p.x() / 2.0 + p.y() / 3.0 <= 1.0 + 1e-12);
            CHECK(std::abs(p.z()) <= 1e-12);
        }
    }

    SUBCASE("same seed reproduces the cloud") {
        Mesh m = unit_square();
        PointCloud a = sample_points(m, 100, 9), b = sample_points(m, 100, 9);
        for (int i = 0; i < 100; ++i) CHECK(a[i] == b[i]);
    }

    SUBCASE("empty mesh rejected") {
        Mesh empty;
        CHECK_THROWS_AS(sample_points(empty, 10, 1), std::invalid_argument);
    }

    SUBCASE("triangle frequencies converge to area proportions") {
        // two triangles of areas 0.5 and 1.5 in one mesh
        Mesh m;
        m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {5, 3, 0}, {4, 0, 0}};
        m.triangles = {{0, 1, 2}, {3, 4, 5}};
        PointCloud pts = sample_points(m, 10000, 11);
        int first = 0;
        for (const Vec3d& p : pts)
            if (p.x() < 2.0) ++first;
        // chi-square against 25/75 expectation, 1 dof; 6.63 is the 1% cutoff
        double expect_first = 2500.0, expect_second = 7500.0;
        double chi2 = (first - expect_first) * (first - expect_first) / expect_first +
                      (10000 - first - expect_second) * (10000 - first - expect_second) /
                          expect_second;
        CHECK(chi2 < 6.63);
    }
}

TEST_CASE("chamfer distance") {
    SUBCASE("identical clouds give exactly zero") {
        PointCloud a = random_cloud(150, 1);
        CHECK(chamfer(a, a) == 0.0);
    }

    SUBCASE("two single points at distance d give 2 d^2") {
        PointCloud a = {{0, 0, 0}}, b = {{0, 3, 4}};  // d = 5
        CHECK(chamfer(a, b) == doctest::Approx(50.0).epsilon(1e-15));
    }

    SUBCASE("matches brute force on random 200-point clouds") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            PointCloud a = random_cloud(200, 10 + s);
            PointCloud b = random_cloud(200, 20 + s);
            double fast = chamfer(a, b);
            double slow = brute_chamfer(a, b);
            CHECK(std::abs(fast - slow) <= 1e-12);
        }
    }

    SUBCASE("symmetry and quadratic scaling") {
        PointCloud a = random_cloud(80, 31), b = random_cloud(90, 32);
        CHECK(chamfer(a, b) == chamfer(b, a));
        PointCloud a2 = a, b2 = b;
        for (Vec3d& p : a2) p *= 2.0;
        for (Vec3d& p : b2) p *= 2.0;
        CHECK(chamfer(a2, b2) == doctest::Approx(4.0 * chamfer(a, b)).epsilon(1e-12));
    }

    SUBCASE("empty cloud rejected") {
        PointCloud a = random_cloud(5, 1), empty;
        CHECK_THROWS_AS(chamfer(a, empty), std::invalid_argument);
    }
}

TEST_CASE("masked_l2") {
    SparseTsdfVolume target(0.02);
    target.apply_surface_observation({0, 0, 0}, 0.01f);
    target.apply_surface_observation({0, 0, 1}, -0.02f);
    target.apply_surface_observation({0, 0, 2}, 0.03f);

    SUBCASE("identical volumes give zero") {
        CHECK(masked_l2(target, target).value() == 0.0);
    }

    SUBCASE("differences at target-unknown voxels are invisible") {
        SparseTsdfVolume pred(0.02);
        pred.apply_surface_observation({0, 0, 0}, 0.01f);
        pred.apply_surface_observation({0, 0, 1}, -0.02f);
        pred.apply_surface_observation({0, 0, 2}, 0.03f);
        pred.apply_surface_observation({5, 5, 5}, 0.05f);  // unknown in target
        CHECK(masked_l2(pred, target).value() == 0.0);
    }

    SUBCASE("hand case with a pred-unknown voxel counted at the sentinel") {
        // target knows three voxels; pred differs by 0.1 and -0.2 on two and
        // does not know the third
        SparseTsdfVolume pred(0.02);
        float t0 = target.tsdf_at({0, 0, 0}), t1 = target.tsdf_at({0, 0, 1});
        pred.apply_surface_observation({0, 0, 0}, t0 + 0.01f);
        pred.apply_surface_observation({0, 0, 1}, t1 - 0.02f);
        double sentinel_diff = -pred.truncation() - target.tsdf_at({0, 0, 2});
        double expect = (0.01 * 0.01 + 0.02 * 0.02 + sentinel_diff * sentinel_diff) / 3.0;
        CHECK(masked_l2(pred, target).value() == doctest::Approx(expect).epsilon(1e-6));
    }

    SUBCASE("empty known set is undefined") {
        SparseTsdfVolume empty_target(0.02), pred(0.02);
        CHECK(!masked_l2(pred, empty_target).has_value());
    }

    SUBCASE("misaligned grids rejected") {
        SparseTsdfVolume pred(0.04);
        CHECK_THROWS_AS(masked_l2(pred, target), std::invalid_argument);
    }
}

TEST_CASE("tmd") {
    Mesh a = unit_square();
    SUBCASE("identical completions with a shared sampling seed give zero") {
        CHECK(tmd(a, a, 500, 4) == 0.0);
    }
    SUBCASE("distinct meshes give positive diversity") {
        Mesh b = unit_square();
        for (Vec3d& v : b.vertices) v.z() += 0.3;
        CHECK(tmd(a, b, 500, 4) > 0.0);
    }
}

TEST_CASE("metric records serialize with tags") {
    MetricRecord r;
    r.name = "chamfer";
    r.value = 0.125;
    r.tags = {{"convention", "squared"}, {"seed", "7"}};
    CHECK(r.to_line() == "metric=chamfer value=0.125 convention=squared seed=7");
}
