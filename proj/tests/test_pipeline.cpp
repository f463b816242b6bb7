// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "seenflow/pipeline.hpp"

using namespace seenflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

PipelineConfig tiny_config(const std::string& out) {
    PipelineConfig cfg;
    cfg.seed = 7;
    cfg.out_dir = out;
    cfg.scene_count = 1;
    cfg.scene_frames = 8;
    cfg.image_size = 40;
    cfg.chunks_per_scene = 4;
    cfg.chunk_size = 16;
    cfg.vae_train = {30, 1, 1e-4, 5, 0.0, 0.999};
    cfg.flow_train = {30, 1, 1e-4, 5, 0.0, 0.999};
    cfg.control_train = {20, 1, 1e-4, 5, 0.0, 0.999};
    cfg.sampler_steps = 4;
    cfg.eval_points = 500;
    return cfg;
}

}  // namespace

TEST_CASE("scale_plan preserves origins and coverage") {
    TilePlan plan = plan_tiles({12, 8, 8}, {8, 8, 8}, 0.2);
    TilePlan scaled = scale_plan(plan, 4);
    CHECK(scaled.extent == Vec3i(48, 32, 32));
    CHECK(scaled.chunk_shape == Vec3i(32, 32, 32));
    REQUIRE(scaled.origins.size() == plan.origins.size());
    for (std::size_t i = 0; i < plan.origins.size(); ++i)
        CHECK(scaled.origins[i] == plan.origins[i] * 4);
    for (double w : scaled.weight_sum) CHECK(w >= 1.0);
}

TEST_CASE("completion_extent snaps and covers the known region") {
    SparseTsdfVolume vol(0.02);
    vol.apply_surface_observation({5, 9, 3}, 0.01f);
    vol.apply_surface_observation({30, 22, 17}, 0.01f);
    auto [base, extent] = completion_extent(vol, 32, 4);
    CHECK(base.x() % 4 == 0);
    CHECK(extent.x() % 4 == 0);
    CHECK((extent.array() >= 32).all());
    CHECK(base.x() <= 3);  // lower bound minus padding, snapped
    CHECK(base.x() + extent.x() >= 33);
    SparseTsdfVolume empty(0.02);
    CHECK_THROWS_AS(completion_extent(empty, 32, 4), std::runtime_error);
}

TEST_CASE("sample_chunk_origins is deterministic and aligned") {
    SceneSpec spec;
    ProceduralScene scene = make_scene(3, spec);
    ScanParams params;
    params.image_width = params.image_height = 48;
    auto [vol, boxes] = simulate_partial_scan(scene, 12, 5, params, 0.02);
    auto a = sample_chunk_origins(vol, 16, 4, 5, 0.05, 11);
    auto b = sample_chunk_origins(vol, 16, 4, 5, 0.05, 11);
    REQUIRE(a.size() == b.size());
    const std::int64_t cells = 16 * 16 * 16;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i].x() % 4 == 0);
        DenseTsdfBlock crop = extract_dense(vol, a[i], Vec3i::Constant(16));
        CHECK(crop.known_count() >= 0.05 * cells);
    }
}

TEST_CASE("scene_reference_mesh covers room and objects") {
    SceneSpec spec;
    spec.objects_min = spec.objects_max = 2;
    ProceduralScene scene = make_scene(9, spec);
    Mesh mesh = scene_reference_mesh(scene);
    CHECK(mesh.triangles.size() == (5 + 2 * 6) * 2);
    // every object corner lies on the mesh's vertex set region
    PointCloud pts = sample_points(mesh, 2000, 3);
    Aabb room = scene.room;
    for (const Vec3d& p : pts) {
        CHECK(p.x() >= room.min.x() - 1e-9);
        CHECK(p.x() <= room.max.x() + 1e-9);
    }
}

TEST_CASE("surface_iou_on_known") {
    SparseTsdfVolume ref(0.02), pred(0.02);
    ref.apply_surface_observation({0, 0, 0}, 0.01f);
    ref.apply_surface_observation({0, 0, 1}, 0.02f);
    ref.apply_carve_observation({0, 0, 2});
    pred.apply_surface_observation({0, 0, 0}, 0.03f);  // surface: match
    pred.apply_carve_observation({0, 0, 1});           // empty: miss
    pred.apply_carve_observation({0, 0, 2});           // empty: agree (not surface)
    // intersection {000}, union {000, 001}
    CHECK(surface_iou_on_known(pred, ref) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pipeline stages produce deterministic artifacts end to end") {
    const std::string out = "pipe_test_out";
    fs::remove_all(out);
    PipelineConfig cfg = tiny_config(out);

    cmd_synth(cfg);
    CHECK(fs::exists(paths::scene(out, 0)));
    CHECK(fs::exists(paths::layout(out, 0)));
    CHECK(fs::exists(paths::frame(out, 0, 7)));

    cmd_fuse(cfg);
    CHECK(fs::exists(paths::volume(out, 0, "full")));
    CHECK(fs::exists(paths::volume(out, 0, "part")));

    cmd_train_vae(cfg);
    cmd_train_flow(cfg);
    cmd_train_control(cfg);
    CHECK(fs::exists(paths::vae_ckpt(out)));
    CHECK(fs::exists(paths::flow_ckpt(out)));
    CHECK(fs::exists(paths::control_ckpt(out)));

    // train-control never mutates the base flow checkpoint
    std::string flow_bytes = slurp(paths::flow_ckpt(out));
    cmd_train_control(cfg);
    CHECK(slurp(paths::flow_ckpt(out)) == flow_bytes);

    CompletionResult comp = cmd_complete(cfg, paths::volume(out, 0, "part"), "", 3,
                                         out + "/comp");
    CHECK(fs::exists(comp.volume_path));
    CHECK(fs::exists(comp.mesh_path));
    std::string volume_bytes = slurp(comp.volume_path);

    // re-run is byte-identical
    cmd_complete(cfg, paths::volume(out, 0, "part"), "", 3, out + "/comp");
    CHECK(slurp(comp.volume_path) == volume_bytes);

    // completion with a layout also runs (condition is optional, not required)
    CompletionResult comp_l = cmd_complete(cfg, paths::volume(out, 0, "part"),
                                           paths::layout(out, 0), 3, out + "/comp_layout");
    CHECK(fs::exists(comp_l.volume_path));

    // completed volume has no unknown voxels anywhere in its extent
    SparseTsdfVolume completed = load_volume(comp.volume_path);
    SparseTsdfVolume input = load_volume(paths::volume(out, 0, "part"));
    auto [base, extent] = completion_extent(input, cfg.chunk_size, cfg.downsample);
    int unknown = 0;
    for (int i = 0; i < extent.x(); i += 3)
        for (int j = 0; j < extent.y(); j += 3)
            for (int k = 0; k < extent.z(); k += 3)
                if (classify_voxel(completed, base + Vec3i(i, j, k)).cls ==
                    VoxelClass::kUnknown)
                    ++unknown;
    CHECK(unknown == 0);

    CompletionResult gen = cmd_generate(cfg, paths::layout(out, 0), 5, out + "/gen");
    CHECK(fs::exists(gen.mesh_path));

    EvalInputs inputs;
    inputs.pred_volume = comp.volume_path;
    inputs.target_volume = paths::volume(out, 0, "full");
    inputs.mesh_a = comp.mesh_path;
    inputs.mesh_b = comp_l.mesh_path;
    auto records = cmd_eval(cfg, inputs, out + "/metrics.txt");
    CHECK(records.size() >= 3);
    CHECK(fs::exists(out + "/metrics.txt"));

    // tile count matches the plan for an extent larger than one chunk
    Vec3i latent_extent = extent / cfg.downsample;
    TilePlan plan = plan_tiles(latent_extent, Vec3i::Constant(cfg.chunk_size / cfg.downsample),
                               cfg.overlap_ratio);
    CHECK(plan.origins.size() > 1);

    fs::remove_all(out);
}

TEST_CASE("missing inputs give actionable errors") {
    const std::string out = "pipe_err_out";
    fs::remove_all(out);
    PipelineConfig cfg = tiny_config(out);
    CHECK_THROWS_WITH_AS(cmd_fuse(cfg), doctest::Contains("run synth first"),
                         std::runtime_error);
    CHECK_THROWS_AS(cmd_complete(cfg, out + "/nope.stsd", "", 1, out + "/x"),
                    std::runtime_error);
    fs::remove_all(out);
}
