// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: dataset synthesis, fusion, two-stage training,
// control fine-tuning, tiled completion/generation, and evaluation. Artifacts
// live under the configured output directory:
//
//   scenes/scene_<i>.txt, scenes/scene_<i>.layout.txt
//   frames/scene_<i>/frame_<j>.dpth
//   volumes/scene_<i>_full.stsd, volumes/scene_<i>_part.stsd
//   chunks/chunk_s<i>_<k>.chnk
//   vae.ckpt, flow.ckpt, control.ckpt
//   <command outputs>: completed volumes, meshes, metrics.txt
#pragma once

#include <filesystem>
#include <functional>

#include "seenflow/config.hpp"
#include "seenflow/eval.hpp"
#include "seenflow/flow.hpp"
#include "seenflow/fusion.hpp"
#include "seenflow/surface.hpp"
#include "seenflow/tiling.hpp"

namespace seenflow {

namespace paths {
inline std::string scene(const std::string& out, int i) {
    return out + "/scenes/scene_" + std::to_string(i) + ".txt";
}
inline std::string layout(const std::string& out, int i) {
    return out + "/scenes/scene_" + std::to_string(i) + ".layout.txt";
}
inline std::string frames_dir(const std::string& out, int i) {
    return out + "/frames/scene_" + std::to_string(i);
}
inline std::string frame(const std::string& out, int i, int j) {
    return frames_dir(out, i) + "/frame_" + std::to_string(j) + ".dpth";
}
inline std::string volume(const std::string& out, int i, const std::string& tag) {
    return out + "/volumes/scene_" + std::to_string(i) + "_" + tag + ".stsd";
}
inline std::string chunk(const std::string& out, int scene, int k) {
    return out + "/chunks/chunk_s" + std::to_string(scene) + "_" + std::to_string(k) + ".chnk";
}
inline std::string vae_ckpt(const std::string& out) { return out + "/vae.ckpt"; }
inline std::string flow_ckpt(const std::string& out) { return out + "/flow.ckpt"; }
inline std::string control_ckpt(const std::string& out) { return out + "/control.ckpt"; }
}  // namespace paths

std::uint64_t derive_seed(std::uint64_t base, const std::string& tag, std::int64_t index);

SceneSpec scene_spec_from(const PipelineConfig& cfg);
ScanParams scan_params_from(const PipelineConfig& cfg);
VaeConfig vae_config_from(const PipelineConfig& cfg);
FlowConfig flow_config_from(const PipelineConfig& cfg);
TrainParams train_params_from(const TrainSection& s);

// Random chunk origins aligned to the downsample grid whose crops meet the
// minimum known fraction.
std::vector<Vec3i> sample_chunk_origins(const SparseTsdfVolume& volume, int chunk_size,
                                        int downsample, int count, double min_known_fraction,
                                        std::uint64_t seed);

// Scale a latent-space tile plan to voxel space (same origins times factor).
TilePlan scale_plan(const TilePlan& plan, int factor);

// Reference mesh of the analytic scene surfaces, for Chamfer evaluation.
Mesh scene_reference_mesh(const ProceduralScene& scene);

// Run fn(0..n-1) across up to `threads` workers; each index is independent,
// so results cannot depend on the worker count.
void parallel_for_index(std::int64_t n, int threads,
                        const std::function<void(std::int64_t)>& fn);

// ---------------------------------------------------------------------------
// Commands (precision-dispatching wrappers in pipeline.cpp).
// ---------------------------------------------------------------------------
void cmd_synth(const PipelineConfig& cfg);
void cmd_fuse(const PipelineConfig& cfg);
void cmd_train_vae(const PipelineConfig& cfg);
void cmd_train_flow(const PipelineConfig& cfg);
void cmd_train_control(const PipelineConfig& cfg);

struct CompletionResult {
    std::string volume_path;
    std::string mesh_path;
};

// Completes a partial scan with control-conditioned tiled sampling. The layout
// path may be empty (the condition is optional).
CompletionResult cmd_complete(const PipelineConfig& cfg, const std::string& volume_path,
                              const std::string& layout_path, std::uint64_t seed,
                              const std::string& out_prefix);

// Layout-conditioned generation from scratch over the layout's spatial hull.
CompletionResult cmd_generate(const PipelineConfig& cfg, const std::string& layout_path,
                              std::uint64_t seed, const std::string& out_prefix);

struct EvalInputs {
    std::string pred_volume;     // completed volume
    std::string target_volume;   // partial-scan ground truth (masked metrics)
    std::string reference_mesh;  // optional: complete GT mesh for Chamfer
    std::string mesh_a, mesh_b;  // optional: two completions for TMD
};
std::vector<MetricRecord> cmd_eval(const PipelineConfig& cfg, const EvalInputs& inputs,
                                   const std::string& out_file);

// ---------------------------------------------------------------------------
// Typed pipeline stages shared by commands, tests, and the acceptance suite.
// ---------------------------------------------------------------------------
template <typename S>
struct Stages {
    // Chunk dataset (written as CHNK files) from the fused full scans.
    static std::vector<DenseTsdfBlock> build_chunk_dataset(const PipelineConfig& cfg,
                                                           bool write_files);
    // Chunk origins per scene, identical to the dataset builder's draw.
    static std::vector<std::vector<Vec3i>> chunk_origins_per_scene(const PipelineConfig& cfg);

    static Vae<S> make_vae(const PipelineConfig& cfg, std::uint64_t seed) {
        return Vae<S>(vae_config_from(cfg), seed);
    }

    static Vae<S> load_vae(const PipelineConfig& cfg) {
        Vae<S> vae(vae_config_from(cfg), 0);
        Checkpoint ckpt = Checkpoint::load(paths::vae_ckpt(cfg.out_dir));
        load_param_set(ckpt, vae.params());
        return vae;
    }

    static VelocityModel<S> load_flow(const PipelineConfig& cfg) {
        VelocityModel<S> model(flow_config_from(cfg), 0);
        Checkpoint ckpt = Checkpoint::load(paths::flow_ckpt(cfg.out_dir));
        load_param_set(ckpt, model.params());
        return model;
    }

    static ControlBranch<S> load_control(const PipelineConfig& cfg, VelocityModel<S>& model) {
        ControlBranch<S> branch = model.init_control(0);
        Checkpoint ckpt = Checkpoint::load(paths::control_ckpt(cfg.out_dir));
        load_param_set(ckpt, branch.params);
        return branch;
    }

    // Encoded flow-training samples: layout painted per chunk, z1 sampled from
    // the frozen encoder; optionally paired with degraded-scan latents. All
    // latents are divided by latent_scale; pass scale <= 0 to compute the
    // dataset RMS over known tokens (returned through the pointer).
    static std::vector<FlowSample<S>> build_flow_dataset(const PipelineConfig& cfg, Vae<S>& vae,
                                                         bool with_partial, double latent_scale,
                                                         double* computed_scale = nullptr);

    static double load_latent_scale(const PipelineConfig& cfg) {
        Checkpoint ckpt = Checkpoint::load(paths::flow_ckpt(cfg.out_dir));
        return ckpt.get_array<double>("meta/latent_scale")[0];
    }

    static void train_vae_cmd(const PipelineConfig& cfg);
    static void train_flow_cmd(const PipelineConfig& cfg);
    static void train_control_cmd(const PipelineConfig& cfg);

    // Tiled Euler sampling over a voxel extent, optionally control-conditioned
    // on an input scan, returning the decoded dense fields.
    struct SampledField {
        Vec3i base = Vec3i::Zero();
        Vec3i extent = Vec3i::Zero();
        ArrayX<S> logits;  // per voxel
        ArrayX<S> tsdf;    // per voxel
    };
    static SampledField tiled_sample(const PipelineConfig& cfg, Vae<S>& vae,
                                     VelocityModel<S>& model, ControlBranch<S>* branch,
                                     const SparseTsdfVolume* input,
                                     const std::vector<LayoutBox>* layout_boxes,
                                     const Vec3i& base, const Vec3i& extent, std::uint64_t seed,
                                     double latent_scale);

    // Assemble a fully-known volume from a sampled field.
    static SparseTsdfVolume assemble_volume(const SampledField& field,
                                            const PipelineConfig& cfg);

    static CompletionResult complete_cmd(const PipelineConfig& cfg,
                                         const std::string& volume_path,
                                         const std::string& layout_path, std::uint64_t seed,
                                         const std::string& out_prefix);
    static CompletionResult generate_cmd(const PipelineConfig& cfg,
                                         const std::string& layout_path, std::uint64_t seed,
                                         const std::string& out_prefix);
};

// Voxel extent covering the known region of a scan, padded and snapped to the
// chunk/downsample grid; returns {base, extent}.
std::pair<Vec3i, Vec3i> completion_extent(const SparseTsdfVolume& input, int chunk_size,
                                          int downsample, int pad_voxels = 2);

}  // namespace seenflow
