// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "seenflow/common.hpp"

namespace seenflow {

// Per-stage training settings.
struct TrainSection {
    std::int64_t steps = 2000;
    int batch = 2;
    double lr = 1e-4;       // AdamW base learning rate
    std::int64_t warmup = 1000;  // cosine annealing warmup steps
    double weight_decay = 0.0;
    double ema_decay = 0.999;
};

// Single source of truth for the whole pipeline. Every field has a default;
// a config file overrides by key. Unknown keys are hard errors.
struct PipelineConfig {
    std::string precision = "f32";  // f32 | f64
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = "out";

    // grid
    double voxel_size = 0.02;
    double truncation_factor = 3.0;
    int block_edge = 8;

    // chunking
    int chunk_size = 32;
    int downsample = 4;

    // scene synthesis
    int scene_count = 10;
    int scene_frames = 64;
    double room_min = 2.0;
    double room_max = 2.6;
    double room_height = 2.0;
    int objects_min = 3;
    int objects_max = 6;
    int image_size = 96;
    double fov_deg = 70.0;
    double max_depth = 8.0;
    std::string vocabulary = "table,chair,sofa,bed,cabinet,shelf,lamp,desk";
    int chunks_per_scene = 48;
    double chunk_min_known = 0.05;

    // vae
    int latent_channels = 8;
    int vae_c0 = 16;
    int vae_c1 = 32;
    double kl_weight = 1e-6;
    TrainSection vae_train{2500, 2, 1e-4, 300, 0.0, 0.999};

    // flow
    int flow_hidden = 64;
    int flow_blocks = 4;
    int flow_heads = 4;
    bool flow_attention = true;
    int layout_dim = 32;
    int control_rank = 8;
    double drop_p = 0.1;
    TrainSection flow_train{8000, 2, 1e-4, 300, 0.0, 0.999};
    TrainSection control_train{4000, 2, 1e-4, 300, 0.0, 0.999};
    double control_keep_fraction = 0.5;

    // sampler
    int sampler_steps = 50;
    double cfg_scale = 3.0;
    double overlap_ratio = 0.2;

    // eval
    std::int64_t eval_points = 20000;

    double truncation() const { return truncation_factor * voxel_size; }
    std::vector<std::string> vocabulary_list() const;
};

// key = value text format; '#' comments; empty file means all defaults.
PipelineConfig load_config(const std::string& path);
PipelineConfig parse_config_text(const std::string& text, const std::string& origin);
std::string serialize_config(const PipelineConfig& cfg);
void save_config(const PipelineConfig& cfg, const std::string& path);

// Apply a single "key=value" override (shared by the CLI's --set flags).
void apply_config_override(PipelineConfig& cfg, const std::string& key,
                           const std::string& value);

}  // namespace seenflow
