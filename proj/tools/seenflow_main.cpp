// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// seenflow command-line driver: scene synthesis, fusion, training, tiled
// completion/generation, and evaluation. All commands are deterministic given
// the same config and seed (single-threaded mode).
#include <CLI11.hpp>

#include "seenflow/pipeline.hpp"

using namespace seenflow;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Config file (key = value lines)");
    cmd->add_option("--out", opts.out_dir, "Output directory (overrides config)");
    cmd->add_option("--seed", opts.seed, "Seed override")->each([&opts](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_option("--threads", opts.threads,
                    "Worker cap for per-chunk inference; 1 guarantees bit-reproducibility");
    cmd->add_option("--set", opts.overrides, "Extra config override, e.g. --set sampler.steps=25");
}

PipelineConfig resolve_config(const CommonOpts& opts) {
    PipelineConfig cfg =
        opts.config_path.empty() ? PipelineConfig{} : load_config(opts.config_path);
    for (const std::string& kv : opts.overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        apply_config_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.seed_set) cfg.seed = opts.seed;
    if (opts.threads > 0) cfg.threads = opts.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seenflow: visibility-masked flow matching for 3D scene completion"};
    app.require_subcommand(1);

    CommonOpts synth_opts, fuse_opts, vae_opts, flow_opts, control_opts, complete_opts,
        generate_opts, eval_opts;

    CLI::App* synth = app.add_subcommand("synth", "Generate procedural scenes and depth frames");
    add_common(synth, synth_opts);

    CLI::App* fuse = app.add_subcommand("fuse", "Fuse depth frames into TSDF volumes");
    add_common(fuse, fuse_opts);
    double keep_fraction = -1.0;
    fuse->add_option("--keep-fraction", keep_fraction,
                     "Frame keep fraction for the degraded variant");

    CLI::App* train_vae_sc = app.add_subcommand("train-vae", "Train the masked VAE");
    add_common(train_vae_sc, vae_opts);

    CLI::App* train_flow_sc = app.add_subcommand("train-flow", "Train the velocity model");
    add_common(train_flow_sc, flow_opts);

    CLI::App* train_control_sc =
        app.add_subcommand("train-control", "Fine-tune the scan-completion control branch");
    add_common(train_control_sc, control_opts);

    CLI::App* complete = app.add_subcommand("complete", "Complete a partial scan volume");
    add_common(complete, complete_opts);
    std::string complete_input, complete_layout, complete_out = "completed";
    int steps_override = 0;
    double cfg_scale_override = -1.0;
    bool no_layout = false;
    complete->add_option("--input", complete_input, "Partial scan volume (STSD)")->required();
    complete->add_option("--layout", complete_layout, "Layout boxes file (optional)");
    complete->add_option("--out-prefix", complete_out, "Output prefix for .stsd/.obj");
    complete->add_option("--steps", steps_override, "Euler steps override");
    complete->add_option("--cfg-scale", cfg_scale_override, "Guidance scale override");
    complete->add_flag("--no-layout", no_layout, "Ignore any layout condition");

    CLI::App* generate = app.add_subcommand("generate", "Generate a scene from a layout");
    add_common(generate, generate_opts);
    std::string generate_layout, generate_out = "generated";
    int gen_steps_override = 0;
    double gen_scale_override = -1.0;
    generate->add_option("--layout", generate_layout, "Layout boxes file")->required();
    generate->add_option("--out-prefix", generate_out, "Output prefix for .stsd/.obj");
    generate->add_option("--steps", gen_steps_override, "Euler steps override");
    generate->add_option("--cfg-scale", gen_scale_override, "Guidance scale override");

    CLI::App* eval = app.add_subcommand("eval", "Compute metrics for completions");
    add_common(eval, eval_opts);
    EvalInputs eval_inputs;
    std::string eval_out = "metrics.txt";
    eval->add_option("--pred", eval_inputs.pred_volume, "Completed volume (STSD)");
    eval->add_option("--target", eval_inputs.target_volume, "Target scan volume (STSD)");
    eval->add_option("--ref-mesh", eval_inputs.reference_mesh, "Reference mesh for Chamfer");
    eval->add_option("--mesh-a", eval_inputs.mesh_a, "First completion mesh (TMD)");
    eval->add_option("--mesh-b", eval_inputs.mesh_b, "Second completion mesh (TMD)");
    eval->add_option("--metrics", eval_out, "Metrics record file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            cmd_synth(resolve_config(synth_opts));
        } else if (fuse->parsed()) {
            PipelineConfig cfg = resolve_config(fuse_opts);
            if (keep_fraction > 0) cfg.control_keep_fraction = keep_fraction;
            cmd_fuse(cfg);
        } else if (train_vae_sc->parsed()) {
            cmd_train_vae(resolve_config(vae_opts));
        } else if (train_flow_sc->parsed()) {
            cmd_train_flow(resolve_config(flow_opts));
        } else if (train_control_sc->parsed()) {
            cmd_train_control(resolve_config(control_opts));
        } else if (complete->parsed()) {
            PipelineConfig cfg = resolve_config(complete_opts);
            if (steps_override > 0) cfg.sampler_steps = steps_override;
            if (cfg_scale_override >= 0) cfg.cfg_scale = cfg_scale_override;
            if (no_layout) complete_layout.clear();
            CompletionResult result =
                cmd_complete(cfg, complete_input, complete_layout, cfg.seed, complete_out);
            log_info("complete: wrote %s and %s", result.volume_path.c_str(),
                     result.mesh_path.c_str());
        } else if (generate->parsed()) {
            PipelineConfig cfg = resolve_config(generate_opts);
            if (gen_steps_override > 0) cfg.sampler_steps = gen_steps_override;
            if (gen_scale_override >= 0) cfg.cfg_scale = gen_scale_override;
            CompletionResult result = cmd_generate(cfg, generate_layout, cfg.seed, generate_out);
            log_info("generate: wrote %s and %s", result.volume_path.c_str(),
                     result.mesh_path.c_str());
        } else if (eval->parsed()) {
            PipelineConfig cfg = resolve_config(eval_opts);
            cmd_eval(cfg, eval_inputs, eval_out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
