// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/pipeline.hpp"

#include <thread>

namespace seenflow {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, const std::string& tag, std::int64_t index) {
    return fnv1a64(tag + ":" + std::to_string(index)) ^ (base * 0x9E3779B97F4A7C15ull + 1);
}

SceneSpec scene_spec_from(const PipelineConfig& cfg) {
    SceneSpec spec;
    spec.room_min = cfg.room_min;
    spec.room_max = cfg.room_max;
    spec.room_height = cfg.room_height;
    spec.objects_min = cfg.objects_min;
    spec.objects_max = cfg.objects_max;
    spec.vocabulary = cfg.vocabulary_list();
    return spec;
}

ScanParams scan_params_from(const PipelineConfig& cfg) {
    ScanParams params;
    params.image_width = params.image_height = cfg.image_size;
    params.fov_deg = cfg.fov_deg;
    params.max_depth = cfg.max_depth;
    return params;
}

VaeConfig vae_config_from(const PipelineConfig& cfg) {
    VaeConfig vc;
    vc.downsample = cfg.downsample;
    vc.latent_channels = cfg.latent_channels;
    vc.c0 = cfg.vae_c0;
    vc.c1 = cfg.vae_c1;
    vc.kl_weight = cfg.kl_weight;
    vc.truncation = cfg.truncation();
    return vc;
}

FlowConfig flow_config_from(const PipelineConfig& cfg) {
    FlowConfig fc;
    fc.channels = cfg.latent_channels;
    fc.hidden = cfg.flow_hidden;
    fc.mlp_blocks = cfg.flow_blocks;
    fc.heads = cfg.flow_heads;
    fc.attention = cfg.flow_attention;
    fc.layout_channels = cfg.layout_dim;
    fc.rank = cfg.control_rank;
    fc.drop_p = cfg.drop_p;
    return fc;
}

TrainParams train_params_from(const TrainSection& s) {
    TrainParams tp;
    tp.steps = s.steps;
    tp.batch = s.batch;
    tp.lr = s.lr;
    tp.warmup = std::min(s.warmup, s.steps);
    tp.weight_decay = s.weight_decay;
    tp.ema_decay = s.ema_decay;
    return tp;
}

std::vector<Vec3i> sample_chunk_origins(const SparseTsdfVolume& volume, int chunk_size,
                                        int downsample, int count, double min_known_fraction,
                                        std::uint64_t seed) {
    auto bounds = volume.known_bounds();
    if (!bounds) throw std::runtime_error("sample_chunk_origins: volume has no known voxels");
    const auto [lo, hi] = *bounds;
    Rng rng(seed);
    std::vector<Vec3i> origins;
    const int d = downsample;
    const std::int64_t chunk_cells =
        static_cast<std::int64_t>(chunk_size) * chunk_size * chunk_size;
    const int max_attempts = count * 60 + 100;
    int attempts = 0;
    while (static_cast<int>(origins.size()) < count && attempts++ < max_attempts) {
        Vec3i o;
        for (int a = 0; a < 3; ++a) {
            int span_lo = lo[a] - chunk_size / 2;
            int span_hi = std::max(span_lo, hi[a] - chunk_size / 2);
            int v = static_cast<int>(rng.uniform_int(span_lo, span_hi));
            o[a] = floor_div(v, d) * d;
        }
        DenseTsdfBlock crop = extract_dense(volume, o, Vec3i::Constant(chunk_size));
        if (crop.known_count() >= min_known_fraction * chunk_cells) origins.push_back(o);
    }
    if (origins.empty())
        throw std::runtime_error("sample_chunk_origins: no chunk met the known-fraction bound");
    return origins;
}

TilePlan scale_plan(const TilePlan& plan, int factor) {
    TilePlan out;
    out.extent = plan.extent * factor;
    out.chunk_shape = plan.chunk_shape * factor;
    out.overlap_ratio = plan.overlap_ratio;
    for (const Vec3i& o : plan.origins) out.origins.push_back(o * factor);
    out.weight_sum.assign(static_cast<std::size_t>(out.cells()), 0.0);
    for (const Vec3i& o : out.origins)
        for (int i = 0; i < out.chunk_shape.x() && o.x() + i < out.extent.x(); ++i)
            for (int j = 0; j < out.chunk_shape.y() && o.y() + j < out.extent.y(); ++j)
                for (int k = 0; k < out.chunk_shape.z() && o.z() + k < out.extent.z(); ++k)
                    out.weight_sum[static_cast<std::size_t>(
                        out.cell_index(o.x() + i, o.y() + j, o.z() + k))] += 1.0;
    return out;
}

Mesh scene_reference_mesh(const ProceduralScene& scene) {
    Mesh mesh;
    auto add_quad = [&](const Vec3d& a, const Vec3d& b, const Vec3d& c, const Vec3d& d) {
        int base = static_cast<int>(mesh.vertices.size());
        mesh.vertices.insert(mesh.vertices.end(), {a, b, c, d});
        mesh.triangles.emplace_back(base, base + 1, base + 2);
        mesh.triangles.emplace_back(base, base + 2, base + 3);
    };
    const Vec3d& lo = scene.room.min;
    const Vec3d& hi = scene.room.max;
    // floor and the four walls (no ceiling)
    add_quad({lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()},
             {lo.x(), hi.y(), lo.z()});
    add_quad({lo.x(), lo.y(), lo.z()}, {lo.x(), hi.y(), lo.z()}, {lo.x(), hi.y(), hi.z()},
             {lo.x(), lo.y(), hi.z()});
    add_quad({hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()}, {hi.x(), hi.y(), hi.z()},
             {hi.x(), lo.y(), hi.z()});
    add_quad({lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), hi.z()},
             {lo.x(), lo.y(), hi.z()});
    add_quad({lo.x(), hi.y(), lo.z()}, {hi.x(), hi.y(), lo.z()}, {hi.x(), hi.y(), hi.z()},
             {lo.x(), hi.y(), hi.z()});
    for (const OrientedBox& o : scene.objects) {
        const double c = std::cos(o.yaw), s = std::sin(o.yaw);
        auto corner = [&](int sx, int sy, int sz) -> Vec3d {
            Vec3d l(sx * o.half_extents.x(), sy * o.half_extents.y(), sz * o.half_extents.z());
            return o.center + Vec3d(c * l.x() - s * l.y(), s * l.x() + c * l.y(), l.z());
        };
        Vec3d v000 = corner(-1, -1, -1), v100 = corner(1, -1, -1), v110 = corner(1, 1, -1),
              v010 = corner(-1, 1, -1), v001 = corner(-1, -1, 1), v101 = corner(1, -1, 1),
              v111 = corner(1, 1, 1), v011 = corner(-1, 1, 1);
        add_quad(v000, v100, v110, v010);
        add_quad(v001, v101, v111, v011);
        add_quad(v000, v100, v101, v001);
        add_quad(v010, v110, v111, v011);
        add_quad(v000, v010, v011, v001);
        add_quad(v100, v110, v111, v101);
    }
    return mesh;
}

void parallel_for_index(std::int64_t n, int threads,
                        const std::function<void(std::int64_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next(0);
    auto worker = [&] {
        for (;;) {
            std::int64_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int k = std::min<std::int64_t>(threads, n);
    pool.reserve(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

std::pair<Vec3i, Vec3i> completion_extent(const SparseTsdfVolume& input, int chunk_size,
                                          int downsample, int pad_voxels) {
    auto bounds = input.known_bounds();
    if (!bounds) throw std::runtime_error("completion: input volume has no known voxels");
    Vec3i lo = bounds->first - Vec3i::Constant(pad_voxels);
    Vec3i hi = bounds->second + Vec3i::Constant(pad_voxels);
    Vec3i base, extent;
    for (int a = 0; a < 3; ++a) {
        base[a] = floor_div(lo[a], downsample) * downsample;
        int span = hi[a] + 1 - base[a];
        span = std::max(span, chunk_size);
        extent[a] = ((span + downsample - 1) / downsample) * downsample;
    }
    return {base, extent};
}

// ---------------------------------------------------------------------------
// Data-producing commands (precision-independent).
// ---------------------------------------------------------------------------
void cmd_synth(const PipelineConfig& cfg) {
    SceneSpec spec = scene_spec_from(cfg);
    ScanParams params = scan_params_from(cfg);
    fs::create_directories(cfg.out_dir + "/scenes");
    for (int i = 0; i < cfg.scene_count; ++i) {
        ProceduralScene scene = make_scene(derive_seed(cfg.seed, "scene", i), spec);
        save_scene(scene, paths::scene(cfg.out_dir, i));
        save_layout(scene.layout_boxes(), paths::layout(cfg.out_dir, i));
        std::vector<DepthFrame> frames =
            sample_scan_frames(scene, cfg.scene_frames, derive_seed(cfg.seed, "scan", i), params);
        fs::create_directories(paths::frames_dir(cfg.out_dir, i));
        for (std::size_t j = 0; j < frames.size(); ++j)
            save_frame(frames[j], paths::frame(cfg.out_dir, i, static_cast<int>(j)));
        log_info("synth: scene %d (%zu objects, %zu frames)", i, scene.objects.size(),
                 frames.size());
    }
}

void cmd_fuse(const PipelineConfig& cfg) {
    fs::create_directories(cfg.out_dir + "/volumes");
    for (int i = 0; i < cfg.scene_count; ++i) {
        std::vector<DepthFrame> frames;
        for (int j = 0; j < cfg.scene_frames; ++j) {
            std::string path = paths::frame(cfg.out_dir, i, j);
            if (!fs::exists(path)) break;
            frames.push_back(load_frame(path));
        }
        if (frames.empty())
            throw std::runtime_error("fuse: no frames for scene " + std::to_string(i) +
                                     "; run synth first");
        SparseTsdfVolume full(cfg.voxel_size, cfg.truncation(), cfg.block_edge);
        for (const DepthFrame& f : frames) integrate_frame(full, f);
        save_volume(full, paths::volume(cfg.out_dir, i, "full"));

        std::vector<DepthFrame> kept = degrade_scan(frames, cfg.control_keep_fraction,
                                                    derive_seed(cfg.seed, "degrade", i));
        SparseTsdfVolume part(cfg.voxel_size, cfg.truncation(), cfg.block_edge);
        for (const DepthFrame& f : kept) integrate_frame(part, f);
        save_volume(part, paths::volume(cfg.out_dir, i, "part"));
        log_info("fuse: scene %d (%lld known voxels full, %lld part)", i,
                 static_cast<long long>(full.known_voxel_count()),
                 static_cast<long long>(part.known_voxel_count()));
    }
}

// ---------------------------------------------------------------------------
// Typed stages.
// ---------------------------------------------------------------------------
template <typename S>
std::vector<std::vector<Vec3i>> Stages<S>::chunk_origins_per_scene(const PipelineConfig& cfg) {
    std::vector<std::vector<Vec3i>> per_scene;
    for (int i = 0; i < cfg.scene_count; ++i) {
        SparseTsdfVolume vol = load_volume(paths::volume(cfg.out_dir, i, "full"));
        per_scene.push_back(sample_chunk_origins(vol, cfg.chunk_size, cfg.downsample,
                                                 cfg.chunks_per_scene, cfg.chunk_min_known,
                                                 derive_seed(cfg.seed, "chunks", i)));
    }
    return per_scene;
}

template <typename S>
std::vector<DenseTsdfBlock> Stages<S>::build_chunk_dataset(const PipelineConfig& cfg,
                                                           bool write_files) {
    if (write_files) fs::create_directories(cfg.out_dir + "/chunks");
    std::vector<DenseTsdfBlock> dataset;
    auto origins = chunk_origins_per_scene(cfg);
    for (int i = 0; i < cfg.scene_count; ++i) {
        SparseTsdfVolume vol = load_volume(paths::volume(cfg.out_dir, i, "full"));
        for (std::size_t k = 0; k < origins[static_cast<std::size_t>(i)].size(); ++k) {
            DenseTsdfBlock block =
                extract_dense(vol, origins[static_cast<std::size_t>(i)][k],
                              Vec3i::Constant(cfg.chunk_size));
            if (write_files)
                save_block(block, paths::chunk(cfg.out_dir, i, static_cast<int>(k)));
            dataset.push_back(std::move(block));
        }
    }
    return dataset;
}

template <typename S>
void Stages<S>::train_vae_cmd(const PipelineConfig& cfg) {
    std::vector<DenseTsdfBlock> dataset = build_chunk_dataset(cfg, true);
    log_info("train-vae: %zu chunks", dataset.size());
    Vae<S> vae = make_vae(cfg, derive_seed(cfg.seed, "vae-init", 0));
    TrainLog log = train_vae(vae, dataset, train_params_from(cfg.vae_train),
                             derive_seed(cfg.seed, "vae-train", 0));
    if (log.aborted) log_warn("train-vae: aborted on divergence; last good state kept");
    save_param_set(vae.params(), serialize_config(cfg), paths::vae_ckpt(cfg.out_dir));
    log_info("train-vae: %lld steps, final loss %.5f -> %s",
             static_cast<long long>(log.steps_done),
             log.losses.empty() ? 0.0 : log.losses.back(), paths::vae_ckpt(cfg.out_dir).c_str());
}

template <typename S>
std::vector<FlowSample<S>> Stages<S>::build_flow_dataset(const PipelineConfig& cfg, Vae<S>& vae,
                                                         bool with_partial, double latent_scale,
                                                         double* computed_scale) {
    HashEmbeddingProvider provider(cfg.layout_dim);
    auto origins = chunk_origins_per_scene(cfg);
    std::vector<FlowSample<S>> dataset;
    for (int i = 0; i < cfg.scene_count; ++i) {
        SparseTsdfVolume full = load_volume(paths::volume(cfg.out_dir, i, "full"));
        SparseTsdfVolume part;
        if (with_partial) part = load_volume(paths::volume(cfg.out_dir, i, "part"));
        std::vector<LayoutBox> boxes = load_layout(paths::layout(cfg.out_dir, i));
        for (std::size_t k = 0; k < origins[static_cast<std::size_t>(i)].size(); ++k) {
            const Vec3i origin = origins[static_cast<std::size_t>(i)][k];
            DenseTsdfBlock block = extract_dense(full, origin, Vec3i::Constant(cfg.chunk_size));
            FlowSample<S> sample;
            sample.latent = vae.encode(block);
            sample.latent.z =
                sample_latent(sample.latent.mean, sample.latent.logvar,
                              derive_seed(cfg.seed, "z1", i * 100000 + static_cast<int>(k)));
            LatentFrame frame;
            frame.world_origin = full.origin();
            frame.voxel_size = cfg.voxel_size;
            frame.downsample = cfg.downsample;
            frame.voxel_origin = origin;
            Aabb chunk_world{full.origin() + origin.cast<double>() * cfg.voxel_size,
                             full.origin() +
                                 (origin + Vec3i::Constant(cfg.chunk_size)).cast<double>() *
                                     cfg.voxel_size};
            sample.layout = paint_layout(boxes_for_chunk(boxes, chunk_world), frame,
                                         sample.latent.shape, provider);
            if (with_partial) {
                DenseTsdfBlock pblock =
                    extract_dense(part, origin, Vec3i::Constant(cfg.chunk_size));
                sample.partial_latent = vae.encode(pblock).mean;
            }
            dataset.push_back(std::move(sample));
        }
    }
    if (latent_scale <= 0) {
        // RMS over known tokens: flow matching starts from a unit prior, so
        // targets are normalized to a comparable magnitude
        double sq = 0.0;
        std::int64_t n = 0;
        for (const FlowSample<S>& s : dataset) {
            const int c = s.latent.channels;
            for (std::int64_t tok = 0; tok < s.latent.tokens(); ++tok)
                if (s.latent.token_mask[static_cast<std::size_t>(tok)]) {
                    sq += static_cast<double>(
                        s.latent.z.segment(tok * c, c).template cast<double>().square().sum());
                    n += c;
                }
        }
        latent_scale = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 1.0;
        if (!(latent_scale > 1e-12)) latent_scale = 1.0;
    }
    if (computed_scale) *computed_scale = latent_scale;
    const S inv = static_cast<S>(1.0 / latent_scale);
    for (FlowSample<S>& s : dataset) {
        s.latent.z *= inv;
        s.latent.mean *= inv;
        if (s.partial_latent.size() > 0) s.partial_latent *= inv;
    }
    return dataset;
}

template <typename S>
void Stages<S>::train_flow_cmd(const PipelineConfig& cfg) {
    Vae<S> vae = load_vae(cfg);
    double latent_scale = 0.0;
    std::vector<FlowSample<S>> dataset = build_flow_dataset(cfg, vae, false, 0.0, &latent_scale);
    log_info("train-flow: %zu encoded chunks, latent scale %.4f", dataset.size(), latent_scale);
    VelocityModel<S> model(flow_config_from(cfg), derive_seed(cfg.seed, "flow-init", 0));
    TrainLog log = train_flow(model, dataset, train_params_from(cfg.flow_train), cfg.drop_p,
                              derive_seed(cfg.seed, "flow-train", 0));
    if (log.aborted) log_warn("train-flow: aborted on divergence; last good state kept");
    Checkpoint ckpt = param_set_checkpoint(model.params(), serialize_config(cfg) + model.manifest());
    ArrayX<double> scale_rec(1);
    scale_rec[0] = latent_scale;
    ckpt.add_array<double>("meta/latent_scale", {1}, scale_rec);
    ckpt.save(paths::flow_ckpt(cfg.out_dir));
    log_info("train-flow: %lld steps, final loss %.5f -> %s",
             static_cast<long long>(log.steps_done),
             log.losses.empty() ? 0.0 : log.losses.back(), paths::flow_ckpt(cfg.out_dir).c_str());
}

template <typename S>
void Stages<S>::train_control_cmd(const PipelineConfig& cfg) {
    Vae<S> vae = load_vae(cfg);
    VelocityModel<S> model = load_flow(cfg);
    const double latent_scale = load_latent_scale(cfg);
    std::vector<FlowSample<S>> dataset = build_flow_dataset(cfg, vae, true, latent_scale);
    log_info("train-control: %zu paired chunks (latent scale %.4f)", dataset.size(),
             latent_scale);
    ControlBranch<S> branch = model.init_control(derive_seed(cfg.seed, "control-init", 0));
    TrainLog log = finetune_control(model, branch, dataset, train_params_from(cfg.control_train),
                                    cfg.drop_p, derive_seed(cfg.seed, "control-train", 0));
    if (log.aborted) log_warn("train-control: aborted on divergence; last good state kept");
    save_param_set(branch.params, serialize_config(cfg) + model.manifest(),
                   paths::control_ckpt(cfg.out_dir));
    log_info("train-control: %lld steps, final loss %.5f -> %s",
             static_cast<long long>(log.steps_done),
             log.losses.empty() ? 0.0 : log.losses.back(),
             paths::control_ckpt(cfg.out_dir).c_str());
}

template <typename S>
typename Stages<S>::SampledField Stages<S>::tiled_sample(
    const PipelineConfig& cfg, Vae<S>& vae, VelocityModel<S>& model, ControlBranch<S>* branch,
    const SparseTsdfVolume* input, const std::vector<LayoutBox>* layout_boxes, const Vec3i& base,
    const Vec3i& extent, std::uint64_t seed, double latent_scale) {
    const int d = cfg.downsample;
    const int channels = cfg.latent_channels;
    const Vec3i latent_extent = extent / d;
    const Vec3i latent_chunk = Vec3i::Constant(cfg.chunk_size / d);
    TilePlan plan = plan_tiles(latent_extent, latent_chunk, cfg.overlap_ratio);
    const std::size_t n_chunks = plan.origins.size();
    log_info("tiled_sample: extent %dx%dx%d voxels, %zu chunks, %d steps", extent.x(),
             extent.y(), extent.z(), n_chunks, cfg.sampler_steps);

    // per-chunk control conditioning from the frozen encoder
    std::vector<ArrayX<S>> partial_latents(n_chunks);
    if (branch && input) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            Vec3i vox_origin = base + plan.origins[c] * d;
            DenseTsdfBlock block =
                extract_dense(*input, vox_origin, Vec3i::Constant(cfg.chunk_size));
            partial_latents[c] = vae.encode(block).mean * static_cast<S>(1.0 / latent_scale);
        }
    }

    // layout painted once on the global latent grid, sliced per chunk
    std::vector<LayoutMap> chunk_layouts(n_chunks);
    bool has_layout = layout_boxes && !layout_boxes->empty();
    if (has_layout) {
        HashEmbeddingProvider provider(cfg.layout_dim);
        LatentFrame frame;
        frame.voxel_size = cfg.voxel_size;
        frame.downsample = d;
        frame.voxel_origin = base;
        LayoutMap global = paint_layout(*layout_boxes, frame, latent_extent, provider);
        ArrayX<double> vals = global.values;
        auto slices = slice_chunks(vals, plan, cfg.layout_dim);
        for (std::size_t c = 0; c < n_chunks; ++c) {
            chunk_layouts[c].shape = latent_chunk;
            chunk_layouts[c].channels = cfg.layout_dim;
            chunk_layouts[c].values = slices[c];
            chunk_layouts[c].null_flag = false;
        }
    }

    // warm shape-keyed caches before any parallel section touches them
    {
        ArrayX<S> dummy = ArrayX<S>::Zero(static_cast<std::int64_t>(latent_chunk.prod()) * channels);
        (void)model.velocity(dummy, latent_chunk, 0.0, nullptr);
        LatentGrid<S> warm;
        warm.shape = latent_chunk;
        warm.channels = channels;
        warm.z = dummy;
        warm.token_mask.assign(static_cast<std::size_t>(warm.tokens()), 1);
        (void)vae.decode(warm);
    }

    // globally consistent initial noise
    Rng rng(seed);
    ArrayX<S> global_z = standard_normal<S>(plan.cells() * channels, rng);
    std::vector<ArrayX<S>> states = slice_chunks(global_z, plan, channels);

    std::vector<ArrayX<S>> velocities(n_chunks);
    for (int step = 0; step < cfg.sampler_steps; ++step) {
        const double t = static_cast<double>(step) / cfg.sampler_steps;
        parallel_for_index(static_cast<std::int64_t>(n_chunks), cfg.threads,
                           [&](std::int64_t c) {
                               typename VelocityModel<S>::ControlInputs ctrl;
                               typename VelocityModel<S>::ControlInputs* ctrl_ptr = nullptr;
                               if (branch && input) {
                                   ctrl.branch = &branch->params;
                                   ctrl.partial_latent = &partial_latents[c];
                                   ctrl_ptr = &ctrl;
                               }
                               velocities[c] = model.cfg_velocity(
                                   states[c], latent_chunk, t,
                                   has_layout ? &chunk_layouts[c] : nullptr, cfg.cfg_scale,
                                   ctrl_ptr);
                           });
        states = tiled_sample_step<S>(states, plan, channels, 1.0 / cfg.sampler_steps,
                                      [&](std::size_t c, const ArrayX<S>&) {
                                          return velocities[c];
                                      });
    }

    // decode chunks and blend the dense fields at voxel level
    std::vector<ArrayX<S>> chunk_logits(n_chunks), chunk_tsdf(n_chunks);
    parallel_for_index(static_cast<std::int64_t>(n_chunks), cfg.threads, [&](std::int64_t c) {
        LatentGrid<S> lat;
        lat.shape = latent_chunk;
        lat.channels = channels;
        lat.z = states[c] * static_cast<S>(latent_scale);
        lat.token_mask.assign(static_cast<std::size_t>(lat.tokens()), 1);
        VaePrediction<S> pred = vae.decode(lat);
        chunk_logits[c] = pred.category_logits;
        chunk_tsdf[c] = pred.tsdf;
    });
    TilePlan voxel_plan = scale_plan(plan, d);
    SampledField out;
    out.base = base;
    out.extent = extent;
    out.logits = blend_chunks(chunk_logits, voxel_plan, 1);
    out.tsdf = blend_chunks(chunk_tsdf, voxel_plan, 1);
    return out;
}

template <typename S>
SparseTsdfVolume Stages<S>::assemble_volume(const SampledField& field,
                                            const PipelineConfig& cfg) {
    SparseTsdfVolume vol(cfg.voxel_size, cfg.truncation(), cfg.block_edge);
    const float trunc = static_cast<float>(cfg.truncation());
    std::int64_t n = 0;
    for (int i = 0; i < field.extent.x(); ++i)
        for (int j = 0; j < field.extent.y(); ++j)
            for (int k = 0; k < field.extent.z(); ++k, ++n) {
                Vec3i v = field.base + Vec3i(i, j, k);
                SparseTsdfVolume::Block& blk = vol.get_or_create_block(vol.block_coord(v));
                std::int64_t li = vol.local_index(v);
                float tsdf = static_cast<float>(field.tsdf[n]);
                if (field.logits[n] < S(0)) tsdf = trunc;  // empty space
                blk.tsdf[li] = std::min(trunc, std::max(-trunc, tsdf));
                blk.weight[li] = 1.0f;
            }
    return vol;
}

template <typename S>
CompletionResult Stages<S>::complete_cmd(const PipelineConfig& cfg,
                                         const std::string& volume_path,
                                         const std::string& layout_path, std::uint64_t seed,
                                         const std::string& out_prefix) {
    SparseTsdfVolume input = load_volume(volume_path);
    if (std::abs(input.voxel_size() - cfg.voxel_size) > 1e-12)
        throw std::runtime_error("complete: input voxel size " +
                                 std::to_string(input.voxel_size()) +
                                 " does not match config grid.voxel_size");
    Vae<S> vae = load_vae(cfg);
    VelocityModel<S> model = load_flow(cfg);
    ControlBranch<S> branch = load_control(cfg, model);
    // EMA shadows drive inference
    model.params().copy_state_from(model.params().ema_copy());
    branch.params.copy_state_from(branch.params.ema_copy());

    std::vector<LayoutBox> boxes;
    if (!layout_path.empty()) boxes = load_layout(layout_path);

    auto [base, extent] = completion_extent(input, cfg.chunk_size, cfg.downsample);
    SampledField field =
        tiled_sample(cfg, vae, model, &branch, &input, boxes.empty() ? nullptr : &boxes, base,
                     extent, seed, load_latent_scale(cfg));
    SparseTsdfVolume completed = assemble_volume(field, cfg);

    CompletionResult result;
    result.volume_path = out_prefix + ".stsd";
    result.mesh_path = out_prefix + ".obj";
    fs::create_directories(fs::path(result.volume_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(result.volume_path).parent_path());
    save_volume(completed, result.volume_path);
    write_mesh(extract_scene_mesh(completed), result.mesh_path, MeshFormat::kObj);
    return result;
}

template <typename S>
CompletionResult Stages<S>::generate_cmd(const PipelineConfig& cfg,
                                         const std::string& layout_path, std::uint64_t seed,
                                         const std::string& out_prefix) {
    std::vector<LayoutBox> boxes = load_layout(layout_path);
    if (boxes.empty()) throw std::runtime_error("generate: layout file has no boxes");
    Vae<S> vae = load_vae(cfg);
    VelocityModel<S> model = load_flow(cfg);
    model.params().copy_state_from(model.params().ema_copy());

    Aabb hull = boxes[0].aabb();
    for (const LayoutBox& b : boxes) {
        Aabb bb = b.aabb();
        hull.min = hull.min.cwiseMin(bb.min);
        hull.max = hull.max.cwiseMax(bb.max);
    }
    const double margin = 4 * cfg.voxel_size;
    Vec3i lo((hull.min / cfg.voxel_size).array().floor().cast<int>());
    Vec3i hi((hull.max / cfg.voxel_size).array().ceil().cast<int>());
    lo -= Vec3i::Constant(static_cast<int>(margin / cfg.voxel_size));
    hi += Vec3i::Constant(static_cast<int>(margin / cfg.voxel_size));
    Vec3i base, extent;
    for (int a = 0; a < 3; ++a) {
        base[a] = floor_div(lo[a], cfg.downsample) * cfg.downsample;
        int span = std::max(hi[a] - base[a], cfg.chunk_size);
        extent[a] = ((span + cfg.downsample - 1) / cfg.downsample) * cfg.downsample;
    }

    SampledField field = tiled_sample(cfg, vae, model, nullptr, nullptr, &boxes, base, extent,
                                      seed, load_latent_scale(cfg));
    SparseTsdfVolume generated = assemble_volume(field, cfg);

    CompletionResult result;
    result.volume_path = out_prefix + ".stsd";
    result.mesh_path = out_prefix + ".obj";
    save_volume(generated, result.volume_path);
    write_mesh(extract_scene_mesh(generated), result.mesh_path, MeshFormat::kObj);
    return result;
}

template struct Stages<float>;
template struct Stages<double>;

// ---------------------------------------------------------------------------
// Precision dispatch.
// ---------------------------------------------------------------------------
namespace {
bool use_f64(const PipelineConfig& cfg) { return cfg.precision == "f64"; }
}  // namespace

void cmd_train_vae(const PipelineConfig& cfg) {
    use_f64(cfg) ? Stages<double>::train_vae_cmd(cfg) : Stages<float>::train_vae_cmd(cfg);
}
void cmd_train_flow(const PipelineConfig& cfg) {
    use_f64(cfg) ? Stages<double>::train_flow_cmd(cfg) : Stages<float>::train_flow_cmd(cfg);
}
void cmd_train_control(const PipelineConfig& cfg) {
    use_f64(cfg) ? Stages<double>::train_control_cmd(cfg) : Stages<float>::train_control_cmd(cfg);
}
CompletionResult cmd_complete(const PipelineConfig& cfg, const std::string& volume_path,
                              const std::string& layout_path, std::uint64_t seed,
                              const std::string& out_prefix) {
    return use_f64(cfg)
               ? Stages<double>::complete_cmd(cfg, volume_path, layout_path, seed, out_prefix)
               : Stages<float>::complete_cmd(cfg, volume_path, layout_path, seed, out_prefix);
}
CompletionResult cmd_generate(const PipelineConfig& cfg, const std::string& layout_path,
                              std::uint64_t seed, const std::string& out_prefix) {
    return use_f64(cfg) ? Stages<double>::generate_cmd(cfg, layout_path, seed, out_prefix)
                        : Stages<float>::generate_cmd(cfg, layout_path, seed, out_prefix);
}

std::vector<MetricRecord> cmd_eval(const PipelineConfig& cfg, const EvalInputs& inputs,
                                   const std::string& out_file) {
    std::vector<MetricRecord> records;
    const std::string seed_tag = std::to_string(cfg.seed);
    if (!inputs.pred_volume.empty() && !inputs.target_volume.empty()) {
        SparseTsdfVolume pred = load_volume(inputs.pred_volume);
        SparseTsdfVolume target = load_volume(inputs.target_volume);
        if (auto l2 = masked_l2(pred, target))
            records.push_back({"masked_l2", *l2, {{"convention", "mean_squared_tsdf"},
                                                  {"region", "target_known"}}});
        if (auto l1 = masked_l1(pred, target))
            records.push_back({"masked_l1", *l1, {{"convention", "mean_abs_tsdf"},
                                                  {"region", "target_known"}}});
    }
    if (!inputs.reference_mesh.empty() && !inputs.pred_volume.empty()) {
        Mesh ref = read_mesh(inputs.reference_mesh);
        SparseTsdfVolume pred = load_volume(inputs.pred_volume);
        Mesh pred_mesh = extract_scene_mesh(pred);
        if (!pred_mesh.empty() && !ref.empty()) {
            PointCloud a = sample_points(pred_mesh, cfg.eval_points,
                                         derive_seed(cfg.seed, "eval-pred", 0));
            PointCloud b = sample_points(ref, cfg.eval_points,
                                         derive_seed(cfg.seed, "eval-ref", 0));
            records.push_back({"chamfer", chamfer(a, b), {{"convention", "squared"},
                                                          {"seed", seed_tag}}});
        }
    }
    if (!inputs.mesh_a.empty() && !inputs.mesh_b.empty()) {
        Mesh a = read_mesh(inputs.mesh_a);
        Mesh b = read_mesh(inputs.mesh_b);
        records.push_back({"tmd",
                           tmd(a, b, cfg.eval_points, derive_seed(cfg.seed, "eval-tmd", 0)),
                           {{"convention", "pairwise_squared_chamfer"}, {"seed", seed_tag}}});
    }
    if (!out_file.empty()) {
        std::ofstream os(out_file);
        if (!os) throw std::runtime_error("cannot open for writing: " + out_file);
        for (const MetricRecord& r : records) os << r.to_line() << "\n";
    }
    for (const MetricRecord& r : records) log_info("%s", r.to_line().c_str());
    return records;
}

}  // namespace seenflow
