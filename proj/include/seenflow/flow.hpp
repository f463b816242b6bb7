// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Masked flow matching over latent tokens. The velocity network is a stack of
// adaLN-modulated per-token MLP blocks with one optional self-attention block
// (rotary 3-D positions); layout conditioning enters additively through a
// bias-free projection so a null layout contributes exactly zero. Scan
// completion adds a control branch: a deep copy of the trunk whose per-block
// outputs re-enter the frozen base through zero-initialized rank bottlenecks,
// making the controlled model exactly the base model at initialization.
#pragma once

#include "seenflow/layout.hpp"
#include "seenflow/nn.hpp"
#include "seenflow/vae.hpp"

namespace seenflow {

struct FlowConfig {
    int channels = 8;        // latent channels per token
    int hidden = 64;
    int mlp_blocks = 4;
    int heads = 4;
    bool attention = true;
    int layout_channels = 32;
    int rank = 8;            // control bottleneck width
    double drop_p = 0.1;

    int total_blocks() const { return mlp_blocks + (attention ? 1 : 0); }
    int attention_index() const { return mlp_blocks / 2; }
    int ffn_hidden() const { return 4 * hidden; }
    int head_dim() const {
        if (hidden % heads != 0)
            throw std::invalid_argument("flow: hidden must be divisible by heads");
        return hidden / heads;
    }
};

template <typename S>
struct ControlBranch {
    ParamSet<S> params;  // deep copy of the base trunk plus control extras
};

template <typename S>
class VelocityModel {
public:
    VelocityModel(FlowConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(seed);
        build_params(params_, rng);
    }

    const FlowConfig& config() const { return cfg_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }

    struct ControlInputs {
        ParamSet<S>* branch = nullptr;
        const ArrayX<S>* partial_latent = nullptr;  // encoded partial scan, [tokens*channels]
    };

    // Velocity graph for one chunk of tokens laid out on `grid`.
    // layout: painted map values per token ([tokens*layout_channels]) or
    // nullptr for the null condition.
    Tensor<S> velocity_graph(ParamSet<S>& ps, const ArrayX<S>& z_t, const Vec3i& grid, double t,
                             const ArrayX<S>* layout, const ControlInputs* control = nullptr) {
        std::vector<Tensor<S>> injections;
        if (control) {
            std::vector<Tensor<S>> branch_outputs;
            trunk(*control->branch, z_t, grid, t, layout, control->partial_latent, nullptr,
                  &branch_outputs);
            injections.reserve(branch_outputs.size());
            for (int b = 0; b < cfg_.total_blocks(); ++b) {
                Tensor<S> down = add_rowwise(
                    matmul(branch_outputs[static_cast<std::size_t>(b)],
                           control->branch->at(block_name(b) + "/ctrl_down/w")),
                    control->branch->at(block_name(b) + "/ctrl_down/b"));
                injections.push_back(
                    matmul(down, control->branch->at(block_name(b) + "/ctrl_up/w")));
            }
        }
        return trunk(ps, z_t, grid, t, layout, nullptr, control ? &injections : nullptr, nullptr);
    }

    // Inference-path velocity (plain arrays, no gradient retained).
    ArrayX<S> velocity(const ArrayX<S>& z_t, const Vec3i& grid, double t, const ArrayX<S>* layout,
                       const ControlInputs* control = nullptr) {
        return velocity_graph(params_, z_t, grid, t, layout, control).value();
    }

    // Classifier-free guided velocity: v_null + scale * (v_cond - v_null).
    // scale 1 is exactly the conditional pass; a null layout is exactly the
    // unconditional pass regardless of scale.
    ArrayX<S> cfg_velocity(const ArrayX<S>& z_t, const Vec3i& grid, double t,
                           const LayoutMap* layout, double scale,
                           const ControlInputs* control = nullptr) {
        if (scale < 0) throw std::invalid_argument("cfg_velocity: scale must be >= 0");
        const bool has_layout = layout != nullptr && !layout->null_flag;
        ArrayX<S> layout_vals;
        if (has_layout) layout_vals = layout->values.template cast<S>();
        if (!has_layout) return velocity(z_t, grid, t, nullptr, control);
        if (scale == 1.0) return velocity(z_t, grid, t, &layout_vals, control);
        ArrayX<S> v_null = velocity(z_t, grid, t, nullptr, control);
        if (scale == 0.0) return v_null;
        ArrayX<S> v_cond = velocity(z_t, grid, t, &layout_vals, control);
        return v_null + static_cast<S>(scale) * (v_cond - v_null);
    }

    ControlBranch<S> init_control(std::uint64_t seed) {
        ControlBranch<S> branch;
        branch.params = params_.deep_copy();
        Rng rng(seed);
        branch.params.add_zeros("ctrl_in/w", {cfg_.channels, cfg_.hidden});
        for (int b = 0; b < cfg_.total_blocks(); ++b) {
            branch.params.add_normal(block_name(b) + "/ctrl_down/w", {cfg_.hidden, cfg_.rank},
                                     rng, std::sqrt(2.0 / (cfg_.hidden + cfg_.rank)));
            branch.params.add_zeros(block_name(b) + "/ctrl_down/b", {cfg_.rank});
            branch.params.add_zeros(block_name(b) + "/ctrl_up/w", {cfg_.rank, cfg_.hidden});
        }
        return branch;
    }

    std::string manifest() const {
        std::ostringstream os;
        os << "flow.channels = " << cfg_.channels << "\n";
        os << "flow.hidden = " << cfg_.hidden << "\n";
        os << "flow.blocks = " << cfg_.mlp_blocks << "\n";
        os << "flow.heads = " << cfg_.heads << "\n";
        os << "flow.attention = " << (cfg_.attention ? "true" : "false") << "\n";
        os << "flow.layout_dim = " << cfg_.layout_channels << "\n";
        os << "control.rank = " << cfg_.rank << "\n";
        return os.str();
    }

private:
    std::string block_name(int b) const { return "blk" + std::to_string(b); }

    void build_params(ParamSet<S>& ps, Rng& rng) {
        make_linear(ps, "in", cfg_.channels, cfg_.hidden, rng);
        ps.add_normal("layout/w", {cfg_.layout_channels, cfg_.hidden}, rng,
                      std::sqrt(2.0 / (cfg_.layout_channels + cfg_.hidden)));
        make_linear(ps, "time0", cfg_.hidden, cfg_.hidden, rng);
        make_linear(ps, "time1", cfg_.hidden, cfg_.hidden, rng);
        for (int b = 0; b < cfg_.total_blocks(); ++b) {
            const std::string name = block_name(b);
            make_linear(ps, name + "/mod_shift", cfg_.hidden, cfg_.hidden, rng, true, true);
            make_linear(ps, name + "/mod_scale", cfg_.hidden, cfg_.hidden, rng, true, true);
            if (cfg_.attention && b == cfg_.attention_index()) {
                make_linear(ps, name + "/wq", cfg_.hidden, cfg_.hidden, rng);
                make_linear(ps, name + "/wk", cfg_.hidden, cfg_.hidden, rng);
                make_linear(ps, name + "/wv", cfg_.hidden, cfg_.hidden, rng);
                make_linear(ps, name + "/wo", cfg_.hidden, cfg_.hidden, rng);
            } else {
                make_linear(ps, name + "/ffn0", cfg_.hidden, cfg_.ffn_hidden(), rng);
                make_linear(ps, name + "/ffn1", cfg_.ffn_hidden(), cfg_.hidden, rng);
            }
        }
        make_linear(ps, "final/mod_shift", cfg_.hidden, cfg_.hidden, rng, true, true);
        make_linear(ps, "final/mod_scale", cfg_.hidden, cfg_.hidden, rng, true, true);
        // zero-initialized output projection
        make_linear(ps, "out", cfg_.hidden, cfg_.channels, rng, true, true);
    }

    Linear<S> lin(ParamSet<S>& ps, const std::string& name) const {
        Linear<S> l;
        l.w = ps.at(name + "/w");
        if (ps.has(name + "/b")) l.b = ps.at(name + "/b");
        return l;
    }

    Tensor<S> modulate(ParamSet<S>& ps, const std::string& name, const Tensor<S>& x,
                       const Tensor<S>& time_feat) {
        Tensor<S> shift = reshape(lin(ps, name + "/mod_shift")(time_feat), {cfg_.hidden});
        Tensor<S> scale_row = reshape(lin(ps, name + "/mod_scale")(time_feat), {cfg_.hidden});
        Tensor<S> h = layer_normalize(x, 1, S(1e-5));
        h = mul_rowwise(h, add_scalar(scale_row, S(1)));
        return add_rowwise(h, shift);
    }

    Tensor<S> attention(ParamSet<S>& ps, const std::string& name, const Tensor<S>& x,
                        const RopeTables<S>& rope) {
        const int tokens = x.shape()[0];
        const int hd = cfg_.head_dim();
        Tensor<S> q = lin(ps, name + "/wq")(x);
        Tensor<S> k = lin(ps, name + "/wk")(x);
        Tensor<S> v = lin(ps, name + "/wv")(x);
        std::vector<Tensor<S>> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.heads));
        for (int h = 0; h < cfg_.heads; ++h) {
            Tensor<S> qh = rope_rotate(slice_cols(q, h * hd, hd), rope.cos_tab, rope.sin_tab,
                                       rope.pairs);
            Tensor<S> kh = rope_rotate(slice_cols(k, h * hd, hd), rope.cos_tab, rope.sin_tab,
                                       rope.pairs);
            Tensor<S> vh = slice_cols(v, h * hd, hd);
            Tensor<S> scores = scale(matmul_nt(qh, kh), S(1.0 / std::sqrt(double(hd))));
            Tensor<S> attn = softmax(scores, 1);
            heads.push_back(matmul(attn, vh));
        }
        Tensor<S> merged = concatenate(heads, 1);
        (void)tokens;
        return lin(ps, name + "/wo")(merged);
    }

    Tensor<S> trunk(ParamSet<S>& ps, const ArrayX<S>& z_t, const Vec3i& grid, double t,
                    const ArrayX<S>* layout, const ArrayX<S>* partial_latent,
                    const std::vector<Tensor<S>>* injections,
                    std::vector<Tensor<S>>* collect_block_outputs) {
        const std::int64_t tokens = grid.prod();
        if (z_t.size() != tokens * cfg_.channels)
            throw std::invalid_argument("velocity: state size " + std::to_string(z_t.size()) +
                                        " does not match grid " + std::to_string(tokens) +
                                        " x " + std::to_string(cfg_.channels));
        Tensor<S> zt = Tensor<S>::from_array({static_cast<int>(tokens), cfg_.channels}, z_t);
        Tensor<S> x = lin(ps, "in")(zt);
        if (layout) {
            if (layout->size() != tokens * cfg_.layout_channels)
                throw std::invalid_argument("velocity: layout size mismatch");
            Tensor<S> lmap = Tensor<S>::from_array(
                {static_cast<int>(tokens), cfg_.layout_channels}, *layout);
            x = add(x, matmul(lmap, ps.at("layout/w")));  // bias-free: null layout adds nothing
        }
        if (partial_latent) {
            Tensor<S> zp = Tensor<S>::from_array({static_cast<int>(tokens), cfg_.channels},
                                                 *partial_latent);
            x = add(x, matmul(zp, ps.at("ctrl_in/w")));
        }

        Tensor<S> time_feat = Tensor<S>::from_array({1, cfg_.hidden},
                                                    sinusoidal_features<S>(t, cfg_.hidden));
        time_feat = silu(lin(ps, "time0")(time_feat));
        time_feat = lin(ps, "time1")(time_feat);
        Tensor<S> time_base = silu(time_feat);

        const RopeTables<S>& rope = rope_tables(grid);
        for (int b = 0; b < cfg_.total_blocks(); ++b) {
            const std::string name = block_name(b);
            Tensor<S> h = modulate(ps, name, x, time_base);
            if (cfg_.attention && b == cfg_.attention_index())
                h = attention(ps, name, h, rope);
            else
                h = lin(ps, name + "/ffn1")(silu(lin(ps, name + "/ffn0")(h)));
            x = add(x, h);
            if (collect_block_outputs) collect_block_outputs->push_back(x);
            if (injections) x = add(x, (*injections)[static_cast<std::size_t>(b)]);
        }
        Tensor<S> out = modulate(ps, "final", x, time_base);
        return lin(ps, "out")(out);
    }

    const RopeTables<S>& rope_tables(const Vec3i& grid) {
        auto key = std::array<int, 3>{grid.x(), grid.y(), grid.z()};
        auto it = rope_cache_.find(key);
        if (it == rope_cache_.end())
            it = rope_cache_.emplace(key, make_rope_tables<S>(grid, cfg_.head_dim())).first;
        return it->second;
    }

    FlowConfig cfg_;
    ParamSet<S> params_;
    std::map<std::array<int, 3>, RopeTables<S>> rope_cache_;
};

// ---------------------------------------------------------------------------
// Flow-matching pieces.
// ---------------------------------------------------------------------------

// Linear interpolant z_t = (1-t) z0 + t z1.
template <typename S>
ArrayX<S> interpolate(const ArrayX<S>& z0, const ArrayX<S>& z1, double t) {
    if (z0.size() != z1.size()) throw std::invalid_argument("interpolate: size mismatch");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t must be in [0,1]");
    return (S(1) - static_cast<S>(t)) * z0 + static_cast<S>(t) * z1;
}

template <typename S>
ArrayX<S> standard_normal(std::int64_t n, Rng& rng) {
    ArrayX<S> z(n);
    for (std::int64_t i = 0; i < n; ++i) z[i] = static_cast<S>(rng.normal());
    return z;
}

// One flow-matching training sample on a latent chunk. Tokens outside the
// visibility mask contribute nothing to the loss.
template <typename S>
struct FmLoss {
    Tensor<S> loss;
    bool skip = false;
    double t = 0.0;
};

template <typename S>
FmLoss<S> fm_loss(VelocityModel<S>& model, ParamSet<S>& ps, const LatentGrid<S>& z1,
                  const LayoutMap* layout, double drop_p, Rng& rng,
                  const typename VelocityModel<S>::ControlInputs* control = nullptr) {
    const std::int64_t tokens = z1.tokens();
    const int channels = z1.channels;
    const ArrayX<S>& target_latent = z1.z.size() > 0 ? z1.z : z1.mean;

    FmLoss<S> out;
    const std::int64_t known = z1.known_tokens();
    if (known == 0) {
        out.loss = Tensor<S>::zeros({1});
        out.skip = true;
        return out;
    }

    ArrayX<S> z0 = standard_normal<S>(tokens * channels, rng);
    const double t = rng.uniform();
    out.t = t;
    LayoutMap dropped;
    const ArrayX<S>* layout_vals_ptr = nullptr;
    ArrayX<S> layout_vals;
    if (layout != nullptr) {
        dropped = drop_condition(*layout, drop_p, rng);
        if (!dropped.null_flag) {
            layout_vals = dropped.values.template cast<S>();
            layout_vals_ptr = &layout_vals;
        }
    }
    // Unknown tokens carry no target signal: zero them before interpolation so
    // nothing the mask excludes can reach the network input (token mixing
    // would otherwise leak target values into every gradient).
    ArrayX<S> sanitized = target_latent;
    for (std::int64_t tok = 0; tok < tokens; ++tok)
        if (!z1.token_mask[static_cast<std::size_t>(tok)])
            sanitized.segment(tok * channels, channels).setZero();
    ArrayX<S> z_t = interpolate(z0, sanitized, t);
    Tensor<S> v = model.velocity_graph(ps, z_t, z1.shape, t, layout_vals_ptr, control);

    ArrayX<S> target = target_latent - z0;
    ArrayX<S> mask_rep(tokens * channels);
    for (std::int64_t tok = 0; tok < tokens; ++tok)
        mask_rep.segment(tok * channels, channels)
            .setConstant(z1.token_mask[static_cast<std::size_t>(tok)] ? S(1) : S(0));

    Tensor<S> diff = sub(reshape(v, {static_cast<int>(tokens * channels)}),
                         Tensor<S>::from_array({static_cast<int>(tokens * channels)}, target));
    Tensor<S> sq = mul_const(mul(diff, diff), mask_rep);
    out.loss = scale(sum_all(sq), S(1) / static_cast<S>(known * channels));
    return out;
}

// Plain Euler integration of dz/dt = v(z, t) on the left-endpoint grid
// t_i = i / steps, shared by samplers and analytic tests.
template <typename S, typename VelocityFn>
ArrayX<S> euler_integrate(ArrayX<S> z, int steps, const VelocityFn& velocity) {
    if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
    const S dt = S(1) / static_cast<S>(steps);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        ArrayX<S> v = velocity(z, t);
        z += dt * v;
    }
    return z;
}

template <typename S>
ArrayX<S> euler_sample(VelocityModel<S>& model, const Vec3i& grid, int steps, double guidance,
                       const LayoutMap* layout, std::uint64_t seed,
                       const typename VelocityModel<S>::ControlInputs* control = nullptr) {
    Rng rng(seed);
    ArrayX<S> z = standard_normal<S>(grid.prod() * model.config().channels, rng);
    return euler_integrate<S>(std::move(z), steps, [&](const ArrayX<S>& state, double t) {
        return model.cfg_velocity(state, grid, t, layout, guidance, control);
    });
}

// ---------------------------------------------------------------------------
// Training loops.
// ---------------------------------------------------------------------------
template <typename S>
struct FlowSample {
    LatentGrid<S> latent;          // target z1 with token mask
    LayoutMap layout;              // painted condition (may be all-zero)
    ArrayX<S> partial_latent;      // control conditioning, empty when unused
};

template <typename S>
TrainLog train_flow(VelocityModel<S>& model, const std::vector<FlowSample<S>>& dataset,
                    const TrainParams& tp, double drop_p, std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("train_flow: empty dataset");
    Rng rng(seed);
    TrainLog log;
    ParamSet<S> snapshot = model.params().deep_copy();
    AdamWConfig adam;
    adam.beta1 = tp.beta1;
    adam.beta2 = tp.beta2;
    adam.eps = tp.adam_eps;
    adam.weight_decay = tp.weight_decay;
    for (std::int64_t step = 0; step < tp.steps; ++step) {
        adam.lr = lr_at(step, tp.steps, tp.warmup, tp.lr);
        model.params().zero_grad();
        double loss_acc = 0.0;
        int used = 0;
        for (int b = 0; b < tp.batch; ++b) {
            const FlowSample<S>& sample = dataset[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
            FmLoss<S> fm = fm_loss(model, model.params(), sample.latent, &sample.layout, drop_p,
                                   rng);
            if (fm.skip) continue;
            backward(scale(fm.loss, S(1.0 / tp.batch)));
            loss_acc += static_cast<double>(fm.loss.scalar());
            ++used;
        }
        const double step_loss = used > 0 ? loss_acc / used : 0.0;
        log.losses.push_back(step_loss);
        if (!std::isfinite(step_loss)) {
            log.aborted = true;
            model.params().copy_state_from(snapshot);
            log_warn("train_flow: non-finite loss at step %lld, restoring last snapshot",
                     static_cast<long long>(step));
            break;
        }
        if (used > 0) {
            model.params().adamw_step(adam);
            model.params().ema_update(tp.ema_decay);
        }
        log.steps_done = step + 1;
        if (step % tp.snapshot_every == 0) snapshot = model.params().deep_copy();
        if (step % 100 == 0)
            log_debug("train_flow step %lld loss %.6f lr %.2e", static_cast<long long>(step),
                      step_loss, adam.lr);
    }
    return log;
}

// Fine-tunes only the branch parameters; the base stays frozen and bit-exact.
template <typename S>
TrainLog finetune_control(VelocityModel<S>& model, ControlBranch<S>& branch,
                          const std::vector<FlowSample<S>>& dataset, const TrainParams& tp,
                          double drop_p, std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("finetune_control: empty dataset");
    for (const FlowSample<S>& s : dataset)
        if (s.partial_latent.size() == 0)
            throw std::invalid_argument("finetune_control: dataset lacks partial latents");
    Rng rng(seed);
    TrainLog log;
    model.params().set_requires_grad(false);
    ParamSet<S> snapshot = branch.params.deep_copy();
    AdamWConfig adam;
    adam.beta1 = tp.beta1;
    adam.beta2 = tp.beta2;
    adam.eps = tp.adam_eps;
    adam.weight_decay = tp.weight_decay;
    for (std::int64_t step = 0; step < tp.steps; ++step) {
        adam.lr = lr_at(step, tp.steps, tp.warmup, tp.lr);
        branch.params.zero_grad();
        double loss_acc = 0.0;
        int used = 0;
        for (int b = 0; b < tp.batch; ++b) {
            const FlowSample<S>& sample = dataset[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
            typename VelocityModel<S>::ControlInputs ctrl;
            ctrl.branch = &branch.params;
            ctrl.partial_latent = &sample.partial_latent;
            FmLoss<S> fm = fm_loss(model, model.params(), sample.latent, &sample.layout, drop_p,
                                   rng, &ctrl);
            if (fm.skip) continue;
            backward(scale(fm.loss, S(1.0 / tp.batch)));
            loss_acc += static_cast<double>(fm.loss.scalar());
            ++used;
        }
        const double step_loss = used > 0 ? loss_acc / used : 0.0;
        log.losses.push_back(step_loss);
        if (!std::isfinite(step_loss)) {
            log.aborted = true;
            branch.params.copy_state_from(snapshot);
            log_warn("finetune_control: non-finite loss at step %lld, restoring last snapshot",
                     static_cast<long long>(step));
            break;
        }
        if (used > 0) {
            branch.params.adamw_step(adam);
            branch.params.ema_update(tp.ema_decay);
        }
        log.steps_done = step + 1;
        if (step % tp.snapshot_every == 0) snapshot = branch.params.deep_copy();
        if (step % 100 == 0)
            log_debug("finetune_control step %lld loss %.6f lr %.2e",
                      static_cast<long long>(step), step_loss, adam.lr);
    }
    model.params().set_requires_grad(true);
    return log;
}

}  // namespace seenflow
