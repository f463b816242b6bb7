// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Masked variational autoencoder over TSDF chunks. Unknown voxels are
// replaced by a learnable empty embedding before any mixing, so encoder
// outputs and all loss terms are exactly invariant to whatever the sentinel
// region contains. The decoder emits per-voxel category logits plus a tanh
// TSDF head bounded by the truncation band.
#pragma once

#include "seenflow/checkpoint.hpp"
#include "seenflow/nn.hpp"
#include "seenflow/voxgrid.hpp"

namespace seenflow {

struct VaeConfig {
    int downsample = 4;  // power of two; two stages of 2x at the default
    int latent_channels = 8;
    int c0 = 16;
    int c1 = 32;
    double kl_weight = 1e-6;
    double truncation = 0.06;

    int stages() const {
        int s = 0, d = downsample;
        while (d > 1) {
            if (d % 2 != 0) throw std::invalid_argument("vae downsample must be a power of two");
            d /= 2;
            ++s;
        }
        return s;
    }
    int stage_channels(int stage) const { return stage + 1 >= stages() ? c1 : c0; }
    int head_channels() const { return std::max(4, c0 / 2); }
};

// Downsampled grid of latent vectors with a per-token visibility mask.
template <typename S>
struct LatentGrid {
    Vec3i shape = Vec3i::Zero();
    int channels = 0;
    ArrayX<S> mean, logvar;            // [tokens x channels]
    ArrayX<S> z;                       // sampled values, may be empty
    std::vector<std::uint8_t> token_mask;  // known = 1

    std::int64_t tokens() const {
        return static_cast<std::int64_t>(shape.x()) * shape.y() * shape.z();
    }
    std::int64_t known_tokens() const {
        std::int64_t n = 0;
        for (auto m : token_mask) n += m ? 1 : 0;
        return n;
    }
};

template <typename S>
struct VaePrediction {
    Vec3i shape = Vec3i::Zero();
    ArrayX<S> category_logits;  // per voxel; > 0 means surface
    ArrayX<S> tsdf;             // per voxel, strictly inside (-truncation, truncation)
};

// z = mean + exp(logvar / 2) * eps with seeded standard normal eps.
template <typename S>
ArrayX<S> sample_latent(const ArrayX<S>& mean, const ArrayX<S>& logvar, std::uint64_t seed) {
    if (mean.size() != logvar.size())
        throw std::invalid_argument("sample_latent: mean/logvar size mismatch");
    Rng rng(seed);
    ArrayX<S> z(mean.size());
    for (std::int64_t i = 0; i < z.size(); ++i)
        z[i] = mean[i] +
               std::exp(static_cast<double>(logvar[i]) * 0.5) * static_cast<S>(rng.normal());
    return z;
}

template <typename S>
class Vae {
public:
    Vae(VaeConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg_.stages() < 1) throw std::invalid_argument("vae: downsample must be >= 2");
        Rng rng(seed);
        const int head = cfg_.head_channels();
        in_ = make_linear(params_, "enc/in", 1, cfg_.c0, rng);
        empty_embed_ = params_.add_normal("enc/empty_embed", {1, cfg_.c0}, rng, 0.02);
        int ch = cfg_.c0;
        for (int s = 0; s < cfg_.stages(); ++s) {
            const int out = cfg_.stage_channels(s);
            enc_down_.push_back(make_conv(params_, "enc/down" + std::to_string(s), 8, ch, out, rng));
            enc_mix_.push_back(make_conv(params_, "enc/mix" + std::to_string(s), 27, out, out, rng));
            ch = out;
        }
        mean_head_ = make_linear(params_, "enc/mean", ch, cfg_.latent_channels, rng);
        logvar_head_ = make_linear(params_, "enc/logvar", ch, cfg_.latent_channels, rng);

        dec_in_ = make_linear(params_, "dec/in", cfg_.latent_channels, ch, rng);
        for (int s = cfg_.stages() - 1; s >= 0; --s) {
            const int cur = cfg_.stage_channels(s);
            const int nxt = s == 0 ? head : cfg_.stage_channels(s - 1);
            dec_mix_.push_back(make_conv(params_, "dec/mix" + std::to_string(s), 27, cur, cur, rng));
            dec_up_.push_back(
                make_linear(params_, "dec/up" + std::to_string(s), cur, nxt, rng));
        }
        dec_final_mix_ = make_conv(params_, "dec/final_mix", 27, head, head, rng);
        cat_head_ = make_linear(params_, "dec/cat", head, 1, rng);
        tsdf_head_ = make_linear(params_, "dec/tsdf", head, 1, rng);
    }

    const VaeConfig& config() const { return cfg_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }

    Vec3i latent_shape(const Vec3i& chunk_shape) const {
        for (int a = 0; a < 3; ++a)
            if (chunk_shape[a] % cfg_.downsample != 0)
                throw std::invalid_argument("encode: chunk shape " + std::to_string(chunk_shape[a]) +
                                            " not divisible by downsample factor " +
                                            std::to_string(cfg_.downsample));
        return chunk_shape / cfg_.downsample;
    }

    struct EncodeGraph {
        Tensor<S> mean, logvar;  // [tokens, channels]
        Vec3i latent_shape = Vec3i::Zero();
        std::vector<std::uint8_t> token_mask;
    };

    EncodeGraph encode_graph(const DenseTsdfBlock& block) {
        const Vec3i shape = block.shape;
        const Vec3i lshape = latent_shape(shape);
        const std::int64_t v = block.size();

        // Inputs are pre-substituted: unknown voxels contribute nothing but the
        // learnable embedding, which is what keeps every downstream value
        // independent of sentinel-region contents.
        ArrayX<S> x(v), known(v), unknown_col(v);
        for (std::int64_t i = 0; i < v; ++i) {
            const bool k = block.mask[static_cast<std::size_t>(i)] != VoxelClass::kUnknown;
            known[i] = k ? S(1) : S(0);
            unknown_col[i] = k ? S(0) : S(1);
            x[i] = k ? static_cast<S>(block.tsdf[static_cast<std::size_t>(i)] / cfg_.truncation)
                     : S(0);
        }
        ArrayX<S> known_rep(v * cfg_.c0);
        for (std::int64_t i = 0; i < v; ++i)
            known_rep.segment(i * cfg_.c0, cfg_.c0).setConstant(known[i]);

        Tensor<S> xin = Tensor<S>::from_array({static_cast<int>(v), 1}, std::move(x));
        Tensor<S> ucol = Tensor<S>::from_array({static_cast<int>(v), 1}, std::move(unknown_col));
        Tensor<S> h = add(mul_const(in_(xin), known_rep), matmul(ucol, empty_embed_));

        Vec3i cur = shape;
        for (int s = 0; s < cfg_.stages(); ++s) {
            h = silu(conv_gather(h, table(patch_tables_, cur, 2), 8, enc_down_[s]));
            cur /= 2;
            h = add(h, conv_gather(silu(layer_normalize(h, 1, S(1e-5))),
                                   table(conv_tables_, cur, 3), 27, enc_mix_[s]));
        }
        h = layer_normalize(h, 1, S(1e-5));

        EncodeGraph out;
        out.mean = mean_head_(h);
        out.logvar = logvar_head_(h);
        out.latent_shape = lshape;
        out.token_mask = token_visibility(block, lshape);
        return out;
    }

    LatentGrid<S> encode(const DenseTsdfBlock& block) {
        EncodeGraph g = encode_graph(block);
        LatentGrid<S> out;
        out.shape = g.latent_shape;
        out.channels = cfg_.latent_channels;
        out.mean = g.mean.value();
        out.logvar = g.logvar.value();
        out.token_mask = std::move(g.token_mask);
        return out;
    }

    struct DecodeGraph {
        Tensor<S> category_logits;  // [voxels, 1]
        Tensor<S> tsdf;             // [voxels, 1]
    };

    DecodeGraph decode_graph(const Tensor<S>& z, const Vec3i& lshape) {
        Tensor<S> h = silu(dec_in_(z));
        Vec3i cur = lshape;
        for (int i = 0; i < cfg_.stages(); ++i) {
            h = add(h, conv_gather(silu(layer_normalize(h, 1, S(1e-5))),
                                   table(conv_tables_, cur, 3), 27, dec_mix_[i]));
            h = gather_rows(h, table(upsample_tables_, cur, 2));
            cur *= 2;
            h = silu(dec_up_[i](h));
        }
        h = add(h, conv_gather(silu(layer_normalize(h, 1, S(1e-5))),
                               table(conv_tables_, cur, 3), 27, dec_final_mix_));
        h = layer_normalize(h, 1, S(1e-5));
        DecodeGraph out;
        out.category_logits = cat_head_(h);
        out.tsdf = scale(tanh_t(tsdf_head_(h)), static_cast<S>(cfg_.truncation));
        return out;
    }

    VaePrediction<S> decode(const LatentGrid<S>& latent) {
        const ArrayX<S>& values = latent.z.size() > 0 ? latent.z : latent.mean;
        Tensor<S> z = Tensor<S>::from_array(
            {static_cast<int>(latent.tokens()), latent.channels}, values);
        DecodeGraph g = decode_graph(z, latent.shape);
        VaePrediction<S> out;
        out.shape = latent.shape * cfg_.downsample;
        out.category_logits = g.category_logits.value();
        out.tsdf = g.tsdf.value();
        return out;
    }

    struct LossGraph {
        Tensor<S> total, tsdf, category, kl;
        bool skip = false;  // no known voxels in the target
    };

    // Masked losses: L1 tsdf over surface voxels, BCE over all known voxels,
    // KL averaged over known latent tokens.
    LossGraph loss_graph(const EncodeGraph& enc, const DecodeGraph& dec,
                         const DenseTsdfBlock& target) {
        const std::int64_t v = target.size();
        ArrayX<S> m_surface(v), m_known(v), labels(v), target_tsdf(v);
        std::int64_t n_surface = 0, n_known = 0;
        for (std::int64_t i = 0; i < v; ++i) {
            const VoxelClass c = target.mask[static_cast<std::size_t>(i)];
            const bool known = c != VoxelClass::kUnknown;
            const bool surf = c == VoxelClass::kSurface;
            m_known[i] = known ? S(1) : S(0);
            m_surface[i] = surf ? S(1) : S(0);
            labels[i] = surf ? S(1) : S(0);
            target_tsdf[i] = static_cast<S>(target.tsdf[static_cast<std::size_t>(i)]);
            n_known += known;
            n_surface += surf;
        }
        LossGraph out;
        if (n_known == 0) {
            out.total = Tensor<S>::zeros({1});
            out.tsdf = Tensor<S>::zeros({1});
            out.category = Tensor<S>::zeros({1});
            out.kl = Tensor<S>::zeros({1});
            out.skip = true;
            return out;
        }

        Tensor<S> pred_tsdf = reshape(dec.tsdf, {static_cast<int>(v)});
        Tensor<S> target_t = Tensor<S>::from_array({static_cast<int>(v)}, target_tsdf);
        if (n_surface > 0) {
            Tensor<S> l1 = mul_const(abs_t(sub(pred_tsdf, target_t)), m_surface);
            out.tsdf = scale(sum_all(l1), S(1) / static_cast<S>(n_surface));
        } else {
            out.tsdf = Tensor<S>::zeros({1});
        }

        Tensor<S> logits = reshape(dec.category_logits, {static_cast<int>(v)});
        Tensor<S> bce = mul_const(bce_with_logits(logits, labels), m_known);
        out.category = scale(sum_all(bce), S(1) / static_cast<S>(n_known));

        const std::int64_t tokens = static_cast<std::int64_t>(enc.token_mask.size());
        const int zc = cfg_.latent_channels;
        ArrayX<S> token_rep(tokens * zc);
        std::int64_t known_tokens = 0;
        for (std::int64_t t = 0; t < tokens; ++t) {
            const bool k = enc.token_mask[static_cast<std::size_t>(t)] != 0;
            known_tokens += k;
            token_rep.segment(t * zc, zc).setConstant(k ? S(1) : S(0));
        }
        if (known_tokens > 0) {
            // 0.5 * (mu^2 + exp(logvar) - 1 - logvar), nonnegative per element
            Tensor<S> mu2 = mul(enc.mean, enc.mean);
            Tensor<S> kl_elem =
                scale(sub(add(mu2, exp_t(enc.logvar)), add_scalar(enc.logvar, S(1))), S(0.5));
            out.kl = scale(sum_all(mul_const(kl_elem, token_rep)),
                           S(1) / static_cast<S>(known_tokens * zc));
        } else {
            out.kl = Tensor<S>::zeros({1});
        }
        out.total = add(add(out.tsdf, out.category), scale(out.kl, static_cast<S>(cfg_.kl_weight)));
        return out;
    }

    // Latent-cell visibility: known iff any voxel in the cell's strided
    // receptive footprint is known.
    std::vector<std::uint8_t> token_visibility(const DenseTsdfBlock& block,
                                               const Vec3i& lshape) const {
        const int d = cfg_.downsample;
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(lshape.prod()), 0);
        std::int64_t cell = 0;
        for (int i = 0; i < lshape.x(); ++i)
            for (int j = 0; j < lshape.y(); ++j)
                for (int k = 0; k < lshape.z(); ++k, ++cell) {
                    bool known = false;
                    for (int di = 0; di < d && !known; ++di)
                        for (int dj = 0; dj < d && !known; ++dj)
                            for (int dk = 0; dk < d && !known; ++dk)
                                known = block.mask[static_cast<std::size_t>(block.index(
                                            i * d + di, j * d + dj, k * d + dk))] !=
                                        VoxelClass::kUnknown;
                    mask[static_cast<std::size_t>(cell)] = known ? 1 : 0;
                }
        return mask;
    }

private:
    IndexTable table(std::map<std::pair<std::array<int, 3>, int>, IndexTable>& cache,
                     const Vec3i& shape, int k) {
        auto key = std::make_pair(std::array<int, 3>{shape.x(), shape.y(), shape.z()}, k);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        IndexTable t;
        if (&cache == &conv_tables_)
            t = conv_neighbor_table(shape, k);
        else if (&cache == &patch_tables_)
            t = patch_table(shape, k);
        else
            t = upsample_table(shape, k);
        cache.emplace(key, t);
        return t;
    }

    VaeConfig cfg_;
    ParamSet<S> params_;
    Linear<S> in_, mean_head_, logvar_head_, dec_in_, cat_head_, tsdf_head_, dec_final_mix_;
    Tensor<S> empty_embed_;
    std::vector<Linear<S>> enc_down_, enc_mix_, dec_mix_, dec_up_;
    std::map<std::pair<std::array<int, 3>, int>, IndexTable> conv_tables_, patch_tables_,
        upsample_tables_;
};

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------
struct TrainLog {
    std::vector<double> losses;
    bool aborted = false;  // NaN divergence; parameters restored to last good
    std::int64_t steps_done = 0;
};

struct TrainParams {
    std::int64_t steps = 2000;
    int batch = 2;
    double lr = 1e-4;
    std::int64_t warmup = 1000;
    double weight_decay = 0.0;
    double ema_decay = 0.999;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::int64_t snapshot_every = 50;
};

template <typename S>
TrainLog train_vae(Vae<S>& vae, const std::vector<DenseTsdfBlock>& dataset,
                   const TrainParams& tp, std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("train_vae: empty dataset");
    Rng rng(seed);
    TrainLog log;
    ParamSet<S> snapshot = vae.params().deep_copy();
    AdamWConfig adam;
    adam.beta1 = tp.beta1;
    adam.beta2 = tp.beta2;
    adam.eps = tp.adam_eps;
    adam.weight_decay = tp.weight_decay;
    for (std::int64_t step = 0; step < tp.steps; ++step) {
        adam.lr = lr_at(step, tp.steps, tp.warmup, tp.lr);
        vae.params().zero_grad();
        double loss_acc = 0.0;
        int used = 0;
        for (int b = 0; b < tp.batch; ++b) {
            const auto& block = dataset[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
            auto enc = vae.encode_graph(block);
            // reparameterized sample
            ArrayX<S> eps(enc.mean.size());
            for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<S>(rng.normal());
            Tensor<S> z = add(enc.mean, mul(exp_t(scale(enc.logvar, S(0.5))),
                                            Tensor<S>::from_array(enc.mean.shape(), eps)));
            auto dec = vae.decode_graph(z, enc.latent_shape);
            auto loss = vae.loss_graph(enc, dec, block);
            if (loss.skip) continue;
            backward(scale(loss.total, S(1.0 / tp.batch)));
            loss_acc += static_cast<double>(loss.total.scalar());
            ++used;
        }
        const double step_loss = used > 0 ? loss_acc / used : 0.0;
        log.losses.push_back(step_loss);
        if (!std::isfinite(step_loss)) {
            log.aborted = true;
            vae.params().copy_state_from(snapshot);
            log_warn("train_vae: non-finite loss at step %lld, restoring last snapshot",
                     static_cast<long long>(step));
            break;
        }
        if (used > 0) {
            vae.params().adamw_step(adam);
            vae.params().ema_update(tp.ema_decay);
        }
        log.steps_done = step + 1;
        if (step % tp.snapshot_every == 0) snapshot = vae.params().deep_copy();
        if (step % 100 == 0)
            log_debug("train_vae step %lld loss %.6f lr %.2e", static_cast<long long>(step),
                      step_loss, adam.lr);
    }
    return log;
}

}  // namespace seenflow
