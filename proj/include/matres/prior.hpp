#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "matres/optim.hpp"
#include "matres/rng.hpp"
#include "matres/tensor.hpp"

namespace matres::prior {

// --- Diffusion noise schedule -------------------------------------------------

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;  // alpha_bars[i] = prod_{s<=i} (1 - beta_s)

    static NoiseSchedule from_betas(std::vector<double> b) {
        if (b.empty()) op_error("build_schedule", "beta sequence is empty");
        NoiseSchedule s;
        double p = 1.0;
        for (double beta : b) {
            if (!(beta > 0.0 && beta < 1.0))
                op_error("build_schedule", "beta " + std::to_string(beta) + " outside (0,1)");
            p *= 1.0 - beta;
            s.alpha_bars.push_back(p);
        }
        s.betas = std::move(b);
        return s;
    }

    static NoiseSchedule linear(double beta_start, double beta_end, int steps) {
        std::vector<double> b(steps);
        for (int i = 0; i < steps; ++i)
            b[i] = steps == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * i / (steps - 1.0);
        return from_betas(std::move(b));
    }

    int steps() const { return static_cast<int>(betas.size()); }

    // Timesteps run 1..steps; t = 0 is the clean signal.
    double alpha_bar(int t) const {
        if (t < 0 || t > steps()) op_error("schedule", "timestep " + std::to_string(t) + " out of range");
        return t == 0 ? 1.0 : alpha_bars[t - 1];
    }
    double alpha(int t) const {
        if (t < 1 || t > steps()) op_error("schedule", "timestep " + std::to_string(t) + " out of range");
        return 1.0 - betas[t - 1];
    }
};

inline NoiseSchedule build_schedule(std::vector<double> betas) {
    return NoiseSchedule::from_betas(std::move(betas));
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <class R>
Tensor<R> forward_diffuse(const Tensor<R>& z0, int t, const NoiseSchedule& sched,
                          const Tensor<R>& eps) {
    if (eps.shape() != z0.shape())
        op_error("forward_diffuse", "noise shape " + shape_str(eps.shape()) + " vs signal " +
                                        shape_str(z0.shape()));
    const double abar = sched.alpha_bar(t);
    return add(scale(z0, static_cast<R>(std::sqrt(abar))),
               scale(eps, static_cast<R>(std::sqrt(1.0 - abar))));
}

// z_{t-1} = (z_t - ((1 - a_t)/sqrt(1 - abar_t)) eps_hat) / sqrt(a_t) + sigma_t * noise
template <class R>
Tensor<R> reverse_step(const Tensor<R>& zt, int t, const NoiseSchedule& sched,
                       const Tensor<R>& eps_hat, double sigma_t,
                       const Tensor<R>* noise = nullptr) {
    if (t < 1) op_error("reverse_step", "timestep must be >= 1, got " + std::to_string(t));
    if (sigma_t < 0.0) op_error("reverse_step", "sigma_t must be >= 0");
    if (eps_hat.shape() != zt.shape())
        op_error("reverse_step", "prediction shape " + shape_str(eps_hat.shape()) + " vs latent " +
                                     shape_str(zt.shape()));
    const double a = sched.alpha(t);
    const double abar = sched.alpha_bar(t);
    const R coef = static_cast<R>((1.0 - a) / std::sqrt(1.0 - abar));
    Tensor<R> z = scale(sub(zt, scale(eps_hat, coef)), static_cast<R>(1.0 / std::sqrt(a)));
    if (sigma_t > 0.0) {
        if (!noise) op_error("reverse_step", "sigma_t > 0 requires a noise draw");
        if (noise->shape() != zt.shape()) op_error("reverse_step", "noise shape mismatch");
        z = add(z, scale(*noise, static_cast<R>(sigma_t)));
    }
    return z;
}

// Eq.-style multi-scale aggregate: mean over levels of per-channel global
// average pooling. All levels must share the channel count.
template <class R>
Tensor<R> extract_ar_prior(const std::vector<Tensor<R>>& pyramid) {
    if (pyramid.empty()) op_error("extract_ar_prior", "pyramid is empty");
    const int C = pyramid.front().shape()[0];
    Tensor<R> acc;
    for (const auto& f : pyramid) {
        if (f.shape().size() != 3 || f.shape()[0] != C)
            op_error("extract_ar_prior", "level channel mismatch: " + shape_str(f.shape()) +
                                             " vs C=" + std::to_string(C));
        Tensor<R> g = global_avg_pool(f);
        acc = acc.defined() ? add(acc, g) : g;
    }
    return scale(acc, static_cast<R>(1.0 / pyramid.size()));
}

// Patch tokens: each P x P patch flattened and linearly projected, arranged on
// the (H/P, W/P) grid. proj is {d, C*P*P}.
template <class R>
Tensor<R> extract_patch_tokens(const Tensor<R>& image, int P, const Tensor<R>& proj) {
    if (image.shape().size() != 3)
        op_error("extract_patch_tokens", "expected (C,H,W), got " + shape_str(image.shape()));
    const int C = image.shape()[0], H = image.shape()[1], W = image.shape()[2];
    if (P < 1 || H % P || W % P)
        op_error("extract_patch_tokens", "patch size " + std::to_string(P) +
                                             " does not divide " + shape_str(image.shape()));
    if (proj.shape().size() != 2 || proj.shape()[1] != C * P * P)
        op_error("extract_patch_tokens", "projection shape " + shape_str(proj.shape()) +
                                             " vs flattened patch length " +
                                             std::to_string(C * P * P));
    Tensor<R> tokens = matmul(proj, im2patches(image, P));
    return reshape(tokens, {proj.shape()[0], H / P, W / P});
}

// --- Toy backbones ---------------------------------------------------------------

enum class BackboneKind { diffusion, autoregressive, patch_token };

inline std::string to_string(BackboneKind k) {
    switch (k) {
        case BackboneKind::diffusion: return "diffusion";
        case BackboneKind::autoregressive: return "autoregressive";
        case BackboneKind::patch_token: return "patch_token";
    }
    return "?";
}

inline BackboneKind backbone_kind_from(const std::string& s) {
    if (s == "diffusion") return BackboneKind::diffusion;
    if (s == "autoregressive") return BackboneKind::autoregressive;
    if (s == "patch_token") return BackboneKind::patch_token;
    op_error("backbone", "unknown kind '" + s + "'");
}

struct BackboneConfig {
    BackboneKind kind = BackboneKind::diffusion;
    int channels = 16;        // C_z
    int patch = 4;            // patch_token stride
    int diffusion_t = 25;     // extraction timestep
    int diffusion_steps = 50;
    bool ar_concat = false;   // concatenate level descriptors instead of averaging
    uint64_t seed = 1;
};

// Frozen convolutional stand-in for a pretrained matching model. All kinds
// expose the same (C_z, s_z) interface so downstream modules stay kind-agnostic.
//
// diffusion       encode -> one forward noising at t -> one deterministic
//                 reverse step with the toy denoiser
// autoregressive  three-level pyramid, pooled descriptor tiled onto the
//                 coarsest level
// patch_token     linear projection of non-overlapping patches
template <class R>
class PriorBackbone {
public:
    static constexpr double kArBroadcastGain = 0.1;

    static PriorBackbone seeded(const BackboneConfig& cfg, bool trainable_denoiser = false) {
        if (cfg.channels < 1) op_error("backbone", "channels must be >= 1");
        if (cfg.patch < 1) op_error("backbone", "patch must be >= 1");
        PriorBackbone b;
        b.cfg_ = cfg;
        b.sched_ = NoiseSchedule::linear(1e-4, 0.02, cfg.diffusion_steps);
        Rng rng(mix_seed(cfg.seed, "prior_backbone"));
        const int C = cfg.channels;

        // Per-layer gain > 1 lifts feature magnitude well above the unit-variance
        // diffusion noise so nearest-neighbour matching stays informative after
        // the noising/denoising round trip.
        auto conv_init = [&](const std::string& name, int co, int ci, int k, double gain) {
            const double std = gain * std::sqrt(2.0 / (ci * k * k));
            return b.params_.add(name, {co, ci, k, k}, rng.normal_vec<R>(static_cast<size_t>(co) * ci * k * k, 0.0, std),
                                 false);
        };
        auto bias_init = [&](const std::string& name, int co) {
            return b.params_.add(name, {co}, rng.normal_vec<R>(co, 0.0, 0.01), false);
        };

        if (cfg.kind == BackboneKind::patch_token) {
            const int d = C, flat = 3 * cfg.patch * cfg.patch;
            const double std = std::sqrt(1.0 / flat) * 4.0;
            b.proj_ = b.params_.add("proj", {d, flat},
                                    rng.normal_vec<R>(static_cast<size_t>(d) * flat, 0.0, std), false);
            return b;
        }

        // 3x3 stem, then 1x1 mixing layers: keeps the receptive field tight so
        // border context contaminates at most a one-cell ring of the feature grid.
        b.w1_ = conv_init("enc1.w", C, 3, 3, 3.5);
        b.b1_ = bias_init("enc1.b", C);
        b.w2_ = conv_init("enc2.w", C, C, 1, 3.5);
        b.b2_ = bias_init("enc2.b", C);
        b.w3_ = conv_init("enc3.w", C, C, 1, 3.5);
        b.b3_ = bias_init("enc3.b", C);
        if (cfg.kind == BackboneKind::diffusion) {
            auto dconv = [&](const std::string& name, int co, int ci) {
                const double std = std::sqrt(2.0 / (ci * 9));
                return b.params_.add(name, {co, ci, 3, 3},
                                     rng.normal_vec<R>(static_cast<size_t>(co) * ci * 9, 0.0, std),
                                     trainable_denoiser);
            };
            b.dw1_ = dconv("den1.w", C, C);
            b.db1_ = b.params_.add("den1.b", {C}, std::vector<R>(C, R(0)), trainable_denoiser);
            b.dw2_ = dconv("den2.w", C, C);
            b.db2_ = b.params_.add("den2.b", {C}, std::vector<R>(C, R(0)), trainable_denoiser);
        }
        if (cfg.kind == BackboneKind::autoregressive && cfg.ar_concat) {
            const int L = 3;
            const double std = std::sqrt(1.0 / (L * C));
            b.ar_proj_ = b.params_.add("ar_proj", {C, L * C},
                                       rng.normal_vec<R>(static_cast<size_t>(C) * L * C, 0.0, std),
                                       false);
        }
        return b;
    }

    const BackboneConfig& config() const { return cfg_; }
    int stride() const { return cfg_.kind == BackboneKind::patch_token ? cfg_.patch : 4; }
    int channels() const { return cfg_.channels; }
    const NoiseSchedule& schedule() const { return sched_; }
    ParamRegistry<R>& params() { return params_; }
    const ParamRegistry<R>& params() const { return params_; }

    // Multi-scale maps at strides 1, 2, 4 (conv kinds only). The image enters
    // with one stride of edge replication that is cropped off the feature
    // grids again, so border cells see plausible context instead of the conv
    // zero padding. The coarsest map is centered per channel: removing the
    // common activation component keeps cosine matching discriminative.
    std::vector<Tensor<R>> pyramid(const Tensor<R>& image) const {
        Tensor<R> padded = pad_replicate(pad_to_stride(image), 4);
        const int H = padded.shape()[1] - 8, W = padded.shape()[2] - 8;
        Tensor<R> f1 = relu(conv2d(padded, w1_, &b1_));
        Tensor<R> f2 = relu(conv2d(avg_pool(f1, 2), w2_, &b2_));
        Tensor<R> f3 = conv2d(avg_pool(f2, 2), w3_, &b3_);  // signed features for cosine matching
        f1 = crop(f1, 4, 4, H, W);
        f2 = crop(f2, 2, 2, H / 2, W / 2);
        f3 = crop(f3, 1, 1, H / 4, W / 4);
        Tensor<R> f3c = add_broadcast_c(f3, scale(global_avg_pool(f3), R(-1)));
        return {f1, f2, f3c};
    }

    Tensor<R> encode(const Tensor<R>& image) const { return pyramid(image).back(); }

    Tensor<R> denoise(const Tensor<R>& zt) const {
        return conv2d(relu(conv2d(zt, dw1_, &db1_)), dw2_, &db2_);
    }

    // Kind-dispatched prior extraction. `noise_key` selects the deterministic
    // noise stream for the diffusion kind; callers give each image role its own
    // key so distinct inputs never share a draw.
    Tensor<R> extract(const Tensor<R>& image, std::string_view noise_key) const {
        if (image.shape().size() != 3 || image.shape()[0] != 3)
            op_error("extract_prior", "expected (3,H,W) image, got " + shape_str(image.shape()));
        switch (cfg_.kind) {
            case BackboneKind::patch_token: {
                Tensor<R> padded = pad_to_stride(image);
                return extract_patch_tokens(padded, cfg_.patch, proj_);
            }
            case BackboneKind::autoregressive: {
                auto pyr = pyramid(image);
                Tensor<R> desc;
                if (cfg_.ar_concat) {
                    Tensor<R> cat;
                    for (auto& f : pyr) {
                        Tensor<R> g = reshape(global_avg_pool(f), {cfg_.channels, 1, 1});
                        cat = cat.defined() ? concat_channels(cat, g) : g;
                    }
                    desc = reshape(matmul(ar_proj_, reshape(cat, {3 * cfg_.channels, 1})),
                                   Shape{cfg_.channels});
                } else {
                    desc = extract_ar_prior(pyr);
                }
                // Damped broadcast: the global descriptor rides along without
                // drowning the per-cell deviations that matching relies on.
                return add_broadcast_c(pyr.back(), scale(desc, static_cast<R>(kArBroadcastGain)));
            }
            case BackboneKind::diffusion: {
                Tensor<R> z0 = encode(image);
                Tensor<R> eps = noise_like(z0, noise_key);
                Tensor<R> zt = forward_diffuse(z0, cfg_.diffusion_t, sched_, eps);
                Tensor<R> eps_hat = denoise(zt);
                return reverse_step(zt, cfg_.diffusion_t, sched_, eps_hat, /*sigma_t=*/0.0);
            }
        }
        op_error("extract_prior", "unreachable kind");
    }

private:
    Tensor<R> pad_to_stride(const Tensor<R>& image) const {
        const int s = stride();
        const int H = image.shape()[1], W = image.shape()[2];
        const int Hp = (H + s - 1) / s * s, Wp = (W + s - 1) / s * s;
        return pad_bottom_right(image, Hp, Wp);
    }

    Tensor<R> noise_like(const Tensor<R>& z, std::string_view key) const {
        uint64_t s = mix_seed(cfg_.seed, key);
        s = mix_seed(s, static_cast<uint64_t>(z.shape()[1]) << 32 | static_cast<uint64_t>(z.shape()[2]));
        Rng rng(s);
        return Tensor<R>::from(z.shape(), rng.normal_vec<R>(z.numel()));
    }

    BackboneConfig cfg_;
    NoiseSchedule sched_{};
    ParamRegistry<R> params_;
    Tensor<R> w1_, b1_, w2_, b2_, w3_, b3_;
    Tensor<R> dw1_, db1_, dw2_, db2_;
    Tensor<R> proj_;
    Tensor<R> ar_proj_;
};

}  // namespace matres::prior
