#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "matres/optim.hpp"
#include "matres/rng.hpp"
#include "matres/synth.hpp"
#include "matres/tensor.hpp"

namespace matres::restorer {

struct RestorerConfig {
    int channels = 16;  // C_r
    uint64_t seed = 2;
};

// Toy two-stream restoration network. The encoder downsamples by 2; the
// decoder fuses the modulated LQ and HQ streams by channel concatenation,
// upsamples, and predicts a residual on top of the warped LQ input. Output is
// clamped to [0,1].
template <class R>
class Restorer {
public:
    static Restorer seeded(const RestorerConfig& cfg, bool trainable = false) {
        if (cfg.channels < 1) op_error("restorer", "channels must be >= 1");
        Restorer r;
        r.cfg_ = cfg;
        Rng rng(mix_seed(cfg.seed, "restorer"));
        const int C = cfg.channels;
        auto conv = [&](const std::string& name, int co, int ci, int k) {
            const double std = std::sqrt(2.0 / (ci * k * k));
            return r.params_.add(name, {co, ci, k, k},
                                 rng.normal_vec<R>(static_cast<size_t>(co) * ci * k * k, 0.0, std),
                                 trainable);
        };
        auto bias = [&](const std::string& name, int co) {
            return r.params_.add(name, {co}, std::vector<R>(co, R(0)), trainable);
        };
        r.ew1_ = conv("enc1.w", C, 3, 3);
        r.eb1_ = bias("enc1.b", C);
        r.ew2_ = conv("enc2.w", C, C, 3);
        r.eb2_ = bias("enc2.b", C);
        r.dw1_ = conv("dec1.w", C, 2 * C, 3);
        r.db1_ = bias("dec1.b", C);
        r.dw2_ = conv("dec2.w", C, 2 * C, 3);
        r.db2_ = bias("dec2.b", C);
        // zero-initialized residual head: restoration starts at the identity,
        // keeping the output clamp transparent to early gradients
        r.dw3_ = r.params_.add("dec3.w", {3, C, 3, 3},
                               std::vector<R>(static_cast<size_t>(3) * C * 9, R(0)), trainable);
        r.db3_ = bias("dec3.b", 3);
        return r;
    }

    const RestorerConfig& config() const { return cfg_; }
    int stride() const { return 2; }
    int channels() const { return cfg_.channels; }
    ParamRegistry<R>& params() { return params_; }
    const ParamRegistry<R>& params() const { return params_; }

    // Full-resolution stem; the half-resolution map below it is the injection
    // site.
    Tensor<R> stem(const Tensor<R>& image) const {
        if (image.shape().size() != 3 || image.shape()[0] != 3)
            op_error("encode", "expected (3,H,W) image, got " + shape_str(image.shape()));
        if (image.shape()[1] % 2 || image.shape()[2] % 2)
            op_error("encode", "extents must be even, got " + shape_str(image.shape()));
        return relu(conv2d(image, ew1_, &eb1_));
    }

    Tensor<R> encode(const Tensor<R>& image) const {
        return relu(conv2d(avg_pool(stem(image), 2), ew2_, &eb2_));
    }

    // D(E(lq) + inj_lq, E(hq) + inj_hq): the two modulated streams fuse by
    // channel concatenation at half resolution; a full-resolution skip from
    // the LQ stem lets the residual head express per-pixel corrections. The
    // reference stream has no full-resolution path, so it cannot be copied
    // into the output verbatim.
    Tensor<R> restore(const Tensor<R>& warped_lq, const Tensor<R>& hq, const Tensor<R>& inj_lq,
                      const Tensor<R>& inj_hq) const {
        Tensor<R> sl = stem(warped_lq);
        Tensor<R> el = relu(conv2d(avg_pool(sl, 2), ew2_, &eb2_));
        Tensor<R> eh = encode(hq);
        if (inj_lq.shape() != el.shape())
            op_error("restore", "lq injection shape " + shape_str(inj_lq.shape()) +
                                    " vs encoder output " + shape_str(el.shape()));
        if (inj_hq.shape() != eh.shape())
            op_error("restore", "hq injection shape " + shape_str(inj_hq.shape()) +
                                    " vs encoder output " + shape_str(eh.shape()));
        Tensor<R> fused = concat_channels(add(el, inj_lq), add(eh, inj_hq));
        Tensor<R> d = relu(conv2d(fused, dw1_, &db1_));
        d = bilinear_resize(d, warped_lq.shape()[1], warped_lq.shape()[2]);
        d = relu(conv2d(concat_channels(d, sl), dw2_, &db2_));
        Tensor<R> res = conv2d(d, dw3_, &db3_);
        return clamp(add(res, warped_lq), R(0), R(1));
    }

    // Injection-free restoration (zero adapters by construction).
    Tensor<R> restore_plain(const Tensor<R>& warped_lq, const Tensor<R>& hq) const {
        const int H = warped_lq.shape()[1] / 2, W = warped_lq.shape()[2] / 2;
        Tensor<R> zl = Tensor<R>::zeros({cfg_.channels, H, W});
        Tensor<R> zh = Tensor<R>::zeros({cfg_.channels, hq.shape()[1] / 2, hq.shape()[2] / 2});
        return restore(warped_lq, hq, zl, zh);
    }

private:
    RestorerConfig cfg_;
    ParamRegistry<R> params_;
    Tensor<R> ew1_, eb1_, ew2_, eb2_;
    Tensor<R> dw1_, db1_, dw2_, db2_, dw3_, db3_;
};

// --- Toy pretraining ------------------------------------------------------------

struct PretrainOptions {
    int steps = 2000;
    double lr = 2e-3;
    int crop = 32;             // training crop extent
    double margin_gate_db = 2.0;
    int holdout = 4;           // scenes reserved for the gate measurement
};

struct PretrainReport {
    double psnr_degraded_db = 0.0;
    double psnr_restored_db = 0.0;
    double margin_db = 0.0;
    int steps = 0;
};

namespace detail {

template <class R>
double mse_of(const Tensor<R>& a, const Tensor<R>& b) {
    double s = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

inline double psnr_db(double mse) { return mse <= 0 ? 99.0 : 10.0 * std::log10(1.0 / mse); }

template <class R>
Tensor<R> random_crop(const Tensor<R>& img, int size, Rng& rng) {
    const int H = img.shape()[1], W = img.shape()[2];
    if (H <= size || W <= size) return img.detach();
    const int y0 = static_cast<int>(rng.uniform_int(H - size + 1));
    const int x0 = static_cast<int>(rng.uniform_int(W - size + 1));
    return crop(img, y0, x0, size, size).detach();
}

}  // namespace detail

// Denoise/deblur training on synthetic textures. The reference stream cycles
// between the input itself, an illumination-shifted near-aligned clean view,
// and an unrelated scene, so the decoder learns to exploit a reference without
// learning to copy it verbatim. Returns a trainable-weights restorer; callers
// refreeze via serialization round trip or by rebuilding the registry.
template <class R>
PretrainReport pretrain_toy(Restorer<R>& net, const std::vector<Tensor<R>>& scenes,
                            const PretrainOptions& opt, uint64_t seed) {
    if (scenes.size() < static_cast<size_t>(opt.holdout + 2))
        op_error("pretrain_toy", "need at least " + std::to_string(opt.holdout + 2) + " scenes");
    const size_t train_n = scenes.size() - opt.holdout;

    AdamWConfig<R> acfg;
    acfg.lr = static_cast<R>(opt.lr);
    AdamW<R> opt_state(acfg);
    Rng rng(mix_seed(seed, "pretrain"));

    for (int step = 0; step < opt.steps; ++step) {
        const Tensor<R>& scene = scenes[rng.uniform_int(train_n)];
        Tensor<R> clean = detail::random_crop(scene, opt.crop, rng);

        synth::Degradation dg;
        dg.noise_sigma = rng.uniform(0.05, 0.15);
        dg.blur_kernel = rng.uniform() < 0.3 ? 3 : 1;
        dg.downsample = rng.uniform() < 0.25 ? 2 : 1;
        Tensor<R> lq = synth::degrade(clean, dg, rng.next_u64());

        // reference stream: self / shifted+relit clean / unrelated scene
        Tensor<R> ref;
        const double mode = rng.uniform();
        if (mode < 0.4) {
            ref = lq;
        } else if (mode < 0.8) {
            auto shifted = geometry::warp(
                clean,
                geometry::Homography::translation(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)),
                opt.crop, opt.crop);
            const double gain = rng.uniform(0.85, 1.15), bias = rng.uniform(-0.08, 0.08);
            std::vector<R> v(shifted.image.numel());
            for (size_t i = 0; i < v.size(); ++i)
                v[i] = static_cast<R>(std::min(
                    1.0, std::max(0.0, gain * shifted.image.data()[i] + bias)));
            ref = Tensor<R>::from(shifted.image.shape(), std::move(v));
        } else {
            ref = detail::random_crop(scenes[rng.uniform_int(train_n)], opt.crop, rng);
        }

        Tensor<R> out = net.restore_plain(lq, ref);
        Tensor<R> loss = mean(mul(sub(out, clean), sub(out, clean)));
        auto grads = backward(loss);
        opt_state.step(net.params(), grads);
    }

    // gate: reference-free restoration on held-out scenes must beat identity
    PretrainReport report;
    report.steps = opt.steps;
    double acc_in = 0, acc_out = 0;
    for (size_t i = train_n; i < scenes.size(); ++i) {
        synth::Degradation dg;  // the declared default degradation
        Tensor<R> lq = synth::degrade(scenes[i], dg, mix_seed(seed, i));
        Tensor<R> out = net.restore_plain(lq, lq);
        acc_in += detail::psnr_db(detail::mse_of(lq, scenes[i]));
        acc_out += detail::psnr_db(detail::mse_of(out, scenes[i]));
    }
    report.psnr_degraded_db = acc_in / opt.holdout;
    report.psnr_restored_db = acc_out / opt.holdout;
    report.margin_db = report.psnr_restored_db - report.psnr_degraded_db;
    if (report.margin_db < opt.margin_gate_db)
        throw std::runtime_error(
            "pretrain_toy: restoration margin " + std::to_string(report.margin_db) +
            " dB below the " + std::to_string(opt.margin_gate_db) +
            " dB gate; increase steps or adjust the corpus");
    return report;
}

}  // namespace matres::restorer
