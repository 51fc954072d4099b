#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "matres/geometry.hpp"
#include "matres/rng.hpp"
#include "matres/tensor.hpp"

namespace matres::synth {

enum class SceneKind { checker, gradient, blobs, mixed };

inline std::string to_string(SceneKind k) {
    switch (k) {
        case SceneKind::checker: return "checker";
        case SceneKind::gradient: return "gradient";
        case SceneKind::blobs: return "blobs";
        case SceneKind::mixed: return "mixed";
    }
    return "?";
}

inline SceneKind scene_kind_from(const std::string& s) {
    if (s == "checker") return SceneKind::checker;
    if (s == "gradient") return SceneKind::gradient;
    if (s == "blobs") return SceneKind::blobs;
    if (s == "mixed") return SceneKind::mixed;
    op_error("scene", "unknown kind '" + s + "'");
}

struct Degradation {
    double noise_sigma = 0.1;
    int blur_kernel = 1;  // odd; 1 disables
    int downsample = 1;   // area-mean factor, re-upsampled; 1, 2 or 4

    void validate() const {
        if (noise_sigma < 0) op_error("degrade", "noise_sigma must be >= 0");
        if (blur_kernel < 1 || blur_kernel % 2 == 0)
            op_error("degrade", "blur_kernel must be odd and >= 1");
        if (downsample != 1 && downsample != 2 && downsample != 4)
            op_error("degrade", "downsample factor must be 1, 2 or 4");
    }
};

struct HomographyParams {
    double rot_deg = 0.0;
    double scale = 1.0;
    double trans_x = 0.0, trans_y = 0.0;
    double persp_x = 0.0, persp_y = 0.0;  // bottom-row entries
};

struct Illumination {
    double gain = 1.0;
    double bias = 0.0;
};

struct PairSpec {
    uint64_t seed = 0;
    SceneKind scene = SceneKind::mixed;
    int size = 64;
    Degradation degradation;
    HomographyParams homography;
    Illumination illumination;

    void validate() const {
        if (size < 8) op_error("pair_spec", "size must be >= 8");
        degradation.validate();
        if (illumination.gain <= 0) op_error("pair_spec", "gain must be positive");
    }
};

// --- Scene generation -----------------------------------------------------------

namespace detail {

template <class R>
std::vector<R> blurred_noise(int h, int w, int rad, Rng& rng) {
    std::vector<double> base(static_cast<size_t>(h) * w);
    for (auto& v : base) v = rng.uniform();
    std::vector<R> out(base.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            int cnt = 0;
            for (int dy = -rad; dy <= rad; ++dy)
                for (int dx = -rad; dx <= rad; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    s += base[static_cast<size_t>(yy) * w + xx];
                    ++cnt;
                }
            out[static_cast<size_t>(y) * w + x] = static_cast<R>(s / cnt);
        }
    return out;
}

}  // namespace detail

// Structured textures with broad spatial frequency content, deterministic in
// (seed, kind, size).
template <class R>
Tensor<R> gen_scene(uint64_t seed, SceneKind kind, int size) {
    const int h = size, w = size;
    Rng rng(mix_seed(seed, "scene"));
    std::vector<R> v(static_cast<size_t>(3) * h * w, R(0));
    auto at = [&](int c, int y, int x) -> R& {
        return v[(static_cast<size_t>(c) * h + y) * w + x];
    };

    switch (kind) {
        case SceneKind::checker: {
            const int cell = 4 + static_cast<int>(rng.uniform_int(6));
            const int phx = static_cast<int>(rng.uniform_int(cell));
            const int phy = static_cast<int>(rng.uniform_int(cell));
            R lo[3], hi[3];
            for (int c = 0; c < 3; ++c) {
                lo[c] = static_cast<R>(rng.uniform(0.05, 0.35));
                hi[c] = static_cast<R>(rng.uniform(0.65, 0.95));
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const bool a = (((x + phx) / cell) + ((y + phy) / cell)) % 2 == 0;
                    for (int c = 0; c < 3; ++c) at(c, y, x) = a ? lo[c] : hi[c];
                }
            break;
        }
        case SceneKind::gradient: {
            for (int c = 0; c < 3; ++c) {
                const double ang = rng.uniform(0.0, 6.283185307179586);
                const double gx = std::cos(ang) / w, gy = std::sin(ang) / h;
                const double off = rng.uniform(0.3, 0.7);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const double t = off + 0.45 * (gx * (2 * x - w) + gy * (2 * y - h)) / 2.0;
                        at(c, y, x) = static_cast<R>(std::min(1.0, std::max(0.0, t)));
                    }
            }
            break;
        }
        case SceneKind::blobs: {
            // smooth at pixel scale: degradations must stay separable from content
            for (int c = 0; c < 3; ++c) {
                auto fine = detail::blurred_noise<R>(h, w, 4, rng);
                auto coarse = detail::blurred_noise<R>(h, w, 6, rng);
                std::vector<R> mixed(fine.size());
                for (size_t i = 0; i < fine.size(); ++i)
                    mixed[i] = static_cast<R>(1.8 * (fine[i] - 0.5) + 1.6 * (coarse[i] - 0.5));
                // final 3x3 smoothing keeps curvature low enough for clean
                // bilinear round trips
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double s = 0;
                        int cnt = 0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int yy = y + dy, xx = x + dx;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                                s += mixed[static_cast<size_t>(yy) * w + xx];
                                ++cnt;
                            }
                        at(c, y, x) =
                            static_cast<R>(std::min(1.0, std::max(0.0, 0.5 + s / cnt)));
                    }
            }
            break;
        }
        case SceneKind::mixed: {
            Tensor<R> b = gen_scene<R>(mix_seed(seed, "mixed.blobs"), SceneKind::blobs, size);
            Tensor<R> g = gen_scene<R>(mix_seed(seed, "mixed.grad"), SceneKind::gradient, size);
            // a few hard-edged seeded rectangles give the matcher corners to bite on
            Rng rrng(mix_seed(seed, "mixed.rects"));
            std::vector<R> rects(static_cast<size_t>(3) * h * w, R(0));
            const int nrect = 3 + static_cast<int>(rrng.uniform_int(3));
            for (int k = 0; k < nrect; ++k) {
                const int rw = 4 + static_cast<int>(rrng.uniform_int(10));
                const int rh = 4 + static_cast<int>(rrng.uniform_int(10));
                const int x0 = static_cast<int>(rrng.uniform_int(std::max(1, w - rw)));
                const int y0 = static_cast<int>(rrng.uniform_int(std::max(1, h - rh)));
                R col[3];
                for (int c = 0; c < 3; ++c) col[c] = static_cast<R>(rrng.uniform(-0.25, 0.25));
                for (int y = y0; y < std::min(h, y0 + rh); ++y)
                    for (int x = x0; x < std::min(w, x0 + rw); ++x)
                        for (int c = 0; c < 3; ++c)
                            rects[(static_cast<size_t>(c) * h + y) * w + x] = col[c];
            }
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const double t = 0.6 * b.data()[(static_cast<size_t>(c) * h + y) * w + x] +
                                         0.4 * g.data()[(static_cast<size_t>(c) * h + y) * w + x] +
                                         rects[(static_cast<size_t>(c) * h + y) * w + x];
                        at(c, y, x) = static_cast<R>(std::min(1.0, std::max(0.0, t)));
                    }
            break;
        }
    }
    return Tensor<R>::from({3, h, w}, std::move(v));
}

// --- Degradation -----------------------------------------------------------------

// blur -> downsample/re-upsample -> additive noise, clamped to [0,1].
template <class R>
Tensor<R> degrade(const Tensor<R>& image, const Degradation& spec, uint64_t seed) {
    spec.validate();
    if (image.shape().size() != 3)
        op_error("degrade", "expected (C,H,W), got " + shape_str(image.shape()));
    const int C = image.shape()[0], H = image.shape()[1], W = image.shape()[2];
    Tensor<R> out = image.detach();

    if (spec.blur_kernel > 1) {
        // box blur normalized by in-frame coverage so constants stay constant
        const int rad = spec.blur_kernel / 2;
        std::vector<R> b(out.numel());
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double s = 0;
                    int cnt = 0;
                    for (int dy = -rad; dy <= rad; ++dy)
                        for (int dx = -rad; dx <= rad; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            s += out.data()[(static_cast<size_t>(c) * H + yy) * W + xx];
                            ++cnt;
                        }
                    b[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<R>(s / cnt);
                }
        out = Tensor<R>::from(out.shape(), std::move(b));
    }

    if (spec.downsample > 1) {
        if (H % spec.downsample || W % spec.downsample)
            op_error("degrade", "downsample factor does not divide the frame");
        Tensor<R> low = avg_pool(out, spec.downsample);
        out = bilinear_resize(low, H, W);
    }

    if (spec.noise_sigma > 0) {
        Rng rng(mix_seed(seed, "degrade.noise"));
        std::vector<R> n(out.numel());
        for (size_t i = 0; i < n.size(); ++i) {
            const double t = out.data()[i] + spec.noise_sigma * rng.normal();
            n[i] = static_cast<R>(std::min(1.0, std::max(0.0, t)));
        }
        out = Tensor<R>::from(out.shape(), std::move(n));
    } else {
        std::vector<R> n(out.numel());
        for (size_t i = 0; i < n.size(); ++i)
            n[i] = static_cast<R>(std::min(R(1), std::max(R(0), out.data()[i])));
        out = Tensor<R>::from(out.shape(), std::move(n));
    }
    return out;
}

// --- Pair construction --------------------------------------------------------------

// Rotation and scale about the frame center, then translation, then a mild
// perspective component.
inline geometry::Homography make_homography(const HomographyParams& p, int size) {
    const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    const double a = p.rot_deg * M_PI / 180.0;
    const double c = std::cos(a) * p.scale, s = std::sin(a) * p.scale;
    geometry::Homography affine;
    affine.m = {c, -s, cx - c * cx + s * cy + p.trans_x,
                s, c,  cy - s * cx - c * cy + p.trans_y,
                0, 0,  1};
    // perspective component scaled to keep the frame center fixed
    const double wq = p.persp_x * cx + p.persp_y * cy + 1.0;
    geometry::Homography persp;
    persp.m = {wq, 0, 0, 0, wq, 0, p.persp_x, p.persp_y, 1};
    return geometry::Homography::from_raw(persp.compose(affine).m);
}

struct DegradationRecord {
    Degradation spec;
    uint64_t noise_seed = 0;
    int times_applied = 0;
};

template <class R>
struct GroundTruth {
    Tensor<R> clean;
    geometry::Homography t_gt;
    DegradationRecord degradation;
};

template <class R>
struct Pair {
    Tensor<R> lq, hq;
    geometry::ValidMask hq_coverage;  // target pixels covered by warp(clean, t_gt)
    GroundTruth<R> gt;
};

// I_HQ = clamp(gain * warp(clean, T_gt) + bias); I_LQ = degrade(clean).
// Viewpoint change and illumination live on the HQ side, degradation on LQ.
template <class R>
Pair<R> make_pair(const PairSpec& spec) {
    spec.validate();
    Pair<R> out;
    out.gt.clean = gen_scene<R>(spec.seed, spec.scene, spec.size);
    out.gt.t_gt = make_homography(spec.homography, spec.size);
    out.gt.degradation = {spec.degradation, mix_seed(spec.seed, "lq"), 1};

    auto warped = geometry::warp(out.gt.clean, out.gt.t_gt, spec.size, spec.size);
    const double coverage =
        static_cast<double>(warped.mask.count()) / (static_cast<double>(spec.size) * spec.size);
    if (coverage < 0.5)
        op_error("make_pair", "homography covers only " + std::to_string(coverage * 100.0) +
                                  "% of the frame; use milder viewpoint parameters");
    std::vector<R> hq(warped.image.numel());
    for (size_t i = 0; i < hq.size(); ++i) {
        const double t = spec.illumination.gain * warped.image.data()[i] + spec.illumination.bias;
        hq[i] = static_cast<R>(std::min(1.0, std::max(0.0, t)));
    }
    out.hq = Tensor<R>::from(warped.image.shape(), std::move(hq));
    out.hq_coverage = warped.mask;
    out.lq = degrade(out.gt.clean, spec.degradation, out.gt.degradation.noise_seed);
    return out;
}

// Default corpus distribution: the declared desk-scale protocol.
inline PairSpec random_pair_spec(uint64_t corpus_seed, int index, SceneKind scene, int size,
                                 const Degradation& degr) {
    PairSpec s;
    s.seed = mix_seed(corpus_seed, static_cast<uint64_t>(index));
    s.scene = scene;
    s.size = size;
    s.degradation = degr;
    Rng rng(mix_seed(s.seed, "spec"));
    s.homography.rot_deg = rng.uniform(-15.0, 15.0);
    s.homography.scale = rng.uniform(0.9, 1.1);
    s.homography.trans_x = rng.uniform(-5.0, 5.0);
    s.homography.trans_y = rng.uniform(-5.0, 5.0);
    s.homography.persp_x = rng.uniform(-2e-4, 2e-4);
    s.homography.persp_y = rng.uniform(-2e-4, 2e-4);
    s.illumination.gain = rng.uniform(0.8, 1.2);
    s.illumination.bias = rng.uniform(-0.1, 0.1);
    return s;
}

}  // namespace matres::synth
