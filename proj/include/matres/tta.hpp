#pragma once

#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "matres/adapter.hpp"
#include "matres/geometry.hpp"
#include "matres/optim.hpp"
#include "matres/prior.hpp"
#include "matres/restorer.hpp"
#include "matres/tensor.hpp"

namespace matres::tta {

struct AdaptConfig {
    double lambda_p = 0.1;     // pixel-matching weight
    double eps_norm = 1e-8;    // min-max normalization guard
    int t_max = 100;           // iteration cap
    int plateau_window = 5;    // W
    double plateau_delta = 1e-3;
    bool feedback = true;      // restored image replaces the matcher's LQ input
    double lr0 = 1e-3;         // halved every lr_halve_every iterations
    int lr_halve_every = 10;
    double beta1 = 0.9, beta2 = 0.999, eps_adam = 1e-8, weight_decay = 0.01;
    int ransac_iterations = 500;
    double ransac_threshold_px = 2.0;
    uint64_t seed = 0;

    void validate() const {
        if (t_max < 1) op_error("adapt", "t_max must be >= 1");
        if (lambda_p < 0) op_error("adapt", "lambda_p must be >= 0");
        if (plateau_window < 1) op_error("adapt", "plateau window must be >= 1");
        if (!(plateau_delta > 0 && plateau_delta < 1))
            op_error("adapt", "plateau delta must lie in (0,1)");
        if (eps_norm <= 0) op_error("adapt", "eps_norm must be positive");
    }
};

struct IterRecord {
    double l_d = 0, l_p = 0, l_total = 0;
    double lr = 0;
    double wall_ms = 0;
    bool transform_fallback = false;
};

using LossTrace = std::vector<IterRecord>;

template <class R>
struct AdaptResult {
    geometry::Homography transform;   // final T_LQ->HQ estimate
    Tensor<R> restored;               // I_EQ in the warped (HQ) frame
    geometry::ValidMask mask;         // warp coverage of the final transform
    LossTrace trace;
    std::string stop_reason;          // "plateau" | "cap"
    int iterations = 0;
    bool any_transform_fallback = false;
};

// Aborts carry a one-line dump of the iteration state for the run log.
struct AdaptAbort : std::runtime_error {
    explicit AdaptAbort(const std::string& what) : std::runtime_error(what) {}
};

// --- Losses -------------------------------------------------------------------------

// L1 mass of the normalized cost volume outside its diagonal. Entries of a
// min-max-normalized volume are non-negative, so the L1 norm is a plain
// masked sum. When cell validity is given, only rows and columns whose cells
// intersect the warped region contribute.
template <class R>
Tensor<R> off_diagonal_loss(const Tensor<R>& c_norm,
                            const std::vector<uint8_t>* cell_valid = nullptr) {
    if (c_norm.shape().size() != 2 || c_norm.shape()[0] != c_norm.shape()[1])
        op_error("off_diagonal_loss", "cost volume is not square: " + shape_str(c_norm.shape()));
    const int n = c_norm.shape()[0];
    if (cell_valid && static_cast<int>(cell_valid->size()) != n)
        op_error("off_diagonal_loss", "cell validity length mismatch");
    std::vector<R> m(static_cast<size_t>(n) * n, R(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if (cell_valid && (!(*cell_valid)[i] || !(*cell_valid)[j])) continue;
            m[static_cast<size_t>(i) * n + j] = R(1);
        }
    return sum(mul(c_norm, Tensor<R>::from(c_norm.shape(), std::move(m))));
}

// Mean squared error over mask-true pixels and channels. An empty mask yields
// a constant zero loss and sets *warned.
template <class R>
Tensor<R> pixel_loss(const Tensor<R>& eq, const Tensor<R>& hq, const geometry::ValidMask& mask,
                     bool* warned = nullptr) {
    if (eq.shape() != hq.shape() || eq.shape().size() != 3)
        op_error("pixel_loss", "expected equal (C,H,W) shapes, got " + shape_str(eq.shape()) +
                                   " vs " + shape_str(hq.shape()));
    const int C = eq.shape()[0], H = eq.shape()[1], W = eq.shape()[2];
    if (mask.h != H || mask.w != W) op_error("pixel_loss", "mask extents do not match");
    const size_t selected = mask.count();
    if (selected == 0) {
        if (warned) *warned = true;
        return Tensor<R>::scalar(R(0));
    }
    std::vector<R> m(eq.numel(), R(0));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (mask.at(y, x))
                for (int c = 0; c < C; ++c) m[(static_cast<size_t>(c) * H + y) * W + x] = R(1);
    Tensor<R> mask_t = Tensor<R>::from(eq.shape(), std::move(m));
    Tensor<R> diff = mul(sub(eq, hq), mask_t);
    return scale(sum(mul(diff, diff)), R(1) / static_cast<R>(selected * C));
}

template <class R>
Tensor<R> total_loss(const Tensor<R>& l_d, const Tensor<R>& l_p, double lambda_p) {
    return add(l_d, scale(l_p, static_cast<R>(lambda_p)));
}

// --- Stopping rule --------------------------------------------------------------------

// True when the best L_D of the last `window` entries improves on the best of
// everything before them by less than delta (relative).
inline bool plateau_check(const std::vector<double>& l_d, int window, double delta) {
    if (window < 1) op_error("plateau_check", "window must be >= 1");
    const int n = static_cast<int>(l_d.size());
    if (n <= window) return false;
    double best_last = l_d[n - 1], best_prior = l_d[0];
    for (int i = n - window; i < n; ++i) best_last = std::min(best_last, l_d[i]);
    for (int i = 0; i < n - window; ++i) best_prior = std::min(best_prior, l_d[i]);
    return (best_prior - best_last) < delta * (best_prior + 1e-12);
}

inline double lr_at(const AdaptConfig& cfg, int iteration) {
    return cfg.lr0 * std::pow(2.0, -static_cast<double>(iteration / cfg.lr_halve_every));
}

// --- The adaptation loop -----------------------------------------------------------------

namespace detail {

// cell validity: a feature cell counts as inside the warped region when any
// pixel of its stride x stride footprint is mask-true
inline std::vector<uint8_t> cells_touching(const geometry::ValidMask& mask, int grid_h, int grid_w,
                                           int stride) {
    std::vector<uint8_t> valid(static_cast<size_t>(grid_h) * grid_w, 0);
    for (int cy = 0; cy < grid_h; ++cy)
        for (int cx = 0; cx < grid_w; ++cx) {
            bool any = false;
            for (int y = cy * stride; y < std::min((cy + 1) * stride, mask.h) && !any; ++y)
                for (int x = cx * stride; x < std::min((cx + 1) * stride, mask.w) && !any; ++x)
                    any = mask.at(y, x);
            valid[static_cast<size_t>(cy) * grid_w + cx] = any ? 1 : 0;
        }
    return valid;
}

template <class R>
bool all_finite(const Tensor<R>& t) {
    for (size_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(t.data()[i]))) return false;
    return true;
}

}  // namespace detail

// One full test-time adaptation run over a single LQ/HQ pair. The adapter is
// the only mutated state; matcher and restorer weights are hash-verified
// unchanged at exit. Deterministic for fixed seeds.
template <class R>
AdaptResult<R> adapt(const Tensor<R>& lq_image, const Tensor<R>& hq_image,
                     const prior::PriorBackbone<R>& matcher, const restorer::Restorer<R>& rest,
                     adapter::Adapter<R>& psi, const AdaptConfig& cfg) {
    cfg.validate();
    if (lq_image.shape().size() != 3 || hq_image.shape().size() != 3 ||
        lq_image.shape()[0] != hq_image.shape()[0])
        op_error("adapt", "image channel counts differ: " + shape_str(lq_image.shape()) + " vs " +
                              shape_str(hq_image.shape()));

    if (!detail::all_finite(lq_image) || !detail::all_finite(hq_image))
        throw AdaptAbort("adapt: non-finite values in the input pair");

    const int H = hq_image.shape()[1], W = hq_image.shape()[2];
    Tensor<R> lq = (lq_image.shape()[1] == H && lq_image.shape()[2] == W)
                       ? lq_image.detach()
                       : bilinear_resize(lq_image, H, W).detach();
    Tensor<R> hq = hq_image.detach();

    const uint64_t matcher_hash = matcher.params().hash();
    const uint64_t restorer_hash = rest.params().hash();
    const auto psi_names = psi.params().trainable_names();

    AdamWConfig<R> ocfg;
    ocfg.lr = static_cast<R>(cfg.lr0);
    ocfg.beta1 = static_cast<R>(cfg.beta1);
    ocfg.beta2 = static_cast<R>(cfg.beta2);
    ocfg.eps = static_cast<R>(cfg.eps_adam);
    ocfg.weight_decay = static_cast<R>(cfg.weight_decay);
    AdamW<R> optim(ocfg);

    const int s_z = matcher.stride();
    const int s_r = rest.stride();
    Tensor<R> z_hq = matcher.extract(hq, "tgt").detach();  // constant across iterations
    const int gh = z_hq.shape()[1], gw = z_hq.shape()[2];

    AdaptResult<R> result;
    Tensor<R> lq_matcher = lq;  // feedback target
    std::vector<double> ld_history;

    for (int it = 0; it < cfg.t_max; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        optim.set_lr(static_cast<R>(lr_at(cfg, it)));

        // 1-3: priors on the current matcher input, transform from priors
        Tensor<R> z_lq = matcher.extract(lq_matcher, "src").detach();
        geometry::RansacParams rp{cfg.ransac_iterations, cfg.ransac_threshold_px,
                                  mix_seed(cfg.seed, "ransac")};
        auto est = geometry::estimate_transform(z_lq, z_hq, s_z, rp);
        const geometry::Homography t_cur = est.transform;
        result.any_transform_fallback |= est.fallback;

        // 4: warp image and feature map into the HQ frame
        auto wimg = geometry::warp(lq, t_cur, H, W);
        auto wfeat = geometry::warp(z_lq, geometry::to_cell_frame(t_cur, s_z), gh, gw);

        // 5-6: adapt features, restore
        Tensor<R> inj_lq = psi.apply(wfeat.image, H / s_r, W / s_r);
        Tensor<R> inj_hq = psi.apply(z_hq, H / s_r, W / s_r);
        Tensor<R> eq = rest.restore(wimg.image, hq, inj_lq, inj_hq);

        // 7-8: cost volume between the restored and reference priors, losses
        // on the warped region
        Tensor<R> z_eq = matcher.extract(eq, "src");
        auto cv = geometry::cost_volume(z_eq, z_hq);
        Tensor<R> c_norm = minmax_norm(cv.c, static_cast<R>(cfg.eps_norm));
        auto cell_valid = detail::cells_touching(wimg.mask, gh, gw, s_z);
        Tensor<R> l_d = off_diagonal_loss(c_norm, &cell_valid);
        Tensor<R> l_p = pixel_loss(eq, hq, wimg.mask);
        Tensor<R> l_total = total_loss(l_d, l_p, cfg.lambda_p);

        const double ld_v = static_cast<double>(l_d.item());
        const double lp_v = static_cast<double>(l_p.item());
        const double lt_v = static_cast<double>(l_total.item());
        if (!std::isfinite(ld_v) || !std::isfinite(lp_v) || !std::isfinite(lt_v)) {
            std::ostringstream os;
            os << "adapt: non-finite loss at iteration " << it << " (L_D=" << ld_v
               << ", L_P=" << lp_v << ", lr=" << lr_at(cfg, it) << ", transform=[";
            for (int k = 0; k < 9; ++k) os << (k ? "," : "") << t_cur.m[k];
            os << "], fallback=" << est.fallback << ")";
            throw AdaptAbort(os.str());
        }

        // 9: update psi only
        auto grads = backward(l_total);
        for (const auto& [name, g] : grads)
            if (!psi.params().has(name))
                throw std::runtime_error("adapt: gradient leaked to non-adapter parameter '" +
                                         name + "'");
        optim.step(psi.params(), grads);
        for (const auto& name : psi.params().names())
            if (!detail::all_finite(psi.params().get(name)))
                throw AdaptAbort("adapt: adapter parameter '" + name +
                                 "' became non-finite at iteration " + std::to_string(it));

        IterRecord rec;
        rec.l_d = ld_v;
        rec.l_p = lp_v;
        rec.l_total = lt_v;
        rec.lr = lr_at(cfg, it);
        rec.transform_fallback = est.fallback;
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.trace.push_back(rec);
        ld_history.push_back(ld_v);

        result.transform = t_cur;
        result.restored = eq.detach();
        result.mask = wimg.mask;
        result.iterations = it + 1;

        if (!detail::all_finite(result.restored))
            throw AdaptAbort("adapt: non-finite restored image at iteration " +
                             std::to_string(it));

        if (plateau_check(ld_history, cfg.plateau_window, cfg.plateau_delta)) {
            result.stop_reason = "plateau";
            break;
        }

        // feedback: the restored image, unwarped into the LQ frame, replaces
        // the matcher's LQ input for the next iteration; the restorer keeps
        // consuming the warped original
        if (cfg.feedback && it + 1 < cfg.t_max) {
            auto back = geometry::warp(result.restored, t_cur.inverse(), H, W);
            std::vector<R> merged = lq.values();
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (back.mask.at(y, x))
                        for (int c = 0; c < 3; ++c)
                            merged[(static_cast<size_t>(c) * H + y) * W + x] =
                                back.image.data()[(static_cast<size_t>(c) * H + y) * W + x];
            lq_matcher = Tensor<R>::from(lq.shape(), std::move(merged));
        }
    }
    if (result.stop_reason.empty()) result.stop_reason = "cap";

    if (matcher.params().hash() != matcher_hash)
        throw std::runtime_error("adapt: matcher weights changed during adaptation");
    if (rest.params().hash() != restorer_hash)
        throw std::runtime_error("adapt: restorer weights changed during adaptation");
    if (psi.params().trainable_names() != psi_names)
        throw std::runtime_error("adapt: adapter parameter set changed during adaptation");
    return result;
}

}  // namespace matres::tta
