#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "matres/geometry.hpp"
#include "matres/tensor.hpp"

namespace matres::eval {

// --- PSNR -----------------------------------------------------------------------

// 10 log10(1 / MSE) with peak 1, over mask-true pixels (all channels).
// Identical inputs cap at 99 dB so reports stay finite.
template <class R>
double psnr(const Tensor<R>& a, const Tensor<R>& b, const geometry::ValidMask* mask = nullptr) {
    if (a.shape() != b.shape() || a.shape().size() != 3)
        op_error("psnr", "expected equal (C,H,W) shapes, got " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    if (mask && (mask->h != H || mask->w != W))
        op_error("psnr", "mask extents do not match the images");
    double acc = 0;
    size_t n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (mask && !mask->at(y, x)) continue;
            for (int c = 0; c < C; ++c) {
                const size_t i = (static_cast<size_t>(c) * H + y) * W + x;
                const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
                acc += d * d;
                ++n;
            }
        }
    if (n == 0) op_error("psnr", "mask selects no pixels");
    const double mse = acc / static_cast<double>(n);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// --- SSIM -----------------------------------------------------------------------

// Windowed SSIM: 8x8 windows, stride 4, C1 = 0.01^2, C2 = 0.03^2, luminance
// range 1. Windows that intersect the mask contribute with their full pixel
// content; channels are averaged. Images smaller than the window fall back to
// one global window.
template <class R>
double ssim(const Tensor<R>& a, const Tensor<R>& b, const geometry::ValidMask* mask = nullptr) {
    if (a.shape() != b.shape() || a.shape().size() != 3)
        op_error("ssim", "expected equal (C,H,W) shapes, got " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    if (mask && (mask->h != H || mask->w != W)) op_error("ssim", "mask extents do not match");

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int win_h = std::min(8, H), win_w = std::min(8, W);
    const int stride = 4;

    auto window_ssim = [&](int c, int y0, int x0) {
        double ma = 0, mb = 0;
        const int n = win_h * win_w;
        for (int y = y0; y < y0 + win_h; ++y)
            for (int x = x0; x < x0 + win_w; ++x) {
                ma += a.data()[(static_cast<size_t>(c) * H + y) * W + x];
                mb += b.data()[(static_cast<size_t>(c) * H + y) * W + x];
            }
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (int y = y0; y < y0 + win_h; ++y)
            for (int x = x0; x < x0 + win_w; ++x) {
                const double da = a.data()[(static_cast<size_t>(c) * H + y) * W + x] - ma;
                const double db = b.data()[(static_cast<size_t>(c) * H + y) * W + x] - mb;
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
        va /= n;
        vb /= n;
        cov /= n;
        return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    };

    double acc = 0;
    size_t windows = 0;
    for (int y0 = 0; y0 + win_h <= H; y0 += stride)
        for (int x0 = 0; x0 + win_w <= W; x0 += stride) {
            if (mask) {
                bool touches = false;
                for (int y = y0; y < y0 + win_h && !touches; ++y)
                    for (int x = x0; x < x0 + win_w && !touches; ++x) touches = mask->at(y, x);
                if (!touches) continue;
            }
            for (int c = 0; c < C; ++c) acc += window_ssim(c, y0, x0);
            windows += C;
        }
    if (windows == 0) op_error("ssim", "mask selects no windows");
    return acc / static_cast<double>(windows);
}

// --- Control-point alignment errors ------------------------------------------------

struct AlignmentErrors {
    std::vector<double> displacements;  // px, one per control point
    double mee = 0.0;                   // median
    double mae = 0.0;                   // maximum

    static AlignmentErrors from_displacements(std::vector<double> d) {
        AlignmentErrors e;
        e.displacements = std::move(d);
        std::vector<double> sorted = e.displacements;
        std::sort(sorted.begin(), sorted.end());
        const size_t n = sorted.size();
        e.mee = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        e.mae = sorted.back();
        return e;
    }
};

// Euclidean displacement between the two transforms at an n x n control grid
// spanning [0, w-1] x [0, h-1]. Both matrices are normalized, so a common
// homogeneous scale cancels by construction.
inline AlignmentErrors corner_errors(const geometry::Homography& t_est,
                                     const geometry::Homography& t_gt, int width, int height,
                                     int n = 5) {
    if (n < 2) op_error("corner_errors", "control grid needs n >= 2");
    if (std::fabs(t_est.det()) <= 1e-12 || std::fabs(t_gt.det()) <= 1e-12)
        op_error("corner_errors", "singular transform");
    std::vector<double> d;
    d.reserve(static_cast<size_t>(n) * n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const double x = ix * (width - 1.0) / (n - 1.0);
            const double y = iy * (height - 1.0) / (n - 1.0);
            const auto [xa, ya] = t_est.apply(x, y);
            const auto [xb, yb] = t_gt.apply(x, y);
            d.push_back(std::hypot(xa - xb, ya - yb));
        }
    return AlignmentErrors::from_displacements(std::move(d));
}

inline bool acceptable(const AlignmentErrors& e) { return e.mae < 50.0 && e.mee < 20.0; }

// Mean acceptance fraction over the integer threshold sweep 1..t_max px,
// scaled to [0, 100]. Corpus-level acceptance-curve construction.
inline double mauc(const std::vector<AlignmentErrors>& errors, int t_max = 25) {
    if (errors.empty()) op_error("mauc", "no alignment errors given");
    if (t_max < 1) op_error("mauc", "threshold sweep must reach at least 1 px");
    double acc = 0;
    for (int t = 1; t <= t_max; ++t) {
        size_t ok = 0;
        for (const auto& e : errors) ok += e.mae <= static_cast<double>(t);
        acc += static_cast<double>(ok) / static_cast<double>(errors.size());
    }
    return 100.0 * acc / static_cast<double>(t_max);
}

}  // namespace matres::eval
