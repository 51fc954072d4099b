#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "matres/rng.hpp"
#include "matres/tensor.hpp"

namespace matres::geometry {

// Planar homography mapping LQ pixel coordinates to HQ pixel coordinates.
// Row-major 3x3, bottom-right entry kept at 1. Pixel centers sit on integer
// coordinates, origin top-left, x = column.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return {}; }

    static Homography from_raw(const std::array<double, 9>& raw) {
        Homography h;
        const double s = raw[8];
        if (std::fabs(s) < 1e-15) op_error("homography", "bottom-right entry is zero");
        for (int i = 0; i < 9; ++i) h.m[i] = raw[i] / s;
        if (std::fabs(h.det()) <= 1e-12) op_error("homography", "matrix is singular");
        return h;
    }

    static Homography translation(double tx, double ty) {
        Homography h;
        h.m[2] = tx;
        h.m[5] = ty;
        return h;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    Homography inverse() const {
        const double d = det();
        if (std::fabs(d) <= 1e-12) op_error("homography", "cannot invert singular transform");
        std::array<double, 9> a;
        a[0] = (m[4] * m[8] - m[5] * m[7]) / d;
        a[1] = (m[2] * m[7] - m[1] * m[8]) / d;
        a[2] = (m[1] * m[5] - m[2] * m[4]) / d;
        a[3] = (m[5] * m[6] - m[3] * m[8]) / d;
        a[4] = (m[0] * m[8] - m[2] * m[6]) / d;
        a[5] = (m[2] * m[3] - m[0] * m[5]) / d;
        a[6] = (m[3] * m[7] - m[4] * m[6]) / d;
        a[7] = (m[1] * m[6] - m[0] * m[7]) / d;
        a[8] = (m[0] * m[4] - m[1] * m[3]) / d;
        return from_raw(a);
    }

    // this ∘ rhs: apply rhs first.
    Homography compose(const Homography& rhs) const {
        std::array<double, 9> a{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * rhs.m[k * 3 + j];
                a[i * 3 + j] = s;
            }
        return from_raw(a);
    }

    std::pair<double, double> apply(double x, double y) const {
        const double X = m[0] * x + m[1] * y + m[2];
        const double Y = m[3] * x + m[4] * y + m[5];
        const double W = m[6] * x + m[7] * y + m[8];
        return {X / W, Y / W};
    }
};

// Returns the same transform expressed on a feature grid of the given stride,
// with cell centers at s*c + (s-1)/2 pixels.
inline Homography to_cell_frame(const Homography& t_pixels, int stride) {
    const double s = stride;
    const double o = (stride - 1) / 2.0;
    Homography cell2pix;
    cell2pix.m = {s, 0, o, 0, s, o, 0, 0, 1};
    return cell2pix.inverse().compose(t_pixels).compose(cell2pix);
}

struct ValidMask {
    int h = 0, w = 0;
    std::vector<uint8_t> data;

    bool at(int y, int x) const { return data[static_cast<size_t>(y) * w + x] != 0; }
    size_t count() const {
        size_t n = 0;
        for (uint8_t v : data) n += v != 0;
        return n;
    }
};

struct Match {
    double src_x, src_y;
    double tgt_x, tgt_y;
    double score;
};
using MatchSet = std::vector<Match>;

// --- Cost volume -------------------------------------------------------------

template <class R>
struct CostVolumeResult {
    Tensor<R> c;  // (HW) x (HW): row = source cell, column = target cell
    std::vector<int> degenerate_src, degenerate_tgt;
};

// Cosine similarities between all cell pairs of two equally-shaped feature
// maps: features flattened to C x (HW), L2-normalized per cell, C = z_a^T z_b.
template <class R>
CostVolumeResult<R> cost_volume(const Tensor<R>& za, const Tensor<R>& zb) {
    if (za.shape() != zb.shape() || za.shape().size() != 3)
        op_error("cost_volume", "expected equal (C,H,W) shapes, got " + shape_str(za.shape()) +
                                    " vs " + shape_str(zb.shape()));
    const int C = za.shape()[0];
    const int N = za.shape()[1] * za.shape()[2];
    CostVolumeResult<R> out;
    Tensor<R> fa = l2_normalize(reshape(za, {C, N}), &out.degenerate_src);
    Tensor<R> fb = l2_normalize(reshape(zb, {C, N}), &out.degenerate_tgt);
    out.c = matmul(fa, fb, /*trans_a=*/true, /*trans_b=*/false);
    return out;
}

// --- Mutual nearest neighbours -------------------------------------------------

// Pairs (i, j) that are each other's argmax, reported at cell-center pixel
// coordinates of the given stride.
inline MatchSet mutual_matches(const std::vector<double>& c, int n, int grid_h, int grid_w,
                               int stride) {
    if (static_cast<size_t>(n) * n != c.size())
        op_error("mutual_matches", "cost volume is not square");
    if (grid_h * grid_w != n)
        op_error("mutual_matches", "grid extents do not match cost volume");
    std::vector<int> best_col(n, 0), best_row(n, 0);
    for (int i = 0; i < n; ++i) {
        const double* row = c.data() + static_cast<size_t>(i) * n;
        int bj = 0;
        for (int j = 1; j < n; ++j)
            if (row[j] > row[bj]) bj = j;
        best_col[i] = bj;
    }
    for (int j = 0; j < n; ++j) {
        int bi = 0;
        for (int i = 1; i < n; ++i)
            if (c[static_cast<size_t>(i) * n + j] > c[static_cast<size_t>(bi) * n + j]) bi = i;
        best_row[j] = bi;
    }
    const double off = (stride - 1) / 2.0;
    MatchSet out;
    for (int i = 0; i < n; ++i) {
        const int j = best_col[i];
        if (best_row[j] != i) continue;
        Match m;
        m.src_x = (i % grid_w) * stride + off;
        m.src_y = (i / grid_w) * stride + off;
        m.tgt_x = (j % grid_w) * stride + off;
        m.tgt_y = (j / grid_w) * stride + off;
        m.score = c[static_cast<size_t>(i) * n + j];
        out.push_back(m);
    }
    return out;
}

template <class R>
MatchSet mutual_matches(const Tensor<R>& c, int grid_h, int grid_w, int stride) {
    std::vector<double> v(c.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(c.data()[i]);
    const int n = c.shape()[0];
    if (c.shape().size() != 2 || c.shape()[1] != n)
        op_error("mutual_matches", "cost volume is not square: " + shape_str(c.shape()));
    return mutual_matches(v, n, grid_h, grid_w, stride);
}

// --- Homography fitting ----------------------------------------------------------

struct RansacParams {
    int iterations = 500;
    double inlier_threshold_px = 2.0;
    uint64_t seed = 0;
};

namespace detail {

inline bool collinear_set(const std::vector<std::pair<double, double>>& pts, double tol = 1e-6) {
    if (pts.size() < 3) return true;
    // rank of the centered point cloud
    double cx = 0, cy = 0;
    for (auto& p : pts) {
        cx += p.first;
        cy += p.second;
    }
    cx /= pts.size();
    cy /= pts.size();
    double sxx = 0, sxy = 0, syy = 0;
    for (auto& p : pts) {
        const double dx = p.first - cx, dy = p.second - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const double tr = sxx + syy;
    const double dt = sxx * syy - sxy * sxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - dt));
    const double lmin = tr / 2.0 - disc;
    return lmin <= tol * std::max(1.0, tr);
}

// Normalized DLT over the given match subset. Returns nothing when the system
// is degenerate.
inline std::optional<Homography> dlt(const MatchSet& matches, const std::vector<int>& idx) {
    const int n = static_cast<int>(idx.size());
    if (n < 4) return std::nullopt;

    auto normalizer = [&](bool src) {
        double cx = 0, cy = 0;
        for (int i : idx) {
            cx += src ? matches[i].src_x : matches[i].tgt_x;
            cy += src ? matches[i].src_y : matches[i].tgt_y;
        }
        cx /= n;
        cy /= n;
        double md = 0;
        for (int i : idx) {
            const double dx = (src ? matches[i].src_x : matches[i].tgt_x) - cx;
            const double dy = (src ? matches[i].src_y : matches[i].tgt_y) - cy;
            md += std::sqrt(dx * dx + dy * dy);
        }
        md /= n;
        const double s = md > 1e-12 ? std::sqrt(2.0) / md : 1.0;
        Homography t;
        t.m = {s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1};
        return t;
    };
    const Homography ts = normalizer(true), tt = normalizer(false);

    Eigen::MatrixXd a(2 * n, 9);
    for (int r = 0; r < n; ++r) {
        const Match& mm = matches[idx[r]];
        const auto [sx, sy] = ts.apply(mm.src_x, mm.src_y);
        const auto [tx, ty] = tt.apply(mm.tgt_x, mm.tgt_y);
        a.row(2 * r) << -sx, -sy, -1, 0, 0, 0, tx * sx, tx * sy, tx;
        a.row(2 * r + 1) << 0, 0, 0, -sx, -sy, -1, ty * sx, ty * sy, ty;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);

    // denormalize: H = Tt^-1 * Hn * Ts, then rescale to bottom-right 1
    auto mul3 = [](const std::array<double, 9>& x, const std::array<double, 9>& y) {
        std::array<double, 9> r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) r[i * 3 + j] += x[i * 3 + k] * y[k * 3 + j];
        return r;
    };
    std::array<double, 9> hn{};
    for (int i = 0; i < 9; ++i) hn[i] = h[i];
    const std::array<double, 9> raw = mul3(mul3(tt.inverse().m, hn), ts.m);
    if (std::fabs(raw[8]) < 1e-12) return std::nullopt;
    Homography result;
    for (int i = 0; i < 9; ++i) result.m[i] = raw[i] / raw[8];
    if (std::fabs(result.det()) <= 1e-12) return std::nullopt;
    return result;
}

inline double transfer_error(const Homography& h, const Match& m) {
    const auto [x, y] = h.apply(m.src_x, m.src_y);
    const double dx = x - m.tgt_x, dy = y - m.tgt_y;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// RANSAC + normalized DLT. Deterministic for a fixed seed. Falls back to a
// least-squares fit over all matches when no consensus of at least 4 exists.
inline Homography fit_homography(const MatchSet& matches, const RansacParams& params) {
    const int n = static_cast<int>(matches.size());
    if (n < 4) op_error("fit_homography", "need at least 4 matches, got " + std::to_string(n));

    {
        std::vector<std::pair<double, double>> src;
        for (const auto& m : matches) src.emplace_back(m.src_x, m.src_y);
        if (detail::collinear_set(src))
            throw std::runtime_error("fit_homography: degenerate input (all source points collinear)");
    }

    Rng rng(params.seed);
    std::vector<int> best_inliers;
    for (int it = 0; it < params.iterations; ++it) {
        // 4 distinct indices
        std::array<int, 4> pick{};
        {
            int got = 0;
            while (got < 4) {
                const int c = static_cast<int>(rng.uniform_int(n));
                bool dup = false;
                for (int k = 0; k < got; ++k) dup |= pick[k] == c;
                if (!dup) pick[got++] = c;
            }
        }
        std::vector<std::pair<double, double>> srcpts, tgtpts;
        for (int k : pick) {
            srcpts.emplace_back(matches[k].src_x, matches[k].src_y);
            tgtpts.emplace_back(matches[k].tgt_x, matches[k].tgt_y);
        }
        if (detail::collinear_set(srcpts, 1e-4) || detail::collinear_set(tgtpts, 1e-4)) continue;

        auto h = detail::dlt(matches, {pick.begin(), pick.end()});
        if (!h) continue;

        std::vector<int> inliers;
        for (int i = 0; i < n; ++i)
            if (detail::transfer_error(*h, matches[i]) < params.inlier_threshold_px)
                inliers.push_back(i);
        if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
    }

    std::vector<int> fit_set;
    if (best_inliers.size() >= 4) {
        fit_set = best_inliers;
    } else {
        fit_set.resize(n);
        for (int i = 0; i < n; ++i) fit_set[i] = i;
    }
    {
        std::vector<std::pair<double, double>> src;
        for (int i : fit_set) src.emplace_back(matches[i].src_x, matches[i].src_y);
        if (detail::collinear_set(src))
            throw std::runtime_error("fit_homography: degenerate consensus (collinear points)");
    }
    auto h = detail::dlt(matches, fit_set);
    if (!h) throw std::runtime_error("fit_homography: degenerate consensus (rank-deficient fit)");
    return *h;
}

// --- Warping --------------------------------------------------------------------

template <class R>
struct WarpResult {
    Tensor<R> image;
    ValidMask mask;
};

// Inverse-mapping bilinear warp of a (C,h,w) array into a target frame. Each
// target pixel samples the source at T^-1 (x, y); uncovered pixels are 0 with
// mask false. Differentiable with respect to source values.
template <class R>
WarpResult<R> warp(const Tensor<R>& src, const Homography& t, int out_h, int out_w) {
    if (src.shape().size() != 3)
        op_error("warp", "expected (C,H,W) source, got " + shape_str(src.shape()));
    const Homography inv = t.inverse();
    const int h = src.shape()[1], w = src.shape()[2];

    WarpResult<R> out;
    out.mask.h = out_h;
    out.mask.w = out_w;
    out.mask.data.assign(static_cast<size_t>(out_h) * out_w, 0);
    std::vector<GatherSample> coords(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double X = inv.m[0] * x + inv.m[1] * y + inv.m[2];
            const double Y = inv.m[3] * x + inv.m[4] * y + inv.m[5];
            const double W = inv.m[6] * x + inv.m[7] * y + inv.m[8];
            GatherSample s;
            if (std::fabs(W) > 1e-12) {
                s.x = X / W;
                s.y = Y / W;
                s.valid = s.x >= 0.0 && s.x <= w - 1 && s.y >= 0.0 && s.y <= h - 1;
            }
            coords[static_cast<size_t>(y) * out_w + x] = s;
            out.mask.data[static_cast<size_t>(y) * out_w + x] = s.valid ? 1 : 0;
        }
    out.image = bilinear_gather(src, coords, out_h, out_w);
    return out;
}

// --- Transform estimation ---------------------------------------------------------

struct EstimateResult {
    Homography transform;
    bool fallback = false;  // identity returned because matching degenerated
    int num_matches = 0;
};

// cost volume -> mutual nearest neighbours -> robust fit.
template <class R>
EstimateResult estimate_transform(const Tensor<R>& z_src, const Tensor<R>& z_tgt, int stride,
                                  const RansacParams& params) {
    auto cv = cost_volume(z_src, z_tgt);
    const int gh = z_src.shape()[1], gw = z_src.shape()[2];
    MatchSet matches = mutual_matches(cv.c, gh, gw, stride);

    EstimateResult res;
    res.num_matches = static_cast<int>(matches.size());
    if (matches.size() < 4) {
        res.transform = Homography::identity();
        res.fallback = true;
        return res;
    }
    try {
        res.transform = fit_homography(matches, params);
    } catch (const std::runtime_error&) {
        res.transform = Homography::identity();
        res.fallback = true;
    }
    return res;
}

}  // namespace matres::geometry
