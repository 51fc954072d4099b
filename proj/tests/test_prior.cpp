#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <matres/prior.hpp>
#include <matres/rng.hpp>

#include <cstring>

#include "oracles.hpp"

using namespace matres;
using namespace matres::prior;
using Td = Tensor<double>;

namespace {

// busy deterministic texture with content at several scales
Td busy_texture(int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(3) * h * w, 0.0);
    for (int c = 0; c < 3; ++c) {
        double fx[6], fy[6], ph[6], amp[6];
        for (int k = 0; k < 6; ++k) {
            fx[k] = rng.uniform(0.1, 1.3);
            fy[k] = rng.uniform(0.1, 1.3);
            ph[k] = rng.uniform(0.0, 6.28);
            amp[k] = rng.uniform(0.04, 0.16);
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.5;
                for (int k = 0; k < 6; ++k) s += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
                v[(static_cast<size_t>(c) * h + y) * w + x] = std::min(1.0, std::max(0.0, s));
            }
    }
    return Td::from({3, h, w}, std::move(v));
}

// non-periodic: box-blurred white noise at two scales; no twin neighbourhoods
Td noise_texture(int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> base(static_cast<size_t>(3) * h * w);
    for (auto& v : base) v = rng.uniform();
    auto blur = [&](const std::vector<double>& src, int rad) {
        std::vector<double> out(src.size());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double s = 0;
                    int cnt = 0;
                    for (int dy = -rad; dy <= rad; ++dy)
                        for (int dx = -rad; dx <= rad; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            s += src[(static_cast<size_t>(c) * h + yy) * w + xx];
                            ++cnt;
                        }
                    out[(static_cast<size_t>(c) * h + y) * w + x] = s / cnt;
                }
        return out;
    };
    auto b1 = blur(base, 2), b2 = blur(base, 5);
    std::vector<double> v(base.size());
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = std::min(1.0, std::max(0.0, 0.5 + 1.6 * (b1[i] - 0.5) + 1.2 * (b2[i] - 0.5)));
    return Td::from({3, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("schedule: product formula on a constant beta sequence") {
    auto s = build_schedule({0.1, 0.1, 0.1});
    REQUIRE(s.alpha_bars.size() == 3);
    CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(s.alpha_bars[1] == doctest::Approx(0.81).epsilon(1e-14));
    CHECK(s.alpha_bars[2] == doctest::Approx(0.729).epsilon(1e-14));
    CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("schedule: preconditions") {
    CHECK_THROWS_AS(build_schedule({}), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule({0.1, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule({-0.1}), std::invalid_argument);
}

TEST_CASE("schedule: linear ramp matches the cumulative-product oracle") {
    auto s = NoiseSchedule::linear(1e-4, 0.02, 50);
    auto ref = oracle::cumprod_one_minus(s.betas);
    REQUIRE(s.alpha_bars.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(std::fabs(s.alpha_bars[i] - ref[i]) < 1e-12);
    for (int i = 1; i < 50; ++i) CHECK(s.alpha_bars[i] < s.alpha_bars[i - 1]);
    for (double a : s.alpha_bars) {
        CHECK(a > 0.0);
        CHECK(a < 1.0);
    }
}

TEST_CASE("forward diffusion closed form") {
    auto s = build_schedule({0.19});  // abar_1 = 0.81
    SUBCASE("zero noise scales by sqrt(abar)") {
        Td z0 = Td::filled({2, 3, 3}, 1.0);
        Td eps = Td::zeros({2, 3, 3});
        Td zt = forward_diffuse(z0, 1, s, eps);
        for (size_t i = 0; i < zt.numel(); ++i) CHECK(zt.data()[i] == doctest::Approx(0.9).epsilon(1e-14));
    }
    SUBCASE("t = 0 is the identity") {
        Rng rng(4);
        Td z0 = Td::from({1, 4, 4}, rng.normal_vec<double>(16));
        Td eps = Td::from({1, 4, 4}, rng.normal_vec<double>(16));
        Td zt = forward_diffuse(z0, 0, s, eps);
        for (size_t i = 0; i < zt.numel(); ++i) CHECK(zt.data()[i] == z0.data()[i]);
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_WITH_AS(forward_diffuse(Td::zeros({1, 2, 2}), 1, s, Td::zeros({1, 2, 3})),
                             doctest::Contains("forward_diffuse"), std::invalid_argument);
    }
}

TEST_CASE("forward diffusion Monte-Carlo statistics") {
    auto s = build_schedule({0.19});  // abar = 0.81
    const double z0v = 0.7;
    const int n = 10000;
    Rng rng(2026);
    Td z0 = Td::filled({1, 100, 100}, z0v);
    Td eps = Td::from({1, 100, 100}, rng.normal_vec<double>(n));
    Td zt = forward_diffuse(z0, 1, s, eps);

    double mean = 0;
    for (size_t i = 0; i < zt.numel(); ++i) mean += zt.data()[i];
    mean /= n;
    double var = 0;
    for (size_t i = 0; i < zt.numel(); ++i) var += (zt.data()[i] - mean) * (zt.data()[i] - mean);
    var /= (n - 1);

    const double expect_mean = std::sqrt(0.81) * z0v;
    const double expect_var = 1.0 - 0.81;
    const double sigma_mean = std::sqrt(expect_var / n);
    CHECK(std::fabs(mean - expect_mean) < 3.0 * sigma_mean);
    CHECK(std::fabs(var - expect_var) / expect_var < 0.05);
}

TEST_CASE("reverse step algebra") {
    auto s = NoiseSchedule::linear(1e-4, 0.02, 50);
    const int t = 25;
    Rng rng(88);
    Td z0 = Td::from({2, 4, 4}, rng.normal_vec<double>(32));
    Td eps = Td::from({2, 4, 4}, rng.normal_vec<double>(32));
    Td zt = forward_diffuse(z0, t, s, eps);

    SUBCASE("mock denoiser returning the true noise matches the scalar oracle") {
        Td zprev = reverse_step(zt, t, s, eps, 0.0);
        const double a = s.alpha(t), abar = s.alpha_bar(t);
        for (size_t i = 0; i < zprev.numel(); ++i) {
            const double ztv = std::sqrt(abar) * z0.data()[i] + std::sqrt(1.0 - abar) * eps.data()[i];
            const double ref = (ztv - (1.0 - a) / std::sqrt(1.0 - abar) * eps.data()[i]) / std::sqrt(a);
            CHECK(std::fabs(zprev.data()[i] - ref) < 1e-10);
        }
    }
    SUBCASE("zero prediction divides by sqrt(alpha)") {
        Td zero = Td::zeros({2, 4, 4});
        Td zprev = reverse_step(zt, t, s, zero, 0.0);
        const double a = s.alpha(t);
        for (size_t i = 0; i < zprev.numel(); ++i)
            CHECK(zprev.data()[i] == doctest::Approx(zt.data()[i] / std::sqrt(a)).epsilon(1e-12));
    }
    SUBCASE("alpha -> 1 limit is a no-op") {
        auto tiny = build_schedule({1e-16});
        Td noise = Td::from({2, 4, 4}, Rng(3).normal_vec<double>(32));
        Td zp = reverse_step(zt, 1, tiny, noise, 0.0);
        for (size_t i = 0; i < zp.numel(); ++i) CHECK(std::fabs(zp.data()[i] - zt.data()[i]) < 1e-6);
    }
    SUBCASE("t = 0 is rejected") {
        CHECK_THROWS_AS(reverse_step(zt, 0, s, eps, 0.0), std::invalid_argument);
    }
}

TEST_CASE("forward then reverse with the true noise follows the scalar oracle") {
    auto s = NoiseSchedule::linear(1e-3, 0.05, 20);
    Rng rng(5150);
    for (int t : {1, 7, 20}) {
        Td z0 = Td::from({1, 3, 3}, rng.normal_vec<double>(9));
        Td eps = Td::from({1, 3, 3}, rng.normal_vec<double>(9));
        Td zp = reverse_step(forward_diffuse(z0, t, s, eps), t, s, eps, 0.0);
        const double a = s.alpha(t), abar = s.alpha_bar(t);
        for (size_t i = 0; i < zp.numel(); ++i) {
            const double ztv = std::sqrt(abar) * z0.data()[i] + std::sqrt(1 - abar) * eps.data()[i];
            const double ref = (ztv - (1 - a) / std::sqrt(1 - abar) * eps.data()[i]) / std::sqrt(a);
            CHECK(std::fabs(zp.data()[i] - ref) < 1e-8);
        }
    }
}

TEST_CASE("autoregressive descriptor") {
    SUBCASE("mean of constant levels") {
        std::vector<Td> pyr = {Td::filled({4, 6, 6}, 2.0), Td::filled({4, 3, 3}, 4.0)};
        Td z = extract_ar_prior(pyr);
        REQUIRE(z.shape() == Shape{4});
        for (int c = 0; c < 4; ++c) CHECK(z.data()[c] == doctest::Approx(3.0).epsilon(1e-14));
    }
    SUBCASE("single level reduces to global average pooling") {
        Rng rng(9);
        Td f = Td::from({2, 4, 4}, rng.normal_vec<double>(32));
        Td z = extract_ar_prior(std::vector<Td>{f});
        for (int c = 0; c < 2; ++c) {
            double s = 0;
            for (int i = 0; i < 16; ++i) s += f.data()[c * 16 + i];
            CHECK(z.data()[c] == doctest::Approx(s / 16.0).epsilon(1e-12));
        }
    }
    SUBCASE("random pyramid against a nested-loop oracle") {
        Rng rng(10);
        std::vector<Td> pyr = {Td::from({3, 8, 8}, rng.normal_vec<double>(192)),
                               Td::from({3, 4, 4}, rng.normal_vec<double>(48)),
                               Td::from({3, 2, 2}, rng.normal_vec<double>(12))};
        Td z = extract_ar_prior(pyr);
        for (int c = 0; c < 3; ++c) {
            double acc = 0;
            for (const auto& f : pyr) {
                const int hw = f.shape()[1] * f.shape()[2];
                double s = 0;
                for (int i = 0; i < hw; ++i) s += f.data()[c * hw + i];
                acc += s / hw;
            }
            CHECK(std::fabs(z.data()[c] - acc / 3.0) < 1e-12);
        }
    }
    SUBCASE("channel mismatch is rejected") {
        std::vector<Td> pyr = {Td::zeros({3, 4, 4}), Td::zeros({2, 2, 2})};
        CHECK_THROWS_WITH_AS(extract_ar_prior(pyr), doctest::Contains("channel"),
                             std::invalid_argument);
    }
}

TEST_CASE("patch tokens") {
    SUBCASE("32x32 with P=8 yields 16 tokens") {
        Td img = busy_texture(32, 32, 1);
        Td proj = Td::from({5, 3 * 64}, Rng(2).normal_vec<double>(5 * 192));
        Td z = extract_patch_tokens(img, 8, proj);
        CHECK(z.shape() == Shape{5, 4, 4});
    }
    SUBCASE("P equal to the full frame yields a single token") {
        Td img = busy_texture(8, 8, 3);
        Td proj = Td::from({4, 3 * 64}, Rng(4).normal_vec<double>(4 * 192));
        Td z = extract_patch_tokens(img, 8, proj);
        CHECK(z.shape() == Shape{4, 1, 1});
    }
    SUBCASE("identity projection returns raw flattened patches") {
        const int P = 2, D = 3 * P * P;
        Td img = busy_texture(4, 4, 5);
        std::vector<double> eye(static_cast<size_t>(D) * D, 0.0);
        for (int i = 0; i < D; ++i) eye[static_cast<size_t>(i) * D + i] = 1.0;
        Td z = extract_patch_tokens(img, P, Td::from({D, D}, eye));
        REQUIRE(z.shape() == Shape{D, 2, 2});
        // token (0,0), feature row (c*P+dy)*P+dx must equal pixel (dy,dx) of channel c
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < P; ++dy)
                for (int dx = 0; dx < P; ++dx) {
                    const int row = (c * P + dy) * P + dx;
                    CHECK(z.data()[row * 4 + 0] == img.data()[(c * 4 + dy) * 4 + dx]);
                }
    }
    SUBCASE("non-divisible extents are rejected") {
        Td img = busy_texture(6, 6, 7);
        Td proj = Td::from({2, 3 * 16}, Rng(8).normal_vec<double>(96));
        CHECK_THROWS_WITH_AS(extract_patch_tokens(img, 4, proj), doctest::Contains("divide"),
                             std::invalid_argument);
    }
}

TEST_CASE("extract_prior determinism and shape contract per kind") {
    Td img = busy_texture(30, 30, 42);  // non-divisible extents exercise padding
    for (auto kind :
         {BackboneKind::diffusion, BackboneKind::autoregressive, BackboneKind::patch_token}) {
        BackboneConfig cfg;
        cfg.kind = kind;
        cfg.channels = 8;
        cfg.seed = 7;
        auto bb = PriorBackbone<double>::seeded(cfg);

        Td z1 = bb.extract(img, "src");
        Td z2 = bb.extract(img, "src");
        REQUIRE(z1.shape() == z2.shape());
        CHECK(std::memcmp(z1.data(), z2.data(), z1.numel() * sizeof(double)) == 0);

        const int s = bb.stride();
        CHECK(z1.shape()[1] == (30 + s - 1) / s);
        CHECK(z1.shape()[2] == (30 + s - 1) / s);
        for (size_t i = 0; i < z1.numel(); ++i) CHECK(std::isfinite(z1.data()[i]));

        // no hidden state: interleaving another image does not change the result
        Td other = busy_texture(30, 30, 43);
        (void)bb.extract(other, "tgt");
        Td z3 = bb.extract(img, "src");
        CHECK(std::memcmp(z1.data(), z3.data(), z1.numel() * sizeof(double)) == 0);

        // every backbone weight is frozen
        for (const auto& name : bb.params().names()) CHECK_FALSE(bb.params().trainable(name));
    }
}

TEST_CASE("translated textures recover the planted shift by nearest neighbour") {
    // two 64x64 crops of one 88x88 texture, offset by (8, 4) px = (2, 1) cells
    Td tex = noise_texture(88, 88, 2025);
    auto crop = [&](int oy, int ox) {
        std::vector<double> v(static_cast<size_t>(3) * 64 * 64);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    v[(static_cast<size_t>(c) * 64 + y) * 64 + x] =
                        tex.data()[(static_cast<size_t>(c) * 88 + y + oy) * 88 + x + ox];
        return Td::from({3, 64, 64}, std::move(v));
    };
    Td a = crop(0, 0), b = crop(4, 8);  // A cell (cy,cx) -> B cell (cy-1, cx-2)

    for (auto kind :
         {BackboneKind::diffusion, BackboneKind::autoregressive, BackboneKind::patch_token}) {
        CAPTURE(to_string(kind));
        BackboneConfig cfg;
        cfg.kind = kind;
        cfg.seed = 11;
        auto bb = PriorBackbone<double>::seeded(cfg);
        Td za = bb.extract(a, "src");
        Td zb = bb.extract(b, "tgt");

        const int g = za.shape()[1];
        const int n = g * g;
        std::vector<double> va(za.values().begin(), za.values().end());
        std::vector<double> vb(zb.values().begin(), zb.values().end());
        auto cos = oracle::cosine_matrix(va, vb, za.shape()[0], n);

        int total = 0, good = 0;
        for (int cy = 1; cy < g; ++cy)
            for (int cx = 2; cx < g; ++cx) {
                const int i = cy * g + cx;
                int bj = 0;
                for (int j = 1; j < n; ++j)
                    if (cos[static_cast<size_t>(i) * n + j] > cos[static_cast<size_t>(i) * n + bj])
                        bj = j;
                const int ty = bj / g, tx = bj % g;
                const double dy = ty - (cy - 1), dx = tx - (cx - 2);
                ++total;
                if (std::sqrt(dy * dy + dx * dx) <= 1.0) ++good;
            }
        const double rate = static_cast<double>(good) / total;
        CAPTURE(rate);
        CHECK(rate >= 0.8);
    }
}
