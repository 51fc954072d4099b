#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <matres/evalkit.hpp>
#include <matres/rng.hpp>
#include <matres/synth.hpp>

#include "oracles.hpp"

using namespace matres;
using namespace matres::eval;
using Td = Tensor<double>;

TEST_CASE("psnr formula and cap") {
    Td a = Td::filled({3, 8, 8}, 0.5);
    Td b = Td::filled({3, 8, 8}, 0.6);  // MSE = 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(a, a) == 99.0);
}

TEST_CASE("psnr against the nested-loop oracle and symmetry") {
    Rng rng(7);
    std::vector<double> va(3 * 36), vb(3 * 36);
    for (auto& v : va) v = rng.uniform();
    for (auto& v : vb) v = rng.uniform();
    Td a = Td::from({3, 6, 6}, va), b = Td::from({3, 6, 6}, vb);
    CHECK(std::fabs(psnr(a, b) - oracle::psnr(va, vb)) < 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("psnr respects the mask and rejects empty masks") {
    Td a = Td::filled({1, 4, 4}, 0.2);
    Td b = a.detach();
    b.data()[0] = 1.0;  // difference only at (0,0)
    geometry::ValidMask m;
    m.h = 4;
    m.w = 4;
    m.data.assign(16, 1);
    m.data[0] = 0;
    CHECK(psnr(a, b, &m) == 99.0);

    geometry::ValidMask empty;
    empty.h = 4;
    empty.w = 4;
    empty.data.assign(16, 0);
    CHECK_THROWS_WITH_AS(psnr(a, b, &empty), doctest::Contains("mask"), std::invalid_argument);
}

TEST_CASE("ssim of an image with itself is exactly 1") {
    Td a = synth::gen_scene<double>(4, synth::SceneKind::mixed, 32);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of constants follows the closed-form single-window value") {
    const double ca = 0.3, cb = 0.55;
    Td a = Td::filled({1, 6, 6}, ca);  // smaller than the window: global fallback
    Td b = Td::filled({1, 6, 6}, cb);
    const double c1 = 1e-4;
    const double expect = (2 * ca * cb + c1) / (ca * ca + cb * cb + c1);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ssim decreases monotonically with noise level") {
    Td clean = synth::gen_scene<double>(11, synth::SceneKind::blobs, 48);
    auto noisy = [&](double sigma) {
        Rng rng(5);
        std::vector<double> v(clean.numel());
        for (size_t i = 0; i < v.size(); ++i)
            v[i] = std::min(1.0, std::max(0.0, clean.data()[i] + sigma * rng.normal()));
        return Td::from(clean.shape(), std::move(v));
    };
    const double s1 = ssim(clean, noisy(0.05));
    const double s2 = ssim(clean, noisy(0.15));
    CHECK(s1 > s2);
    CHECK(s1 < 1.0);
}

TEST_CASE("ssim is symmetric") {
    Td a = synth::gen_scene<double>(21, synth::SceneKind::mixed, 32);
    Td b = synth::gen_scene<double>(22, synth::SceneKind::mixed, 32);
    CHECK(std::fabs(ssim(a, b) - ssim(b, a)) < 1e-9);
}

TEST_CASE("corner errors on exact and translated transforms") {
    auto t = geometry::Homography::from_raw({1.01, 0.02, 3.0, -0.02, 0.99, -1.0, 0, 0, 1});
    auto e = corner_errors(t, t, 64, 64);
    CHECK(e.mee == 0.0);
    CHECK(e.mae == 0.0);

    auto shift = geometry::Homography::translation(3, 4);
    auto e2 = corner_errors(shift, geometry::Homography::identity(), 64, 64);
    CHECK(e2.mee == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(e2.mae == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(e2.displacements.size() == 25);
}

TEST_CASE("corner errors match the per-point scalar oracle") {
    auto ta = geometry::Homography::from_raw({0.97, 0.06, 2.0, -0.05, 1.04, -3.0, 1e-4, -2e-4, 1});
    auto tb = geometry::Homography::from_raw({1.02, -0.03, -1.0, 0.04, 0.96, 2.0, -1e-4, 1e-4, 1});
    auto e = corner_errors(ta, tb, 64, 48, 5);
    size_t k = 0;
    double mx = 0;
    std::vector<double> all;
    for (int iy = 0; iy < 5; ++iy)
        for (int ix = 0; ix < 5; ++ix, ++k) {
            const double x = ix * 63.0 / 4.0, y = iy * 47.0 / 4.0;
            auto [xa, ya] = oracle::apply_h(ta.m.data(), x, y);
            auto [xb, yb] = oracle::apply_h(tb.m.data(), x, y);
            const double d = std::hypot(xa - xb, ya - yb);
            CHECK(std::fabs(e.displacements[k] - d) < 1e-10);
            all.push_back(d);
            mx = std::max(mx, d);
        }
    CHECK(std::fabs(e.mae - mx) < 1e-10);
    std::sort(all.begin(), all.end());
    CHECK(std::fabs(e.mee - all[12]) < 1e-10);
}

TEST_CASE("corner errors are invariant to the homogeneous scale") {
    std::array<double, 9> raw{1.05, 0.01, 2.0, -0.02, 0.98, 1.0, 1e-4, 0, 1.0};
    std::array<double, 9> scaled;
    for (int i = 0; i < 9; ++i) scaled[i] = raw[i] * 3.7;
    auto a = geometry::Homography::from_raw(raw);
    auto b = geometry::Homography::from_raw(scaled);
    auto gt = geometry::Homography::identity();
    auto ea = corner_errors(a, gt, 32, 32);
    auto eb = corner_errors(b, gt, 32, 32);
    CHECK(ea.mae == doctest::Approx(eb.mae).epsilon(1e-12));
    CHECK(ea.mee == doctest::Approx(eb.mee).epsilon(1e-12));
}

TEST_CASE("acceptable classification at the documented boundaries") {
    auto with = [](double mae, double mee) {
        AlignmentErrors e;
        e.mae = mae;
        e.mee = mee;
        return e;
    };
    CHECK(acceptable(with(49.9, 19.9)));
    CHECK_FALSE(acceptable(with(50.0, 19.9)));
    CHECK_FALSE(acceptable(with(49.9, 20.0)));
    CHECK_FALSE(acceptable(with(50.0, 20.0)));
    CHECK(acceptable(with(0.0, 0.0)));
}

TEST_CASE("mauc mixtures and monotonicity") {
    auto with_mae = [](double mae) {
        AlignmentErrors e;
        e.mae = mae;
        return e;
    };
    SUBCASE("all perfect") {
        std::vector<AlignmentErrors> v(4, with_mae(0.0));
        CHECK(mauc(v) == doctest::Approx(100.0));
    }
    SUBCASE("all hopeless") {
        std::vector<AlignmentErrors> v(4, with_mae(1000.0));
        CHECK(mauc(v) == doctest::Approx(0.0));
    }
    SUBCASE("half and half") {
        std::vector<AlignmentErrors> v = {with_mae(0.0), with_mae(0.0), with_mae(1000.0),
                                          with_mae(1000.0)};
        CHECK(mauc(v) == doctest::Approx(50.0));
    }
    SUBCASE("improving one pair never lowers the score") {
        std::vector<AlignmentErrors> v = {with_mae(7.0), with_mae(13.0), with_mae(40.0)};
        const double before = mauc(v);
        v[1].mae = 5.0;
        CHECK(mauc(v) >= before);
    }
    SUBCASE("empty input is rejected") {
        CHECK_THROWS_AS(mauc({}), std::invalid_argument);
    }
}

TEST_CASE("alignment error construction orders mee below mae") {
    auto e = AlignmentErrors::from_displacements({3.0, 1.0, 8.0, 2.0, 5.0});
    CHECK(e.mee == doctest::Approx(3.0));
    CHECK(e.mae == doctest::Approx(8.0));
    CHECK(e.mae >= e.mee);
}
