#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <matres/adapter.hpp>
#include <matres/gradcheck.hpp>

#include <cstring>

using namespace matres;
using namespace matres::adapter;
using Td = Tensor<double>;

TEST_CASE("freshly initialized adapter outputs exact zeros") {
    AdapterConfig cfg;
    auto a = Adapter<double>::init(cfg);
    Rng rng(1);
    Td z = Td::from({16, 8, 8}, rng.normal_vec<double>(16 * 64));
    Td out = a.apply(z, 16, 16);
    CHECK(out.shape() == Shape{16, 16, 16});
    for (size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("parameter count matches the low-rank formula") {
    AdapterConfig cfg;
    cfg.c_in = 16;
    cfg.c_out = 16;
    cfg.rank = 4;
    auto a = Adapter<double>::init(cfg);
    CHECK(a.parameter_count() == 16 * 4 + 4 * 16);
    CHECK(a.params().trainable_names().size() == 2);
}

TEST_CASE("same seed gives identical down-projection weights") {
    AdapterConfig cfg;
    cfg.seed = 5;
    auto a = Adapter<double>::init(cfg);
    auto b = Adapter<double>::init(cfg);
    auto ta = a.params().get("psi.down"), tb = b.params().get("psi.down");
    CHECK(std::memcmp(ta.data(), tb.data(), ta.numel() * sizeof(double)) == 0);
    cfg.seed = 6;
    auto c = Adapter<double>::init(cfg);
    CHECK(std::memcmp(ta.data(), c.params().get("psi.down").data(),
                      ta.numel() * sizeof(double)) != 0);
}

TEST_CASE("one optimizer step breaks the zero output") {
    AdapterConfig cfg;
    cfg.c_in = 8;
    cfg.c_out = 8;
    auto a = Adapter<double>::init(cfg);
    Rng rng(2);
    Td z = Td::from({8, 4, 4}, rng.normal_vec<double>(8 * 16));
    Td w = Td::from({8, 4, 4}, Rng(3).normal_vec<double>(8 * 16));

    Td loss = sum(mul(a.apply(z, 4, 4), w));
    auto grads = backward(loss);
    REQUIRE(grads.count("psi.up") == 1);  // nonzero gradient reaches the zero layer
    bool any = false;
    for (double g : grads["psi.up"]) any |= g != 0.0;
    CHECK(any);

    AdamW<double> opt;
    opt.step(a.params(), grads);
    Td out = a.apply(z, 4, 4);
    bool nonzero = false;
    for (size_t i = 0; i < out.numel(); ++i) nonzero |= out.data()[i] != 0.0;
    CHECK(nonzero);
}

TEST_CASE("adapter gradients match finite differences") {
    AdapterConfig cfg;
    cfg.c_in = 6;
    cfg.c_out = 5;
    cfg.rank = 3;
    auto a = Adapter<double>::init(cfg);
    Rng rng(11);
    Td z = Td::from({6, 4, 4}, rng.normal_vec<double>(96));
    Td w = Td::from({5, 8, 8}, Rng(12).normal_vec<double>(5 * 64));

    // check both projections; start from a nonzero up so its gradient is generic
    Td up = a.params().get("psi.up");
    Rng urng(13);
    for (auto& v : up.values()) v = urng.normal(0.0, 0.1);

    Td down_probe = Td::param("in0", a.params().get("psi.down").shape(),
                              a.params().get("psi.down").values(), true);
    Td up_probe = Td::param("in1", up.shape(), up.values(), true);
    auto res = gradcheck::check_scalar_fn("adapter", {down_probe, up_probe},
                                          [&](const std::vector<Td>& in) {
                                              Td flat = reshape(bilinear_resize(z, 8, 8), {6, 64});
                                              Td proj = matmul(in[1], matmul(in[0], flat));
                                              return sum(mul(reshape(proj, {5, 8, 8}), w));
                                          });
    INFO("max_rel_err=" << res.max_rel_err);
    CHECK(res.pass);
}

TEST_CASE("adapter validation") {
    AdapterConfig cfg;
    cfg.rank = 0;
    CHECK_THROWS_AS(Adapter<double>::init(cfg), std::invalid_argument);

    auto a = Adapter<double>::init({});
    CHECK_THROWS_WITH_AS(a.apply(Td::zeros({4, 4, 4}), 8, 8), doctest::Contains("expected"),
                         std::invalid_argument);
}

TEST_CASE("resampler bridges mismatched strides") {
    AdapterConfig cfg;
    cfg.c_in = 4;
    cfg.c_out = 6;
    cfg.rank = 2;
    auto a = Adapter<double>::init(cfg);
    Rng rng(8);
    Td z = Td::from({4, 4, 4}, rng.normal_vec<double>(64));
    CHECK(a.apply(z, 16, 16).shape() == Shape{6, 16, 16});
    CHECK(a.apply(z, 4, 4).shape() == Shape{6, 4, 4});
    CHECK(a.apply(z, 3, 5).shape() == Shape{6, 3, 5});
}
