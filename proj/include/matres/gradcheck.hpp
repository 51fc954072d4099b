#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "matres/optim.hpp"
#include "matres/rng.hpp"
#include "matres/tensor.hpp"

// Central finite-difference validation of analytic gradients. Runs in double;
// at float precision the step/tolerance pairing is meaningless.
namespace matres::gradcheck {

struct CaseResult {
    std::string op;
    double max_rel_err = 0.0;
    size_t checked = 0;
    bool pass = false;
    uint64_t seed = 0;
};

using BuildFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// `build` must be pure: same inputs, same scalar. Inputs are trainable leaves.
inline CaseResult check_scalar_fn(const std::string& name, std::vector<Tensor<double>> inputs,
                                  const BuildFn& build, double h = 1e-5, double tol = 1e-4,
                                  uint64_t seed = 0) {
    CaseResult res;
    res.op = name;
    res.seed = seed;

    Tensor<double> root = build(inputs);
    GradMap<double> grads = backward(root);

    double max_rel = 0.0;
    size_t checked = 0;
    for (auto& in : inputs) {
        auto git = grads.find(in.name());
        for (size_t j = 0; j < in.numel(); ++j) {
            const double keep = in.data()[j];
            in.data()[j] = keep + h;
            const double fp = build(inputs).item();
            in.data()[j] = keep - h;
            const double fm = build(inputs).item();
            in.data()[j] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = git == grads.end() ? 0.0 : git->second[j];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
            ++checked;
        }
    }
    res.max_rel_err = max_rel;
    res.checked = checked;
    res.pass = max_rel <= tol && checked > 0;
    return res;
}

namespace detail {

// Random values bounded away from zero so relu/abs-style kinks cannot sit
// within the finite-difference step.
inline std::vector<double> signed_offzero(Rng& rng, size_t n, double lo = 0.2, double hi = 1.5) {
    std::vector<double> v(n);
    for (auto& x : v) {
        const double mag = rng.uniform(lo, hi);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return v;
}

// Distinct, well-separated values so the minmax argmin/argmax cannot flip
// under the probe step.
inline std::vector<double> separated(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = 0.01 * static_cast<double>(i);
    for (size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
    return v;
}

inline Tensor<double> rand_param(const std::string& name, Shape s, Rng& rng) {
    return Tensor<double>::param(name, s, rng.normal_vec<double>(shape_numel(s)), true);
}

// Fixed random projection weights make the scalar sensitive to every output
// element. Drawn once per case so the build function stays pure.
inline Tensor<double> proj_weights(Shape s, uint64_t seed, std::string_view tag) {
    Rng rng(mix_seed(seed, tag));
    return Tensor<double>::from(s, rng.normal_vec<double>(shape_numel(s)));
}

inline Tensor<double> project(const Tensor<double>& t, const Tensor<double>& w) {
    return sum(mul(t, w));
}

}  // namespace detail

// Finite-difference suite over every differentiable op in the engine.
inline std::vector<CaseResult> run_op_suite(uint64_t seed = 20240901ull) {
    using T = Tensor<double>;
    std::vector<CaseResult> out;
    auto run = [&](const std::string& name, std::vector<T> inputs, BuildFn fn) {
        out.push_back(check_scalar_fn(name, std::move(inputs), fn, 1e-5, 1e-4, seed));
    };

    Rng rng(seed);
    {
        auto a = detail::rand_param("in0", {3, 4}, rng);
        auto b = detail::rand_param("in1", {3, 4}, rng);
        auto w = detail::proj_weights({3, 4}, seed, "add");
        run("add", {a, b},
            [w](const std::vector<T>& in) { return detail::project(add(in[0], in[1]), w); });
    }
    {
        auto a = detail::rand_param("in0", {3, 4}, rng);
        auto b = detail::rand_param("in1", {3, 4}, rng);
        auto w = detail::proj_weights({3, 4}, seed, "sub");
        run("sub", {a, b},
            [w](const std::vector<T>& in) { return detail::project(sub(in[0], in[1]), w); });
    }
    {
        auto a = detail::rand_param("in0", {3, 4}, rng);
        auto b = detail::rand_param("in1", {3, 4}, rng);
        auto w = detail::proj_weights({3, 4}, seed, "mul");
        run("mul", {a, b},
            [w](const std::vector<T>& in) { return detail::project(mul(in[0], in[1]), w); });
    }
    {
        auto a = detail::rand_param("in0", {2, 5}, rng);
        auto w = detail::proj_weights({2, 5}, seed, "scale");
        run("scale", {a},
            [w](const std::vector<T>& in) { return detail::project(scale(in[0], 1.7), w); });
    }
    {
        auto a = detail::rand_param("in0", {2, 5}, rng);
        auto w = detail::proj_weights({2, 5}, seed, "add_scalar");
        run("add_scalar", {a}, [w](const std::vector<T>& in) {
            return detail::project(add_scalar(in[0], -0.3), w);
        });
    }
    {
        auto a = T::param("in0", {4, 4}, detail::signed_offzero(rng, 16), true);
        auto w = detail::proj_weights({4, 4}, seed, "relu");
        run("relu", {a},
            [w](const std::vector<T>& in) { return detail::project(relu(in[0]), w); });
    }
    {
        // values bounded away from the clamp edges at 0 and 1
        std::vector<double> v(12);
        for (auto& x : v) x = rng.uniform() < 0.5 ? rng.uniform(0.05, 0.95) : rng.uniform(1.1, 2.0);
        auto a = T::param("in0", {3, 4}, v, true);
        auto w = detail::proj_weights({3, 4}, seed, "clamp");
        run("clamp", {a}, [w](const std::vector<T>& in) {
            return detail::project(clamp(in[0], 0.0, 1.0), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {3, 4, 5}, rng);
        auto v = detail::rand_param("in1", {3}, rng);
        auto w = detail::proj_weights({3, 4, 5}, seed, "add_broadcast_c");
        run("add_broadcast_c", {x, v}, [w](const std::vector<T>& in) {
            return detail::project(add_broadcast_c(in[0], in[1]), w);
        });
    }
    {
        auto a = detail::rand_param("in0", {2, 6}, rng);
        auto w = detail::proj_weights({3, 4}, seed, "reshape");
        run("reshape", {a}, [w](const std::vector<T>& in) {
            return detail::project(reshape(in[0], {3, 4}), w);
        });
    }
    {
        auto a = detail::rand_param("in0", {2, 3, 4}, rng);
        auto b = detail::rand_param("in1", {3, 3, 4}, rng);
        auto w = detail::proj_weights({5, 3, 4}, seed, "concat_channels");
        run("concat_channels", {a, b}, [w](const std::vector<T>& in) {
            return detail::project(concat_channels(in[0], in[1]), w);
        });
    }
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
            Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
            Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
            auto a = detail::rand_param("in0", sa, rng);
            auto b = detail::rand_param("in1", sb, rng);
            const std::string name =
                "matmul" + std::string(ta ? "_tA" : "") + std::string(tb ? "_tB" : "");
            auto w = detail::proj_weights({3, 5}, seed, name);
            run(name, {a, b}, [w, ta, tb](const std::vector<T>& in) {
                return detail::project(matmul(in[0], in[1], ta != 0, tb != 0), w);
            });
        }
    {
        auto x = detail::rand_param("in0", {2, 5, 6}, rng);
        auto w = detail::rand_param("in1", {3, 2, 3, 3}, rng);
        auto b = detail::rand_param("in2", {3}, rng);
        auto pw = detail::proj_weights({3, 5, 6}, seed, "conv2d");
        run("conv2d", {x, w, b}, [pw](const std::vector<T>& in) {
            return detail::project(conv2d(in[0], in[1], &in[2]), pw);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 6, 4}, rng);
        auto w = detail::proj_weights({2, 3, 2}, seed, "avg_pool");
        run("avg_pool", {x},
            [w](const std::vector<T>& in) { return detail::project(avg_pool(in[0], 2), w); });
    }
    {
        auto x = detail::rand_param("in0", {3, 4, 4}, rng);
        auto w = detail::proj_weights({3}, seed, "global_avg_pool");
        run("global_avg_pool", {x}, [w](const std::vector<T>& in) {
            return detail::project(global_avg_pool(in[0]), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {3, 6}, rng);
        auto w = detail::proj_weights({3, 6}, seed, "l2_normalize");
        run("l2_normalize", {x}, [w](const std::vector<T>& in) {
            return detail::project(l2_normalize(in[0]), w);
        });
    }
    {
        auto x = T::param("in0", {4, 5}, detail::separated(rng, 20), true);
        auto w = detail::proj_weights({4, 5}, seed, "minmax_norm");
        run("minmax_norm", {x}, [w](const std::vector<T>& in) {
            return detail::project(minmax_norm(in[0], 1e-8), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 4, 4}, rng);
        auto w = detail::proj_weights({2, 7, 9}, seed, "bilinear_resize_up");
        run("bilinear_resize_up", {x}, [w](const std::vector<T>& in) {
            return detail::project(bilinear_resize(in[0], 7, 9), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 6, 6}, rng);
        auto w = detail::proj_weights({2, 3, 4}, seed, "bilinear_resize_down");
        run("bilinear_resize_down", {x}, [w](const std::vector<T>& in) {
            return detail::project(bilinear_resize(in[0], 3, 4), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 5, 5}, rng);
        std::vector<GatherSample> coords;
        Rng crng(mix_seed(seed, "gather_coords"));
        for (int i = 0; i < 12; ++i) {
            GatherSample s;
            s.valid = i % 5 != 4;
            s.x = crng.uniform(0.0, 4.0);
            s.y = crng.uniform(0.0, 4.0);
            coords.push_back(s);
        }
        auto w = detail::proj_weights({2, 3, 4}, seed, "bilinear_gather");
        run("bilinear_gather", {x}, [w, coords](const std::vector<T>& in) {
            return detail::project(bilinear_gather(in[0], coords, 3, 4), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 4, 6}, rng);
        auto w = detail::proj_weights({8, 6}, seed, "im2patches");
        run("im2patches", {x}, [w](const std::vector<T>& in) {
            return detail::project(im2patches(in[0], 2), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 3, 3}, rng);
        auto w = detail::proj_weights({2, 4, 5}, seed, "pad_bottom_right");
        run("pad_bottom_right", {x}, [w](const std::vector<T>& in) {
            return detail::project(pad_bottom_right(in[0], 4, 5), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 3, 3}, rng);
        auto w = detail::proj_weights({2, 7, 7}, seed, "pad_replicate");
        run("pad_replicate", {x}, [w](const std::vector<T>& in) {
            return detail::project(pad_replicate(in[0], 2), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {2, 5, 6}, rng);
        auto w = detail::proj_weights({2, 3, 4}, seed, "crop");
        run("crop", {x}, [w](const std::vector<T>& in) {
            return detail::project(crop(in[0], 1, 2, 3, 4), w);
        });
    }
    {
        auto x = detail::rand_param("in0", {3, 4}, rng);
        run("sum", {x}, [](const std::vector<T>& in) { return sum(in[0]); });
    }
    {
        auto x = detail::rand_param("in0", {3, 4}, rng);
        run("mean", {x}, [](const std::vector<T>& in) { return mean(in[0]); });
    }
    return out;
}

}  // namespace matres::gradcheck
