#pragma once

#include <string>

#include "matres/optim.hpp"
#include "matres/rng.hpp"
#include "matres/tensor.hpp"

namespace matres::adapter {

struct AdapterConfig {
    int c_in = 16;   // matcher channels C_z
    int c_out = 16;  // restorer channels C_r
    int rank = 4;
    uint64_t seed = 3;
};

// The only trainable module: a low-rank per-cell projection from matcher
// feature space into restorer feature space, with a bilinear resampler
// bridging the stride mismatch. The up-projection starts at exact zeros, so
// the composite output is zero at initialization and the frozen pipeline is
// untouched until the first optimizer step.
template <class R>
class Adapter {
public:
    static Adapter init(const AdapterConfig& cfg) {
        if (cfg.rank < 1) op_error("init_adapter", "rank must be >= 1");
        if (cfg.c_in < 1 || cfg.c_out < 1) op_error("init_adapter", "channel counts must be >= 1");
        Adapter a;
        a.cfg_ = cfg;
        Rng rng(mix_seed(cfg.seed, "adapter"));
        const double std = std::sqrt(1.0 / cfg.c_in);
        a.down_ = a.params_.add("psi.down", {cfg.rank, cfg.c_in},
                                rng.normal_vec<R>(static_cast<size_t>(cfg.rank) * cfg.c_in, 0.0, std),
                                true);
        a.up_ = a.params_.add("psi.up", {cfg.c_out, cfg.rank},
                              std::vector<R>(static_cast<size_t>(cfg.c_out) * cfg.rank, R(0)), true);
        return a;
    }

    const AdapterConfig& config() const { return cfg_; }
    ParamRegistry<R>& params() { return params_; }
    const ParamRegistry<R>& params() const { return params_; }

    size_t parameter_count() const { return down_.numel() + up_.numel(); }

    // Resample the matcher grid onto the restorer grid, then project each cell
    // through the low-rank bottleneck. Differentiable with respect to psi.
    Tensor<R> apply(const Tensor<R>& z, int out_h, int out_w) const {
        if (z.shape().size() != 3 || z.shape()[0] != cfg_.c_in)
            op_error("adapter_apply", "expected (" + std::to_string(cfg_.c_in) + ",h,w), got " +
                                          shape_str(z.shape()));
        Tensor<R> g = bilinear_resize(z, out_h, out_w);
        Tensor<R> flat = reshape(g, {cfg_.c_in, out_h * out_w});
        Tensor<R> proj = matmul(up_, matmul(down_, flat));
        return reshape(proj, {cfg_.c_out, out_h, out_w});
    }

private:
    AdapterConfig cfg_;
    ParamRegistry<R> params_;
    Tensor<R> down_, up_;
};

}  // namespace matres::adapter
