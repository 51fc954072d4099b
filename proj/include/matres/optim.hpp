#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "matres/rng.hpp"
#include "matres/tensor.hpp"

namespace matres {

// Named parameter store. Each entry is frozen or trainable for its lifetime;
// retagging means rebuilding the registry. Frozen entries are created with
// requires_grad=false so they never accumulate gradient buffers.
template <class R>
class ParamRegistry {
public:
    Tensor<R> add(const std::string& name, Shape shape, std::vector<R> data, bool trainable) {
        if (by_name_.count(name)) op_error("registry", "duplicate parameter '" + name + "'");
        Tensor<R> t = Tensor<R>::param(name, std::move(shape), std::move(data), trainable);
        by_name_.emplace(name, t);
        order_.push_back(name);
        return t;
    }

    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    Tensor<R> get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) op_error("registry", "unknown parameter '" + name + "'");
        return it->second;
    }

    bool trainable(const std::string& name) const { return get(name).requires_grad(); }

    const std::vector<std::string>& names() const { return order_; }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (auto& n : order_)
            if (trainable(n)) out.push_back(n);
        return out;
    }

    size_t size() const { return order_.size(); }

    // Fingerprint of parameter values (insertion order). Used by the frozen
    // immutability checks; serialized values are doubles so float and double
    // instantiations hash identically for identical weights.
    uint64_t hash(bool frozen_only = false) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (auto& n : order_) {
            const Tensor<R> t = get(n);
            if (frozen_only && t.requires_grad()) continue;
            h = fnv1a(n.data(), n.size(), h);
            for (R v : t.values()) {
                const double d = static_cast<double>(v);
                h = fnv1a(&d, sizeof(d), h);
            }
        }
        return h;
    }

private:
    std::unordered_map<std::string, Tensor<R>> by_name_;
    std::vector<std::string> order_;
};

template <class R>
struct AdamWConfig {
    R lr = R(1e-3);
    R beta1 = R(0.9);
    R beta2 = R(0.999);
    R eps = R(1e-8);
    R weight_decay = R(0.01);
    bool decay_without_grad = false;
};

// Adam with decoupled weight decay. Moments live per parameter name and
// persist across the single-use tapes of successive iterations.
template <class R>
class AdamW {
public:
    explicit AdamW(AdamWConfig<R> cfg = {}) : cfg_(cfg) {}

    AdamWConfig<R>& config() { return cfg_; }
    const AdamWConfig<R>& config() const { return cfg_; }
    void set_lr(R lr) { cfg_.lr = lr; }

    void step(ParamRegistry<R>& params, const GradMap<R>& grads) {
        for (const auto& name : params.names()) {
            Tensor<R> p = params.get(name);
            if (!p.requires_grad()) continue;  // frozen parameters are never touched
            auto git = grads.find(name);
            if (git == grads.end()) {
                if (cfg_.decay_without_grad && cfg_.weight_decay != R(0)) {
                    for (R& v : p.values()) v -= cfg_.lr * cfg_.weight_decay * v;
                }
                continue;
            }
            const std::vector<R>& g = git->second;
            if (g.size() != p.numel())
                op_error("optimizer_step", "gradient length " + std::to_string(g.size()) +
                                               " vs parameter '" + name + "' " +
                                               shape_str(p.shape()));
            Moments& st = state_[name];
            if (st.m.size() != p.numel()) {
                st.m.assign(p.numel(), R(0));
                st.v.assign(p.numel(), R(0));
                st.t = 0;
            }
            st.t += 1;
            const R bc1 = R(1) - std::pow(cfg_.beta1, static_cast<R>(st.t));
            const R bc2 = R(1) - std::pow(cfg_.beta2, static_cast<R>(st.t));
            R* pv = p.data();
            for (size_t i = 0; i < g.size(); ++i) {
                st.m[i] = cfg_.beta1 * st.m[i] + (R(1) - cfg_.beta1) * g[i];
                st.v[i] = cfg_.beta2 * st.v[i] + (R(1) - cfg_.beta2) * g[i] * g[i];
                const R mhat = st.m[i] / bc1;
                const R vhat = st.v[i] / bc2;
                pv[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                    cfg_.weight_decay * pv[i]);
            }
        }
    }

    int64_t step_count(const std::string& name) const {
        auto it = state_.find(name);
        return it == state_.end() ? 0 : it->second.t;
    }

private:
    struct Moments {
        std::vector<R> m, v;
        int64_t t = 0;
    };
    AdamWConfig<R> cfg_;
    std::unordered_map<std::string, Moments> state_;
};

}  // namespace matres
