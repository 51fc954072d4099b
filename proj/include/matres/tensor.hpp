#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace matres {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

[[noreturn]] inline void op_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) op_error("tensor", "non-positive extent in " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

namespace detail {

template <class R>
struct Node {
    Shape shape;
    std::vector<R> value;
    std::vector<R> grad;                 // sized lazily during backward
    bool requires_grad = false;
    bool consumed = false;               // op nodes only; set once backward traverses them
    std::string name;                    // parameters only
    std::function<void()> backprop;      // accumulates into parents' grad
    std::vector<std::shared_ptr<Node>> parents;

    bool is_leaf() const { return !backprop; }
    size_t numel() const { return value.size(); }
};

}  // namespace detail

// Value-semantic handle onto a tape node. Ops record themselves for reverse
// traversal only when some input requires a gradient; otherwise the result is
// a plain unlinked value node, so the same code serves tape-free inference.
template <class R>
class Tensor {
public:
    using Node = detail::Node<R>;

    Tensor() = default;

    static Tensor zeros(Shape s) { return filled(std::move(s), R(0)); }

    static Tensor filled(Shape s, R v) {
        Tensor t;
        t.n_ = std::make_shared<Node>();
        size_t n = shape_numel(s);
        t.n_->shape = std::move(s);
        t.n_->value.assign(n, v);
        return t;
    }

    static Tensor from(Shape s, std::vector<R> data) {
        if (shape_numel(s) != data.size())
            op_error("tensor", "data length " + std::to_string(data.size()) +
                                   " does not match shape " + shape_str(s));
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(s);
        t.n_->value = std::move(data);
        return t;
    }

    static Tensor scalar(R v) { return from({1}, {v}); }

    // Named trainable/frozen leaf. Only trainable leaves appear in gradient maps.
    static Tensor param(std::string name, Shape s, std::vector<R> data, bool trainable) {
        Tensor t = from(std::move(s), std::move(data));
        t.n_->name = std::move(name);
        t.n_->requires_grad = trainable;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    size_t numel() const { return n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    const std::string& name() const { return n_->name; }

    std::vector<R>& values() { return n_->value; }
    const std::vector<R>& values() const { return n_->value; }
    R* data() { return n_->value.data(); }
    const R* data() const { return n_->value.data(); }
    R item() const {
        if (numel() != 1) op_error("item", "tensor " + shape_str(shape()) + " is not scalar");
        return n_->value[0];
    }

    const std::vector<R>& grad() const { return n_->grad; }

    std::shared_ptr<Node> node() const { return n_; }

    // Detached copy: same values, no tape linkage, no gradient.
    Tensor detach() const { return from(shape(), values()); }

private:
    std::shared_ptr<Node> n_;
};

template <class R>
using GradMap = std::map<std::string, std::vector<R>>;

namespace detail {

// Wires an op node when any input needs gradients. The backprop callback gets
// the finished output node so it can read its grad buffer. Inputs are captured
// by the closure (out -> in references only; no cycles).
template <class R>
Tensor<R> make_op(Shape shape, std::vector<R> value, std::vector<Tensor<R>> inputs,
                  std::function<void(const Node<R>&)> backprop) {
    Tensor<R> out = Tensor<R>::from(std::move(shape), std::move(value));
    bool needs = false;
    for (auto& t : inputs)
        if (t.requires_grad()) needs = true;
    if (!needs) return out;
    Node<R>* raw = out.node().get();
    out.node()->requires_grad = true;
    for (auto& t : inputs) out.node()->parents.push_back(t.node());
    out.node()->backprop = [raw, fn = std::move(backprop)]() { fn(*raw); };
    return out;
}

template <class R>
inline void accum(const Tensor<R>& t, size_t idx, R g) {
    if (t.node()->requires_grad) t.node()->grad[idx] += g;
}

template <class R>
inline bool wants(const Tensor<R>& t) {
    return t.node()->requires_grad;
}

}  // namespace detail

// --- Reverse-mode traversal ------------------------------------------------

// Gradients of `root` with respect to every reachable trainable leaf.
// Frozen leaves have requires_grad=false, so gradient flows through the ops
// that consume them but is never materialized for the weights themselves.
template <class R>
GradMap<R> backward(const Tensor<R>& root) {
    if (root.numel() != 1)
        op_error("backward", "root " + shape_str(root.shape()) + " is not scalar");
    GradMap<R> grads;
    if (!root.requires_grad()) return grads;

    using Node = detail::Node<R>;
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo)
        if (n->consumed)
            throw std::runtime_error(
                "backward: graph already consumed by a previous backward pass");

    for (Node* n : topo) n->grad.assign(n->numel(), R(0));
    root.node()->grad[0] = R(1);

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            n->backprop();
            n->consumed = true;
        }
    }

    for (Node* n : topo)
        if (n->is_leaf() && n->requires_grad && !n->name.empty()) grads[n->name] = n->grad;
    return grads;
}

// --- Elementwise ops --------------------------------------------------------

template <class R>
Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape() != b.shape())
        op_error("add", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return detail::make_op<R>(
        a.shape(), std::move(v), {a, b}, [a, b](const detail::Node<R>& out) {
            for (size_t i = 0; i < out.grad.size(); ++i) {
                detail::accum(a, i, out.grad[i]);
                detail::accum(b, i, out.grad[i]);
            }
        });
}

template <class R>
Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape() != b.shape())
        op_error("sub", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return detail::make_op<R>(
        a.shape(), std::move(v), {a, b}, [a, b](const detail::Node<R>& out) {
            for (size_t i = 0; i < out.grad.size(); ++i) {
                detail::accum(a, i, out.grad[i]);
                detail::accum(b, i, -out.grad[i]);
            }
        });
}

template <class R>
Tensor<R> mul(const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape() != b.shape())
        op_error("mul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return detail::make_op<R>(
        a.shape(), std::move(v), {a, b}, [a, b](const detail::Node<R>& out) {
            for (size_t i = 0; i < out.grad.size(); ++i) {
                detail::accum(a, i, out.grad[i] * b.data()[i]);
                detail::accum(b, i, out.grad[i] * a.data()[i]);
            }
        });
}

template <class R>
Tensor<R> scale(const Tensor<R>& a, R c) {
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
    return detail::make_op<R>(a.shape(), std::move(v), {a}, [a, c](const detail::Node<R>& out) {
        for (size_t i = 0; i < out.grad.size(); ++i) detail::accum(a, i, out.grad[i] * c);
    });
}

template <class R>
Tensor<R> add_scalar(const Tensor<R>& a, R c) {
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
    return detail::make_op<R>(a.shape(), std::move(v), {a}, [a](const detail::Node<R>& out) {
        for (size_t i = 0; i < out.grad.size(); ++i) detail::accum(a, i, out.grad[i]);
    });
}

template <class R>
Tensor<R> neg(const Tensor<R>& a) {
    return scale(a, R(-1));
}

template <class R>
Tensor<R> relu(const Tensor<R>& a) {
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > R(0) ? a.data()[i] : R(0);
    return detail::make_op<R>(a.shape(), std::move(v), {a}, [a](const detail::Node<R>& out) {
        for (size_t i = 0; i < out.grad.size(); ++i)
            if (a.data()[i] > R(0)) detail::accum(a, i, out.grad[i]);
    });
}

template <class R>
Tensor<R> clamp(const Tensor<R>& a, R lo, R hi) {
    std::vector<R> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(hi, std::max(lo, a.data()[i]));
    return detail::make_op<R>(a.shape(), std::move(v), {a}, [a, lo, hi](const detail::Node<R>& out) {
        for (size_t i = 0; i < out.grad.size(); ++i)
            if (a.data()[i] > lo && a.data()[i] < hi) detail::accum(a, i, out.grad[i]);
    });
}

// x {C,H,W} + per-channel vector {C}
template <class R>
Tensor<R> add_broadcast_c(const Tensor<R>& x, const Tensor<R>& v) {
    if (x.shape().size() != 3 || v.shape().size() != 1 || v.shape()[0] != x.shape()[0])
        op_error("add_broadcast_c", "expected (C,H,W) + (C), got " + shape_str(x.shape()) +
                                        " + " + shape_str(v.shape()));
    const int C = x.shape()[0];
    const size_t hw = x.numel() / C;
    std::vector<R> out(x.numel());
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < hw; ++i) out[c * hw + i] = x.data()[c * hw + i] + v.data()[c];
    return detail::make_op<R>(
        x.shape(), std::move(out), {x, v}, [x, v, C, hw](const detail::Node<R>& o) {
            for (int c = 0; c < C; ++c) {
                R s = 0;
                for (size_t i = 0; i < hw; ++i) {
                    detail::accum(x, c * hw + i, o.grad[c * hw + i]);
                    s += o.grad[c * hw + i];
                }
                detail::accum(v, static_cast<size_t>(c), s);
            }
        });
}

// --- Shape ops ---------------------------------------------------------------

template <class R>
Tensor<R> reshape(const Tensor<R>& a, Shape s) {
    if (shape_numel(s) != a.numel())
        op_error("reshape", shape_str(a.shape()) + " -> " + shape_str(s) + " changes element count");
    std::vector<R> v = a.values();
    return detail::make_op<R>(std::move(s), std::move(v), {a}, [a](const detail::Node<R>& out) {
        for (size_t i = 0; i < out.grad.size(); ++i) detail::accum(a, i, out.grad[i]);
    });
}

template <class R>
Tensor<R> concat_channels(const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[1] != b.shape()[1] ||
        a.shape()[2] != b.shape()[2])
        op_error("concat_channels", "incompatible " + shape_str(a.shape()) + " and " +
                                        shape_str(b.shape()));
    Shape s = {a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]};
    std::vector<R> v;
    v.reserve(a.numel() + b.numel());
    v.insert(v.end(), a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    const size_t na = a.numel();
    return detail::make_op<R>(std::move(s), std::move(v), {a, b},
                              [a, b, na](const detail::Node<R>& out) {
                                  for (size_t i = 0; i < na; ++i) detail::accum(a, i, out.grad[i]);
                                  for (size_t i = na; i < out.grad.size(); ++i)
                                      detail::accum(b, i - na, out.grad[i]);
                              });
}

// --- Linear algebra ----------------------------------------------------------

// 2-D matmul with optional transposes: C = op(A) * op(B).
template <class R>
Tensor<R> matmul(const Tensor<R>& a, const Tensor<R>& b, bool trans_a = false,
                 bool trans_b = false) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        op_error("matmul", "expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                               shape_str(b.shape()));
    const int m = trans_a ? a.shape()[1] : a.shape()[0];
    const int k = trans_a ? a.shape()[0] : a.shape()[1];
    const int kb = trans_b ? b.shape()[1] : b.shape()[0];
    const int n = trans_b ? b.shape()[0] : b.shape()[1];
    if (k != kb)
        op_error("matmul", "inner extents differ: " + shape_str(a.shape()) +
                               (trans_a ? "^T" : "") + " vs " + shape_str(b.shape()) +
                               (trans_b ? "^T" : ""));

    const int lda = a.shape()[1], ldb = b.shape()[1];
    auto at = [&](int i, int j) { return trans_a ? a.data()[j * lda + i] : a.data()[i * lda + j]; };
    auto bt = [&](int i, int j) { return trans_b ? b.data()[j * ldb + i] : b.data()[i * ldb + j]; };

    std::vector<R> v(static_cast<size_t>(m) * n, R(0));
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const R av = at(i, p);
            for (int j = 0; j < n; ++j) v[static_cast<size_t>(i) * n + j] += av * bt(p, j);
        }

    return detail::make_op<R>(
        {m, n}, std::move(v), {a, b},
        [a, b, m, n, k, lda, ldb, trans_a, trans_b](const detail::Node<R>& out) {
            auto at = [&](int i, int j) {
                return trans_a ? a.data()[j * lda + i] : a.data()[i * lda + j];
            };
            auto bt = [&](int i, int j) {
                return trans_b ? b.data()[j * ldb + i] : b.data()[i * ldb + j];
            };
            // dL/d op(A) = G * op(B)^T ; dL/d op(B) = op(A)^T * G
            if (detail::wants(a)) {
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        R s = 0;
                        for (int j = 0; j < n; ++j)
                            s += out.grad[static_cast<size_t>(i) * n + j] * bt(p, j);
                        size_t idx = trans_a ? static_cast<size_t>(p) * lda + i
                                             : static_cast<size_t>(i) * lda + p;
                        a.node()->grad[idx] += s;
                    }
            }
            if (detail::wants(b)) {
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        R s = 0;
                        for (int i = 0; i < m; ++i)
                            s += at(i, p) * out.grad[static_cast<size_t>(i) * n + j];
                        size_t idx = trans_b ? static_cast<size_t>(j) * ldb + p
                                             : static_cast<size_t>(p) * ldb + j;
                        b.node()->grad[idx] += s;
                    }
            }
        });
}

// --- Convolution and pooling --------------------------------------------------

// Stride-1 conv with symmetric zero padding preserving spatial extent.
// x {Cin,H,W}, w {Cout,Cin,k,k} with odd k, optional bias {Cout}.
template <class R>
Tensor<R> conv2d(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>* bias = nullptr) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        op_error("conv2d", "expected (C,H,W) input and (O,C,k,k) weights, got " +
                               shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int Cout = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != Cin)
        op_error("conv2d", "weight input channels " + std::to_string(w.shape()[1]) +
                               " vs input " + std::to_string(Cin));
    if (w.shape()[3] != k || k % 2 == 0)
        op_error("conv2d", "kernel must be square with odd extent, got " + shape_str(w.shape()));
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != Cout))
        op_error("conv2d", "bias shape " + shape_str(bias->shape()) + " vs Cout " +
                               std::to_string(Cout));
    const int p = k / 2;

    std::vector<R> v(static_cast<size_t>(Cout) * H * W, R(0));
    for (int oc = 0; oc < Cout; ++oc) {
        const R bval = bias ? bias->data()[oc] : R(0);
        for (int y = 0; y < H; ++y)
            for (int x0 = 0; x0 < W; ++x0) {
                R s = bval;
                for (int ic = 0; ic < Cin; ++ic)
                    for (int dy = 0; dy < k; ++dy) {
                        const int iy = y + dy - p;
                        if (iy < 0 || iy >= H) continue;
                        for (int dx = 0; dx < k; ++dx) {
                            const int ix = x0 + dx - p;
                            if (ix < 0 || ix >= W) continue;
                            s += x.data()[(static_cast<size_t>(ic) * H + iy) * W + ix] *
                                 w.data()[((static_cast<size_t>(oc) * Cin + ic) * k + dy) * k + dx];
                        }
                    }
                v[(static_cast<size_t>(oc) * H + y) * W + x0] = s;
            }
    }

    std::vector<Tensor<R>> inputs = {x, w};
    if (bias) inputs.push_back(*bias);
    Tensor<R> bt = bias ? *bias : Tensor<R>();
    bool has_bias = bias != nullptr;
    return detail::make_op<R>(
        {Cout, H, W}, std::move(v), std::move(inputs),
        [x, w, bt, has_bias, Cin, Cout, H, W, k, p](const detail::Node<R>& out) {
            for (int oc = 0; oc < Cout; ++oc)
                for (int y = 0; y < H; ++y)
                    for (int x0 = 0; x0 < W; ++x0) {
                        const R g = out.grad[(static_cast<size_t>(oc) * H + y) * W + x0];
                        if (has_bias) detail::accum(bt, static_cast<size_t>(oc), g);
                        for (int ic = 0; ic < Cin; ++ic)
                            for (int dy = 0; dy < k; ++dy) {
                                const int iy = y + dy - p;
                                if (iy < 0 || iy >= H) continue;
                                for (int dx = 0; dx < k; ++dx) {
                                    const int ix = x0 + dx - p;
                                    if (ix < 0 || ix >= W) continue;
                                    const size_t xi =
                                        (static_cast<size_t>(ic) * H + iy) * W + ix;
                                    const size_t wi =
                                        ((static_cast<size_t>(oc) * Cin + ic) * k + dy) * k + dx;
                                    detail::accum(x, xi, g * w.data()[wi]);
                                    detail::accum(w, wi, g * x.data()[xi]);
                                }
                            }
                    }
        });
}

// Non-overlapping f x f mean pooling; spatial extents must divide by f.
template <class R>
Tensor<R> avg_pool(const Tensor<R>& x, int f) {
    if (x.shape().size() != 3) op_error("avg_pool", "expected (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (f < 1 || H % f || W % f)
        op_error("avg_pool", "factor " + std::to_string(f) + " does not divide " +
                                 shape_str(x.shape()));
    const int Ho = H / f, Wo = W / f;
    const R inv = R(1) / static_cast<R>(f * f);
    std::vector<R> v(static_cast<size_t>(C) * Ho * Wo, R(0));
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
            for (int x0 = 0; x0 < Wo; ++x0) {
                R s = 0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx)
                        s += x.data()[(static_cast<size_t>(c) * H + y * f + dy) * W + x0 * f + dx];
                v[(static_cast<size_t>(c) * Ho + y) * Wo + x0] = s * inv;
            }
    return detail::make_op<R>(
        {C, Ho, Wo}, std::move(v), {x}, [x, C, H, W, Ho, Wo, f, inv](const detail::Node<R>& out) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int x0 = 0; x0 < Wo; ++x0) {
                        const R g = out.grad[(static_cast<size_t>(c) * Ho + y) * Wo + x0] * inv;
                        for (int dy = 0; dy < f; ++dy)
                            for (int dx = 0; dx < f; ++dx)
                                detail::accum(
                                    x, (static_cast<size_t>(c) * H + y * f + dy) * W + x0 * f + dx,
                                    g);
                    }
        });
}

// Per-channel spatial mean: {C,H,W} -> {C}.
template <class R>
Tensor<R> global_avg_pool(const Tensor<R>& x) {
    if (x.shape().size() != 3)
        op_error("global_avg_pool", "expected (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0];
    const size_t hw = x.numel() / C;
    const R inv = R(1) / static_cast<R>(hw);
    std::vector<R> v(C, R(0));
    for (int c = 0; c < C; ++c) {
        R s = 0;
        for (size_t i = 0; i < hw; ++i) s += x.data()[c * hw + i];
        v[c] = s * inv;
    }
    return detail::make_op<R>({C}, std::move(v), {x}, [x, C, hw, inv](const detail::Node<R>& out) {
        for (int c = 0; c < C; ++c)
            for (size_t i = 0; i < hw; ++i) detail::accum(x, c * hw + i, out.grad[c] * inv);
    });
}

// --- Normalization -------------------------------------------------------------

// Column-wise L2 normalization of a {C,N} matrix (one column per spatial cell).
// Zero-norm columns become zero vectors; their indices are appended to
// `degenerate` when provided.
template <class R>
Tensor<R> l2_normalize(const Tensor<R>& x, std::vector<int>* degenerate = nullptr) {
    if (x.shape().size() != 2)
        op_error("l2_normalize", "expected (C,N), got " + shape_str(x.shape()));
    const int C = x.shape()[0], N = x.shape()[1];
    std::vector<R> v(x.numel(), R(0));
    std::vector<R> norms(N, R(0));
    for (int j = 0; j < N; ++j) {
        R s = 0;
        for (int c = 0; c < C; ++c) {
            const R val = x.data()[static_cast<size_t>(c) * N + j];
            s += val * val;
        }
        norms[j] = std::sqrt(s);
        if (norms[j] > R(0)) {
            const R inv = R(1) / norms[j];
            for (int c = 0; c < C; ++c)
                v[static_cast<size_t>(c) * N + j] = x.data()[static_cast<size_t>(c) * N + j] * inv;
        } else if (degenerate) {
            degenerate->push_back(j);
        }
    }
    return detail::make_op<R>(
        x.shape(), std::move(v), {x},
        [x, C, N, norms = std::move(norms)](const detail::Node<R>& out) {
            // d(x/|x|) : g -> (g - y (y.g)) / |x|
            for (int j = 0; j < N; ++j) {
                if (norms[j] <= R(0)) continue;  // subgradient 0 at the degenerate point
                const R inv = R(1) / norms[j];
                R dot = 0;
                for (int c = 0; c < C; ++c)
                    dot += out.value[static_cast<size_t>(c) * N + j] *
                           out.grad[static_cast<size_t>(c) * N + j];
                for (int c = 0; c < C; ++c) {
                    const size_t i = static_cast<size_t>(c) * N + j;
                    detail::accum(x, i, (out.grad[i] - out.value[i] * dot) * inv);
                }
            }
        });
}

// (x - min) / (max - min + eps); differentiable a.e. (argmin/argmax picks).
template <class R>
Tensor<R> minmax_norm(const Tensor<R>& x, R eps) {
    if (eps <= R(0)) op_error("minmax_norm", "eps must be positive");
    size_t imin = 0, imax = 0;
    for (size_t i = 1; i < x.numel(); ++i) {
        if (x.data()[i] < x.data()[imin]) imin = i;
        if (x.data()[i] > x.data()[imax]) imax = i;
    }
    const R lo = x.data()[imin], hi = x.data()[imax];
    const R d = hi - lo + eps;
    const R inv = R(1) / d;
    std::vector<R> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = (x.data()[i] - lo) * inv;
    return detail::make_op<R>(
        x.shape(), std::move(v), {x}, [x, imin, imax, lo, inv](const detail::Node<R>& out) {
            if (!detail::wants(x)) return;
            auto& gx = x.node()->grad;
            R gmin = 0, gmax = 0;
            for (size_t i = 0; i < out.grad.size(); ++i) {
                const R g = out.grad[i];
                if (g == R(0)) continue;
                gx[i] += g * inv;
                // y_i = (x_i - m) * inv, inv = 1/(M - m + eps)
                gmin += g * (-inv + (x.data()[i] - lo) * inv * inv);
                gmax += g * (-(x.data()[i] - lo) * inv * inv);
            }
            gx[imin] += gmin;
            gx[imax] += gmax;
        });
}

// --- Resampling -----------------------------------------------------------------

// Bilinear resize with half-pixel sampling, edge-clamped: {C,h,w} -> {C,H,W}.
template <class R>
Tensor<R> bilinear_resize(const Tensor<R>& x, int H, int W) {
    if (x.shape().size() != 3)
        op_error("bilinear_resize", "expected (C,H,W), got " + shape_str(x.shape()));
    if (H < 1 || W < 1) op_error("bilinear_resize", "target extents must be positive");
    const int C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (h == H && w == W) {
        return reshape(x, x.shape());  // identity pass-through keeps graph semantics uniform
    }

    struct Tap {
        int y0, x0, y1, x1;
        R wy, wx;
    };
    std::vector<Tap> taps(static_cast<size_t>(H) * W);
    const double sy = static_cast<double>(h) / H, sx = static_cast<double>(w) / W;
    for (int y = 0; y < H; ++y)
        for (int x0i = 0; x0i < W; ++x0i) {
            double fy = (y + 0.5) * sy - 0.5, fx = (x0i + 0.5) * sx - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            Tap t;
            t.y0 = static_cast<int>(fy);
            t.x0 = static_cast<int>(fx);
            t.y1 = std::min(t.y0 + 1, h - 1);
            t.x1 = std::min(t.x0 + 1, w - 1);
            t.wy = static_cast<R>(fy - t.y0);
            t.wx = static_cast<R>(fx - t.x0);
            taps[static_cast<size_t>(y) * W + x0i] = t;
        }

    std::vector<R> v(static_cast<size_t>(C) * H * W);
    for (int c = 0; c < C; ++c) {
        const R* src = x.data() + static_cast<size_t>(c) * h * w;
        for (size_t i = 0; i < taps.size(); ++i) {
            const Tap& t = taps[i];
            const R a = src[t.y0 * w + t.x0], b = src[t.y0 * w + t.x1];
            const R cc = src[t.y1 * w + t.x0], dd = src[t.y1 * w + t.x1];
            v[static_cast<size_t>(c) * H * W + i] =
                (a * (R(1) - t.wx) + b * t.wx) * (R(1) - t.wy) +
                (cc * (R(1) - t.wx) + dd * t.wx) * t.wy;
        }
    }
    return detail::make_op<R>(
        {C, H, W}, std::move(v), {x},
        [x, C, h, w, H, W, taps = std::move(taps)](const detail::Node<R>& out) {
            if (!detail::wants(x)) return;
            auto& gx = x.node()->grad;
            for (int c = 0; c < C; ++c) {
                R* gsrc = gx.data() + static_cast<size_t>(c) * h * w;
                const R* gout = out.grad.data() + static_cast<size_t>(c) * H * W;
                for (size_t i = 0; i < taps.size(); ++i) {
                    const Tap& t = taps[i];
                    const R g = gout[i];
                    gsrc[t.y0 * w + t.x0] += g * (R(1) - t.wx) * (R(1) - t.wy);
                    gsrc[t.y0 * w + t.x1] += g * t.wx * (R(1) - t.wy);
                    gsrc[t.y1 * w + t.x0] += g * (R(1) - t.wx) * t.wy;
                    gsrc[t.y1 * w + t.x1] += g * t.wx * t.wy;
                }
            }
        });
}

// One sampling location per output cell, in source pixel coordinates.
// Invalid cells produce 0 and receive no gradient.
struct GatherSample {
    double x = 0.0, y = 0.0;
    bool valid = false;
};

// Bilinear gather at precomputed coordinates: {C,h,w} -> {C,H,W}. Valid samples
// are guaranteed in [0,w-1]x[0,h-1] by the caller. Gradient flows to the source
// values through the sampling weights; the coordinates are constants.
template <class R>
Tensor<R> bilinear_gather(const Tensor<R>& x, const std::vector<GatherSample>& coords, int H,
                          int W) {
    if (x.shape().size() != 3)
        op_error("bilinear_gather", "expected (C,H,W), got " + shape_str(x.shape()));
    if (coords.size() != static_cast<size_t>(H) * W)
        op_error("bilinear_gather", "coordinate count " + std::to_string(coords.size()) +
                                        " vs target " + std::to_string(H) + "x" + std::to_string(W));
    const int C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];

    struct Tap {
        int y0, x0, y1, x1;
        R wy, wx;
        bool valid;
    };
    std::vector<Tap> taps(coords.size());
    for (size_t i = 0; i < coords.size(); ++i) {
        Tap t{};
        t.valid = coords[i].valid;
        if (t.valid) {
            const double fy = coords[i].y, fx = coords[i].x;
            t.y0 = std::min(static_cast<int>(fy), h - 1);
            t.x0 = std::min(static_cast<int>(fx), w - 1);
            if (t.y0 < 0 || t.x0 < 0 || fy > h - 1 || fx > w - 1)
                op_error("bilinear_gather", "valid sample outside source domain");
            t.y1 = std::min(t.y0 + 1, h - 1);
            t.x1 = std::min(t.x0 + 1, w - 1);
            t.wy = static_cast<R>(fy - t.y0);
            t.wx = static_cast<R>(fx - t.x0);
        }
        taps[i] = t;
    }

    std::vector<R> v(static_cast<size_t>(C) * H * W, R(0));
    for (int c = 0; c < C; ++c) {
        const R* src = x.data() + static_cast<size_t>(c) * h * w;
        R* dst = v.data() + static_cast<size_t>(c) * H * W;
        for (size_t i = 0; i < taps.size(); ++i) {
            const Tap& t = taps[i];
            if (!t.valid) continue;
            const R a = src[t.y0 * w + t.x0], b = src[t.y0 * w + t.x1];
            const R cc = src[t.y1 * w + t.x0], dd = src[t.y1 * w + t.x1];
            dst[i] = (a * (R(1) - t.wx) + b * t.wx) * (R(1) - t.wy) +
                     (cc * (R(1) - t.wx) + dd * t.wx) * t.wy;
        }
    }
    return detail::make_op<R>(
        {C, H, W}, std::move(v), {x},
        [x, C, h, w, H, W, taps = std::move(taps)](const detail::Node<R>& out) {
            if (!detail::wants(x)) return;
            auto& gx = x.node()->grad;
            for (int c = 0; c < C; ++c) {
                R* gsrc = gx.data() + static_cast<size_t>(c) * h * w;
                const R* gout = out.grad.data() + static_cast<size_t>(c) * H * W;
                for (size_t i = 0; i < taps.size(); ++i) {
                    const Tap& t = taps[i];
                    if (!t.valid) continue;
                    const R g = gout[i];
                    gsrc[t.y0 * w + t.x0] += g * (R(1) - t.wx) * (R(1) - t.wy);
                    gsrc[t.y0 * w + t.x1] += g * t.wx * (R(1) - t.wy);
                    gsrc[t.y1 * w + t.x0] += g * (R(1) - t.wx) * t.wy;
                    gsrc[t.y1 * w + t.x1] += g * t.wx * t.wy;
                }
            }
        });
}

// --- Patch extraction ------------------------------------------------------------

// Non-overlapping P x P patches flattened to columns: {C,H,W} -> {C*P*P, N},
// N = (H/P)*(W/P), patches in row-major order.
template <class R>
Tensor<R> im2patches(const Tensor<R>& x, int P) {
    if (x.shape().size() != 3)
        op_error("im2patches", "expected (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (P < 1 || H % P || W % P)
        op_error("im2patches", "patch size " + std::to_string(P) + " does not divide " +
                                   shape_str(x.shape()));
    const int gh = H / P, gw = W / P, N = gh * gw, D = C * P * P;
    std::vector<R> v(static_cast<size_t>(D) * N);
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < P; ++dy)
            for (int dx = 0; dx < P; ++dx) {
                const int row = (c * P + dy) * P + dx;
                for (int py = 0; py < gh; ++py)
                    for (int px = 0; px < gw; ++px)
                        v[static_cast<size_t>(row) * N + py * gw + px] =
                            x.data()[(static_cast<size_t>(c) * H + py * P + dy) * W + px * P + dx];
            }
    return detail::make_op<R>(
        {D, N}, std::move(v), {x}, [x, C, H, W, P, gh, gw, N](const detail::Node<R>& out) {
            if (!detail::wants(x)) return;
            auto& gx = x.node()->grad;
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < P; ++dy)
                    for (int dx = 0; dx < P; ++dx) {
                        const int row = (c * P + dy) * P + dx;
                        for (int py = 0; py < gh; ++py)
                            for (int px = 0; px < gw; ++px)
                                gx[(static_cast<size_t>(c) * H + py * P + dy) * W + px * P + dx] +=
                                    out.grad[static_cast<size_t>(row) * N + py * gw + px];
                    }
        });
}

// Zero-pad at the bottom/right edges: {C,h,w} -> {C,H,W} with H >= h, W >= w.
template <class R>
Tensor<R> pad_bottom_right(const Tensor<R>& x, int H, int W) {
    if (x.shape().size() != 3)
        op_error("pad_bottom_right", "expected (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (H < h || W < w)
        op_error("pad_bottom_right", "target extents smaller than source");
    if (H == h && W == w) return reshape(x, x.shape());
    std::vector<R> v(static_cast<size_t>(C) * H * W, R(0));
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int x0 = 0; x0 < w; ++x0)
                v[(static_cast<size_t>(c) * H + y) * W + x0] =
                    x.data()[(static_cast<size_t>(c) * h + y) * w + x0];
    return detail::make_op<R>(
        {C, H, W}, std::move(v), {x}, [x, C, h, w, H, W](const detail::Node<R>& out) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x0 = 0; x0 < w; ++x0)
                        detail::accum(x, (static_cast<size_t>(c) * h + y) * w + x0,
                                      out.grad[(static_cast<size_t>(c) * H + y) * W + x0]);
        });
}

// Edge-replication padding of n pixels on every side: {C,h,w} -> {C,h+2n,w+2n}.
template <class R>
Tensor<R> pad_replicate(const Tensor<R>& x, int n) {
    if (x.shape().size() != 3)
        op_error("pad_replicate", "expected (C,H,W), got " + shape_str(x.shape()));
    if (n < 0) op_error("pad_replicate", "padding must be non-negative");
    if (n == 0) return reshape(x, x.shape());
    const int C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int H = h + 2 * n, W = w + 2 * n;
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    std::vector<R> v(static_cast<size_t>(C) * H * W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x0 = 0; x0 < W; ++x0) {
                const int sy = clampi(y - n, 0, h - 1), sx = clampi(x0 - n, 0, w - 1);
                v[(static_cast<size_t>(c) * H + y) * W + x0] =
                    x.data()[(static_cast<size_t>(c) * h + sy) * w + sx];
            }
    return detail::make_op<R>(
        {C, H, W}, std::move(v), {x}, [x, C, h, w, H, W, n, clampi](const detail::Node<R>& out) {
            if (!detail::wants(x)) return;
            auto& gx = x.node()->grad;
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x0 = 0; x0 < W; ++x0) {
                        const int sy = clampi(y - n, 0, h - 1), sx = clampi(x0 - n, 0, w - 1);
                        gx[(static_cast<size_t>(c) * h + sy) * w + sx] +=
                            out.grad[(static_cast<size_t>(c) * H + y) * W + x0];
                    }
        });
}

// Spatial crop: {C,h,w} -> {C,ch,cw} starting at (y0, x0).
template <class R>
Tensor<R> crop(const Tensor<R>& x, int y0, int x0, int ch, int cw) {
    if (x.shape().size() != 3) op_error("crop", "expected (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (y0 < 0 || x0 < 0 || ch < 1 || cw < 1 || y0 + ch > h || x0 + cw > w)
        op_error("crop", "window " + std::to_string(y0) + "," + std::to_string(x0) + "+" +
                             std::to_string(ch) + "x" + std::to_string(cw) + " outside " +
                             shape_str(x.shape()));
    std::vector<R> v(static_cast<size_t>(C) * ch * cw);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < ch; ++y)
            for (int xx = 0; xx < cw; ++xx)
                v[(static_cast<size_t>(c) * ch + y) * cw + xx] =
                    x.data()[(static_cast<size_t>(c) * h + y + y0) * w + xx + x0];
    return detail::make_op<R>(
        {C, ch, cw}, std::move(v), {x}, [x, C, h, w, ch, cw, y0, x0](const detail::Node<R>& out) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < ch; ++y)
                    for (int xx = 0; xx < cw; ++xx)
                        detail::accum(x, (static_cast<size_t>(c) * h + y + y0) * w + xx + x0,
                                      out.grad[(static_cast<size_t>(c) * ch + y) * cw + xx]);
        });
}

// --- Reductions -------------------------------------------------------------------

template <class R>
Tensor<R> sum(const Tensor<R>& x) {
    R s = 0;
    for (size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    return detail::make_op<R>({1}, {s}, {x}, [x](const detail::Node<R>& out) {
        for (size_t i = 0; i < x.numel(); ++i) detail::accum(x, i, out.grad[0]);
    });
}

template <class R>
Tensor<R> mean(const Tensor<R>& x) {
    return scale(sum(x), R(1) / static_cast<R>(x.numel()));
}

}  // namespace matres
