#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "stepsnet/error.hpp"
#include "stepsnet/mac_counter.hpp"
#include "stepsnet/tensor.hpp"

// Differentiable tensor operations. Every op computes its value eagerly and,
// when a tape is active and some input requires grad, records a closure that
// accumulates gradients into its inputs. Outputs are checked for NaN/Inf so a
// numeric failure surfaces at the op that produced it.

namespace stepsnet {

inline bool& finite_checks_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

namespace detail {

template <typename S>
inline void ensure_finite(const Tensor<S>& t, const char* op) {
    if (!finite_checks_enabled()) return;
    for (S v : t.values()) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

template <typename S>
inline bool tracing(std::initializer_list<const Tensor<S>*> inputs) {
    if (!active_tape<S>()) return false;
    for (const Tensor<S>* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename S>
inline void accumulate(TensorNode<S>& node, const std::vector<S>& delta) {
    if (!node.requires_grad) return;
    for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

inline std::size_t last_extent(const std::vector<std::size_t>& shape) {
    return shape.empty() ? 1 : shape.back();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = av[i * k + p];
            const S* brow = bv + p * n;
            S* orow = ov + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    count_macs(static_cast<std::uint64_t>(m) * k * n);
    detail::ensure_finite(out, "matmul");

    if (detail::tracing<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "matmul", [an, bn, on, m, k, n] {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                // dA = dC * B^T
                S* ga = an->grad.data();
                const S* bv2 = bn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += gij * bv2[p * n + j];
                    }
            }
            if (bn->requires_grad) {
                // dB = A^T * dC
                S* gb = bn->grad.data();
                const S* av2 = an->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S aip = av2[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                            gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

// a * b^T without materializing the transpose.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            S acc{0};
            const S* arow = av + i * k;
            const S* brow = bv + j * k;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            ov[i * n + j] = acc;
        }
    }
    count_macs(static_cast<std::uint64_t>(m) * k * n);
    detail::ensure_finite(out, "matmul_nt");

    if (detail::tracing<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "matmul_nt", [an, bn, on, m, k, n] {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                // dA = dC * B
                S* ga = an->grad.data();
                const S* bv2 = bn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += gij * bv2[j * k + p];
                    }
            }
            if (bn->requires_grad) {
                // dB = dC^T * A
                S* gb = bn->grad.data();
                const S* av2 = an->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                            gb[j * k + p] += gij * av2[i * k + p];
                    }
            }
        });
    }
    return out;
}

// y = x*w + b with b broadcast across rows.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    if (b.rank() != 1 || b.size() != w.cols()) {
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) +
                         " does not match output width " + std::to_string(w.cols()));
    }
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* xv = x.values().data();
    const S* wv = w.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t i = 0; i < m; ++i) {
        S* orow = ov + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = bv[j];
        for (std::size_t p = 0; p < k; ++p) {
            const S xip = xv[i * k + p];
            const S* wrow = wv + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += xip * wrow[j];
        }
    }
    count_macs(static_cast<std::uint64_t>(m) * k * n);
    detail::ensure_finite(out, "linear");

    if (detail::tracing<S>({&x, &w, &b})) {
        out.set_requires_grad(true);
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "linear", [xn, wn, bn, on, m, k, n] {
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                S* gx = xn->grad.data();
                const S* wv2 = wn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                            gx[i * k + p] += gij * wv2[p * n + j];
                    }
            }
            if (wn->requires_grad) {
                S* gw = wn->grad.data();
                const S* xv2 = xn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S xip = xv2[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                            gw[p * n + j] += xip * g[i * n + j];
                    }
            }
            if (bn->requires_grad) {
                S* gb = bn->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is limited to equal shapes and
// scalar-vs-tensor; anything else is a shape error.
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { equal, a_scalar, b_scalar };

template <typename S>
inline Broadcast broadcast_mode(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::equal;
    if (a.size() == 1) return Broadcast::a_scalar;
    if (b.size() == 1) return Broadcast::b_scalar;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::broadcast_mode(a, b, "add");
    const Tensor<S>& big = (mode == detail::Broadcast::a_scalar) ? b : a;
    Tensor<S> out = Tensor<S>::zeros(big.shape());
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    const std::size_t nn = out.size();
    for (std::size_t i = 0; i < nn; ++i) {
        const S x = (mode == detail::Broadcast::a_scalar) ? av[0] : av[i];
        const S y = (mode == detail::Broadcast::b_scalar) ? bv[0] : bv[i];
        ov[i] = x + y;
    }
    detail::ensure_finite(out, "add");

    if (detail::tracing<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "add", [an, bn, on, mode, nn] {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                if (mode == detail::Broadcast::a_scalar) {
                    for (std::size_t i = 0; i < nn; ++i) an->grad[0] += g[i];
                } else {
                    for (std::size_t i = 0; i < nn; ++i) an->grad[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                if (mode == detail::Broadcast::b_scalar) {
                    for (std::size_t i = 0; i < nn; ++i) bn->grad[0] += g[i];
                } else {
                    for (std::size_t i = 0; i < nn; ++i) bn->grad[i] += g[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::broadcast_mode(a, b, "sub");
    const Tensor<S>& big = (mode == detail::Broadcast::a_scalar) ? b : a;
    Tensor<S> out = Tensor<S>::zeros(big.shape());
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    const std::size_t nn = out.size();
    for (std::size_t i = 0; i < nn; ++i) {
        const S x = (mode == detail::Broadcast::a_scalar) ? av[0] : av[i];
        const S y = (mode == detail::Broadcast::b_scalar) ? bv[0] : bv[i];
        ov[i] = x - y;
    }
    detail::ensure_finite(out, "sub");

    if (detail::tracing<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "sub", [an, bn, on, mode, nn] {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                if (mode == detail::Broadcast::a_scalar) {
                    for (std::size_t i = 0; i < nn; ++i) an->grad[0] += g[i];
                } else {
                    for (std::size_t i = 0; i < nn; ++i) an->grad[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                if (mode == detail::Broadcast::b_scalar) {
                    for (std::size_t i = 0; i < nn; ++i) bn->grad[0] -= g[i];
                } else {
                    for (std::size_t i = 0; i < nn; ++i) bn->grad[i] -= g[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::broadcast_mode(a, b, "mul");
    const Tensor<S>& big = (mode == detail::Broadcast::a_scalar) ? b : a;
    Tensor<S> out = Tensor<S>::zeros(big.shape());
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    const std::size_t nn = out.size();
    for (std::size_t i = 0; i < nn; ++i) {
        const S x = (mode == detail::Broadcast::a_scalar) ? av[0] : av[i];
        const S y = (mode == detail::Broadcast::b_scalar) ? bv[0] : bv[i];
        ov[i] = x * y;
    }
    detail::ensure_finite(out, "mul");

    if (detail::tracing<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape<S>()->record(on, "mul", [an, bn, on, mode, nn] {
            const S* g = on->grad.data();
            const S* av2 = an->value.data();
            const S* bv2 = bn->value.data();
            if (an->requires_grad) {
                for (std::size_t i = 0; i < nn; ++i) {
                    const S y = (mode == detail::Broadcast::b_scalar) ? bv2[0] : bv2[i];
                    if (mode == detail::Broadcast::a_scalar) {
                        an->grad[0] += g[i] * y;
                    } else {
                        an->grad[i] += g[i] * y;
                    }
                }
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < nn; ++i) {
                    const S x = (mode == detail::Broadcast::a_scalar) ? av2[0] : av2[i];
                    if (mode == detail::Broadcast::b_scalar) {
                        bn->grad[0] += g[i] * x;
                    } else {
                        bn->grad[i] += g[i] * x;
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    const S cs = static_cast<S>(c);
    for (std::size_t i = 0; i < out.size(); ++i) ov[i] = cs * xv[i];
    detail::ensure_finite(out, "scale");

    if (detail::tracing<S>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        active_tape<S>()->record(on, "scale", [xn, on, cs] {
            if (!xn->requires_grad) return;
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[i] += cs * on->grad[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        ov[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    detail::ensure_finite(out, "gelu");

    if (detail::tracing<S>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        active_tape<S>()->record(on, "gelu", [xn, on, inv_sqrt2] {
            if (!xn->requires_grad) return;
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double v = static_cast<double>(xn->value[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                xn->grad[i] += static_cast<S>((cdf + v * pdf)) * on->grad[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t i = 0; i < out.size(); ++i) ov[i] = xv[i] > S{0} ? xv[i] : S{0};
    detail::ensure_finite(out, "relu");

    if (detail::tracing<S>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        active_tape<S>()->record(on, "relu", [xn, on] {
            if (!xn->requires_grad) return;
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xn->value[i] > S{0}) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis, with optional admissibility mask.
// ---------------------------------------------------------------------------

// Lower-triangular admissibility: row i may attend to columns 0..i.
// Disallowed positions are excluded inside the softmax (equivalent to setting
// their logits to -inf before normalizing).
struct AttentionMask {
    std::size_t n = 0;
    std::vector<std::uint8_t> allow;  // row-major n*n, 1 = admissible

    bool allowed(std::size_t i, std::size_t j) const { return allow[i * n + j] != 0; }
};

inline AttentionMask causal_attention_mask(std::size_t n) {
    AttentionMask m;
    m.n = n;
    m.allow.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.allow[i * n + j] = 1;
    return m;
}

template <typename S>
Tensor<S> softmax_lastaxis(const Tensor<S>& x, const AttentionMask* mask = nullptr) {
    const std::size_t c = detail::last_extent(x.shape());
    const std::size_t rows = x.size() / c;
    if (mask && mask->n != c) {
        throw ShapeError("softmax mask size " + std::to_string(mask->n) +
                         " does not match last extent " + std::to_string(c));
    }
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = xv + r * c;
        S* orow = ov + r * c;
        const std::size_t mi = mask ? (r % mask->n) : 0;
        double m = -1e300;
        for (std::size_t j = 0; j < c; ++j) {
            if (mask && !mask->allowed(mi, j)) continue;
            m = std::max(m, static_cast<double>(row[j]));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (mask && !mask->allowed(mi, j)) {
                orow[j] = S{0};
                continue;
            }
            const double e = std::exp(static_cast<double>(row[j]) - m);
            orow[j] = static_cast<S>(e);
            z += e;
        }
        if (z <= 0.0) throw NumericError("softmax row has no admissible entries");
        const S invz = static_cast<S>(1.0 / z);
        for (std::size_t j = 0; j < c; ++j) orow[j] *= invz;
    }
    detail::ensure_finite(out, "softmax");

    if (detail::tracing<S>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        active_tape<S>()->record(on, "softmax", [xn, on, rows, c] {
            if (!xn->requires_grad) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = on->value.data() + r * c;
                const S* g = on->grad.data() + r * c;
                S dot{0};
                for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                S* gx = xn->grad.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis (population variance) with affine.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps) {
    const std::size_t c = detail::last_extent(x.shape());
    if (gain.size() != c || bias.size() != c) {
        throw ShapeError("layer_norm: gain/bias shapes " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last extent " +
                         std::to_string(c));
    }
    if (eps < 0.0) throw ContractError("layer_norm: eps must be >= 0");
    const std::size_t rows = x.size() / c;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    std::vector<S> xhat(x.size());
    std::vector<S> inv_std(rows);
    const S* xv = x.values().data();
    const S* gv = gain.values().data();
    const S* bv = bias.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = xv + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += static_cast<double>(row[j]);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = static_cast<double>(row[j]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double denom = var + eps;
        if (denom <= 0.0) {
            throw NumericError("layer_norm: zero variance with eps=0 (division degeneracy)");
        }
        const double istd = 1.0 / std::sqrt(denom);
        inv_std[r] = static_cast<S>(istd);
        for (std::size_t j = 0; j < c; ++j) {
            const S xh = static_cast<S>((static_cast<double>(row[j]) - mean) * istd);
            xhat[r * c + j] = xh;
            ov[r * c + j] = gv[j] * xh + bv[j];
        }
    }
    detail::ensure_finite(out, "layer_norm");

    if (detail::tracing<S>({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        active_tape<S>()->record(
            on, "layer_norm",
            [xn, gn, bn, on, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                const S* g = on->grad.data();
                const S* gv2 = gn->value.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const S* grow = g + r * c;
                    const S* xh = xhat.data() + r * c;
                    if (gn->requires_grad) {
                        for (std::size_t j = 0; j < c; ++j)
                            gn->grad[j] += grow[j] * xh[j];
                    }
                    if (bn->requires_grad) {
                        for (std::size_t j = 0; j < c; ++j) bn->grad[j] += grow[j];
                    }
                    if (xn->requires_grad) {
                        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                            const double dxh = static_cast<double>(grow[j]) * gv2[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * static_cast<double>(xh[j]);
                        }
                        const double inv_c = 1.0 / static_cast<double>(c);
                        const double istd = static_cast<double>(inv_std[r]);
                        for (std::size_t j = 0; j < c; ++j) {
                            const double dxh = static_cast<double>(grow[j]) * gv2[j];
                            const double dx =
                                istd * (dxh - inv_c * sum_dxhat -
                                        static_cast<double>(xh[j]) * inv_c * sum_dxhat_xhat);
                            xn->grad[r * c + j] += static_cast<S>(dx);
                        }
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Split / concat along the last axis. Exact inverses of each other; values
// are copied, gradients route back to the matching slice.
// ---------------------------------------------------------------------------

template <typename S>
std::vector<Tensor<S>> split_last(const Tensor<S>& x, const std::vector<std::size_t>& sizes) {
    const std::size_t c = detail::last_extent(x.shape());
    std::size_t total = 0;
    for (std::size_t d : sizes) {
        if (d == 0) throw PartitionError("split_last: slice sizes must be >= 1");
        total += d;
    }
    if (total != c) {
        throw PartitionError("split_last: slice sizes sum to " + std::to_string(total) +
                             " but last extent is " + std::to_string(c));
    }
    const std::size_t rows = x.size() / c;
    std::vector<Tensor<S>> parts;
    parts.reserve(sizes.size());
    const S* xv = x.values().data();
    const bool rec = detail::tracing<S>({&x});
    std::size_t offset = 0;
    for (std::size_t d : sizes) {
        std::vector<std::size_t> shape = x.shape();
        shape.back() = d;
        Tensor<S> part = Tensor<S>::zeros(shape);
        S* pv = part.values_mut().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) pv[r * d + j] = xv[r * c + offset + j];
        if (rec) {
            part.set_requires_grad(true);
            auto xn = x.node(), pn = part.node();
            active_tape<S>()->record(pn, "split_last", [xn, pn, rows, c, d, offset] {
                if (!xn->requires_grad) return;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        xn->grad[r * c + offset + j] += pn->grad[r * d + j];
            });
        }
        parts.push_back(std::move(part));
        offset += d;
    }
    return parts;
}

template <typename S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_last: no parts");
    std::vector<std::size_t> lead = parts[0].shape();
    lead.pop_back();
    std::size_t c = 0;
    for (const Tensor<S>& p : parts) {
        std::vector<std::size_t> pl = p.shape();
        pl.pop_back();
        if (pl != lead) {
            throw ShapeError("concat_last: leading shapes differ, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        c += detail::last_extent(p.shape());
    }
    std::vector<std::size_t> shape = parts[0].shape();
    shape.back() = c;
    Tensor<S> out = Tensor<S>::zeros(shape);
    const std::size_t rows = out.size() / c;
    S* ov = out.values_mut().data();
    bool any_rg = false;
    for (const Tensor<S>& p : parts) any_rg = any_rg || p.requires_grad();
    const bool rec = active_tape<S>() != nullptr && any_rg;

    std::size_t offset = 0;
    for (const Tensor<S>& p : parts) {
        const std::size_t d = detail::last_extent(p.shape());
        const S* pv = p.values().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) ov[r * c + offset + j] = pv[r * d + j];
        offset += d;
    }
    if (rec) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<S>>> pns;
        pns.reserve(parts.size());
        for (const Tensor<S>& p : parts) pns.push_back(p.node());
        auto on = out.node();
        active_tape<S>()->record(on, "concat_last", [pns, on, rows, c] {
            std::size_t off = 0;
            for (const auto& pn : pns) {
                const std::size_t d = pn->shape.back();
                if (pn->requires_grad) {
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j)
                            pn->grad[r * d + j] += on->grad[r * c + off + j];
                }
                off += d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc{0};
    for (S v : x.values()) acc += v;
    Tensor<S> out = Tensor<S>::scalar(acc);
    detail::ensure_finite(out, "sum");
    if (detail::tracing<S>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        active_tape<S>()->record(on, "sum", [xn, on] {
            if (!xn->requires_grad) return;
            const S g = on->grad[0];
            for (S& gv : xn->grad) gv += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Embedding row lookup: out[t] = table[ids[t]].
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    }
    const std::size_t v = table.rows(), c = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw std::out_of_range("embedding: id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(v));
        }
    }
    Tensor<S> out = Tensor<S>::zeros({ids.size(), c});
    const S* tv = table.values().data();
    S* ov = out.values_mut().data();
    for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t j = 0; j < c; ++j)
            ov[t * c + j] = tv[static_cast<std::size_t>(ids[t]) * c + j];
    if (detail::tracing<S>({&table})) {
        out.set_requires_grad(true);
        auto tn = table.node(), on = out.node();
        active_tape<S>()->record(on, "embedding", [tn, on, ids, c] {
            if (!tn->requires_grad) return;
            for (std::size_t t = 0; t < ids.size(); ++t)
                for (std::size_t j = 0; j < c; ++j)
                    tn->grad[static_cast<std::size_t>(ids[t]) * c + j] +=
                        on->grad[t * c + j];
        });
    }
    return out;
}

// Mean cross-entropy over rows of logits against integer targets.
template <typename S>
Tensor<S> cross_entropy_mean(const Tensor<S>& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2 || logits.rows() != targets.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(targets.size()) + " targets");
    }
    const std::size_t n = logits.rows(), v = logits.cols();
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                                    " outside class range " + std::to_string(v));
        }
    }
    const S* lv = logits.values().data();
    double total = 0.0;
    std::vector<S> softmax_cache(n * v);
    for (std::size_t i = 0; i < n; ++i) {
        const S* row = lv + i * v;
        double m = static_cast<double>(row[0]);
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, static_cast<double>(row[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - m);
        const double lse = m + std::log(z);
        total += lse - static_cast<double>(row[targets[i]]);
        for (std::size_t j = 0; j < v; ++j)
            softmax_cache[i * v + j] =
                static_cast<S>(std::exp(static_cast<double>(row[j]) - lse));
    }
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
    detail::ensure_finite(out, "cross_entropy");

    if (detail::tracing<S>({&logits})) {
        out.set_requires_grad(true);
        auto ln = logits.node(), on = out.node();
        active_tape<S>()->record(
            on, "cross_entropy",
            [ln, on, targets, n, v, softmax_cache = std::move(softmax_cache)] {
                if (!ln->requires_grad) return;
                const S g = on->grad[0] / static_cast<S>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < v; ++j)
                        ln->grad[i * v + j] += g * softmax_cache[i * v + j];
                    ln->grad[i * v + static_cast<std::size_t>(targets[i])] -= g;
                }
            });
    }
    return out;
}

}  // namespace stepsnet
