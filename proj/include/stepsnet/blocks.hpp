#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stepsnet/costing.hpp"
#include "stepsnet/error.hpp"
#include "stepsnet/ops.hpp"
#include "stepsnet/tensor.hpp"

// Residual building blocks: a pre-norm transformer block (norm, attention,
// add, norm, MLP, add) and an attention-free MLP block (norm, MLP, add), plus
// a plain stack of either. Widths are uniform within a stack; the branch
// output layers can be zeroed to turn every block into an exact identity.

namespace stepsnet {

template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

namespace detail {

template <typename S>
inline void init_linear_pair(Tensor<S>& w, Tensor<S>& b, Rng& rng, double weight_std) {
    fill_trunc_normal(w, weight_std, rng);
    std::fill(b.values_mut().begin(), b.values_mut().end(), S{0});
}

template <typename S>
inline void set_zero(Tensor<S>& t) {
    std::fill(t.values_mut().begin(), t.values_mut().end(), S{0});
}

}  // namespace detail

template <typename S>
class TransformerBlock {
public:
    TransformerBlock(std::size_t width, std::size_t heads, double ln_eps = 1e-5)
        : width_(width), heads_(heads), ln_eps_(ln_eps) {
        if (width == 0 || heads == 0 || width % heads != 0) {
            throw ConfigError("transformer block: width " + std::to_string(width) +
                              " must be a positive multiple of heads " +
                              std::to_string(heads));
        }
        ln1_gain_ = Tensor<S>::filled({width}, S{1});
        ln1_bias_ = Tensor<S>::zeros({width});
        w_qkv_ = Tensor<S>::zeros({width, 3 * width});
        b_qkv_ = Tensor<S>::zeros({3 * width});
        w_out_ = Tensor<S>::zeros({width, width});
        b_out_ = Tensor<S>::zeros({width});
        ln2_gain_ = Tensor<S>::filled({width}, S{1});
        ln2_bias_ = Tensor<S>::zeros({width});
        w_fc1_ = Tensor<S>::zeros({width, 4 * width});
        b_fc1_ = Tensor<S>::zeros({4 * width});
        w_fc2_ = Tensor<S>::zeros({4 * width, width});
        b_fc2_ = Tensor<S>::zeros({width});
    }

    std::size_t width() const { return width_; }
    std::size_t heads() const { return heads_; }

    // weight_std scales the truncated-normal weight draw. Narrow models need
    // a larger value than the 0.02 customary at width 768 for the residual
    // branches to carry comparable relative energy.
    void init(Rng& rng, double weight_std = 0.02) {
        detail::init_linear_pair(w_qkv_, b_qkv_, rng, weight_std);
        detail::init_linear_pair(w_out_, b_out_, rng, weight_std);
        detail::init_linear_pair(w_fc1_, b_fc1_, rng, weight_std);
        detail::init_linear_pair(w_fc2_, b_fc2_, rng, weight_std);
        std::fill(ln1_gain_.values_mut().begin(), ln1_gain_.values_mut().end(), S{1});
        detail::set_zero(ln1_bias_);
        std::fill(ln2_gain_.values_mut().begin(), ln2_gain_.values_mut().end(), S{1});
        detail::set_zero(ln2_bias_);
    }

    // Test mode: zero every branch output layer so the block is the identity.
    void zero_branch_outputs() {
        detail::set_zero(w_out_);
        detail::set_zero(b_out_);
        detail::set_zero(w_fc2_);
        detail::set_zero(b_fc2_);
    }

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* mask = nullptr) const {
        if (x.cols() != width_) {
            throw ShapeError("transformer block of width " + std::to_string(width_) +
                             " applied to input " + shape_str(x.shape()));
        }
        const std::size_t head_dim = width_ / heads_;

        Tensor<S> h = layer_norm(x, ln1_gain_, ln1_bias_, ln_eps_);
        Tensor<S> qkv = linear(h, w_qkv_, b_qkv_);
        std::vector<Tensor<S>> qkv_parts = split_last(qkv, {width_, width_, width_});
        const std::vector<std::size_t> head_sizes(heads_, head_dim);
        std::vector<Tensor<S>> q = split_last(qkv_parts[0], head_sizes);
        std::vector<Tensor<S>> k = split_last(qkv_parts[1], head_sizes);
        std::vector<Tensor<S>> v = split_last(qkv_parts[2], head_sizes);

        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(heads_);
        for (std::size_t hh = 0; hh < heads_; ++hh) {
            Tensor<S> scores = scale(matmul_nt(q[hh], k[hh]), inv_sqrt_d);
            Tensor<S> attn = softmax_lastaxis(scores, mask);
            head_outs.push_back(matmul(attn, v[hh]));
        }
        Tensor<S> attended = concat_last(head_outs);
        Tensor<S> x1 = add(x, linear(attended, w_out_, b_out_));

        Tensor<S> h2 = layer_norm(x1, ln2_gain_, ln2_bias_, ln_eps_);
        Tensor<S> mlp = linear(gelu(linear(h2, w_fc1_, b_fc1_)), w_fc2_, b_fc2_);
        return add(x1, mlp);
    }

    void collect_params(std::vector<NamedParam<S>>& out, const std::string& prefix) {
        out.push_back({prefix + "ln1.gain", ln1_gain_});
        out.push_back({prefix + "ln1.bias", ln1_bias_});
        out.push_back({prefix + "qkv.weight", w_qkv_});
        out.push_back({prefix + "qkv.bias", b_qkv_});
        out.push_back({prefix + "out.weight", w_out_});
        out.push_back({prefix + "out.bias", b_out_});
        out.push_back({prefix + "ln2.gain", ln2_gain_});
        out.push_back({prefix + "ln2.bias", ln2_bias_});
        out.push_back({prefix + "fc1.weight", w_fc1_});
        out.push_back({prefix + "fc1.bias", b_fc1_});
        out.push_back({prefix + "fc2.weight", w_fc2_});
        out.push_back({prefix + "fc2.bias", b_fc2_});
    }

private:
    std::size_t width_;
    std::size_t heads_;
    double ln_eps_;
    Tensor<S> ln1_gain_, ln1_bias_;
    Tensor<S> w_qkv_, b_qkv_, w_out_, b_out_;
    Tensor<S> ln2_gain_, ln2_bias_;
    Tensor<S> w_fc1_, b_fc1_, w_fc2_, b_fc2_;
};

template <typename S>
class MlpBlock {
public:
    explicit MlpBlock(std::size_t width, double ln_eps = 1e-5)
        : width_(width), ln_eps_(ln_eps) {
        if (width == 0) throw ConfigError("mlp block: width must be positive");
        ln_gain_ = Tensor<S>::filled({width}, S{1});
        ln_bias_ = Tensor<S>::zeros({width});
        w_fc1_ = Tensor<S>::zeros({width, 4 * width});
        b_fc1_ = Tensor<S>::zeros({4 * width});
        w_fc2_ = Tensor<S>::zeros({4 * width, width});
        b_fc2_ = Tensor<S>::zeros({width});
    }

    std::size_t width() const { return width_; }

    void init(Rng& rng, double weight_std = 0.02) {
        detail::init_linear_pair(w_fc1_, b_fc1_, rng, weight_std);
        detail::init_linear_pair(w_fc2_, b_fc2_, rng, weight_std);
        std::fill(ln_gain_.values_mut().begin(), ln_gain_.values_mut().end(), S{1});
        detail::set_zero(ln_bias_);
    }

    void zero_branch_outputs() {
        detail::set_zero(w_fc2_);
        detail::set_zero(b_fc2_);
    }

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* /*mask*/ = nullptr) const {
        if (x.cols() != width_) {
            throw ShapeError("mlp block of width " + std::to_string(width_) +
                             " applied to input " + shape_str(x.shape()));
        }
        Tensor<S> h = layer_norm(x, ln_gain_, ln_bias_, ln_eps_);
        Tensor<S> branch = linear(gelu(linear(h, w_fc1_, b_fc1_)), w_fc2_, b_fc2_);
        return add(x, branch);
    }

    void collect_params(std::vector<NamedParam<S>>& out, const std::string& prefix) {
        out.push_back({prefix + "ln.gain", ln_gain_});
        out.push_back({prefix + "ln.bias", ln_bias_});
        out.push_back({prefix + "fc1.weight", w_fc1_});
        out.push_back({prefix + "fc1.bias", b_fc1_});
        out.push_back({prefix + "fc2.weight", w_fc2_});
        out.push_back({prefix + "fc2.bias", b_fc2_});
    }

private:
    std::size_t width_;
    double ln_eps_;
    Tensor<S> ln_gain_, ln_bias_;
    Tensor<S> w_fc1_, b_fc1_, w_fc2_, b_fc2_;
};

// A uniform-width sequence of residual blocks. An empty stack is the
// identity. The optional trace output receives the activation after every
// block, in order.
template <typename S>
class ResidualStack {
public:
    ResidualStack(BlockKind kind, std::size_t width, std::size_t depth,
                  std::size_t heads = 1, double ln_eps = 1e-5)
        : kind_(kind), width_(width) {
        if (kind == BlockKind::transformer) {
            tblocks_.reserve(depth);
            for (std::size_t i = 0; i < depth; ++i)
                tblocks_.emplace_back(width, heads, ln_eps);
        } else {
            mblocks_.reserve(depth);
            for (std::size_t i = 0; i < depth; ++i) mblocks_.emplace_back(width, ln_eps);
        }
    }

    BlockKind kind() const { return kind_; }
    std::size_t width() const { return width_; }
    std::size_t depth() const {
        return kind_ == BlockKind::transformer ? tblocks_.size() : mblocks_.size();
    }

    void init(Rng& rng, double weight_std = 0.02) {
        for (auto& b : tblocks_) b.init(rng, weight_std);
        for (auto& b : mblocks_) b.init(rng, weight_std);
    }

    void zero_branch_outputs() {
        for (auto& b : tblocks_) b.zero_branch_outputs();
        for (auto& b : mblocks_) b.zero_branch_outputs();
    }

    void drop_last_blocks(std::size_t count) {
        if (count > depth()) {
            throw std::out_of_range("cannot drop " + std::to_string(count) +
                                    " blocks from a stack of depth " +
                                    std::to_string(depth()));
        }
        if (kind_ == BlockKind::transformer) {
            tblocks_.erase(tblocks_.end() - static_cast<std::ptrdiff_t>(count),
                           tblocks_.end());
        } else {
            mblocks_.erase(mblocks_.end() - static_cast<std::ptrdiff_t>(count),
                           mblocks_.end());
        }
    }

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* mask = nullptr,
                      std::vector<Tensor<S>>* trace = nullptr) const {
        if (x.cols() != width_) {
            throw ShapeError("stack of width " + std::to_string(width_) +
                             " applied to input " + shape_str(x.shape()));
        }
        Tensor<S> z = x;
        if (kind_ == BlockKind::transformer) {
            for (const auto& b : tblocks_) {
                z = b.forward(z, mask);
                if (trace) trace->push_back(z);
            }
        } else {
            for (const auto& b : mblocks_) {
                z = b.forward(z, mask);
                if (trace) trace->push_back(z);
            }
        }
        return z;
    }

    void collect_params(std::vector<NamedParam<S>>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < tblocks_.size(); ++i)
            tblocks_[i].collect_params(out, prefix + "block" + std::to_string(i) + ".");
        for (std::size_t i = 0; i < mblocks_.size(); ++i)
            mblocks_[i].collect_params(out, prefix + "block" + std::to_string(i) + ".");
    }

private:
    BlockKind kind_;
    std::size_t width_;
    std::vector<TransformerBlock<S>> tblocks_;
    std::vector<MlpBlock<S>> mblocks_;
};

template <typename S>
std::uint64_t param_count(const std::vector<NamedParam<S>>& params) {
    std::uint64_t total = 0;
    for (const auto& p : params) total += p.tensor.size();
    return total;
}

template <typename S>
void set_params_requires_grad(std::vector<NamedParam<S>>& params, bool flag) {
    for (auto& p : params) p.tensor.set_requires_grad(flag);
}

template <typename S>
void zero_param_grads(std::vector<NamedParam<S>>& params) {
    for (auto& p : params) {
        if (p.tensor.requires_grad()) p.tensor.zero_grad();
    }
}

}  // namespace stepsnet
