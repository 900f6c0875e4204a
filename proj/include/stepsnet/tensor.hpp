#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stepsnet/error.hpp"

namespace stepsnet {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major n-d value array with optional gradient buffer.
// Tensors share their storage node, so copying a Tensor aliases the same
// values and gradient. Element type is float or double, fixed per tensor.
// ---------------------------------------------------------------------------

template <typename S>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<S> value;
    std::vector<S> grad;  // sized like value iff requires_grad
    bool requires_grad = false;
};

template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), S{0}, requires_grad);
    }

    static Tensor filled(std::vector<std::size_t> shape, S v, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(shape_numel(t.node_->shape), v);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor from_vector(std::vector<std::size_t> shape, std::vector<S> data,
                              bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from_vector({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    // Convenience for the rank-2 case used throughout the blocks.
    std::size_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 0; }
    std::size_t cols() const { return node_->shape.empty() ? 0 : node_->shape.back(); }

    std::span<const S> values() const { return node_->value; }
    std::span<S> values_mut() { return node_->value; }

    S item() const {
        if (size() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                shape_str(node_->shape));
        }
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    void set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        if (flag) {
            node_->grad.assign(node_->value.size(), S{0});
        } else {
            node_->grad.clear();
        }
    }

    std::span<const S> grad() const { return node_->grad; }
    std::span<S> grad_mut() { return node_->grad; }

    void zero_grad() {
        std::fill(node_->grad.begin(), node_->grad.end(), S{0});
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

    // Deep copy of values (and requires_grad flag; gradient starts at zero).
    Tensor clone() const {
        Tensor t = from_vector(node_->shape, node_->value, node_->requires_grad);
        return t;
    }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

// ---------------------------------------------------------------------------
// ComputationTape: ordered record of operations for reverse-mode autodiff.
// Records are appended in execution order, so the list is topologically
// sorted by construction. backward() seeds d(loss)=1 and walks the records
// once in reverse, each record accumulating into its inputs' gradients.
// Repeated backward() calls accumulate; callers zero gradients explicitly.
// ---------------------------------------------------------------------------

template <typename S>
class ComputationTape {
public:
    struct Record {
        std::shared_ptr<TensorNode<S>> out;
        std::function<void()> backprop;
        std::string op;
    };

    void record(std::shared_ptr<TensorNode<S>> out, std::string op,
                std::function<void()> backprop) {
        records_.push_back({std::move(out), std::move(backprop), std::move(op)});
    }

    void backward(const Tensor<S>& loss) {
        if (loss.size() != 1) {
            throw ContractError("backward() requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
        }
        auto node = loss.node();
        if (!node->requires_grad) {
            throw ContractError("backward() called on a loss that does not require grad");
        }
        // Op outputs start each pass fresh; only leaves accumulate across calls.
        for (Record& r : records_) {
            if (r.out->requires_grad) std::fill(r.out->grad.begin(), r.out->grad.end(), S{0});
        }
        node->grad[0] = S{1};
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            it->backprop();
        }
    }

    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

private:
    std::vector<Record> records_;
};

namespace detail {
template <typename S>
inline ComputationTape<S>*& active_tape_slot() {
    thread_local ComputationTape<S>* tape = nullptr;
    return tape;
}
}  // namespace detail

template <typename S>
inline ComputationTape<S>* active_tape() {
    return detail::active_tape_slot<S>();
}

// Activates a tape for the current thread while in scope.
template <typename S>
class TapeScope {
public:
    explicit TapeScope(ComputationTape<S>& tape)
        : prev_(detail::active_tape_slot<S>()) {
        detail::active_tape_slot<S>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<S>() = prev_; }

    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    ComputationTape<S>* prev_;
};

// ---------------------------------------------------------------------------
// Random helpers. All randomness in the project flows through explicitly
// seeded engines so runs are reproducible.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
template <typename S>
inline void fill_trunc_normal(Tensor<S>& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (S& v : t.values_mut()) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * stddev) x = dist(rng);
        v = static_cast<S>(x);
    }
}

template <typename S>
inline void fill_normal(Tensor<S>& t, double mean, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(mean, stddev);
    for (S& v : t.values_mut()) v = static_cast<S>(dist(rng));
}

template <typename S>
inline void fill_uniform(Tensor<S>& t, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (S& v : t.values_mut()) v = static_cast<S>(dist(rng));
}

}  // namespace stepsnet
