#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stepsnet/blocks.hpp"
#include "stepsnet/costing.hpp"
#include "stepsnet/error.hpp"
#include "stepsnet/ops.hpp"
#include "stepsnet/tensor.hpp"

// The steps macro-architecture. The input of width C is split into channel
// slices d_1..d_n; sub-network F_i runs at width C_i = d_1+...+d_i, consuming
// the previous step's output concatenated with the next raw slice:
//
//   y_1 = F_1(x_1),   y_i = F_i([y_{i-1}, x_i]),   output = y_n.
//
// Each F_i is a plain residual stack. A 1-step model degenerates to exactly
// that stack. The reverse variant runs the same stacks wide to narrow and
// peels off a trailing channel slice after each step.

namespace stepsnet {

struct StepsConfig {
    BlockKind kind = BlockKind::mlp;
    std::vector<std::size_t> step_widths;  // C_1..C_n, strictly increasing
    std::vector<std::size_t> depths;       // D_1..D_n
    std::vector<std::size_t> heads;        // per step; may be empty for mlp kind
    double ln_eps = 1e-5;

    std::size_t steps() const { return step_widths.size(); }
    std::size_t full_width() const {
        return step_widths.empty() ? 0 : step_widths.back();
    }

    // d_i = C_i - C_{i-1}; the channel slice newly injected at step i.
    std::vector<std::size_t> slice_widths() const {
        std::vector<std::size_t> d(step_widths.size());
        for (std::size_t i = 0; i < step_widths.size(); ++i)
            d[i] = step_widths[i] - (i == 0 ? 0 : step_widths[i - 1]);
        return d;
    }

    std::size_t total_blocks() const {
        std::size_t total = 0;
        for (std::size_t v : depths) total += v;
        return total;
    }

    void validate() const {
        if (step_widths.empty()) throw ConfigError("steps config: needs at least 1 step");
        if (depths.size() != step_widths.size()) {
            throw ConfigError("steps config: " + std::to_string(step_widths.size()) +
                              " widths but " + std::to_string(depths.size()) + " depths");
        }
        for (std::size_t i = 0; i < step_widths.size(); ++i) {
            if (step_widths[i] == 0)
                throw ConfigError("steps config: step width must be positive");
            if (i > 0 && step_widths[i] <= step_widths[i - 1]) {
                throw ConfigError("steps config: step widths must be strictly "
                                  "increasing, got " +
                                  std::to_string(step_widths[i - 1]) + " then " +
                                  std::to_string(step_widths[i]));
            }
        }
        if (kind == BlockKind::transformer) {
            if (heads.size() != step_widths.size()) {
                throw ConfigError("steps config: transformer kind needs one head count "
                                  "per step");
            }
            for (std::size_t i = 0; i < heads.size(); ++i) {
                if (heads[i] == 0 || step_widths[i] % heads[i] != 0) {
                    throw ConfigError("steps config: width " +
                                      std::to_string(step_widths[i]) +
                                      " is not a multiple of head count " +
                                      std::to_string(heads[i]));
                }
            }
        } else if (!heads.empty() && heads.size() != step_widths.size()) {
            throw ConfigError("steps config: heads list length mismatch");
        }
    }

    std::size_t heads_at(std::size_t i) const {
        return i < heads.size() ? heads[i] : 1;
    }

    ModelDesc cost_desc() const {
        ModelDesc d;
        d.kind = kind;
        for (std::size_t i = 0; i < step_widths.size(); ++i)
            d.stages.push_back({step_widths[i], depths[i], heads_at(i)});
        return d;
    }
};

// Mirror for the reverse (wide to narrow) design: same stacks, opposite order.
inline StepsConfig mirrored(const StepsConfig& cfg) {
    StepsConfig m = cfg;
    std::reverse(m.step_widths.begin(), m.step_widths.end());
    std::reverse(m.depths.begin(), m.depths.end());
    std::reverse(m.heads.begin(), m.heads.end());
    return m;
}

// ---------------------------------------------------------------------------
// Generic wiring. The per-step callable lets tests drive the exact channel
// bookkeeping with hand-built stand-ins; the models below pass their stacks.
// step(i, z) must map an [N x C_i] tensor to the same shape.
// ---------------------------------------------------------------------------

template <typename S, typename StepFn>
Tensor<S> steps_forward_generic(const Tensor<S>& x,
                                const std::vector<std::size_t>& slice_widths,
                                StepFn&& step) {
    std::vector<Tensor<S>> slices = split_last(x, slice_widths);
    Tensor<S> y = step(std::size_t{0}, slices[0]);
    if (y.shape() != slices[0].shape()) {
        throw PartitionError("step 1 changed shape from " + shape_str(slices[0].shape()) +
                             " to " + shape_str(y.shape()));
    }
    for (std::size_t i = 1; i < slices.size(); ++i) {
        Tensor<S> z = concat_last(std::vector<Tensor<S>>{y, slices[i]});
        y = step(i, z);
        if (y.shape() != z.shape()) {
            throw PartitionError("step " + std::to_string(i + 1) +
                                 " changed shape from " + shape_str(z.shape()) + " to " +
                                 shape_str(y.shape()));
        }
    }
    return y;
}

// Reverse wiring over decreasing widths W_1 > ... > W_n. After each of the
// first n-1 steps the trailing W_i - W_{i+1} channels are peeled off as that
// step's output slice; the final step's full output is kept. The peeled
// slices are reassembled in step order.
template <typename S, typename StepFn>
Tensor<S> reverse_forward_generic(const Tensor<S>& x,
                                  const std::vector<std::size_t>& step_widths,
                                  StepFn&& step) {
    if (step_widths.empty()) throw PartitionError("reverse wiring: no steps");
    for (std::size_t i = 0; i + 1 < step_widths.size(); ++i) {
        if (step_widths[i] <= step_widths[i + 1]) {
            throw PartitionError("reverse wiring: widths must be strictly decreasing");
        }
    }
    std::vector<Tensor<S>> peeled;
    Tensor<S> cur = x;
    for (std::size_t i = 0; i < step_widths.size(); ++i) {
        if (cur.cols() != step_widths[i]) {
            throw PartitionError("reverse wiring: step " + std::to_string(i + 1) +
                                 " expected width " + std::to_string(step_widths[i]) +
                                 " but carries " + shape_str(cur.shape()));
        }
        Tensor<S> t = step(i, cur);
        if (t.shape() != cur.shape()) {
            throw PartitionError("reverse wiring: step " + std::to_string(i + 1) +
                                 " changed shape");
        }
        if (i + 1 < step_widths.size()) {
            auto parts = split_last(
                t, {step_widths[i + 1], step_widths[i] - step_widths[i + 1]});
            cur = parts[0];
            peeled.push_back(parts[1]);
        } else {
            peeled.push_back(t);
        }
    }
    return concat_last(peeled);
}

// ---------------------------------------------------------------------------
// Live models
// ---------------------------------------------------------------------------

// Per-block activations of one full forward pass, grouped by step, plus the
// input each step's stack saw. Feeding for the shortcut-ratio probe.
template <typename S>
struct StepsTrace {
    std::vector<Tensor<S>> step_inputs;
    std::vector<std::vector<Tensor<S>>> step_blocks;
};

template <typename S>
class StepsModel {
public:
    explicit StepsModel(StepsConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        stacks_.reserve(cfg_.steps());
        for (std::size_t i = 0; i < cfg_.steps(); ++i) {
            stacks_.emplace_back(cfg_.kind, cfg_.step_widths[i], cfg_.depths[i],
                                 cfg_.heads_at(i), cfg_.ln_eps);
        }
    }

    const StepsConfig& config() const { return cfg_; }
    ResidualStack<S>& stack(std::size_t i) { return stacks_.at(i); }
    const ResidualStack<S>& stack(std::size_t i) const { return stacks_.at(i); }

    void init(Rng& rng, double weight_std = 0.02) {
        for (auto& s : stacks_) s.init(rng, weight_std);
    }

    void zero_branch_outputs() {
        for (auto& s : stacks_) s.zero_branch_outputs();
    }

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* mask = nullptr,
                      StepsTrace<S>* trace = nullptr) const {
        if (x.cols() != cfg_.full_width()) {
            throw ShapeError("steps model of width " +
                             std::to_string(cfg_.full_width()) + " applied to input " +
                             shape_str(x.shape()));
        }
        if (trace) {
            trace->step_inputs.clear();
            trace->step_blocks.resize(cfg_.steps());
            for (auto& v : trace->step_blocks) v.clear();
        }
        return steps_forward_generic(
            x, cfg_.slice_widths(), [&](std::size_t i, const Tensor<S>& z) {
                if (trace) {
                    trace->step_inputs.push_back(z);
                    return stacks_[i].forward(z, mask, &trace->step_blocks[i]);
                }
                return stacks_[i].forward(z, mask);
            });
    }

    void collect_params(std::vector<NamedParam<S>>& out, const std::string& prefix = "") {
        for (std::size_t i = 0; i < stacks_.size(); ++i)
            stacks_[i].collect_params(out, prefix + "step" + std::to_string(i) + ".");
    }

    // A copy with the last `count` blocks of step `step_index` removed. The
    // surviving blocks share their weights with this model.
    StepsModel drop_blocks(std::size_t step_index, std::size_t count) const {
        if (step_index >= cfg_.steps()) {
            throw std::out_of_range("drop_blocks: step " + std::to_string(step_index) +
                                    " out of range for " + std::to_string(cfg_.steps()) +
                                    " steps");
        }
        StepsModel out = *this;
        out.stacks_[step_index].drop_last_blocks(count);  // throws if count > depth
        out.cfg_.depths[step_index] -= count;
        return out;
    }

private:
    StepsConfig cfg_;
    std::vector<ResidualStack<S>> stacks_;
};

// Wide-to-narrow counterpart. Construct from the mirrored config (decreasing
// widths); parameters mirror the forward model's exactly.
template <typename S>
class ReverseStepsModel {
public:
    explicit ReverseStepsModel(StepsConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.step_widths.empty()) {
            throw ConfigError("reverse steps config: needs at least 1 step");
        }
        for (std::size_t i = 0; i + 1 < cfg_.step_widths.size(); ++i) {
            if (cfg_.step_widths[i] <= cfg_.step_widths[i + 1]) {
                throw ConfigError("reverse steps config: widths must be strictly "
                                  "decreasing");
            }
        }
        if (cfg_.depths.size() != cfg_.step_widths.size()) {
            throw ConfigError("reverse steps config: widths/depths length mismatch");
        }
        stacks_.reserve(cfg_.steps());
        for (std::size_t i = 0; i < cfg_.steps(); ++i) {
            stacks_.emplace_back(cfg_.kind, cfg_.step_widths[i], cfg_.depths[i],
                                 cfg_.heads_at(i), cfg_.ln_eps);
        }
    }

    const StepsConfig& config() const { return cfg_; }

    void init(Rng& rng, double weight_std = 0.02) {
        for (auto& s : stacks_) s.init(rng, weight_std);
    }

    void zero_branch_outputs() {
        for (auto& s : stacks_) s.zero_branch_outputs();
    }

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* mask = nullptr) const {
        if (x.cols() != cfg_.step_widths.front()) {
            throw ShapeError("reverse steps model of width " +
                             std::to_string(cfg_.step_widths.front()) +
                             " applied to input " + shape_str(x.shape()));
        }
        return reverse_forward_generic(
            x, cfg_.step_widths,
            [&](std::size_t i, const Tensor<S>& z) { return stacks_[i].forward(z, mask); });
    }

    void collect_params(std::vector<NamedParam<S>>& out, const std::string& prefix = "") {
        for (std::size_t i = 0; i < stacks_.size(); ++i)
            stacks_[i].collect_params(out, prefix + "step" + std::to_string(i) + ".");
    }

private:
    StepsConfig cfg_;
    std::vector<ResidualStack<S>> stacks_;
};

// ---------------------------------------------------------------------------
// Ablation operations
// ---------------------------------------------------------------------------

enum class PathSide { slow, fast };

inline PathSide path_side_from_string(const std::string& name) {
    if (name == "slow") return PathSide::slow;
    if (name == "fast") return PathSide::fast;
    throw ConfigError("unknown path side '" + name + "' (expected slow or fast)");
}

// Zeroes k channels of the input: the first k (slow side, the slice every
// step processes) or the last k (fast side, the slices injected late). Plain
// value operation for evaluation-time ablations; never recorded on a tape.
template <typename S>
Tensor<S> mask_path(const Tensor<S>& x, PathSide side, std::size_t k) {
    const std::size_t c = detail::last_extent(x.shape());
    if (k > c) {
        throw std::out_of_range("mask_path: cannot mask " + std::to_string(k) +
                                " of " + std::to_string(c) + " channels");
    }
    Tensor<S> out = Tensor<S>::from_vector(
        x.shape(), std::vector<S>(x.values().begin(), x.values().end()));
    auto vals = out.values_mut();
    const std::size_t rows = out.size() / c;
    const std::size_t begin = side == PathSide::slow ? 0 : c - k;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) vals[r * c + begin + j] = S{0};
    return out;
}

// Removes the last `count` blocks of step `step_index`. The returned model
// shares the remaining weights with the original.
template <typename S>
StepsModel<S> drop_step_blocks(const StepsModel<S>& m, std::size_t step_index,
                               std::size_t count) {
    return m.drop_blocks(step_index, count);
}

}  // namespace stepsnet
