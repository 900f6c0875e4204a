#include "stepsnet/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <sstream>

#include "stepsnet/blocks.hpp"
#include "stepsnet/ops.hpp"
#include "stepsnet/tensor.hpp"

namespace stepsnet {
namespace {

using T = Tensor<double>;
using Forward = std::function<T()>;

T random_input(const std::vector<std::size_t>& shape, Rng& rng) {
    T t = T::zeros(shape);
    fill_uniform(t, -2.0, 2.0, rng);
    return t;
}

// Compares the tape gradient of loss() wrt each leaf against central finite
// differences, element by element. Each case pairs the op under test with a
// fixed random weighting so distinct Jacobian entries cannot cancel.
GradCheckResult check_case(const std::string& name, const std::vector<T*>& leaves,
                           const Forward& loss) {
    constexpr double kStep = 1e-4;
    for (T* leaf : leaves) {
        leaf->set_requires_grad(true);
        leaf->zero_grad();
    }
    {
        ComputationTape<double> tape;
        TapeScope<double> scope(tape);
        T out = loss();
        tape.backward(out);
    }

    GradCheckResult result{name, 0.0, 0};
    for (T* leaf : leaves) {
        auto vals = leaf->values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + kStep;
            const double up = loss().item();
            vals[i] = saved - kStep;
            const double down = loss().item();
            vals[i] = saved;

            const double fd = (up - down) / (2.0 * kStep);
            const double an = leaf->grad()[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - an) / denom);
            ++result.checked;
        }
    }
    for (T* leaf : leaves) leaf->set_requires_grad(false);
    return result;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;

    {
        T a = random_input({3, 4}, rng), b = random_input({4, 5}, rng);
        T w = random_input({3, 5}, rng);
        out.push_back(check_case("matmul", {&a, &b},
                                 [&] { return sum(mul(matmul(a, b), w)); }));
    }
    {
        T a = random_input({3, 4}, rng), b = random_input({5, 4}, rng);
        T w = random_input({3, 5}, rng);
        out.push_back(check_case("matmul_nt", {&a, &b},
                                 [&] { return sum(mul(matmul_nt(a, b), w)); }));
    }
    {
        T x = random_input({4, 3}, rng), w = random_input({3, 6}, rng);
        T b = random_input({6}, rng), mix = random_input({4, 6}, rng);
        out.push_back(check_case("linear", {&x, &w, &b},
                                 [&] { return sum(mul(linear(x, w, b), mix)); }));
    }
    {
        T a = random_input({3, 5}, rng), b = random_input({3, 5}, rng);
        T w = random_input({3, 5}, rng);
        out.push_back(
            check_case("add", {&a, &b}, [&] { return sum(mul(add(a, b), w)); }));
        out.push_back(
            check_case("sub", {&a, &b}, [&] { return sum(mul(sub(a, b), w)); }));
        out.push_back(
            check_case("mul", {&a, &b}, [&] { return sum(mul(mul(a, b), w)); }));
    }
    {
        T a = random_input({3, 5}, rng), s = random_input({1}, rng);
        T w = random_input({3, 5}, rng);
        out.push_back(check_case("add scalar broadcast", {&a, &s},
                                 [&] { return sum(mul(add(a, s), w)); }));
        out.push_back(check_case("mul scalar broadcast", {&a, &s},
                                 [&] { return sum(mul(mul(s, a), w)); }));
    }
    {
        T x = random_input({4, 6}, rng), w = random_input({4, 6}, rng);
        out.push_back(
            check_case("scale", {&x}, [&] { return sum(mul(scale(x, -1.7), w)); }));
        out.push_back(
            check_case("gelu", {&x}, [&] { return sum(mul(gelu(x), w)); }));
        out.push_back(
            check_case("relu", {&x}, [&] { return sum(mul(relu(x), w)); }));
    }
    {
        T x = random_input({5, 7}, rng), w = random_input({5, 7}, rng);
        out.push_back(check_case("softmax", {&x}, [&] {
            return sum(mul(softmax_lastaxis(x), w));
        }));
        const AttentionMask mask = causal_attention_mask(5);
        T xm = random_input({5, 5}, rng), wm = random_input({5, 5}, rng);
        out.push_back(check_case("softmax causal mask", {&xm}, [&] {
            return sum(mul(softmax_lastaxis(xm, &mask), wm));
        }));
    }
    {
        T x = random_input({5, 6}, rng);
        T gain = random_input({6}, rng), bias = random_input({6}, rng);
        T w = random_input({5, 6}, rng);
        out.push_back(check_case("layer_norm", {&x, &gain, &bias}, [&] {
            return sum(mul(layer_norm(x, gain, bias, 1e-5), w));
        }));
    }
    {
        T x = random_input({4, 9}, rng), w = random_input({4, 9}, rng);
        out.push_back(check_case("split/concat", {&x}, [&] {
            auto parts = split_last(x, {2, 3, 4});
            std::swap(parts[0], parts[2]);
            auto back = split_last(concat_last(parts), {4, 3, 2});
            std::swap(back[0], back[2]);
            return sum(mul(concat_last(back), w));
        }));
    }
    {
        T x = random_input({3, 4}, rng);
        out.push_back(check_case("sum", {&x}, [&] { return sum(x); }));
        out.push_back(check_case("mean_all", {&x}, [&] { return mean_all(x); }));
    }
    {
        T table = random_input({7, 4}, rng), w = random_input({5, 4}, rng);
        const std::vector<int> ids{0, 3, 3, 6, 2};
        out.push_back(check_case("embedding", {&table}, [&] {
            return sum(mul(embedding(table, ids), w));
        }));
    }
    {
        T logits = random_input({5, 8}, rng);
        const std::vector<int> targets{1, 0, 7, 3, 3};
        out.push_back(check_case("cross_entropy_mean", {&logits}, [&] {
            return cross_entropy_mean(logits, targets);
        }));
    }
    {
        MlpBlock<double> block(6);
        Rng init_rng(seed + 1);
        block.init(init_rng, 0.2);
        std::vector<NamedParam<double>> params;
        block.collect_params(params, "");
        T x = random_input({5, 6}, rng), w = random_input({5, 6}, rng);
        std::vector<T*> leaves{&x};
        for (auto& p : params) leaves.push_back(&p.tensor);
        out.push_back(check_case("mlp block", leaves, [&] {
            return sum(mul(block.forward(x), w));
        }));
    }
    {
        TransformerBlock<double> block(6, 2);
        Rng init_rng(seed + 2);
        block.init(init_rng, 0.2);
        std::vector<NamedParam<double>> params;
        block.collect_params(params, "");
        const AttentionMask mask = causal_attention_mask(5);
        T x = random_input({5, 6}, rng), w = random_input({5, 6}, rng);
        std::vector<T*> leaves{&x};
        for (auto& p : params) leaves.push_back(&p.tensor);
        out.push_back(check_case("transformer block", leaves, [&] {
            return sum(mul(block.forward(x, &mask), w));
        }));
    }
    return out;
}

double worst_rel_err(const std::vector<GradCheckResult>& results) {
    double worst = 0.0;
    for (const auto& r : results) worst = std::max(worst, r.max_rel_err);
    return worst;
}

std::string gradcheck_table(const std::vector<GradCheckResult>& results) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "case" << std::right << std::setw(10)
       << "elements" << std::setw(14) << "max_rel_err" << '\n';
    for (const auto& r : results) {
        os << std::left << std::setw(24) << r.name << std::right << std::setw(10)
           << r.checked << std::setw(14) << std::scientific << std::setprecision(2)
           << r.max_rel_err << std::defaultfloat << '\n';
    }
    return os.str();
}

}  // namespace stepsnet
