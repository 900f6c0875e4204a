#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stepsnet/blocks.hpp"
#include "stepsnet/error.hpp"
#include "stepsnet/steps.hpp"
#include "stepsnet/tensor.hpp"

// Shortcut-degradation diagnostics. The residual stream after l blocks is
// z_l = z_0 + sum of branch outputs; once normalized, the surviving fraction
// of the input signal is gamma_l = sigma_0/sigma_l. This header measures that
// ratio on live models, checks the exact normalization decomposition
//
//   zhat_l = (sigma_0/sigma_l) zhat_0 + (sigma_r/sigma_l) rhat_l,
//
// and provides the independence-model oracle gamma_l = 1/sqrt(1 + l*v).
//
// Sigma convention, used everywhere here: population standard deviation over
// the channel axis, computed per token, then averaged over tokens. Traces run
// without a tape and never mutate the model.

namespace stepsnet {

struct GammaRecord {
    std::size_t block_index = 0;  // 1-based, global across steps
    std::size_t step_index = 0;   // 0 for plain stacks, 1-based for steps models
    std::size_t width = 0;
    double sigma0 = 0.0;
    double sigma_l = 0.0;
    double gamma = 0.0;
};

struct GammaTrace {
    std::vector<GammaRecord> records;
    std::string sigma_convention = "per-token channel std, population, token-averaged";
    std::size_t batch_tokens = 0;
};

// Mean over tokens of the per-token population std over channels.
template <typename S>
double token_sigma_mean(const Tensor<S>& x) {
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            mean += static_cast<double>(x.values()[r * c + j]);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = static_cast<double>(x.values()[r * c + j]) - mean;
            var += d * d;
        }
        acc += std::sqrt(var / static_cast<double>(c));
    }
    return acc / static_cast<double>(rows);
}

template <typename S>
GammaTrace shortcut_ratio_trace(const ResidualStack<S>& stack, const Tensor<S>& batch,
                                const AttentionMask* mask = nullptr) {
    const double sigma0 = token_sigma_mean(batch);
    if (sigma0 == 0.0) {
        throw NumericError("shortcut ratio: input batch has zero per-token variance");
    }
    std::vector<Tensor<S>> activations;
    stack.forward(batch, mask, &activations);

    GammaTrace trace;
    trace.batch_tokens = batch.size() / batch.shape().back();
    trace.records.reserve(activations.size());
    for (std::size_t l = 0; l < activations.size(); ++l) {
        const double sigma_l = token_sigma_mean(activations[l]);
        if (sigma_l == 0.0) {
            throw NumericError("shortcut ratio: activation after block " +
                               std::to_string(l + 1) + " has zero variance");
        }
        trace.records.push_back({l + 1, 0, stack.width(), sigma0, sigma_l,
                                 sigma0 / sigma_l});
    }
    return trace;
}

template <typename S>
GammaTrace shortcut_ratio_trace(const StepsModel<S>& model, const Tensor<S>& batch,
                                const AttentionMask* mask = nullptr) {
    StepsTrace<S> steps_trace;
    model.forward(batch, mask, &steps_trace);

    GammaTrace trace;
    trace.batch_tokens = batch.size() / batch.shape().back();
    std::size_t global = 0;
    for (std::size_t i = 0; i < steps_trace.step_inputs.size(); ++i) {
        const double sigma0 = token_sigma_mean(steps_trace.step_inputs[i]);
        if (sigma0 == 0.0) {
            throw NumericError("shortcut ratio: step " + std::to_string(i + 1) +
                               " input has zero per-token variance");
        }
        const std::size_t width = model.config().step_widths[i];
        for (const Tensor<S>& z : steps_trace.step_blocks[i]) {
            const double sigma_l = token_sigma_mean(z);
            if (sigma_l == 0.0) {
                throw NumericError("shortcut ratio: activation after block " +
                                   std::to_string(global + 1) + " has zero variance");
            }
            ++global;
            trace.records.push_back({global, i + 1, width, sigma0, sigma_l,
                                     sigma0 / sigma_l});
        }
    }
    return trace;
}

struct DecompositionResult {
    double gamma = 0.0;
    double rho = 0.0;
    double reconstruction_error = 0.0;
};

// Exact identity check: normalizing z0 + rl must equal the gamma/rho weighted
// combination of the separately normalized parts, token by token. The
// returned gamma and rho are ratios of token-averaged sigmas; the error is
// the max abs deviation over all entries using per-token ratios.
template <typename S>
DecompositionResult decompose_normalized(const Tensor<S>& z0, const Tensor<S>& rl,
                                         double eps = 0.0) {
    if (z0.shape() != rl.shape()) {
        throw ShapeError("decompose: shapes differ, " + shape_str(z0.shape()) + " vs " +
                         shape_str(rl.shape()));
    }
    const std::size_t c = z0.shape().back();
    const std::size_t rows = z0.size() / c;

    double sum_sigma0 = 0.0, sum_sigma_r = 0.0, sum_sigma_l = 0.0, max_err = 0.0;
    std::vector<double> zl(c), zhat0(c), rhat(c);
    for (std::size_t r = 0; r < rows; ++r) {
        double mu0 = 0.0, mur = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            mu0 += static_cast<double>(z0.values()[r * c + j]);
            mur += static_cast<double>(rl.values()[r * c + j]);
        }
        mu0 /= static_cast<double>(c);
        mur /= static_cast<double>(c);

        double var0 = 0.0, varr = 0.0, varl = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double a = static_cast<double>(z0.values()[r * c + j]) - mu0;
            const double b = static_cast<double>(rl.values()[r * c + j]) - mur;
            var0 += a * a;
            varr += b * b;
            varl += (a + b) * (a + b);
        }
        var0 /= static_cast<double>(c);
        varr /= static_cast<double>(c);
        varl /= static_cast<double>(c);

        const double sigma0 = std::sqrt(var0 + eps);
        const double sigma_r = std::sqrt(varr + eps);
        const double sigma_l = std::sqrt(varl + eps);
        if (sigma0 == 0.0 || sigma_l == 0.0) {
            throw NumericError("decompose: token " + std::to_string(r) +
                               " has zero variance");
        }
        sum_sigma0 += sigma0;
        sum_sigma_r += sigma_r;
        sum_sigma_l += sigma_l;

        const double g = sigma0 / sigma_l;
        const double p = sigma_r / sigma_l;
        for (std::size_t j = 0; j < c; ++j) {
            const double a = static_cast<double>(z0.values()[r * c + j]) - mu0;
            const double b = static_cast<double>(rl.values()[r * c + j]) - mur;
            const double zhat_l = (a + b) / sigma_l;
            const double recon = g * (a / sigma0) + (sigma_r > 0.0 ? p * (b / sigma_r) : 0.0);
            max_err = std::max(max_err, std::abs(recon - zhat_l));
        }
    }

    DecompositionResult out;
    out.gamma = sum_sigma0 / sum_sigma_l;
    out.rho = sum_sigma_r / sum_sigma_l;
    out.reconstruction_error = max_err;
    return out;
}

// Independence-model prediction for unit-variance input and i.i.d. zero-mean
// residual additions of variance v per block.
std::vector<double> variance_oracle(std::size_t depth, double residual_variance);

std::string gamma_trace_to_csv(const GammaTrace& trace);

}  // namespace stepsnet
