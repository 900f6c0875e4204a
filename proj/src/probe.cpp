#include "stepsnet/probe.hpp"

#include <cmath>
#include <cstdio>

#include "stepsnet/error.hpp"

namespace stepsnet {

std::vector<double> variance_oracle(std::size_t depth, double residual_variance) {
    if (residual_variance < 0.0) {
        throw ContractError("variance oracle: residual variance must be >= 0");
    }
    std::vector<double> gammas(depth);
    for (std::size_t l = 1; l <= depth; ++l) {
        gammas[l - 1] = 1.0 / std::sqrt(1.0 + static_cast<double>(l) * residual_variance);
    }
    return gammas;
}

std::string gamma_trace_to_csv(const GammaTrace& trace) {
    std::string out = "block_index,step_index,width,sigma0,sigma_l,gamma\n";
    char buf[160];
    for (const GammaRecord& r : trace.records) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g\n", r.block_index,
                      r.step_index, r.width, r.sigma0, r.sigma_l, r.gamma);
        out += buf;
    }
    return out;
}

}  // namespace stepsnet
