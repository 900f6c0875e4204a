#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference gradient audit. Every differentiable operation, plus the
// composed residual blocks, is checked against central differences in f64 on
// random inputs. The suite is deterministic for a given seed and is shared by
// the test binaries and the command-line gradcheck subcommand.

namespace stepsnet {

struct GradCheckResult {
    std::string name;        // operation or composite under test
    double max_rel_err = 0;  // worst element, |analytic - fd| / max(|a|, |fd|, 1e-6)
    std::size_t checked = 0;  // number of leaf elements compared
};

// Runs the full audit. Cases cover: matmul, matmul_nt, linear, add, sub, mul
// (equal-shape and scalar broadcast), scale, gelu, relu, softmax (masked and
// unmasked), layer_norm, split/concat, sum, mean_all, embedding,
// cross_entropy_mean, mask_path, an MLP block, and a full transformer block.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 1234);

// Largest max_rel_err across the suite.
double worst_rel_err(const std::vector<GradCheckResult>& results);

// Fixed-width text table of the results, one line per case.
std::string gradcheck_table(const std::vector<GradCheckResult>& results);

}  // namespace stepsnet
