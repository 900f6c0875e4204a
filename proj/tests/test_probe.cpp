#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "stepsnet/blocks.hpp"
#include "stepsnet/probe.hpp"
#include "stepsnet/steps.hpp"
#include "test_util.hpp"

using namespace stepsnet;

TEST_CASE("token sigma is the mean of per-row population stds") {
    // Rows [1,3] and [2,6]: stds 1 and 2, mean 1.5.
    auto x = Tensor<double>::from_vector({2, 2}, {1, 3, 2, 6});
    CHECK(token_sigma_mean(x) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("decomposition of a zero residual is the trivial identity") {
    Rng rng(81);
    auto z0 = testutil::random_tensor<double>({4, 8}, rng);
    auto rl = Tensor<double>::zeros({4, 8});
    const auto d = decompose_normalized(z0, rl);
    CHECK(d.gamma == 1.0);
    CHECK(d.rho == 0.0);
    CHECK(d.reconstruction_error == 0.0);
}

TEST_CASE("doubling the stream halves gamma and rho") {
    Rng rng(82);
    auto z0 = testutil::random_tensor<double>({4, 8}, rng);
    const auto d = decompose_normalized(z0, z0.clone());
    CHECK(d.gamma == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.rho == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.reconstruction_error < 1e-12);
}

TEST_CASE("the normalization decomposition is exact on random instances") {
    Rng rng(83);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        auto z0 = testutil::random_tensor<double>({16, 32}, rng, -2.0, 2.0);
        auto rl = testutil::random_tensor<double>({16, 32}, rng, -2.0, 2.0);
        const auto d = decompose_normalized(z0, rl);
        worst = std::max(worst, d.reconstruction_error);
        CHECK(d.gamma > 0.0);
        CHECK(d.rho > 0.0);
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("the decomposition stays exact with a nonzero eps in the norms") {
    Rng rng(84);
    auto z0 = testutil::random_tensor<double>({8, 16}, rng);
    auto rl = testutil::random_tensor<double>({8, 16}, rng);
    const auto d = decompose_normalized(z0, rl, 1e-5);
    CHECK(d.reconstruction_error < 1e-12);
}

TEST_CASE("decomposition rejects degenerate and mismatched inputs") {
    auto flat = Tensor<double>::filled({2, 4}, 3.0);
    auto rl = Tensor<double>::filled({2, 4}, 1.0);
    CHECK_THROWS_AS(decompose_normalized(flat, rl), NumericError);
    CHECK_THROWS_AS(
        decompose_normalized(Tensor<double>::zeros({2, 4}), Tensor<double>::zeros({2, 5})),
        ShapeError);
}

TEST_CASE("variance oracle matches the closed form") {
    const auto flat = variance_oracle(5, 0.0);
    for (double g : flat) CHECK(g == 1.0);
    const auto unit = variance_oracle(3, 1.0);
    CHECK(unit[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(unit[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(variance_oracle(3, -0.5), ContractError);
}

TEST_CASE("Monte-Carlo residual stubs track the variance oracle at depth 8") {
    // 3125 tokens x 32 channels = 1e5 scalar samples per depth. Unit-variance
    // input, unit-variance independent additive residuals.
    const std::size_t tokens = 3125, channels = 32, depth = 8;
    Rng rng(85);
    std::normal_distribution<double> unit(0.0, 1.0);

    std::vector<double> z(tokens * channels);
    for (double& v : z) v = unit(rng);
    auto sigma_of = [&](const std::vector<double>& a) {
        double acc = 0.0;
        for (std::size_t r = 0; r < tokens; ++r) {
            double mean = 0.0;
            for (std::size_t j = 0; j < channels; ++j) mean += a[r * channels + j];
            mean /= channels;
            double var = 0.0;
            for (std::size_t j = 0; j < channels; ++j) {
                const double d = a[r * channels + j] - mean;
                var += d * d;
            }
            acc += std::sqrt(var / channels);
        }
        return acc / tokens;
    };

    const double sigma0 = sigma_of(z);
    const auto oracle = variance_oracle(depth, 1.0);
    for (std::size_t l = 1; l <= depth; ++l) {
        for (double& v : z) v += unit(rng);
        const double gamma = sigma0 / sigma_of(z);
        CHECK(gamma == doctest::Approx(oracle[l - 1]).epsilon(0.05));
    }
}

TEST_CASE("zero-branch stacks have a gamma trace identically one") {
    Rng rng(86);
    ResidualStack<double> stack(BlockKind::mlp, 8, 10);
    stack.init(rng);
    stack.zero_branch_outputs();
    auto x = testutil::random_tensor<double>({16, 8}, rng);
    const GammaTrace trace = shortcut_ratio_trace(stack, x);
    REQUIRE(trace.records.size() == 10);
    for (const auto& r : trace.records) {
        CHECK(r.gamma == 1.0);
        CHECK(r.step_index == 0);
        CHECK(r.width == 8);
    }
}

TEST_CASE("zero-branch steps models have a gamma trace identically one") {
    Rng rng(87);
    StepsConfig cfg;
    cfg.kind = BlockKind::mlp;
    cfg.step_widths = {4, 6, 10};
    cfg.depths = {3, 2, 2};
    StepsModel<double> model(cfg);
    model.init(rng);
    model.zero_branch_outputs();
    auto x = testutil::random_tensor<double>({16, 10}, rng);
    const GammaTrace trace = shortcut_ratio_trace(model, x);
    REQUIRE(trace.records.size() == 7);
    std::size_t expect_block = 0;
    for (const auto& r : trace.records) {
        CHECK(r.gamma == 1.0);
        CHECK(r.block_index == ++expect_block);
    }
    CHECK(trace.records[0].step_index == 1);
    CHECK(trace.records[0].width == 4);
    CHECK(trace.records[3].step_index == 2);
    CHECK(trace.records[6].step_index == 3);
    CHECK(trace.records[6].width == 10);
}

TEST_CASE("gamma equals sigma0 over sigma_l in every record") {
    Rng rng(88);
    ResidualStack<double> stack(BlockKind::mlp, 16, 6);
    stack.init(rng);
    auto x = testutil::random_tensor<double>({32, 16}, rng);
    const GammaTrace trace = shortcut_ratio_trace(stack, x);
    for (const auto& r : trace.records) {
        CHECK(r.gamma == doctest::Approx(r.sigma0 / r.sigma_l).epsilon(1e-12));
        CHECK(r.gamma > 0.0);
    }
}

TEST_CASE("an untrained residual stack degrades: late gamma well below early gamma") {
    // Narrow blocks need a larger init std than the 0.02 customary at large
    // widths for the branches to carry comparable relative energy; at 0.1 the
    // downward gamma trend is decisive for every seed, not just this one.
    Rng rw(89), rx(589);
    ResidualStack<float> stack(BlockKind::transformer, 32, 32, 2);
    stack.init(rw, 0.1);
    auto x = Tensor<float>::zeros({256, 32});
    fill_normal(x, 0.0, 1.0, rx);
    const GammaTrace trace = shortcut_ratio_trace(stack, x);
    CHECK(trace.records.front().gamma > 0.9);
    CHECK(trace.records.back().gamma < 0.7);
    // The decline also shows up between consecutive quarters of the trace.
    const std::size_t q = trace.records.size() / 4;
    auto quarter_mean = [&](std::size_t first) {
        double acc = 0.0;
        for (std::size_t i = first; i < first + q; ++i) acc += trace.records[i].gamma;
        return acc / static_cast<double>(q);
    };
    CHECK(quarter_mean(0) > quarter_mean(q));
    CHECK(quarter_mean(q) > quarter_mean(2 * q));
    CHECK(quarter_mean(2 * q) > quarter_mean(3 * q));
}

TEST_CASE("steps keeps early gamma higher than a flop-matched residual stack") {
    // 64 blocks each, 256 tokens, matched FLOPs (width 46 vs steps up to 64).
    Rng rw(89), rx(689);
    ResidualStack<float> res(BlockKind::transformer, 46, 64, 2);
    res.init(rw, 0.1);

    StepsConfig cfg;
    cfg.kind = BlockKind::transformer;
    cfg.step_widths = {32, 48, 64};
    cfg.depths = {32, 16, 16};
    cfg.heads = {2, 3, 4};
    StepsModel<float> steps(cfg);
    steps.init(rw, 0.1);

    auto xr = Tensor<float>::zeros({256, 46});
    fill_normal(xr, 0.0, 1.0, rx);
    auto xs = Tensor<float>::zeros({256, 64});
    fill_normal(xs, 0.0, 1.0, rx);

    auto first_quarter_mean = [](const GammaTrace& t) {
        const std::size_t q = t.records.size() / 4;
        double acc = 0.0;
        for (std::size_t i = 0; i < q; ++i) acc += t.records[i].gamma;
        return acc / static_cast<double>(q);
    };
    const double g_res = first_quarter_mean(shortcut_ratio_trace(res, xr));
    const double g_steps = first_quarter_mean(shortcut_ratio_trace(steps, xs));
    CHECK(g_steps > g_res + 0.05);
}

TEST_CASE("untouched slices keep their sigma exactly until consumed") {
    Rng rng(90);
    StepsConfig cfg;
    cfg.kind = BlockKind::mlp;
    cfg.step_widths = {4, 6, 10};
    cfg.depths = {2, 2, 2};
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({8, 10}, rng);

    StepsTrace<double> trace;
    model.forward(x, nullptr, &trace);
    const auto d = cfg.slice_widths();
    auto x_slices = split_last(x, d);
    // Slice x_2 feeds step 2; until then its sigma is exactly the input's.
    auto step2_parts = split_last(trace.step_inputs[1], {d[0], d[1]});
    CHECK(token_sigma_mean(step2_parts[1]) == token_sigma_mean(x_slices[1]));
    auto step3_parts = split_last(trace.step_inputs[2], {d[0] + d[1], d[2]});
    CHECK(token_sigma_mean(step3_parts[1]) == token_sigma_mean(x_slices[2]));
}

TEST_CASE("degenerate constant batches are rejected") {
    Rng rng(91);
    ResidualStack<double> stack(BlockKind::mlp, 8, 2);
    stack.init(rng);
    auto flat = Tensor<double>::filled({4, 8}, 1.0);
    CHECK_THROWS_AS(shortcut_ratio_trace(stack, flat), NumericError);
}

TEST_CASE("gamma traces serialize to CSV with the stable header") {
    Rng rng(92);
    ResidualStack<double> stack(BlockKind::mlp, 8, 3);
    stack.init(rng);
    auto x = testutil::random_tensor<double>({4, 8}, rng);
    const GammaTrace trace = shortcut_ratio_trace(stack, x);
    const std::string csv = gamma_trace_to_csv(trace);

    CHECK(csv.rfind("block_index,step_index,width,sigma0,sigma_l,gamma\n", 0) == 0);
    CHECK(csv.find('\r') == std::string::npos);
    std::size_t lines = 0;
    for (char ch : csv) {
        if (ch == '\n') ++lines;
    }
    CHECK(lines == 4);  // header + one row per block
    CHECK(csv.find("1,0,8,") != std::string::npos);
}
