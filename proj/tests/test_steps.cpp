#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "stepsnet/blocks.hpp"
#include "stepsnet/costing.hpp"
#include "stepsnet/mac_counter.hpp"
#include "stepsnet/steps.hpp"
#include "test_util.hpp"

using namespace stepsnet;

namespace {

StepsConfig small_mlp_config() {
    StepsConfig cfg;
    cfg.kind = BlockKind::mlp;
    cfg.step_widths = {4, 6, 10};
    cfg.depths = {4, 2, 2};
    return cfg;
}

StepsConfig small_transformer_config() {
    StepsConfig cfg;
    cfg.kind = BlockKind::transformer;
    cfg.step_widths = {8, 12, 16};
    cfg.depths = {4, 2, 2};
    cfg.heads = {2, 3, 4};
    return cfg;
}

}  // namespace

TEST_CASE("config validation catches the documented failure modes") {
    StepsConfig cfg = small_mlp_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.slice_widths() == std::vector<std::size_t>{4, 2, 4});
    CHECK(cfg.full_width() == 10);
    CHECK(cfg.total_blocks() == 8);

    StepsConfig bad = cfg;
    bad.step_widths = {4, 4, 10};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.depths = {4, 2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.step_widths.clear();
    bad.depths.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    StepsConfig tbad = small_transformer_config();
    tbad.heads = {2, 5, 4};  // 12 % 5 != 0
    CHECK_THROWS_AS(tbad.validate(), ConfigError);
    tbad.heads = {2, 3};
    CHECK_THROWS_AS(tbad.validate(), ConfigError);
}

TEST_CASE("published step widths produce the expected slices") {
    StepsConfig cfg;
    cfg.kind = BlockKind::transformer;
    cfg.step_widths = {192, 272, 384};
    cfg.depths = {12, 6, 6};
    cfg.heads = {3, 4, 6};
    cfg.validate();
    CHECK(cfg.slice_widths() == std::vector<std::size_t>{192, 80, 112});
}

TEST_CASE("two-step wiring with idealized branches matches the hand computation") {
    // Step 1 is a residual with a multiply-by-one branch (doubling); step 2
    // has a zero branch (identity). Input [3, 5] must become [6, 5].
    auto x = Tensor<double>::from_vector({1, 2}, {3.0, 5.0});
    auto y = steps_forward_generic(x, {1, 1}, [](std::size_t i, const Tensor<double>& z) {
        return i == 0 ? scale(z, 2.0) : z;
    });
    CHECK(y.shape() == std::vector<std::size_t>{1, 2});
    CHECK(y.values()[0] == 6.0);
    CHECK(y.values()[1] == 5.0);
}

TEST_CASE("generic wiring rejects steps that change shape") {
    auto x = Tensor<double>::from_vector({1, 2}, {1.0, 2.0});
    CHECK_THROWS_AS(
        steps_forward_generic(x, {1, 1},
                              [](std::size_t, const Tensor<double>& z) {
                                  return concat_last(std::vector<Tensor<double>>{z, z});
                              }),
        PartitionError);
}

TEST_CASE("zero-branch steps model is an exact identity") {
    Rng rng(61);
    StepsModel<double> model(small_mlp_config());
    model.init(rng);
    model.zero_branch_outputs();
    auto x = testutil::random_tensor<double>({5, 10}, rng);
    auto y = model.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("one-step model degenerates to its residual stack bit for bit") {
    StepsConfig cfg;
    cfg.kind = BlockKind::transformer;
    cfg.step_widths = {12};
    cfg.depths = {3};
    cfg.heads = {3};

    for (std::uint64_t seed = 100; seed < 105; ++seed) {
        Rng ra(seed), rb(seed);
        StepsModel<double> model(cfg);
        model.init(ra);
        ResidualStack<double> stack(BlockKind::transformer, 12, 3, 3);
        stack.init(rb);

        Rng rx(seed + 1000);
        auto x = testutil::random_tensor<double>({4, 12}, rx);
        auto ym = model.forward(x);
        auto ys = stack.forward(x);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(ym.values()[i] == ys.values()[i]);
    }
}

TEST_CASE("channels not yet consumed stay bitwise untouched") {
    Rng rng(62);
    StepsConfig cfg = small_mlp_config();
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({3, 10}, rng);

    StepsTrace<double> trace;
    model.forward(x, nullptr, &trace);
    REQUIRE(trace.step_inputs.size() == 3);

    const auto d = cfg.slice_widths();
    // The trailing d_i channels of step i's input are exactly slice i of x.
    std::size_t offset = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& z = trace.step_inputs[i];
        const std::size_t ci = cfg.step_widths[i];
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t j = 0; j < d[i]; ++j)
                CHECK(z.values()[r * ci + (ci - d[i]) + j] ==
                      x.values()[r * 10 + offset + j]);
        offset += d[i];
    }
}

TEST_CASE("trace shapes follow the configuration") {
    Rng rng(63);
    StepsConfig cfg = small_transformer_config();
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({4, 16}, rng);
    StepsTrace<double> trace;
    model.forward(x, nullptr, &trace);
    REQUIRE(trace.step_blocks.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(trace.step_inputs[i].cols() == cfg.step_widths[i]);
        CHECK(trace.step_blocks[i].size() == cfg.depths[i]);
    }
}

TEST_CASE("with zero branches the loss gradient reaches the input unchanged") {
    Rng rng(64);
    StepsModel<double> model(small_mlp_config());
    model.init(rng);
    model.zero_branch_outputs();
    auto x = testutil::random_tensor<double>({2, 10}, rng);
    auto weight = testutil::random_tensor<double>({2, 10}, rng);
    x.set_requires_grad(true);

    ComputationTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(sum(mul(model.forward(x), weight)));
    }
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(x.grad()[i] == weight.values()[i]);
}

TEST_CASE("steps model gradients match finite differences") {
    Rng rng(65);
    StepsConfig cfg;
    cfg.kind = BlockKind::mlp;
    cfg.step_widths = {3, 5};
    cfg.depths = {2, 1};
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({3, 5}, rng);
    auto weight = testutil::random_tensor<double>({3, 5}, rng);
    std::vector<NamedParam<double>> params;
    model.collect_params(params);
    std::vector<Tensor<double>*> inputs = {&x};
    for (auto& p : params) inputs.push_back(&p.tensor);
    const double err = testutil::max_rel_grad_err<double>(
        inputs, [&] { return sum(mul(model.forward(x), weight)); });
    CHECK(err < 1e-5);
}

TEST_CASE("mask_path zeroes the requested side and nothing else") {
    auto x = Tensor<double>::from_vector({1, 4}, {1, 2, 3, 4});
    auto slow = mask_path(x, PathSide::slow, 2);
    CHECK(slow.values()[0] == 0.0);
    CHECK(slow.values()[1] == 0.0);
    CHECK(slow.values()[2] == 3.0);
    CHECK(slow.values()[3] == 4.0);

    auto fast = mask_path(x, PathSide::fast, 1);
    CHECK(fast.values()[0] == 1.0);
    CHECK(fast.values()[3] == 0.0);

    auto untouched = mask_path(x, PathSide::slow, 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(untouched.values()[i] == x.values()[i]);
    // The source tensor is never modified in place.
    CHECK(x.values()[0] == 1.0);

    CHECK_THROWS_AS(mask_path(x, PathSide::fast, 5), std::out_of_range);
    CHECK(path_side_from_string("slow") == PathSide::slow);
    CHECK_THROWS_AS(path_side_from_string("sideways"), ConfigError);
}

TEST_CASE("masking commutes with nothing: it is exactly pre-zeroing the input") {
    Rng rng(66);
    StepsModel<double> model(small_mlp_config());
    model.init(rng);
    auto x = testutil::random_tensor<double>({3, 10}, rng);

    std::vector<double> zeroed(x.values().begin(), x.values().end());
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j) zeroed[r * 10 + j] = 0.0;
    auto ym = model.forward(mask_path(x, PathSide::slow, 4));
    auto yz = model.forward(Tensor<double>::from_vector({3, 10}, zeroed));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(ym.values()[i] == yz.values()[i]);
}

TEST_CASE("dropping blocks updates the config and keeps shared weights") {
    Rng rng(67);
    StepsConfig cfg = small_mlp_config();
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({2, 10}, rng);

    auto same = drop_step_blocks(model, 0, 0);
    auto y0 = model.forward(x);
    auto y1 = same.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y0.values()[i] == y1.values()[i]);

    auto shorter = drop_step_blocks(model, 0, 2);
    CHECK(shorter.config().depths == std::vector<std::size_t>{2, 2, 2});
    CHECK(model.config().depths == std::vector<std::size_t>{4, 2, 2});  // untouched

    CHECK_THROWS_AS(drop_step_blocks(model, 0, 5), std::out_of_range);
    CHECK_THROWS_AS(drop_step_blocks(model, 7, 0), std::out_of_range);
}

TEST_CASE("dropped blocks shorten exactly the tail of the chosen step") {
    Rng rng(68);
    StepsConfig cfg;
    cfg.kind = BlockKind::mlp;
    cfg.step_widths = {6};
    cfg.depths = {5};
    StepsModel<double> model(cfg);
    model.init(rng);
    auto x = testutil::random_tensor<double>({2, 6}, rng);

    StepsTrace<double> trace;
    model.forward(x, nullptr, &trace);
    auto shorter = drop_step_blocks(model, 0, 2);
    auto y = shorter.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.values()[i] == trace.step_blocks[0][2].values()[i]);
}

TEST_CASE("mirrored config reverses every per-step list") {
    StepsConfig cfg = small_transformer_config();
    StepsConfig m = mirrored(cfg);
    CHECK(m.step_widths == std::vector<std::size_t>{16, 12, 8});
    CHECK(m.depths == std::vector<std::size_t>{2, 2, 4});
    CHECK(m.heads == std::vector<std::size_t>{4, 3, 2});
    StepsConfig back = mirrored(m);
    CHECK(back.step_widths == cfg.step_widths);
    CHECK(back.depths == cfg.depths);
    CHECK(back.heads == cfg.heads);
}

TEST_CASE("reverse wiring with identity steps is a channel bijection") {
    auto x = Tensor<double>::from_vector({2, 4}, {10, 11, 12, 13, 20, 21, 22, 23});
    auto y = reverse_forward_generic(
        x, {4, 3, 1}, [](std::size_t, const Tensor<double>& z) { return z; });
    REQUIRE(y.shape() == x.shape());
    // Peeled slices in step order: channel 3, channels 1..2, then channel 0.
    const std::size_t perm[4] = {3, 1, 2, 0};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(y.values()[r * 4 + j] == x.values()[r * 4 + perm[j]]);
}

TEST_CASE("reverse wiring hand case: doubling then zero branch") {
    // Widths (2, 1): the first step doubles everything, its trailing channel
    // is peeled; the second step is the identity on the surviving channel.
    auto x = Tensor<double>::from_vector({1, 2}, {3.0, 5.0});
    auto y = reverse_forward_generic(x, {2, 1},
                                     [](std::size_t i, const Tensor<double>& z) {
                                         return i == 0 ? scale(z, 2.0) : z;
                                     });
    CHECK(y.values()[0] == 10.0);  // peeled after doubling
    CHECK(y.values()[1] == 6.0);   // survived to the last step
}

TEST_CASE("reverse model has exactly the parameters of the forward model") {
    Rng rng(69);
    StepsConfig cfg = small_transformer_config();
    StepsModel<double> fwd(cfg);
    fwd.init(rng);
    ReverseStepsModel<double> rev(mirrored(cfg));
    rev.init(rng);

    std::vector<NamedParam<double>> fp, rp;
    fwd.collect_params(fp);
    rev.collect_params(rp);
    CHECK(param_count(fp) == param_count(rp));

    const CostReport cost = model_cost(cfg.cost_desc(), 7, {});
    const CostReport rcost = model_cost(rev.config().cost_desc(), 7, {});
    CHECK(cost.flops_total == rcost.flops_total);
    CHECK(cost.params_total == rcost.params_total);
}

TEST_CASE("reverse model runs and preserves shape") {
    Rng rng(70);
    StepsConfig cfg = mirrored(small_mlp_config());
    ReverseStepsModel<double> rev(cfg);
    rev.init(rng);
    auto x = testutil::random_tensor<double>({3, 10}, rng);
    auto y = rev.forward(x);
    CHECK(y.shape() == x.shape());

    ReverseStepsModel<double> z(cfg);
    z.init(rng);
    z.zero_branch_outputs();
    auto yid = z.forward(x);
    // Identity stacks reduce the reverse model to the channel permutation.
    std::vector<bool> seen(10, false);
    for (std::size_t j = 0; j < 10; ++j) {
        bool matched = false;
        for (std::size_t p = 0; p < 10; ++p) {
            if (yid.values()[j] == x.values()[p] && !seen[p]) {
                seen[p] = true;
                matched = true;
                break;
            }
        }
        CHECK(matched);
    }
    CHECK_THROWS_AS(ReverseStepsModel<double>{small_mlp_config()}, ConfigError);
}

TEST_CASE("model-level MAC counts equal the analytical cost exactly") {
    Rng rng(71);
    const std::size_t tokens = 5;

    StepsConfig mcfg = small_mlp_config();
    StepsModel<double> mlp_model(mcfg);
    mlp_model.init(rng);
    auto x = testutil::random_tensor<double>({tokens, 10}, rng);
    std::uint64_t macs = 0;
    {
        MacCounterScope scope(macs);
        mlp_model.forward(x);
    }
    CHECK(macs == model_cost(mcfg.cost_desc(), tokens, {}).flops_total);

    StepsConfig tcfg = small_transformer_config();
    StepsModel<double> tmodel(tcfg);
    tmodel.init(rng);
    auto xt = testutil::random_tensor<double>({tokens, 16}, rng);
    macs = 0;
    {
        MacCounterScope scope(macs);
        tmodel.forward(xt);
    }
    CHECK(macs == model_cost(tcfg.cost_desc(), tokens, {}).flops_total);
}

TEST_CASE("steps model rejects inputs of the wrong width") {
    Rng rng(72);
    StepsModel<double> model(small_mlp_config());
    model.init(rng);
    CHECK_THROWS_AS(model.forward(Tensor<double>::zeros({2, 7})), ShapeError);
}
