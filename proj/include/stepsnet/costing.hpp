#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Analytical cost model: multiply-accumulate counts, exact parameter counts,
// and layer accounting for residual and steps architectures, plus the sqrt(2)
// width schedule and the block-splitting depth allocation.
//
// Conventions, applied uniformly:
//   - FLOPs are MAC counts (one multiply-accumulate = 1). Under this unit a
//     transformer block at width C over N tokens costs 12NC^2 + 2N^2C and an
//     MLP block costs 8NC^2.
//   - One transformer block counts as 5 layers (QKV, attention, output
//     projection, two MLP layers); an MLP block counts as 2.
//   - Widths produced by the schedule snap to the nearest multiple of 8.

namespace stepsnet {

enum class BlockKind { transformer, mlp };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& name);

// One group of identical blocks: depth blocks at the given width. For steps
// models there is one group per step; heads are carried for fidelity to the
// published configurations but do not enter the cost arithmetic.
struct StageDesc {
    std::size_t width = 0;
    std::size_t depth = 0;
    std::size_t heads = 1;
};

struct ModelDesc {
    BlockKind kind = BlockKind::transformer;
    std::vector<StageDesc> stages;
};

// Everything outside the block stack. Counts are supplied explicitly so the
// block arithmetic stays closed-form; extra_params covers tokens/embeddings
// and the final norm, extra_layers is the per-family layer-count constant.
struct StemHeadSpec {
    std::uint64_t stem_flops = 0;
    std::uint64_t stem_params = 0;
    std::uint64_t head_flops = 0;
    std::uint64_t head_params = 0;
    std::uint64_t extra_params = 0;
    std::uint64_t extra_layers = 0;
};

struct CostReport {
    std::uint64_t flops_total = 0;
    std::uint64_t flops_qkv_out = 0;    // 4NC^2 per block
    std::uint64_t flops_attention = 0;  // 2N^2C per block
    std::uint64_t flops_mlp = 0;        // 8NC^2 per block
    std::uint64_t flops_stem = 0;
    std::uint64_t flops_head = 0;
    std::uint64_t params_total = 0;
    std::uint64_t layers_total = 0;
    std::uint64_t blocks_total = 0;
    // "mac" for full accounting; "layers-only" when the attention pattern is
    // out of scope (windowed models) and only blocks/layers are meaningful.
    std::string convention = "mac";
};

struct BudgetPoint {
    std::size_t depth = 0;
    std::size_t width = 0;        // largest feasible multiple of 8, 0 if none
    std::uint64_t flops = 0;
    bool feasible = false;
};

// 12*N*C^2*D + 2*N^2*C*D, exact in unsigned 64-bit arithmetic.
std::uint64_t transformer_flops(std::uint64_t tokens, std::uint64_t width,
                                std::uint64_t depth);

// 8*N*C^2*D for the attention-free block.
std::uint64_t mlp_flops(std::uint64_t tokens, std::uint64_t width, std::uint64_t depth);

// Exact learned-parameter count of one block at the given width.
std::uint64_t block_params(BlockKind kind, std::uint64_t width);

// Layers contributed by one block (5 for transformer, 2 for mlp).
std::uint64_t block_layers(BlockKind kind);

CostReport model_cost(const ModelDesc& desc, std::size_t tokens,
                      const StemHeadSpec& stem_head);

// Step widths C_1..C_n with C_n = full width and each step 1/sqrt(2) the
// width of the next, snapped to the nearest multiple of 8. Throws ConfigError
// if any width would fall below 8.
std::vector<std::size_t> width_schedule(std::size_t full_width, std::size_t steps);

// Depth split D_1..D_n: walking from the widest step inward, half the current
// blocks stay at this width and the other half become twice as many blocks
// one width level down. Throws ConfigError if depth < 2^(steps-1).
std::vector<std::size_t> allocate_depths(std::size_t depth, std::size_t steps);

// For each depth, the widest multiple-of-8 width whose block-stack MACs fit
// inside the budget.
std::vector<BudgetPoint> budget_frontier(std::uint64_t budget, std::size_t tokens,
                                         BlockKind kind,
                                         const std::vector<std::size_t>& depths);

// ---------------------------------------------------------------------------
// Published configurations
// ---------------------------------------------------------------------------

struct Preset {
    std::string name;
    ModelDesc desc;
    std::size_t tokens = 0;      // 0 when the convention is layers-only
    StemHeadSpec stem_head;
    std::string convention = "mac";
};

// Stem/head accounting for the 224x224, patch-16 classifier family: a
// patchify projection over 196 patches, a class-token head over 1000 classes,
// and class token + position table + final norm as extra parameters.
StemHeadSpec deit_stem_head(std::size_t width);

const std::vector<Preset>& presets();
const Preset& preset(const std::string& name);

CostReport preset_cost(const Preset& p);

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

std::string cost_report_to_json(const CostReport& r);
std::string cost_table(const std::vector<std::pair<std::string, CostReport>>& rows);

}  // namespace stepsnet
