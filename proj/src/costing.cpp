#include "stepsnet/costing.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "stepsnet/error.hpp"

namespace stepsnet {

std::string to_string(BlockKind kind) {
    return kind == BlockKind::transformer ? "transformer" : "mlp";
}

BlockKind block_kind_from_string(const std::string& name) {
    if (name == "transformer") return BlockKind::transformer;
    if (name == "mlp") return BlockKind::mlp;
    throw ConfigError("unknown block kind '" + name + "' (expected transformer or mlp)");
}

std::uint64_t transformer_flops(std::uint64_t tokens, std::uint64_t width,
                                std::uint64_t depth) {
    const std::uint64_t quad = 12 * tokens * width * width;
    const std::uint64_t att = 2 * tokens * tokens * width;
    return (quad + att) * depth;
}

std::uint64_t mlp_flops(std::uint64_t tokens, std::uint64_t width, std::uint64_t depth) {
    return 8 * tokens * width * width * depth;
}

std::uint64_t block_params(BlockKind kind, std::uint64_t width) {
    const std::uint64_t c = width;
    if (kind == BlockKind::transformer) {
        // qkv C*3C+3C, out C*C+C, fc1 C*4C+4C, fc2 4C*C+C, two norms 2*2C
        return 12 * c * c + 13 * c;
    }
    // fc1 C*4C+4C, fc2 4C*C+C, one norm 2C
    return 8 * c * c + 7 * c;
}

std::uint64_t block_layers(BlockKind kind) {
    return kind == BlockKind::transformer ? 5 : 2;
}

CostReport model_cost(const ModelDesc& desc, std::size_t tokens,
                      const StemHeadSpec& stem_head) {
    CostReport r;
    const std::uint64_t n = tokens;
    for (const StageDesc& s : desc.stages) {
        const std::uint64_t c = s.width, d = s.depth;
        if (desc.kind == BlockKind::transformer) {
            r.flops_qkv_out += 4 * n * c * c * d;
            r.flops_attention += 2 * n * n * c * d;
            r.flops_mlp += 8 * n * c * c * d;
        } else {
            r.flops_mlp += 8 * n * c * c * d;
        }
        r.params_total += block_params(desc.kind, c) * d;
        r.blocks_total += d;
    }
    r.flops_stem = stem_head.stem_flops;
    r.flops_head = stem_head.head_flops;
    r.flops_total = r.flops_qkv_out + r.flops_attention + r.flops_mlp + r.flops_stem +
                    r.flops_head;
    r.params_total += stem_head.stem_params + stem_head.head_params + stem_head.extra_params;
    r.layers_total = r.blocks_total * block_layers(desc.kind) + stem_head.extra_layers;
    return r;
}

std::vector<std::size_t> width_schedule(std::size_t full_width, std::size_t steps) {
    if (steps == 0) throw ConfigError("width_schedule: steps must be >= 1");
    if (full_width == 0) throw ConfigError("width_schedule: width must be positive");
    const double sqrt2 = std::sqrt(2.0);
    std::vector<std::size_t> widths(steps);
    widths[steps - 1] = full_width;
    for (std::size_t i = 0; i + 1 < steps; ++i) {
        const std::size_t k = steps - 1 - i;  // number of sqrt(2) reductions
        double x = static_cast<double>(full_width);
        x /= static_cast<double>(std::uint64_t{1} << (k / 2));
        if (k % 2 == 1) x /= sqrt2;
        const long long snapped = std::llround(x / 8.0) * 8;
        if (snapped < 8) {
            throw ConfigError("width_schedule: step " + std::to_string(i + 1) +
                              " width underflows below 8 (full width " +
                              std::to_string(full_width) + ", " + std::to_string(steps) +
                              " steps)");
        }
        widths[i] = static_cast<std::size_t>(snapped);
    }
    for (std::size_t i = 0; i + 1 < steps; ++i) {
        if (widths[i] >= widths[i + 1]) {
            throw ConfigError("width_schedule: widths not strictly increasing at step " +
                              std::to_string(i + 1));
        }
    }
    return widths;
}

std::vector<std::size_t> allocate_depths(std::size_t depth, std::size_t steps) {
    if (steps == 0) throw ConfigError("allocate_depths: steps must be >= 1");
    if (depth == 0 || (steps >= 2 && depth < 2)) {
        throw ConfigError("allocate_depths: depth " + std::to_string(depth) +
                          " is too shallow to split into " + std::to_string(steps) +
                          " steps");
    }
    std::vector<std::size_t> depths(steps);
    std::size_t cur = depth;
    for (std::size_t i = steps; i >= 2; --i) {
        depths[i - 1] = (cur + 1) / 2;  // this half stays at the current width
        cur = 2 * (cur / 2);            // the other half splits into twice as many
    }
    depths[0] = cur;
    return depths;
}

std::vector<BudgetPoint> budget_frontier(std::uint64_t budget, std::size_t tokens,
                                         BlockKind kind,
                                         const std::vector<std::size_t>& depths) {
    if (budget == 0) throw ConfigError("budget_frontier: budget must be positive");
    auto flops_at = [&](std::uint64_t c, std::uint64_t d) {
        return kind == BlockKind::transformer ? transformer_flops(tokens, c, d)
                                              : mlp_flops(tokens, c, d);
    };
    std::vector<BudgetPoint> frontier;
    frontier.reserve(depths.size());
    for (std::size_t d : depths) {
        BudgetPoint p;
        p.depth = d;
        if (d > 0 && flops_at(8, d) <= budget) {
            std::uint64_t lo = 1, hi = 2;  // width in units of 8
            while (flops_at(hi * 8, d) <= budget) hi *= 2;
            while (lo + 1 < hi) {
                const std::uint64_t mid = lo + (hi - lo) / 2;
                if (flops_at(mid * 8, d) <= budget) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            p.width = static_cast<std::size_t>(lo * 8);
            p.flops = flops_at(lo * 8, d);
            p.feasible = true;
        }
        frontier.push_back(p);
    }
    return frontier;
}

StemHeadSpec deit_stem_head(std::size_t width) {
    const std::uint64_t c = width;
    StemHeadSpec s;
    s.stem_flops = 196 * 768 * c;    // patchify projection, 196 patches of 16x16x3
    s.stem_params = 768 * c + c;
    s.head_flops = 1000 * c;         // classifier applied to the class token
    s.head_params = 1000 * c + 1000;
    s.extra_params = c + 197 * c + 2 * c;  // class token, position table, final norm
    s.extra_layers = 2;              // patch embedding + classifier head
    return s;
}

namespace {

Preset make_deit(std::string name, std::vector<StageDesc> stages) {
    Preset p;
    p.name = std::move(name);
    p.desc.kind = BlockKind::transformer;
    p.desc.stages = std::move(stages);
    p.tokens = 197;
    p.stem_head = deit_stem_head(p.desc.stages.back().width);
    return p;
}

Preset make_swin(std::string name, std::vector<StageDesc> stages) {
    Preset p;
    p.name = std::move(name);
    p.desc.kind = BlockKind::transformer;
    p.desc.stages = std::move(stages);
    p.stem_head.extra_layers = 5;  // patch embedding, three patch mergings, head
    p.convention = "layers-only";
    return p;
}

std::vector<Preset> build_presets() {
    std::vector<Preset> v;
    v.push_back(make_deit("deit-t", {{192, 12, 3}}));
    v.push_back(make_deit("deit-s", {{384, 12, 6}}));
    v.push_back(make_deit("deit-b", {{768, 12, 12}}));
    v.push_back(make_deit("steps-deit-t", {{96, 12, 2}, {136, 6, 2}, {192, 6, 3}}));
    v.push_back(make_deit("steps-deit-s", {{192, 12, 3}, {272, 6, 4}, {384, 6, 6}}));
    v.push_back(make_deit("steps-deit-b", {{96, 12, 2},
                                           {136, 12, 2},
                                           {192, 12, 3},
                                           {272, 12, 4},
                                           {384, 12, 6}}));
    v.push_back(make_swin("swin-t", {{96, 2, 3}, {192, 2, 6}, {384, 6, 12}, {768, 2, 24}}));
    v.push_back(make_swin("swin-s", {{96, 2, 3}, {192, 2, 6}, {384, 18, 12}, {768, 2, 24}}));
    v.push_back(
        make_swin("swin-b", {{128, 2, 4}, {256, 2, 8}, {512, 18, 16}, {1024, 2, 32}}));
    v.push_back(make_swin("steps-swin-t", {{96, 2, 3},
                                           {192, 2, 6},
                                           {192, 6, 6},
                                           {272, 3, 8},
                                           {384, 3, 12},
                                           {192, 4, 6},
                                           {272, 2, 8},
                                           {384, 2, 12},
                                           {544, 2, 16},
                                           {768, 0, 24}}));
    v.push_back(make_swin("steps-swin-s", {{96, 2, 3},
                                           {192, 2, 6},
                                           {192, 6, 6},
                                           {272, 3, 8},
                                           {384, 15, 12},
                                           {192, 4, 6},
                                           {272, 2, 8},
                                           {384, 2, 12},
                                           {544, 2, 16},
                                           {768, 0, 24}}));
    v.push_back(make_swin("steps-swin-b", {{128, 2, 4},
                                           {256, 2, 8},
                                           {256, 6, 8},
                                           {360, 3, 12},
                                           {512, 15, 16},
                                           {256, 4, 8},
                                           {360, 2, 12},
                                           {512, 2, 16},
                                           {720, 2, 24},
                                           {1024, 0, 32}}));
    return v;
}

}  // namespace

const std::vector<Preset>& presets() {
    static const std::vector<Preset> v = build_presets();
    return v;
}

const Preset& preset(const std::string& name) {
    for (const Preset& p : presets()) {
        if (p.name == name) return p;
    }
    std::string known;
    for (const Preset& p : presets()) {
        if (!known.empty()) known += ", ";
        known += p.name;
    }
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

CostReport preset_cost(const Preset& p) {
    if (p.convention == "layers-only") {
        // Windowed attention is out of scope for the MAC model, so only the
        // block and layer accounting is meaningful for these presets.
        CostReport r;
        for (const StageDesc& s : p.desc.stages) r.blocks_total += s.depth;
        r.layers_total =
            r.blocks_total * block_layers(p.desc.kind) + p.stem_head.extra_layers;
        r.convention = "layers-only";
        return r;
    }
    return model_cost(p.desc, p.tokens, p.stem_head);
}

std::string cost_report_to_json(const CostReport& r) {
    nlohmann::json j;
    j["flops_total"] = r.flops_total;
    j["flops_breakdown"] = {{"qkv_out", r.flops_qkv_out},
                            {"attention", r.flops_attention},
                            {"mlp", r.flops_mlp},
                            {"stem", r.flops_stem},
                            {"head", r.flops_head}};
    j["params_total"] = r.params_total;
    j["layers_total"] = r.layers_total;
    j["blocks_total"] = r.blocks_total;
    j["convention"] = r.convention;
    return j.dump(2);
}

std::string cost_table(const std::vector<std::pair<std::string, CostReport>>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(16) << "model" << std::right << std::setw(8) << "blocks"
        << std::setw(8) << "layers" << std::setw(14) << "params" << std::setw(16)
        << "flops(MAC)" << '\n';
    for (const auto& [name, r] : rows) {
        out << std::left << std::setw(16) << name << std::right << std::setw(8)
            << r.blocks_total << std::setw(8) << r.layers_total;
        if (r.convention == "layers-only") {
            out << std::setw(14) << "-" << std::setw(16) << "-";
        } else {
            out << std::setw(14) << r.params_total << std::setw(16) << r.flops_total;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace stepsnet
