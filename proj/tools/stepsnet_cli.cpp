// stepsnet: the command-line front door. Subcommands bind config files to the
// library modules and write every artifact under one output directory, next
// to a manifest that records how to reproduce the run.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "stepsnet/config.hpp"
#include "stepsnet/costing.hpp"
#include "stepsnet/error.hpp"
#include "stepsnet/gradcheck.hpp"
#include "stepsnet/harness.hpp"
#include "stepsnet/probe.hpp"

using namespace stepsnet;
using nlohmann::json;

namespace {

std::string env_or(const char* var, const std::string& fallback) {
    const char* v = std::getenv(var);
    return (v && *v) ? v : fallback;
}

// Common source options: a preset name or a config file, plus overrides.
struct ConfigSource {
    std::string preset;
    std::string config_path;
    std::vector<std::string> overrides;

    TrainConfig resolve() const {
        if (!preset.empty() && !config_path.empty()) {
            throw ConfigError("give either --preset or --config, not both");
        }
        if (!preset.empty()) {
            json values = train_config_to_json(train_preset(preset));
            for (const auto& o : overrides) apply_override(values, o);
            return train_config_from_json(values);
        }
        if (!config_path.empty()) {
            return load_train_config(config_path, overrides);
        }
        throw ConfigError("a config is required: --preset NAME or --config FILE");
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "named run preset");
        cmd->add_option("--config", config_path, "config file (text or .json)");
        cmd->add_option("--set", overrides, "override, dotted key=value")
            ->take_all();
    }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << content;
}

// Every artifact-writing command drops a manifest.json beside its outputs:
// the command line, the config hash and seed, and the artifact names.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::vector<std::string>& argv, const TrainConfig& cfg,
                    const std::vector<std::string>& artifacts) {
    json m;
    m["command"] = command;
    m["argv"] = argv;
    // where artifacts land never changes what a run computes, so the hash
    // identifies the run with the output directory stripped
    json hashed = train_config_to_json(cfg);
    hashed.erase("out_dir");
    m["config_hash"] = config_hash(hashed);
    m["seed"] = cfg.seed;
    m["artifacts"] = artifacts;
    write_file(out_dir + "/manifest.json", m.dump(2) + "\n");
}

std::string resolve_out_dir(const std::string& flag_value, const TrainConfig& cfg) {
    if (!flag_value.empty()) return flag_value;
    const std::string env = env_or("STEPSNET_OUT", "");
    if (!env.empty()) return env;
    return cfg.out_dir;
}

int cmd_analyze(const std::string& preset_name, const std::string& config_path,
                bool all, const std::string& out_dir) {
    if (all) {
        std::vector<std::pair<std::string, CostReport>> rows;
        for (const Preset& p : presets()) rows.emplace_back(p.name, preset_cost(p));
        std::cout << cost_table(rows);
        return 0;
    }

    CostReport report;
    std::string label;
    if (!preset_name.empty()) {
        report = preset_cost(preset(preset_name));
        label = preset_name;
    } else if (!config_path.empty()) {
        const TrainConfig cfg = load_train_config(config_path);
        ModelDesc desc;
        desc.kind = cfg.model.kind;
        for (std::size_t i = 0; i < cfg.model.steps(); ++i) {
            desc.stages.push_back({cfg.model.step_widths[i], cfg.model.depths[i],
                                   cfg.model.heads_at(i)});
        }
        // block stack only; desk-scale stems and heads are negligible
        const std::size_t tokens = (cfg.task == "spiral2") ? 1 : 64;
        report = model_cost(desc, tokens, StemHeadSpec{});
        label = config_path;
    } else {
        throw ConfigError("analyze needs --preset NAME, --config FILE, or --all");
    }

    const std::string body = cost_report_to_json(report);
    std::cout << body << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_file(out_dir + "/cost.json", body + "\n");
        json m;
        m["command"] = "analyze";
        m["subject"] = label;
        m["artifacts"] = json::array({"cost.json"});
        write_file(out_dir + "/manifest.json", m.dump(2) + "\n");
    }
    return 0;
}

int cmd_genconfig(std::size_t base_depth, std::size_t width, std::size_t steps,
                  const std::string& kind, const std::string& task,
                  std::size_t heads, const std::string& preset_name,
                  const std::string& emit) {
    TrainConfig cfg;
    if (!preset_name.empty()) {
        cfg = train_preset(preset_name);
    } else {
        if (base_depth == 0 || width == 0 || steps == 0) {
            throw ConfigError(
                "genconfig needs --base-depth, --width, and --steps (or --preset)");
        }
        cfg = derive_train_config(base_depth, width, steps,
                                  block_kind_from_string(kind), task, heads);
    }
    const std::string text = train_config_to_text(cfg);
    if (emit.empty()) {
        std::cout << text;
    } else {
        write_file(emit, text);
        std::cout << "wrote " << emit << "\n";
    }
    return 0;
}

int cmd_train(ConfigSource& source, const std::string& out_flag,
              const std::string& data_flag, const std::vector<std::string>& argv) {
    TrainConfig cfg = source.resolve();
    cfg.out_dir = resolve_out_dir(out_flag, cfg);
    const TaskData task = make_task(cfg.task, cfg.seed, data_flag);

    const RunRecord rec = train(cfg, task);
    write_file(cfg.out_dir + "/config.txt", train_config_to_text(cfg));
    write_manifest(cfg.out_dir, "train", argv, cfg,
                   {"config.txt", "run.csv", "model.ssnc"});

    const RunSample& last = rec.samples.back();
    std::printf("trained %zu steps in %.1fs; final train loss %.6g\n",
                cfg.total_steps, rec.duration_seconds, last.train_loss);
    if (last.has_eval) {
        std::printf("final eval %s: %.6g\n",
                    task.is_sequence ? "perplexity" : "accuracy", last.eval_metric);
    }
    std::printf("artifacts in %s\n", cfg.out_dir.c_str());
    return 0;
}

template <typename S>
std::string probe_trace(const TrainConfig& cfg, std::size_t tokens) {
    StepsModel<S> model(cfg.model);
    Rng rng(cfg.seed);
    model.init(rng, cfg.init_std);
    Tensor<S> batch = Tensor<S>::zeros({tokens, cfg.model.full_width()});
    fill_normal(batch, 0.0, 1.0, rng);
    return gamma_trace_to_csv(shortcut_ratio_trace(model, batch));
}

int cmd_probe(ConfigSource& source, const std::string& out_flag,
              std::size_t tokens, const std::vector<std::string>& argv) {
    TrainConfig cfg = source.resolve();
    cfg.out_dir = resolve_out_dir(out_flag, cfg);
    std::filesystem::create_directories(cfg.out_dir);

    const std::string csv = (cfg.elem == "f64") ? probe_trace<double>(cfg, tokens)
                                                : probe_trace<float>(cfg, tokens);
    write_file(cfg.out_dir + "/gamma.csv", csv);
    write_file(cfg.out_dir + "/config.txt", train_config_to_text(cfg));
    write_manifest(cfg.out_dir, "probe", argv, cfg, {"config.txt", "gamma.csv"});
    std::printf("gamma trace over %zu tokens in %s/gamma.csv\n", tokens,
                cfg.out_dir.c_str());
    return 0;
}

int cmd_ablate(ConfigSource& source, const std::string& kind,
               const std::string& checkpoint, const std::string& out_flag,
               const std::string& data_flag, const std::vector<std::string>& argv) {
    TrainConfig cfg = source.resolve();
    cfg.out_dir = resolve_out_dir(out_flag, cfg);
    if ((kind == "mask" || kind == "drop") && checkpoint.empty()) {
        throw ConfigError("ablation kind '" + kind +
                          "' evaluates a trained model; give --checkpoint");
    }
    const TaskData task = make_task(cfg.task, cfg.seed, data_flag);
    std::filesystem::create_directories(cfg.out_dir);

    const AblationReport report = ablation_sweep(kind, cfg, task, checkpoint);
    const std::string name = "ablation_" + kind + ".csv";
    write_file(cfg.out_dir + "/" + name, report.to_csv());
    write_file(cfg.out_dir + "/config.txt", train_config_to_text(cfg));
    write_manifest(cfg.out_dir, "ablate", argv, cfg, {"config.txt", name});
    std::printf("%zu rows in %s/%s\n", report.rows.size(), cfg.out_dir.c_str(),
                name.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    const std::vector<GradCheckResult> results = run_gradient_suite(seed);
    std::cout << gradcheck_table(results);
    const double worst = worst_rel_err(results);
    std::printf("worst relative error %.3g\n", worst);
    if (worst >= 1e-5) {
        std::fprintf(stderr, "gradient check failed the 1e-5 bar\n");
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stepsnet: desk-scale laboratory for stepwise residual networks"};
    app.require_subcommand(1);
    const std::vector<std::string> raw_argv(argv, argv + argc);

    // analyze
    std::string an_preset, an_config, an_out;
    bool an_all = false;
    CLI::App* analyze = app.add_subcommand("analyze", "analytical cost of a model");
    analyze->add_option("--preset", an_preset, "published preset name");
    analyze->add_option("--config", an_config, "run config file");
    analyze->add_flag("--all", an_all, "table of every published preset");
    analyze->add_option("--out", an_out, "also write cost.json here");

    // genconfig
    std::size_t gc_depth = 0, gc_width = 0, gc_steps = 0, gc_heads = 1;
    std::string gc_kind = "transformer", gc_task = "spiral2", gc_preset, gc_emit;
    CLI::App* genconfig =
        app.add_subcommand("genconfig", "derive a run config from the schedules");
    genconfig->add_option("--base-depth", gc_depth, "blocks before splitting");
    genconfig->add_option("--width", gc_width, "full model width");
    genconfig->add_option("--steps", gc_steps, "number of steps");
    genconfig->add_option("--kind", gc_kind, "transformer or mlp");
    genconfig->add_option("--task", gc_task, "spiral2, charlm, or copyseq");
    genconfig->add_option("--heads", gc_heads, "attention heads per step");
    genconfig->add_option("--preset", gc_preset, "emit a named preset instead");
    genconfig->add_option("--emit", gc_emit, "write here instead of stdout");

    // train
    ConfigSource tr_source;
    std::string tr_out, tr_data = env_or("STEPSNET_DATA", "data");
    CLI::App* train_cmd = app.add_subcommand("train", "run an optimization");
    tr_source.attach(train_cmd);
    train_cmd->add_option("--out", tr_out, "output directory");
    train_cmd->add_option("--data", tr_data, "directory with the bundled corpus");

    // probe
    ConfigSource pr_source;
    std::string pr_out;
    std::size_t pr_tokens = 32;
    CLI::App* probe =
        app.add_subcommand("probe", "shortcut-ratio trace of a freshly built model");
    pr_source.attach(probe);
    probe->add_option("--out", pr_out, "output directory");
    probe->add_option("--tokens", pr_tokens, "batch rows fed to the trace");

    // ablate
    ConfigSource ab_source;
    std::string ab_kind, ab_ckpt, ab_out, ab_data = env_or("STEPSNET_DATA", "data");
    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation sweep");
    ab_source.attach(ablate);
    ablate->add_option("--kind", ab_kind, "mask, drop, steps, or alloc")
        ->required();
    ablate->add_option("--checkpoint", ab_ckpt, "trained model for mask/drop");
    ablate->add_option("--out", ab_out, "output directory");
    ablate->add_option("--data", ab_data, "directory with the bundled corpus");

    // gradcheck
    std::uint64_t gr_seed = 1234;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference audit of every op");
    gradcheck->add_option("--seed", gr_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        // CLI11 returns 0 for --help; anything else is a usage problem
        return code == 0 ? 0 : 1;
    }

    try {
        if (*analyze) return cmd_analyze(an_preset, an_config, an_all, an_out);
        if (*genconfig)
            return cmd_genconfig(gc_depth, gc_width, gc_steps, gc_kind, gc_task,
                                 gc_heads, gc_preset, gc_emit);
        if (*train_cmd) return cmd_train(tr_source, tr_out, tr_data, raw_argv);
        if (*probe) return cmd_probe(pr_source, pr_out, pr_tokens, raw_argv);
        if (*ablate)
            return cmd_ablate(ab_source, ab_kind, ab_ckpt, ab_out, ab_data, raw_argv);
        if (*gradcheck) return cmd_gradcheck(gr_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
