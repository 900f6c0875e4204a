#include "stepsnet/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "stepsnet/costing.hpp"

namespace stepsnet {
namespace {

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr std::uint64_t kDataSeedSalt = 0x517cc1b727220a95ULL;

}  // namespace

void TrainConfig::validate() const {
    if (task != "spiral2" && task != "charlm" && task != "copyseq") {
        throw ConfigError("task: unknown task '" + task + "'");
    }
    model.validate();
    if (elem != "f32" && elem != "f64") {
        throw ConfigError("elem: must be f32 or f64, got '" + elem + "'");
    }
    if (optimizer.kind != "adamw") {
        throw ConfigError("optimizer.kind: only adamw is available, got '" +
                          optimizer.kind + "'");
    }
    if (optimizer.lr < 0.0 || (optimizer.lr == 0.0 && !frozen_run)) {
        throw ConfigError("optimizer.lr: must be > 0 unless frozen_run is set");
    }
    if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 ||
        optimizer.beta2 >= 1.0) {
        throw ConfigError("optimizer.betas: must lie in [0, 1)");
    }
    if (optimizer.eps <= 0.0) throw ConfigError("optimizer.eps: must be > 0");
    if (optimizer.weight_decay < 0.0) {
        throw ConfigError("optimizer.weight_decay: must be >= 0");
    }
    if (optimizer.lr_floor < 0.0 || optimizer.lr_floor > optimizer.lr) {
        throw ConfigError("optimizer.lr_floor: must lie in [0, lr]");
    }
    if (batch_size == 0) throw ConfigError("batch_size: must be > 0");
    if (total_steps == 0) throw ConfigError("total_steps: must be > 0");
    if (optimizer.warmup_steps >= total_steps && total_steps > 1) {
        throw ConfigError("optimizer.warmup_steps: must be < total_steps");
    }
    if (init_std <= 0.0) throw ConfigError("init_std: must be > 0");
    if (task != "spiral2" && model.kind != BlockKind::transformer) {
        throw ConfigError("model.kind: sequence tasks need a transformer core");
    }
}

std::string run_record_to_csv(const RunRecord& record) {
    std::string out = "step,train_loss,eval_metric\n";
    for (const auto& s : record.samples) {
        out += std::to_string(s.step);
        out += ',';
        out += fmt_g17(s.train_loss);
        out += ',';
        if (s.has_eval) out += fmt_g17(s.eval_metric);
        out += '\n';
    }
    return out;
}

double cosine_lr(const OptimizerConfig& opt, std::size_t step,
                 std::size_t total_steps) {
    const std::size_t warmup = opt.warmup_steps;
    if (warmup > 0 && step < warmup) {
        return opt.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const std::size_t tail = total_steps > warmup ? total_steps - warmup : 1;
    const double phase =
        static_cast<double>(step - warmup) / static_cast<double>(tail);
    return opt.lr_floor +
           0.5 * (opt.lr - opt.lr_floor) * (1.0 + std::cos(phase * 3.14159265358979323846));
}

namespace {

TaskData make_spiral2(std::uint64_t seed) {
    TaskData t;
    t.name = "spiral2";
    t.features = 2;
    t.classes = 2;

    // 500 points per class on two interleaved spirals, mild Gaussian jitter,
    // every 10th point held out. Angles advance deterministically.
    constexpr std::size_t kPerClass = 500;
    Rng rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (std::size_t i = 0; i < kPerClass; ++i) {
        for (int cls = 0; cls < 2; ++cls) {
            const double u = static_cast<double>(i) / kPerClass;
            const double angle = 3.5 * 3.14159265358979323846 * u +
                                 (cls == 1 ? 3.14159265358979323846 : 0.0);
            const double radius = 0.1 + 0.9 * u;
            const double x = radius * std::cos(angle) + jitter(rng);
            const double y = radius * std::sin(angle) + jitter(rng);
            const bool hold_out = (i % 10) == 9;
            auto& xs = hold_out ? t.eval_x : t.train_x;
            auto& ys = hold_out ? t.eval_y : t.train_y;
            xs.push_back(x);
            xs.push_back(y);
            ys.push_back(cls);
        }
    }
    return t;
}

std::vector<int> read_corpus(const std::string& data_dir, std::string& alphabet) {
    const std::string path = data_dir + "/charlm.txt";
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("charlm: cannot open corpus " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    if (text.size() < 4096) {
        throw ConfigError("charlm: corpus " + path + " is too small (" +
                          std::to_string(text.size()) + " bytes)");
    }

    std::array<bool, 256> seen{};
    for (unsigned char ch : text) seen[ch] = true;
    alphabet.clear();
    for (int ch = 0; ch < 256; ++ch) {
        if (seen[ch]) alphabet.push_back(static_cast<char>(ch));
    }
    if (alphabet.size() > 128) {
        throw ConfigError("charlm: corpus alphabet has " +
                          std::to_string(alphabet.size()) + " symbols, limit is 128");
    }
    std::array<int, 256> to_id{};
    to_id.fill(-1);
    for (std::size_t i = 0; i < alphabet.size(); ++i) {
        to_id[static_cast<unsigned char>(alphabet[i])] = static_cast<int>(i);
    }
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char ch : text) ids.push_back(to_id[ch]);
    return ids;
}

TaskData make_charlm(const std::string& data_dir) {
    TaskData t;
    t.name = "charlm";
    t.is_sequence = true;
    t.seq_len = 64;

    std::string alphabet;
    std::vector<int> stream = read_corpus(data_dir, alphabet);
    t.vocab = alphabet.size();
    t.vocab_chars = alphabet;

    // First 90% of the stream trains, the tail evaluates via non-overlapping
    // windows (capped so evaluation stays fast).
    const std::size_t split = stream.size() * 9 / 10;
    t.train_stream.assign(stream.begin(),
                          stream.begin() + static_cast<std::ptrdiff_t>(split));
    const std::vector<int> tail(stream.begin() + static_cast<std::ptrdiff_t>(split),
                                stream.end());

    const std::size_t max_windows = 32;
    std::size_t offset = 0;
    while (offset + t.seq_len + 1 <= tail.size() &&
           t.n_eval_sequences < max_windows) {
        for (std::size_t i = 0; i < t.seq_len; ++i) {
            t.eval_inputs.push_back(tail[offset + i]);
            t.eval_targets.push_back(tail[offset + i + 1]);
        }
        ++t.n_eval_sequences;
        offset += t.seq_len;
    }
    if (t.n_eval_sequences == 0) {
        throw ConfigError("charlm: evaluation split has no full window");
    }
    return t;
}

TaskData make_copyseq(std::uint64_t seed) {
    TaskData t;
    t.name = "copyseq";
    t.is_sequence = true;
    t.vocab = 16;
    t.seq_len = 32;

    // Training samples are generated on the fly; evaluation uses 100 fixed
    // sequences drawn from the task seed.
    Rng rng(seed ^ kDataSeedSalt);
    std::vector<int> x, y;
    for (int s = 0; s < 100; ++s) {
        copyseq_pair(rng, t.seq_len, t.vocab, x, y);
        t.eval_inputs.insert(t.eval_inputs.end(), x.begin(), x.end());
        t.eval_targets.insert(t.eval_targets.end(), y.begin(), y.end());
        ++t.n_eval_sequences;
    }
    return t;
}

}  // namespace

TaskData make_task(const std::string& task, std::uint64_t seed,
                   const std::string& data_dir) {
    if (task == "spiral2") return make_spiral2(seed);
    if (task == "charlm") return make_charlm(data_dir);
    if (task == "copyseq") return make_copyseq(seed);
    throw ConfigError("unknown task '" + task + "'");
}

void copyseq_pair(Rng& rng, std::size_t seq_len, std::size_t vocab,
                  std::vector<int>& x, std::vector<int>& y) {
    std::uniform_int_distribution<int> tok(0, static_cast<int>(vocab) - 1);
    x.resize(seq_len);
    y.resize(seq_len);
    for (auto& v : x) v = tok(rng);
    y[0] = 0;
    for (std::size_t i = 1; i < seq_len; ++i) y[i] = x[i - 1];
}

double unigram_baseline(const TaskData& task) {
    if (!task.is_sequence) {
        throw ContractError("unigram baseline is defined for sequence tasks only");
    }
    std::vector<double> counts(task.vocab, 1.0);  // add-one smoothing
    double total = static_cast<double>(task.vocab);
    for (int id : task.train_stream) {
        counts[static_cast<std::size_t>(id)] += 1.0;
        total += 1.0;
    }
    if (task.train_stream.empty()) {
        // copyseq has no training stream; the uniform model is the baseline.
        return static_cast<double>(task.vocab);
    }
    double nll = 0.0;
    for (int id : task.eval_targets) {
        nll -= std::log(counts[static_cast<std::size_t>(id)] / total);
    }
    return std::exp(nll / static_cast<double>(task.eval_targets.size()));
}

namespace {

// Samples a classification minibatch (with replacement) into a tensor and
// target vector.
template <typename S>
void sample_class_batch(const TaskData& task, std::size_t batch, Rng& rng,
                        Tensor<S>& x, std::vector<int>& y) {
    std::uniform_int_distribution<std::size_t> pick(0, task.train_count() - 1);
    x = Tensor<S>::zeros({batch, task.features});
    auto vals = x.values_mut();
    y.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = pick(rng);
        for (std::size_t f = 0; f < task.features; ++f) {
            vals[b * task.features + f] =
                static_cast<S>(task.train_x[i * task.features + f]);
        }
        y[b] = task.train_y[i];
    }
}

// Samples one training sequence for either sequence task.
void sample_sequence(const TaskData& task, Rng& rng, std::vector<int>& x,
                     std::vector<int>& y) {
    if (task.name == "copyseq") {
        copyseq_pair(rng, task.seq_len, task.vocab, x, y);
        return;
    }
    std::uniform_int_distribution<std::size_t> start(
        0, task.train_stream.size() - task.seq_len - 1);
    const std::size_t s = start(rng);
    x.assign(task.train_stream.begin() + static_cast<std::ptrdiff_t>(s),
             task.train_stream.begin() + static_cast<std::ptrdiff_t>(s + task.seq_len));
    y.assign(task.train_stream.begin() + static_cast<std::ptrdiff_t>(s + 1),
             task.train_stream.begin() +
                 static_cast<std::ptrdiff_t>(s + 1 + task.seq_len));
}

template <typename S>
double evaluate_classifier(const ClassifierModel<S>& model, const TaskData& task,
                           const MaskSpec* mask) {
    const std::size_t n = task.eval_count();
    Tensor<S> x = Tensor<S>::zeros({n, task.features});
    auto vals = x.values_mut();
    for (std::size_t i = 0; i < n * task.features; ++i) {
        vals[i] = static_cast<S>(task.eval_x[i]);
    }
    Tensor<S> logits = model.forward(x, mask);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < task.classes; ++c) {
            if (logits.values()[i * task.classes + c] >
                logits.values()[i * task.classes + best]) {
                best = c;
            }
        }
        if (static_cast<int>(best) == task.eval_y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

template <typename S>
double evaluate_lm(const LmModel<S>& model, const TaskData& task,
                   const MaskSpec* mask) {
    double nll = 0.0;
    std::vector<int> ids(task.seq_len), targets(task.seq_len);
    for (std::size_t s = 0; s < task.n_eval_sequences; ++s) {
        const std::size_t base = s * task.seq_len;
        std::copy_n(task.eval_inputs.begin() + static_cast<std::ptrdiff_t>(base),
                    task.seq_len, ids.begin());
        std::copy_n(task.eval_targets.begin() + static_cast<std::ptrdiff_t>(base),
                    task.seq_len, targets.begin());
        Tensor<S> loss = cross_entropy_mean(model.logits(ids, mask), targets);
        nll += static_cast<double>(loss.item());
    }
    return std::exp(nll / static_cast<double>(task.n_eval_sequences));
}

template <typename S>
RunRecord train_impl(const TrainConfig& cfg, const TaskData& task) {
    const auto t0 = std::chrono::steady_clock::now();
    OptimizerConfig opt = cfg.optimizer;
    if (opt.warmup_steps == 0) opt.warmup_steps = cfg.total_steps / 20;

    Rng init_rng(cfg.seed);
    Rng data_rng(cfg.seed ^ kDataSeedSalt);

    RunRecord record;
    std::vector<NamedParam<S>> params;

    auto run_loop = [&](auto&& batch_loss, auto&& eval_now) {
        AdamW<S> adam(params, opt);
        for (auto& p : params) p.tensor.set_requires_grad(true);
        for (std::size_t t = 0; t < cfg.total_steps; ++t) {
            double loss_val = 0.0;
            {
                ComputationTape<S> tape;
                TapeScope<S> scope(tape);
                Tensor<S> loss = batch_loss(t);
                loss_val = static_cast<double>(loss.item());
                tape.backward(loss);
            }
            if (!std::isfinite(loss_val)) {
                throw NumericError("training diverged at step " + std::to_string(t + 1) +
                                   " (loss " + std::to_string(loss_val) + ")");
            }
            adam.step(cosine_lr(opt, t, cfg.total_steps));
            for (auto& p : params) p.tensor.zero_grad();

            RunSample sample;
            sample.step = t + 1;
            sample.train_loss = loss_val;
            const bool last = t + 1 == cfg.total_steps;
            if (last || (cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0)) {
                sample.has_eval = true;
                sample.eval_metric = eval_now();
            }
            record.samples.push_back(sample);
        }
        for (auto& p : params) p.tensor.set_requires_grad(false);
    };

    if (!task.is_sequence) {
        ClassifierModel<S> model(cfg.model, task.features, task.classes);
        model.init(init_rng, cfg.init_std);
        model.collect_params(params);

        Tensor<S> fixed_x;
        std::vector<int> fixed_y;
        if (cfg.overfit_single_batch) {
            sample_class_batch(task, cfg.batch_size, data_rng, fixed_x, fixed_y);
        }
        Tensor<S> x;
        std::vector<int> y;
        run_loop(
            [&](std::size_t) {
                if (cfg.overfit_single_batch) {
                    return cross_entropy_mean(model.forward(fixed_x), fixed_y);
                }
                sample_class_batch(task, cfg.batch_size, data_rng, x, y);
                return cross_entropy_mean(model.forward(x), y);
            },
            [&] { return evaluate_classifier(model, task, nullptr); });
    } else {
        LmModel<S> model(cfg.model, task.vocab, task.seq_len);
        model.init(init_rng, cfg.init_std);
        model.collect_params(params);

        std::vector<std::vector<int>> fixed_x(cfg.batch_size), fixed_y(cfg.batch_size);
        if (cfg.overfit_single_batch) {
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                sample_sequence(task, data_rng, fixed_x[b], fixed_y[b]);
            }
        }
        std::vector<int> x, y;
        run_loop(
            [&](std::size_t) {
                Tensor<S> total = Tensor<S>::scalar(S{0});
                for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                    if (cfg.overfit_single_batch) {
                        total = add(total, cross_entropy_mean(model.logits(fixed_x[b]),
                                                              fixed_y[b]));
                    } else {
                        sample_sequence(task, data_rng, x, y);
                        total = add(total, cross_entropy_mean(model.logits(x), y));
                    }
                }
                return scale(total, 1.0 / static_cast<double>(cfg.batch_size));
            },
            [&] { return evaluate_lm(model, task, nullptr); });
    }

    std::filesystem::create_directories(cfg.out_dir);
    record.checkpoint_path = cfg.out_dir + "/model.ssnc";
    save_checkpoint(record.checkpoint_path, params);
    {
        std::ofstream csv(cfg.out_dir + "/run.csv", std::ios::binary | std::ios::trunc);
        if (!csv) throw ConfigError("cannot write " + cfg.out_dir + "/run.csv");
        const std::string body = run_record_to_csv(record);
        csv.write(body.data(), static_cast<std::streamsize>(body.size()));
    }
    record.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

template <typename S>
double evaluate_impl(const TrainConfig& cfg, const TaskData& task,
                     const std::string& checkpoint_path, const MaskSpec* mask) {
    std::vector<NamedParam<S>> params;
    if (!task.is_sequence) {
        ClassifierModel<S> model(cfg.model, task.features, task.classes);
        model.collect_params(params);
        load_checkpoint(checkpoint_path, params);
        return evaluate_classifier(model, task, mask);
    }
    LmModel<S> model(cfg.model, task.vocab, task.seq_len);
    model.collect_params(params);
    load_checkpoint(checkpoint_path, params);
    return evaluate_lm(model, task, mask);
}

// Evaluates the checkpoint with `count` blocks dropped from core step
// `step_index`.
template <typename S>
double evaluate_dropped_impl(const TrainConfig& cfg, const TaskData& task,
                             const std::string& checkpoint_path,
                             std::size_t step_index, std::size_t count) {
    std::vector<NamedParam<S>> params;
    if (!task.is_sequence) {
        ClassifierModel<S> model(cfg.model, task.features, task.classes);
        model.collect_params(params);
        load_checkpoint(checkpoint_path, params);
        ClassifierModel<S> dropped = model.with_dropped(step_index, count);
        return evaluate_classifier(dropped, task, nullptr);
    }
    LmModel<S> model(cfg.model, task.vocab, task.seq_len);
    model.collect_params(params);
    load_checkpoint(checkpoint_path, params);
    LmModel<S> dropped = model.with_dropped(step_index, count);
    return evaluate_lm(dropped, task, nullptr);
}

double evaluate_dropped(const TrainConfig& cfg, const TaskData& task,
                        const std::string& checkpoint_path, std::size_t step_index,
                        std::size_t count) {
    if (cfg.elem == "f64") {
        return evaluate_dropped_impl<double>(cfg, task, checkpoint_path, step_index,
                                             count);
    }
    return evaluate_dropped_impl<float>(cfg, task, checkpoint_path, step_index, count);
}

}  // namespace

RunRecord train(const TrainConfig& cfg, const TaskData& task) {
    cfg.validate();
    if (task.name != cfg.task) {
        throw ContractError("train: config task " + cfg.task +
                            " does not match dataset " + task.name);
    }
    if (cfg.elem == "f64") return train_impl<double>(cfg, task);
    return train_impl<float>(cfg, task);
}

double evaluate(const TrainConfig& cfg, const TaskData& task,
                const std::string& checkpoint_path, const MaskSpec* mask) {
    if (cfg.elem == "f64") return evaluate_impl<double>(cfg, task, checkpoint_path, mask);
    return evaluate_impl<float>(cfg, task, checkpoint_path, mask);
}

std::string AblationReport::to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out += ',';
        out += columns[i];
    }
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += row[i];
        }
        out += '\n';
    }
    return out;
}

namespace {

AblationReport sweep_mask(const TrainConfig& base, const TaskData& task,
                          const std::string& ckpt) {
    AblationReport report;
    report.kind = "mask";
    report.columns = {"side", "k", "metric"};
    const std::size_t d1 = base.model.slice_widths().front();
    for (const PathSide side : {PathSide::slow, PathSide::fast}) {
        for (const std::size_t k : {std::size_t{0}, d1 / 2, d1}) {
            const MaskSpec spec{side, k};
            const double metric = evaluate(base, task, ckpt, &spec);
            report.rows.push_back({side == PathSide::slow ? "slow" : "fast",
                                   std::to_string(k), fmt_g17(metric)});
        }
    }
    return report;
}

AblationReport sweep_drop(const TrainConfig& base, const TaskData& task,
                          const std::string& ckpt) {
    AblationReport report;
    report.kind = "drop";
    report.columns = {"step", "blocks_dropped", "flops_dropped_per_token", "metric"};
    const std::size_t n_tok = task.is_sequence ? task.seq_len : 1;
    for (std::size_t i = 0; i < base.model.steps(); ++i) {
        const std::size_t width = base.model.step_widths[i];
        const std::uint64_t per_block =
            base.model.kind == BlockKind::transformer
                ? transformer_flops(n_tok, width, 1)
                : mlp_flops(n_tok, width, 1);
        for (std::size_t count = 1; count <= base.model.depths[i]; ++count) {
            const double metric = evaluate_dropped(base, task, ckpt, i, count);
            report.rows.push_back({std::to_string(i + 1), std::to_string(count),
                                   std::to_string(per_block * count / n_tok),
                                   fmt_g17(metric)});
        }
    }
    return report;
}

AblationReport sweep_steps(const TrainConfig& base, const TaskData& task) {
    AblationReport report;
    report.kind = "steps";
    report.columns = {"steps", "widths", "depths", "final_train_loss", "metric"};
    const std::size_t full = base.model.full_width();
    const std::size_t base_depth = base.model.depths.front();
    const std::size_t max_steps = base.model.steps();
    for (std::size_t n = 1; n <= max_steps; ++n) {
        TrainConfig cfg = base;
        try {
            cfg.model.step_widths = width_schedule(full, n);
            cfg.model.depths = allocate_depths(base_depth, n);
        } catch (const ConfigError&) {
            // narrow bases run out of distinct multiple-of-8 widths (or out
            // of blocks to split) before reaching the base step count
            continue;
        }
        cfg.model.heads.assign(n, base.model.heads_at(0));
        cfg.out_dir = base.out_dir + "/steps" + std::to_string(n);
        const RunRecord rec = train(cfg, task);
        std::string widths, depths;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) widths += ' ', depths += ' ';
            widths += std::to_string(cfg.model.step_widths[i]);
            depths += std::to_string(cfg.model.depths[i]);
        }
        report.rows.push_back({std::to_string(n), widths, depths,
                               fmt_g17(rec.samples.back().train_loss),
                               fmt_g17(rec.samples.back().eval_metric)});
    }
    return report;
}

AblationReport sweep_alloc(const TrainConfig& base, const TaskData& task) {
    AblationReport report;
    report.kind = "alloc";
    report.columns = {"depths", "total_blocks", "final_train_loss", "metric"};

    // The derived allocation, a flat split, and the reversed derived one, at
    // an equal total block count.
    std::vector<std::vector<std::size_t>> allocs;
    allocs.push_back(base.model.depths);
    const std::size_t total =
        std::accumulate(base.model.depths.begin(), base.model.depths.end(),
                        std::size_t{0});
    const std::size_t n = base.model.steps();
    std::vector<std::size_t> flat(n, total / n);
    flat.front() += total - (total / n) * n;
    allocs.push_back(flat);
    std::vector<std::size_t> reversed(base.model.depths.rbegin(),
                                      base.model.depths.rend());
    allocs.push_back(reversed);

    int variant = 0;
    for (const auto& depths : allocs) {
        if (std::find(depths.begin(), depths.end(), std::size_t{0}) != depths.end()) {
            continue;  // a reversed allocation can zero a step; skip it
        }
        TrainConfig cfg = base;
        cfg.model.depths = depths;
        cfg.out_dir = base.out_dir + "/alloc" + std::to_string(variant++);
        const RunRecord rec = train(cfg, task);
        std::string label;
        for (std::size_t i = 0; i < depths.size(); ++i) {
            if (i) label += ' ';
            label += std::to_string(depths[i]);
        }
        report.rows.push_back({label, std::to_string(total),
                               fmt_g17(rec.samples.back().train_loss),
                               fmt_g17(rec.samples.back().eval_metric)});
    }
    return report;
}

}  // namespace

AblationReport ablation_sweep(const std::string& kind, const TrainConfig& base,
                              const TaskData& task,
                              const std::string& checkpoint_path) {
    base.validate();
    if (kind == "mask" || kind == "drop") {
        if (checkpoint_path.empty()) {
            throw ContractError("ablation '" + kind +
                                "' needs a trained checkpoint; none was given");
        }
        return kind == "mask" ? sweep_mask(base, task, checkpoint_path)
                              : sweep_drop(base, task, checkpoint_path);
    }
    if (kind == "steps") return sweep_steps(base, task);
    if (kind == "alloc") return sweep_alloc(base, task);
    throw ConfigError("unknown ablation kind '" + kind +
                      "' (use mask, drop, steps, or alloc)");
}

}  // namespace stepsnet
