#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stepsnet/steps.hpp"

// Desk-scale training: three small tasks (2-D spirals, character-level
// language modeling, sequence copy), an AdamW optimizer with cosine schedule,
// run records, byte-exact checkpoints, and the post-training ablation sweeps.

namespace stepsnet {

struct OptimizerConfig {
    std::string kind = "adamw";
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 0;  // 0 picks 5% of total_steps at train time
    double lr_floor = 0.0;
};

struct TrainConfig {
    std::string task = "spiral2";
    StepsConfig model;
    std::string elem = "f32";  // f32 | f64
    OptimizerConfig optimizer;
    std::size_t batch_size = 32;
    std::size_t total_steps = 1000;
    std::size_t eval_every = 100;  // 0 evaluates only at the last step
    std::uint64_t seed = 1;
    double init_std = 0.02;
    bool overfit_single_batch = false;
    bool frozen_run = false;  // permits lr == 0
    std::string out_dir = ".";

    // Throws ConfigError naming the offending field.
    void validate() const;
};

struct RunSample {
    std::size_t step = 0;
    double train_loss = 0.0;
    bool has_eval = false;
    double eval_metric = 0.0;
};

struct RunRecord {
    std::vector<RunSample> samples;  // one per optimization step, in order
    std::string checkpoint_path;
    double duration_seconds = 0.0;
};

// CSV with header `step,train_loss,eval_metric`; the eval column is blank on
// steps without an evaluation. No timestamps, so identical runs render
// byte-identically.
std::string run_record_to_csv(const RunRecord& record);

// Linear warmup to the peak rate, then cosine decay to the floor. step is
// 0-based; lr(total_steps) would land exactly on the floor.
double cosine_lr(const OptimizerConfig& opt, std::size_t step, std::size_t total_steps);

// A loaded dataset. Classification tasks fill the x/y pairs; sequence tasks
// fill vocab, seq_len, and the streams or materialized evaluation windows.
struct TaskData {
    std::string name;
    bool is_sequence = false;

    // classification (spiral2)
    std::size_t features = 0;
    std::size_t classes = 0;
    std::vector<double> train_x;  // row-major (n, features)
    std::vector<int> train_y;
    std::vector<double> eval_x;
    std::vector<int> eval_y;

    // sequences (charlm, copyseq)
    std::size_t vocab = 0;
    std::size_t seq_len = 0;
    std::string vocab_chars;             // charlm: id -> character
    std::vector<int> train_stream;       // charlm: training character ids
    std::vector<int> eval_inputs;        // flat (n_eval, seq_len)
    std::vector<int> eval_targets;       // flat (n_eval, seq_len)
    std::size_t n_eval_sequences = 0;

    std::size_t train_count() const { return train_y.size(); }
    std::size_t eval_count() const { return eval_y.size(); }
};

// task is one of spiral2, charlm, copyseq. data_dir locates the bundled text
// corpus for charlm; the others ignore it. Deterministic for a given seed.
TaskData make_task(const std::string& task, std::uint64_t seed,
                   const std::string& data_dir = "data");

// One copy-task sample: x is seq_len random tokens, y is x shifted right by
// one position with a 0 in front.
void copyseq_pair(Rng& rng, std::size_t seq_len, std::size_t vocab,
                  std::vector<int>& x, std::vector<int>& y);

// Perplexity on the task's evaluation targets of a unigram model fitted on
// the training stream with add-one smoothing.
double unigram_baseline(const TaskData& task);

// Decoupled weight decay, bias-corrected moments, f64 optimizer state
// regardless of the parameter element type.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<NamedParam<S>> params, const OptimizerConfig& opt)
        : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.size(), 0.0);
            v_.emplace_back(p.tensor.size(), 0.0);
        }
    }

    // Applies one update from the gradients currently on the parameters.
    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto vals = params_[i].tensor.values_mut();
            const auto grad = params_[i].tensor.grad();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * g;
                v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + opt_.eps) +
                    opt_.weight_decay * static_cast<double>(vals[j]);
                vals[j] = static_cast<S>(static_cast<double>(vals[j]) - lr * update);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    std::vector<NamedParam<S>> params_;
    OptimizerConfig opt_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// Optional trunk-output channel masking used by the ablation sweeps.
struct MaskSpec {
    PathSide side = PathSide::slow;
    std::size_t k = 0;
};

// Linear stem into a Steps core into a linear head. Rows are independent
// samples; MLP-kind cores see no attention mask.
template <typename S>
class ClassifierModel {
public:
    ClassifierModel(const StepsConfig& cfg, std::size_t features, std::size_t classes)
        : core_(cfg), features_(features), classes_(classes) {
        const std::size_t width = cfg.full_width();
        stem_w_ = Tensor<S>::zeros({features, width});
        stem_b_ = Tensor<S>::zeros({width});
        head_w_ = Tensor<S>::zeros({width, classes});
        head_b_ = Tensor<S>::zeros({classes});
    }

    void init(Rng& rng, double weight_std = 0.02) {
        fill_trunc_normal(stem_w_, weight_std, rng);
        std::fill(stem_b_.values_mut().begin(), stem_b_.values_mut().end(), S{0});
        core_.init(rng, weight_std);
        fill_trunc_normal(head_w_, weight_std, rng);
        std::fill(head_b_.values_mut().begin(), head_b_.values_mut().end(), S{0});
    }

    Tensor<S> trunk(const Tensor<S>& x) const {
        return core_.forward(linear(x, stem_w_, stem_b_));
    }

    Tensor<S> forward(const Tensor<S>& x, const MaskSpec* mask = nullptr) const {
        Tensor<S> feats = trunk(x);
        if (mask) feats = mask_path(feats, mask->side, mask->k);
        return linear(feats, head_w_, head_b_);
    }

    // A copy with blocks removed from one core step; weights stay shared.
    ClassifierModel with_dropped(std::size_t step_index, std::size_t count) const {
        ClassifierModel out = *this;
        out.core_ = core_.drop_blocks(step_index, count);
        return out;
    }

    const StepsModel<S>& core() const { return core_; }
    std::size_t features() const { return features_; }
    std::size_t classes() const { return classes_; }

    void collect_params(std::vector<NamedParam<S>>& out) {
        out.push_back({"stem.weight", stem_w_});
        out.push_back({"stem.bias", stem_b_});
        core_.collect_params(out, "core.");
        out.push_back({"head.weight", head_w_});
        out.push_back({"head.bias", head_b_});
    }

private:
    StepsModel<S> core_;
    std::size_t features_, classes_;
    Tensor<S> stem_w_, stem_b_, head_w_, head_b_;
};

// Character/token decoder: embedding plus learned positions, causal Steps
// core, final norm, tied-nothing linear head. Processes one sequence of
// exactly seq_len tokens per call.
template <typename S>
class LmModel {
public:
    LmModel(const StepsConfig& cfg, std::size_t vocab, std::size_t seq_len,
            double ln_eps = 1e-5)
        : core_(cfg), mask_(causal_attention_mask(seq_len)), vocab_(vocab),
          seq_len_(seq_len), ln_eps_(ln_eps) {
        const std::size_t width = cfg.full_width();
        embed_ = Tensor<S>::zeros({vocab, width});
        pos_ = Tensor<S>::zeros({seq_len, width});
        lnf_gain_ = Tensor<S>::filled({width}, S{1});
        lnf_bias_ = Tensor<S>::zeros({width});
        head_w_ = Tensor<S>::zeros({width, vocab});
        head_b_ = Tensor<S>::zeros({vocab});
    }

    void init(Rng& rng, double weight_std = 0.02) {
        fill_trunc_normal(embed_, weight_std, rng);
        fill_trunc_normal(pos_, weight_std, rng);
        core_.init(rng, weight_std);
        std::fill(lnf_gain_.values_mut().begin(), lnf_gain_.values_mut().end(), S{1});
        std::fill(lnf_bias_.values_mut().begin(), lnf_bias_.values_mut().end(), S{0});
        fill_trunc_normal(head_w_, weight_std, rng);
        std::fill(head_b_.values_mut().begin(), head_b_.values_mut().end(), S{0});
    }

    // (seq_len) token ids -> (seq_len, vocab) next-token logits.
    Tensor<S> logits(const std::vector<int>& ids, const MaskSpec* mask = nullptr) const {
        if (ids.size() != seq_len_) {
            throw ShapeError("lm model expects sequences of length " +
                             std::to_string(seq_len_) + ", got " +
                             std::to_string(ids.size()));
        }
        Tensor<S> x = add(embedding(embed_, ids), pos_);
        Tensor<S> feats = core_.forward(x, &mask_);
        if (mask) feats = mask_path(feats, mask->side, mask->k);
        Tensor<S> normed = layer_norm(feats, lnf_gain_, lnf_bias_, ln_eps_);
        return linear(normed, head_w_, head_b_);
    }

    LmModel with_dropped(std::size_t step_index, std::size_t count) const {
        LmModel out = *this;
        out.core_ = core_.drop_blocks(step_index, count);
        return out;
    }

    const StepsModel<S>& core() const { return core_; }
    std::size_t vocab() const { return vocab_; }
    std::size_t seq_len() const { return seq_len_; }

    void collect_params(std::vector<NamedParam<S>>& out) {
        out.push_back({"embed.table", embed_});
        out.push_back({"pos.table", pos_});
        core_.collect_params(out, "core.");
        out.push_back({"final_ln.gain", lnf_gain_});
        out.push_back({"final_ln.bias", lnf_bias_});
        out.push_back({"head.weight", head_w_});
        out.push_back({"head.bias", head_b_});
    }

private:
    StepsModel<S> core_;
    AttentionMask mask_;
    std::size_t vocab_, seq_len_;
    double ln_eps_;
    Tensor<S> embed_, pos_, lnf_gain_, lnf_bias_, head_w_, head_b_;
};

namespace detail {

inline void ckpt_put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void ckpt_put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void ckpt_put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

// Checkpoint layout, all integers little-endian:
//   "SSNC" | version u16 (= 1) | element width u8 (4 or 8)
//   then per tensor: name length u32, name bytes, rank u32,
//   extents u64 each, raw element bytes.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename S>
std::string checkpoint_bytes(const std::vector<NamedParam<S>>& params) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    std::string out = "SSNC";
    detail::ckpt_put_u16(out, kCheckpointVersion);
    out.push_back(static_cast<char>(sizeof(S)));
    for (const auto& p : params) {
        detail::ckpt_put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        detail::ckpt_put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t e : p.tensor.shape())
            detail::ckpt_put_u64(out, static_cast<std::uint64_t>(e));
        for (S v : p.tensor.values()) {
            if constexpr (sizeof(S) == 4) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                detail::ckpt_put_u32(out, bits);
            } else {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                detail::ckpt_put_u64(out, bits);
            }
        }
    }
    return out;
}

template <typename S>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<S>>& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + path);
    const std::string bytes = checkpoint_bytes(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("short write to checkpoint " + path);
}

namespace detail {

inline std::uint64_t ckpt_get_uint(std::istream& f, int bytes, const std::string& path) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int ch = f.get();
        if (ch == std::istream::traits_type::eof()) {
            throw CheckpointError("truncated checkpoint " + path);
        }
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
    }
    return v;
}

}  // namespace detail

// Fills the named tensors in place. Every parameter must appear exactly once
// with a matching shape; surplus or missing names are errors.
template <typename S>
void load_checkpoint(const std::string& path, std::vector<NamedParam<S>>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path);
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "SSNC") {
        throw CheckpointError(path + " is not a checkpoint (bad magic)");
    }
    const auto version = detail::ckpt_get_uint(f, 2, path);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint " + path + " has version " +
                              std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    }
    const auto width = detail::ckpt_get_uint(f, 1, path);
    if (width != sizeof(S)) {
        throw CheckpointError("checkpoint " + path + " stores " +
                              std::to_string(width * 8) + "-bit elements, model uses " +
                              std::to_string(sizeof(S) * 8) + "-bit");
    }

    std::vector<bool> filled(params.size(), false);
    while (f.peek() != std::istream::traits_type::eof()) {
        const auto name_len = detail::ckpt_get_uint(f, 4, path);
        std::string name(name_len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!f) throw CheckpointError("truncated checkpoint " + path);
        const auto rank = detail::ckpt_get_uint(f, 4, path);
        std::vector<std::size_t> shape(rank);
        for (auto& e : shape)
            e = static_cast<std::size_t>(detail::ckpt_get_uint(f, 8, path));

        std::size_t idx = params.size();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].name == name) {
                idx = i;
                break;
            }
        }
        if (idx == params.size()) {
            throw CheckpointError("checkpoint " + path + " has unexpected tensor " +
                                  name);
        }
        if (filled[idx]) {
            throw CheckpointError("checkpoint " + path + " repeats tensor " + name);
        }
        if (shape != params[idx].tensor.shape()) {
            throw CheckpointError("checkpoint tensor " + name + " has shape " +
                                  shape_str(shape) + ", model expects " +
                                  shape_str(params[idx].tensor.shape()));
        }
        auto vals = params[idx].tensor.values_mut();
        for (auto& v : vals) {
            if constexpr (sizeof(S) == 4) {
                const auto bits = static_cast<std::uint32_t>(detail::ckpt_get_uint(f, 4, path));
                std::memcpy(&v, &bits, 4);
            } else {
                const std::uint64_t bits = detail::ckpt_get_uint(f, 8, path);
                std::memcpy(&v, &bits, 8);
            }
        }
        filled[idx] = true;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!filled[i]) {
            throw CheckpointError("checkpoint " + path + " is missing tensor " +
                                  params[i].name);
        }
    }
}

// Runs the configured optimization, writes run.csv and model.ssnc under
// cfg.out_dir, and returns the in-memory record. Aborts with NumericError
// naming the step if the loss stops being finite.
RunRecord train(const TrainConfig& cfg, const TaskData& task);

// Rebuilds the model from cfg, loads the checkpoint, and returns accuracy
// (classification) or perplexity (sequence tasks) on the evaluation split.
double evaluate(const TrainConfig& cfg, const TaskData& task,
                const std::string& checkpoint_path, const MaskSpec* mask = nullptr);

struct AblationReport {
    std::string kind;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::string to_csv() const;
};

// kind is one of mask, drop, steps, alloc. mask and drop evaluate an existing
// trained checkpoint without retraining (ContractError if the path is empty);
// steps and alloc train fresh variants derived from the base config.
AblationReport ablation_sweep(const std::string& kind, const TrainConfig& base,
                              const TaskData& task,
                              const std::string& checkpoint_path = "");

}  // namespace stepsnet
