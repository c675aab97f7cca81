#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "adaspan/checkpoint.hpp"
#include "adaspan/corpus.hpp"
#include "adaspan/model.hpp"

namespace adaspan {

// Linear warm-up from zero to the base rate, then flat.
inline double lr_schedule(int64_t step, const OptimConfig& cfg) {
    if (cfg.warmup_steps <= 0) return cfg.lr;
    const double f = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    return cfg.lr * std::min(1.0, f);
}

// Rescales each module's concatenated gradient to L2 norm <= threshold.
// Module granularity is the registry group: every attention sublayer, every
// feedforward sublayer, the embeddings, and the output projection.
template <typename T>
void clip_module_grads(std::vector<typename TransformerLM<T>::Param>& params, double threshold) {
    std::map<std::string, double> sq;
    for (auto& p : params) {
        double s = 0;
        const T* g = p.tensor.grad();
        for (int64_t i = 0; i < p.tensor.numel(); ++i) s += static_cast<double>(g[i]) * static_cast<double>(g[i]);
        sq[p.group] += s;
    }
    std::map<std::string, double> scale_by;
    for (auto& [group, s] : sq) {
        const double norm = std::sqrt(s);
        if (norm > threshold) scale_by[group] = threshold / norm;
    }
    if (scale_by.empty()) return;
    for (auto& p : params) {
        auto it = scale_by.find(p.group);
        if (it == scale_by.end()) continue;
        const T f = static_cast<T>(it->second);
        T* g = p.tensor.grad();
        for (int64_t i = 0; i < p.tensor.numel(); ++i) g[i] *= f;
    }
}

template <typename T>
double module_grad_norm(std::vector<typename TransformerLM<T>::Param>& params, const std::string& group) {
    double s = 0;
    for (auto& p : params) {
        if (p.group != group) continue;
        const T* g = p.tensor.grad();
        for (int64_t i = 0; i < p.tensor.numel(); ++i) s += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    return std::sqrt(s);
}

// Standard Adagrad: G += g^2, theta -= lr * g / (sqrt(G) + eps). Span
// parameters flagged clamp01 are projected back to [0,1] after the step.
template <typename T>
class Adagrad {
public:
    Adagrad(TransformerLM<T>& model, const OptimConfig& cfg) : cfg_(cfg) {
        for (auto& p : model.parameters()) accum_.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
    }

    void step(TransformerLM<T>& model, double lr) {
        auto& params = model.parameters();
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            auto& G = accum_[pi];
            T* th = p.tensor.data();
            const T* g = p.tensor.grad();
            const T eps = static_cast<T>(cfg_.adagrad_eps);
            const T lrt = static_cast<T>(lr);
            for (int64_t i = 0; i < p.tensor.numel(); ++i) {
                G[static_cast<size_t>(i)] += g[i] * g[i];
                th[i] -= lrt * g[i] / (std::sqrt(G[static_cast<size_t>(i)]) + eps);
            }
            if (p.clamp01)
                for (int64_t i = 0; i < p.tensor.numel(); ++i) th[i] = std::min(T(1), std::max(T(0), th[i]));
        }
    }

    std::vector<std::vector<T>>& accumulators() { return accum_; }

private:
    OptimConfig cfg_;
    std::vector<std::vector<T>> accum_;
};

struct TrainRecord {
    int64_t step = 0;
    double loss_nats = 0;
    double bpc = 0;
    double lr = 0;
    double mean_span = 0;
    double max_span = 0;
    int64_t wall_ms = 0;
};

struct EvalRecord {
    int64_t step = 0;
    double bpc = 0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::vector<EvalRecord> evals;
    double best_dev_bpc = std::numeric_limits<double>::infinity();
    double final_dev_bpc = std::numeric_limits<double>::infinity();
    int64_t steps_run = 0;
};

// Streaming evaluation: dropout off, caches carried block to block, loss
// over every position of each whole block.
template <typename T>
double eval_bpc(TransformerLM<T>& model, const CharCorpus& corpus, const CharCorpus::Split& split) {
    const int block = model.config().block;
    Batcher batcher(corpus, split, 1, block);
    auto states = model.make_states();
    Rng drng(0);
    double total_nll = 0;
    int64_t blocks = 0;
    const int64_t per_epoch = batcher.blocks_per_epoch();
    for (int64_t b = 0; b < per_epoch; ++b) {
        auto batch = batcher.next();
        if (batch.fresh[0]) for (auto& s : states) s.reset();
        auto tape = inference_tape<T>();
        auto out = model.forward(tape, batch.inputs[0], states, drng, false);
        Tape<T> t2;
        t2.set_enabled(false);
        total_nll += static_cast<double>(model.nll(t2, out.logits, batch.targets[0]).item());
        ++blocks;
    }
    if (blocks == 0) throw std::runtime_error("eval: split has no whole block");
    return TransformerLM<T>::bpc_from_nll(total_nll / static_cast<double>(blocks));
}

template <typename T>
void save_train_state(const std::string& path, TransformerLM<T>& model, Adagrad<T>& opt, int64_t step, Rng& rng);

namespace detail_train {

inline std::string json_line(const TrainRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss_nats"] = r.loss_nats;
    j["bpc"] = r.bpc;
    j["lr"] = r.lr;
    j["mean_span"] = r.mean_span;
    j["max_span"] = r.max_span;
    j["wall_ms"] = r.wall_ms;
    return j.dump();
}

}  // namespace detail_train

// Paper-faithful optimization loop. Streams advance block by block with
// cache carry-over; gradients accumulate over the batch, are clipped per
// module, then applied with Adagrad under the warm-up schedule. When
// out_dir is set, writes log.jsonl / evals.jsonl and best/last checkpoints.
template <typename T>
TrainLog train(TransformerLM<T>& model, const CharCorpus& corpus, const OptimConfig& ocfg,
               const std::string& out_dir = "", Adagrad<T>* resume_opt = nullptr, int64_t start_step = 0,
               Rng* resume_rng = nullptr) {
    ocfg.validate();
    const auto& mcfg = model.config();
    Batcher batcher(corpus, corpus.train, ocfg.batch, mcfg.block);

    Adagrad<T> local_opt(model, ocfg);
    Adagrad<T>& opt = resume_opt ? *resume_opt : local_opt;
    Rng local_rng(ocfg.seed + 1);
    Rng& rng = resume_rng ? *resume_rng : local_rng;

    std::vector<std::vector<AttentionLayerState<T>>> states;
    for (int i = 0; i < ocfg.batch; ++i) states.push_back(model.make_states());

    // fast-forward stream positions on resume
    for (int64_t s = 0; s < start_step; ++s) batcher.next();

    std::ofstream log_file, eval_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto mode = start_step > 0 ? std::ios::app : std::ios::trunc;
        log_file.open(out_dir + "/log.jsonl", mode);
        eval_file.open(out_dir + "/evals.jsonl", mode);
    }

    TrainLog log;
    log.best_dev_bpc = std::numeric_limits<double>::infinity();
    int stale_evals = 0;
    bool finetuning = false;
    int64_t finetune_end = 0;
    auto wall_last = std::chrono::steady_clock::now();

    const double inv_batch = 1.0 / static_cast<double>(ocfg.batch);
    int64_t step = start_step;
    const int64_t main_end = ocfg.steps;

    auto run_eval = [&](int64_t at_step) {
        const double bpc = eval_bpc(model, corpus, corpus.dev);
        log.evals.push_back(EvalRecord{at_step, bpc});
        if (eval_file.is_open()) {
            nlohmann::ordered_json j;
            j["step"] = at_step;
            j["split"] = "dev";
            j["bpc"] = bpc;
            eval_file << j.dump() << "\n";
            eval_file.flush();
        }
        if (bpc < log.best_dev_bpc) {
            log.best_dev_bpc = bpc;
            stale_evals = 0;
            if (!out_dir.empty()) save_model(out_dir + "/ckpt_best.adsp", model);
        } else {
            ++stale_evals;
        }
        log.final_dev_bpc = bpc;
        return bpc;
    };

    while (true) {
        if (!finetuning && step >= main_end) {
            if (ocfg.finetune_steps > 0) {
                finetuning = true;
                finetune_end = step + ocfg.finetune_steps;
            } else {
                break;
            }
        }
        if (finetuning && step >= finetune_end) break;

        const double lr = lr_schedule(step, ocfg) / (finetuning ? 10.0 : 1.0);
        auto batch = batcher.next();

        model.zero_grads();
        double nll_sum = 0, penalty_sum = 0;
        double span_sum = 0, span_max = 0;
        int64_t span_count = 0;
        for (int i = 0; i < ocfg.batch; ++i) {
            if (batch.fresh[static_cast<size_t>(i)])
                for (auto& s : states[static_cast<size_t>(i)]) s.reset();
            Tape<T> tape;
            auto out = model.forward(tape, batch.inputs[static_cast<size_t>(i)], states[static_cast<size_t>(i)], rng,
                                     true);
            auto nll_term = model.nll(tape, out.logits, batch.targets[static_cast<size_t>(i)]);
            auto pen = span_penalty(tape, out.span_terms, model.mask_config());
            auto stream_loss = scale(tape, add(tape, nll_term, pen), static_cast<T>(inv_batch));
            tape.backward(stream_loss);
            nll_sum += static_cast<double>(nll_term.item());
            penalty_sum += static_cast<double>(pen.item());
            for (double z : out.head_spans) {
                span_sum += z;
                span_max = std::max(span_max, z);
                ++span_count;
            }
        }
        const double loss_nats = (nll_sum + penalty_sum) * inv_batch;
        const double bpc = TransformerLM<T>::bpc_from_nll(nll_sum * inv_batch);

        if (!std::isfinite(loss_nats)) {
            std::ostringstream os;
            os << "train: non-finite loss at step " << step << " (lr " << lr << "); module grad norms:";
            std::map<std::string, bool> seen;
            for (auto& p : model.parameters()) {
                if (seen[p.group]) continue;
                seen[p.group] = true;
                os << " " << p.group << "=" << module_grad_norm<T>(model.parameters(), p.group);
            }
            throw std::runtime_error(os.str());
        }

        clip_module_grads<T>(model.parameters(), ocfg.clip);
        opt.step(model, lr);
        ++step;
        log.steps_run = step;

        if (step % ocfg.log_interval == 0 || step == main_end) {
            const auto now = std::chrono::steady_clock::now();
            TrainRecord rec;
            rec.step = step;
            rec.loss_nats = loss_nats;
            rec.bpc = bpc;
            rec.lr = lr;
            rec.mean_span = span_count ? span_sum / static_cast<double>(span_count) : 0.0;
            rec.max_span = span_max;
            rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(now - wall_last).count();
            wall_last = now;
            log.records.push_back(rec);
            if (log_file.is_open()) {
                log_file << detail_train::json_line(rec) << "\n";
                log_file.flush();
            }
        }

        if (step % ocfg.eval_interval == 0) {
            run_eval(step);
            if (!out_dir.empty()) save_train_state(out_dir + "/ckpt_last.adsp", model, opt, step, rng);
            if (!finetuning && ocfg.early_stop_evals > 0 && stale_evals >= ocfg.early_stop_evals) {
                if (ocfg.finetune_steps > 0) {
                    finetuning = true;
                    finetune_end = step + ocfg.finetune_steps;
                    stale_evals = 0;
                } else {
                    break;
                }
            }
        }
    }

    if (log.evals.empty() || log.evals.back().step != step) run_eval(step);
    if (!out_dir.empty()) save_train_state(out_dir + "/ckpt_last.adsp", model, opt, step, rng);
    return log;
}

// Full training state for --resume: model tensors, Adagrad accumulators,
// step counter and RNG state.
template <typename T>
void save_train_state(const std::string& path, TransformerLM<T>& model, Adagrad<T>& opt, int64_t step, Rng& rng) {
    auto data = checkpoint_from_model(model);
    data.kv["train_step"] = std::to_string(step);
    std::ostringstream rs;
    rs << rng;
    data.kv["rng_state"] = rs.str();
    auto& params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        NamedTensorData t;
        t.name = "optim.G." + params[i].name;
        t.shape = params[i].tensor.shape();
        t.dtype = static_cast<int>(sizeof(T));
        t.bytes.resize(opt.accumulators()[i].size() * sizeof(T));
        std::memcpy(t.bytes.data(), opt.accumulators()[i].data(), t.bytes.size());
        data.tensors.push_back(std::move(t));
    }
    write_checkpoint(path, data);
}

template <typename T>
int64_t load_train_state(const std::string& path, TransformerLM<T>& model, Adagrad<T>& opt, Rng& rng) {
    const auto data = read_checkpoint(path);
    load_model_params(data, model);
    auto& params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* t = data.find("optim.G." + params[i].name);
        if (!t) throw std::runtime_error("checkpoint: missing optimizer state for " + params[i].name);
        std::memcpy(opt.accumulators()[i].data(), t->bytes.data(), t->bytes.size());
    }
    if (data.kv.count("rng_state")) {
        std::istringstream rs(data.kv.at("rng_state"));
        rs >> rng;
    }
    return data.kv.count("train_step") ? std::stoll(data.kv.at("train_step")) : 0;
}

}  // namespace adaspan
