#pragma once

#include "adaspan/attention.hpp"
#include "adaspan/corpus.hpp"

namespace adaspan {

// Sequential character-level transformer: token embedding, stacked
// pre-norm attention + feedforward blocks with residual connections, final
// norm and an untied output projection. One relative-position table is
// shared by every head of every layer.

template <typename T>
struct FeedForward {
    Tensor<T> ln_gamma, ln_beta;
    Tensor<T> w1, b1;  // d_h -> d_ff
    Tensor<T> w2, b2;  // d_ff -> d_h
};

template <typename T>
class TransformerLM {
public:
    struct Param {
        std::string name;
        Tensor<T> tensor;
        std::string group;  // gradient clipping granularity
        bool clamp01;       // z' projection after optimizer steps
    };

    struct ForwardOut {
        Tensor<T> logits;                     // [n, vocab]
        std::vector<Tensor<T>> span_terms;    // all heads, layer-major
        std::vector<double> head_spans;       // current z per head (data)
        std::vector<std::vector<T>> z_traces; // dynamic: z_t per head per position
        std::vector<int> layer_eff;           // per-layer max effective span
    };

    TransformerLM(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), mask_cfg_(MaskConfig::from_model(cfg)) {
        cfg.validate();
        embed_ = Tensor<T>({cfg.vocab_size, cfg.d_h}, true);
        fill_normal(embed_, 0.0, 1.0, rng);
        pos_table_ = Tensor<T>({cfg.span_limit, cfg.d_k()}, true);
        fill_normal(pos_table_, 0.0, 1.0, rng);

        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_h));
        const double ff_bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));
        attn_.reserve(static_cast<size_t>(cfg.n_layers));
        ff_.reserve(static_cast<size_t>(cfg.n_layers));
        for (int l = 0; l < cfg.n_layers; ++l) {
            attn_.emplace_back(cfg, rng);
            FeedForward<T> ff;
            ff.ln_gamma = Tensor<T>::full({cfg.d_h}, T(1), true);
            ff.ln_beta = Tensor<T>({cfg.d_h}, true);
            ff.w1 = Tensor<T>({cfg.d_h, cfg.d_ff}, true);
            ff.b1 = Tensor<T>({cfg.d_ff}, true);
            ff.w2 = Tensor<T>({cfg.d_ff, cfg.d_h}, true);
            ff.b2 = Tensor<T>({cfg.d_h}, true);
            fill_uniform(ff.w1, -bound, bound, rng);
            fill_uniform(ff.w2, -ff_bound, ff_bound, rng);
            ff_.push_back(std::move(ff));
        }
        final_gamma_ = Tensor<T>::full({cfg.d_h}, T(1), true);
        final_beta_ = Tensor<T>({cfg.d_h}, true);
        out_w_ = Tensor<T>({cfg.d_h, cfg.vocab_size}, true);
        out_b_ = Tensor<T>({cfg.vocab_size}, true);
        fill_uniform(out_w_, -bound, bound, rng);
        build_registry();
    }

    std::vector<AttentionLayerState<T>> make_states() const {
        return std::vector<AttentionLayerState<T>>(static_cast<size_t>(cfg_.n_layers));
    }

    ForwardOut forward(Tape<T>& tape, std::span<const int32_t> tokens, std::vector<AttentionLayerState<T>>& states,
                       Rng& rng, bool train, int forced_window = 0) {
        if (states.size() != static_cast<size_t>(cfg_.n_layers))
            throw std::invalid_argument("forward: state count does not match layer count");
        ForwardOut out;
        std::vector<int32_t> ids(tokens.begin(), tokens.end());
        auto x = embedding(tape, embed_, ids);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            auto a = attn_[static_cast<size_t>(l)].forward(tape, x, states[static_cast<size_t>(l)], pos_table_, rng,
                                                           train, cfg_.dropout, forced_window);
            x = add(tape, x, a.y);
            out.span_terms.insert(out.span_terms.end(), a.span_terms.begin(), a.span_terms.end());
            out.head_spans.insert(out.head_spans.end(), a.head_spans.begin(), a.head_spans.end());
            for (auto& tr : a.z_trace) out.z_traces.push_back(std::move(tr));
            out.layer_eff.push_back(a.max_effective_span);

            auto& ff = ff_[static_cast<size_t>(l)];
            auto xn = layer_norm(tape, x, ff.ln_gamma, ff.ln_beta, T(1e-5));
            auto h = relu(tape, add(tape, matmul(tape, xn, ff.w1), ff.b1));
            h = dropout(tape, h, cfg_.dropout, rng, train);
            auto y = add(tape, matmul(tape, h, ff.w2), ff.b2);
            x = add(tape, x, y);
        }
        x = layer_norm(tape, x, final_gamma_, final_beta_, T(1e-5));
        out.logits = add(tape, matmul(tape, x, out_w_), out_b_);
        return out;
    }

    // Mean per-token NLL in nats plus the span penalty.
    Tensor<T> loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const int32_t> targets,
                   const std::vector<Tensor<T>>& span_terms) {
        auto nll_term = nll(tape, logits, targets);
        if (span_terms.empty()) return nll_term;
        return add(tape, nll_term, span_penalty(tape, span_terms, mask_cfg_));
    }

    Tensor<T> nll(Tape<T>& tape, const Tensor<T>& logits, std::span<const int32_t> targets) {
        std::vector<int32_t> tgt(targets.begin(), targets.end());
        return cross_entropy_mean(tape, logits, tgt);
    }

    static double bpc_from_nll(double nll_nats) { return nll_nats / std::log(2.0); }

    const std::vector<Param>& parameters() const { return params_; }
    std::vector<Param>& parameters() { return params_; }
    const ModelConfig& config() const { return cfg_; }
    const MaskConfig& mask_config() const { return mask_cfg_; }
    std::vector<AttentionLayer<T>>& attention_layers() { return attn_; }
    Tensor<T>& position_table() { return pos_table_; }
    Tensor<T>& token_embedding() { return embed_; }

    // Current z per head for static kinds (layer-major). For dynamic models
    // this reports the input-free operating point S*sigmoid(b).
    std::vector<double> current_spans() const {
        std::vector<double> spans;
        for (const auto& layer : attn_)
            for (const auto& h : layer.heads()) {
                switch (h.span.kind) {
                    case SpanKind::Fixed: spans.push_back(static_cast<double>(cfg_.span_limit)); break;
                    case SpanKind::Adaptive:
                        spans.push_back(static_cast<double>(h.span.z_prime.vec()[0]) * cfg_.span_limit);
                        break;
                    case SpanKind::Dynamic: {
                        const double b = static_cast<double>(h.span.b.vec()[0]);
                        spans.push_back(cfg_.span_limit / (1.0 + std::exp(-b)));
                        break;
                    }
                }
            }
        return spans;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    void build_registry() {
        params_.clear();
        auto put = [&](const std::string& name, Tensor<T> t, const std::string& group, bool clamp01 = false) {
            params_.push_back(Param{name, std::move(t), group, clamp01});
        };
        put("embed.tok", embed_, "embed");
        put("embed.pos", pos_table_, "embed");
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string lp = "layer" + std::to_string(l);
            auto& at = attn_[static_cast<size_t>(l)];
            put(lp + ".attn.ln_g", at.ln_gamma(), lp + ".attn");
            put(lp + ".attn.ln_b", at.ln_beta(), lp + ".attn");
            for (size_t h = 0; h < at.heads().size(); ++h) {
                const std::string hp = lp + ".attn.h" + std::to_string(h);
                auto& head = at.heads()[h];
                put(hp + ".wq", head.wq, lp + ".attn");
                put(hp + ".wk", head.wk, lp + ".attn");
                put(hp + ".wv", head.wv, lp + ".attn");
                if (head.span.kind == SpanKind::Adaptive) put(hp + ".z", head.span.z_prime, lp + ".attn", true);
                if (head.span.kind == SpanKind::Dynamic) {
                    put(hp + ".v", head.span.v, lp + ".attn");
                    put(hp + ".b", head.span.b, lp + ".attn");
                }
            }
            put(lp + ".attn.wo", at.wo(), lp + ".attn");
            auto& ff = ff_[static_cast<size_t>(l)];
            put(lp + ".ff.ln_g", ff.ln_gamma, lp + ".ff");
            put(lp + ".ff.ln_b", ff.ln_beta, lp + ".ff");
            put(lp + ".ff.w1", ff.w1, lp + ".ff");
            put(lp + ".ff.b1", ff.b1, lp + ".ff");
            put(lp + ".ff.w2", ff.w2, lp + ".ff");
            put(lp + ".ff.b2", ff.b2, lp + ".ff");
        }
        put("out.ln_g", final_gamma_, "output");
        put("out.ln_b", final_beta_, "output");
        put("out.w", out_w_, "output");
        put("out.b", out_b_, "output");
    }

    ModelConfig cfg_;
    MaskConfig mask_cfg_;
    Tensor<T> embed_, pos_table_;
    std::vector<AttentionLayer<T>> attn_;
    std::vector<FeedForward<T>> ff_;
    Tensor<T> final_gamma_, final_beta_, out_w_, out_b_;
    std::vector<Param> params_;
};

}  // namespace adaspan
