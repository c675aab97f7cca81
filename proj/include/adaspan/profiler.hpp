#pragma once

#include <array>

#include "adaspan/model.hpp"

namespace adaspan {

// Analytic one-step-prediction cost model. A multiply-accumulate counts as
// 2 FLOPs; per layer and token the feedforward costs 2*(d_h*d_ff + d_ff*d_h)
// and the four projections 2*4*d_h^2, while each head pays per attended
// position: 2*d_k (content score) + 2*d_k (position score) + 2*d_k (value
// mix) + ~5 for softmax and masking. Adaptive and dynamic heads attend over
// their effective span; fixed heads over the full limit.
struct CostReport {
    double attn_scores = 0;
    double attn_output = 0;
    double projections = 0;
    double feedforward = 0;
    double embed_output = 0;
    std::vector<int64_t> layer_mem_bytes;  // cache memory, max span per layer
    int64_t total_mem_bytes = 0;

    double total() const { return attn_scores + attn_output + projections + feedforward + embed_output; }
    double attention_share() const { return (attn_scores + attn_output) / total(); }
    double feedforward_share() const { return feedforward / total(); }
};

// spans: current z value per head, layer-major, n_layers*heads entries.
// Ignored for fixed-span models.
CostReport flops_one_step(const ModelConfig& cfg, const std::vector<double>& spans, int element_size = 4);

// Closed-form parameter count; must equal enumeration of the instantiated
// model's tensors exactly.
int64_t count_params(const ModelConfig& cfg);

struct SpanReport {
    struct HeadSpan {
        int layer = 0;
        int head = 0;
        double span = 0;
    };
    struct TracePoint {
        int64_t position = 0;
        char symbol = '?';
        double mean_span = 0;
    };
    std::vector<HeadSpan> head_spans;
    std::vector<double> layer_max;
    double mean_span = 0;
    std::vector<TracePoint> trace;  // dynamic models only
};

void write_flops_csv(const std::string& path, const CostReport& report);
void write_spans_csv(const std::string& path, const SpanReport& report);
void write_trace_csv(const std::string& path, const SpanReport& report);

// Span statistics of a model. Static kinds read S*z' (or S) per head;
// dynamic models require an input sequence and report the per-head time
// mean plus the position trace of mean-over-heads z_t.
template <typename T>
SpanReport span_stats(TransformerLM<T>& model, const CharCorpus* trace_corpus = nullptr,
                      std::span<const int32_t> trace_tokens = {}) {
    const auto& cfg = model.config();
    SpanReport rep;
    const int M = cfg.heads;

    if (cfg.span_kind != SpanKind::Dynamic) {
        const auto spans = model.current_spans();
        double sum = 0;
        for (int l = 0; l < cfg.n_layers; ++l) {
            double lmax = 0;
            for (int h = 0; h < M; ++h) {
                const double z = spans[static_cast<size_t>(l * M + h)];
                rep.head_spans.push_back({l, h, z});
                lmax = std::max(lmax, z);
                sum += z;
            }
            rep.layer_max.push_back(lmax);
        }
        rep.mean_span = sum / static_cast<double>(spans.size());
        return rep;
    }

    if (trace_tokens.empty())
        throw std::invalid_argument("span_stats: dynamic spans require an input sequence");

    // stream the input through the model, accumulating z_t per head
    auto states = model.make_states();
    Rng drng(0);
    const int block = cfg.block;
    const int64_t n = static_cast<int64_t>(trace_tokens.size());
    std::vector<double> head_sum(static_cast<size_t>(cfg.n_layers * M), 0.0);
    int64_t covered = 0;
    for (int64_t off = 0; off < n; off += block) {
        const int64_t len = std::min<int64_t>(block, n - off);
        auto tape = inference_tape<T>();
        auto out = model.forward(tape, trace_tokens.subspan(static_cast<size_t>(off), static_cast<size_t>(len)),
                                 states, drng, false);
        if (out.z_traces.size() != head_sum.size())
            throw std::runtime_error("span_stats: trace bookkeeping mismatch");
        for (int64_t t = 0; t < len; ++t) {
            double mean_over_heads = 0;
            for (size_t h = 0; h < head_sum.size(); ++h) {
                const double zt = static_cast<double>(out.z_traces[h][static_cast<size_t>(t)]);
                head_sum[h] += zt;
                mean_over_heads += zt;
            }
            mean_over_heads /= static_cast<double>(head_sum.size());
            char symbol = '?';
            if (trace_corpus) {
                const int32_t tok = trace_tokens[static_cast<size_t>(off + t)];
                symbol = trace_corpus->detokenize(std::span<const int32_t>(&tok, 1))[0];
            }
            rep.trace.push_back({off + t, symbol, mean_over_heads});
        }
        covered += len;
    }

    double sum = 0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        double lmax = 0;
        for (int h = 0; h < M; ++h) {
            const double z = head_sum[static_cast<size_t>(l * M + h)] / static_cast<double>(covered);
            rep.head_spans.push_back({l, h, z});
            lmax = std::max(lmax, z);
            sum += z;
        }
        rep.layer_max.push_back(lmax);
    }
    rep.mean_span = sum / static_cast<double>(head_sum.size());
    return rep;
}

}  // namespace adaspan
