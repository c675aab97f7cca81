#include "adaspan/profiler.hpp"

#include <fstream>

#include "adaspan/span.hpp"

namespace adaspan {

CostReport flops_one_step(const ModelConfig& cfg, const std::vector<double>& spans, int element_size) {
    const int M = cfg.heads;
    const double dk = static_cast<double>(cfg.d_k());
    const MaskConfig mask = MaskConfig::from_model(cfg);
    if (cfg.span_kind != SpanKind::Fixed && spans.size() != static_cast<size_t>(cfg.n_layers * M))
        throw std::invalid_argument("flops_one_step: need one span per head");

    CostReport rep;
    for (int l = 0; l < cfg.n_layers; ++l) {
        double layer_max_span = 0;
        for (int h = 0; h < M; ++h) {
            double window;
            if (cfg.span_kind == SpanKind::Fixed) {
                window = static_cast<double>(cfg.span_limit);
            } else {
                window = static_cast<double>(effective_span(spans[static_cast<size_t>(l * M + h)], mask));
            }
            layer_max_span = std::max(layer_max_span, window);
            rep.attn_scores += window * (2.0 * dk + 2.0 * dk + 5.0);
            rep.attn_output += window * 2.0 * dk;
        }
        rep.projections += 2.0 * 4.0 * cfg.d_h * cfg.d_h;
        rep.feedforward += 2.0 * (static_cast<double>(cfg.d_h) * cfg.d_ff + static_cast<double>(cfg.d_ff) * cfg.d_h);
        rep.layer_mem_bytes.push_back(static_cast<int64_t>(layer_max_span) * cfg.d_h * element_size);
        rep.total_mem_bytes += rep.layer_mem_bytes.back();
    }
    rep.embed_output = 2.0 * cfg.d_h * cfg.vocab_size;
    return rep;
}

int64_t count_params(const ModelConfig& cfg) {
    const int64_t d_h = cfg.d_h, d_ff = cfg.d_ff, M = cfg.heads, dk = cfg.d_k();
    int64_t span_params = 0;
    if (cfg.span_kind == SpanKind::Adaptive) span_params = M;
    if (cfg.span_kind == SpanKind::Dynamic) span_params = M * (d_h + 1);
    const int64_t per_layer = 2 * d_h                 // attention layer norm
                              + 3 * M * d_h * dk      // W_q, W_k, W_v across heads
                              + d_h * d_h             // W_o
                              + span_params           // z' or (v, b)
                              + 2 * d_h               // feedforward layer norm
                              + d_h * d_ff + d_ff     // W_1, b_1
                              + d_ff * d_h + d_h;     // W_2, b_2
    return cfg.vocab_size * d_h                       // token embedding
           + cfg.span_limit * dk                      // shared position table
           + cfg.n_layers * per_layer
           + 2 * d_h                                  // final layer norm
           + d_h * cfg.vocab_size + cfg.vocab_size;   // output projection
}

namespace {

void write_csv_line(std::ofstream& out, const std::string& component, double flops, double share) {
    out.precision(12);
    out << component << "," << flops << "," << share << "\n";
}

}  // namespace

void write_flops_csv(const std::string& path, const CostReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("profiler: cannot write " + path);
    out << "component,flops,share\n";
    const double total = report.total();
    write_csv_line(out, "attention_scores", report.attn_scores, report.attn_scores / total);
    write_csv_line(out, "attention_output", report.attn_output, report.attn_output / total);
    write_csv_line(out, "projections", report.projections, report.projections / total);
    write_csv_line(out, "feedforward", report.feedforward, report.feedforward / total);
    write_csv_line(out, "embed_output", report.embed_output, report.embed_output / total);
    write_csv_line(out, "total", total, 1.0);
}

void write_spans_csv(const std::string& path, const SpanReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("profiler: cannot write " + path);
    out << "layer,head,span\n";
    out.precision(12);
    for (const auto& hs : report.head_spans) out << hs.layer << "," << hs.head << "," << hs.span << "\n";
}

void write_trace_csv(const std::string& path, const SpanReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("profiler: cannot write " + path);
    out << "position,char,mean_span\n";
    out.precision(12);
    for (const auto& tp : report.trace) {
        std::string sym(1, tp.symbol);
        if (tp.symbol == '"') sym = "\"\"";
        out << tp.position << ",\"" << sym << "\"," << tp.mean_span << "\n";
    }
}

}  // namespace adaspan
