#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace adaspan {

enum class SpanKind { Fixed, Adaptive, Dynamic };
enum class CorpusFormat { Text8, Bytes, Synthetic };

std::string span_kind_name(SpanKind k);
SpanKind span_kind_from(const std::string& s);

// Paper-scale span limits come with a tuned penalty coefficient: 2e-6 by
// default, halved twice at the 8192 limit.
inline double default_lambda(int span_limit) { return span_limit >= 8192 ? 0.5e-6 : 2e-6; }

// Architecture hyperparameters. Defaults are the desk-scale configuration
// used throughout the test suites.
struct ModelConfig {
    int n_layers = 2;
    int d_h = 64;
    int d_ff = 256;
    int heads = 2;
    int span_limit = 64;
    int ramp = 8;
    SpanKind span_kind = SpanKind::Adaptive;
    int vocab_size = 27;
    double dropout = 0.0;
    int block = 64;
    double lambda = 2e-6;

    int d_k() const { return d_h / heads; }
    void validate() const;  // throws std::invalid_argument naming the field

    static ModelConfig small() {
        ModelConfig c;
        c.n_layers = 12;
        c.d_h = 512;
        c.d_ff = 2048;
        c.heads = 8;
        c.span_limit = 256;
        c.ramp = 32;
        c.block = 512;
        c.dropout = 0.3;
        return c;
    }
};

struct OptimConfig {
    double lr = 0.07;
    int warmup_steps = 32000;
    int batch = 64;
    double clip = 0.03;
    double adagrad_eps = 1e-7;
    int steps = 1000;
    int eval_interval = 1000;
    int log_interval = 50;
    int finetune_steps = 0;    // optional second stage at lr/10
    int early_stop_evals = 0;  // 0 = off; N = end main stage after N stale dev evals
    uint64_t seed = 0;

    void validate() const;
};

// One training/eval/profile run, loadable from a plain-text key=value file
// with command-line overrides layered on top.
struct RunConfig {
    ModelConfig model;
    OptimConfig optim;
    std::string data;
    CorpusFormat format = CorpusFormat::Text8;
    int64_t data_limit = 0;  // 0 = whole file
    std::string out_dir;
    std::string precision = "f32";  // f32 | f64
    std::string trace_input;
    std::string resume;
    int threads = 0;  // 0 = leave runtime default
    bool lambda_explicit = false;

    void apply_kv(const std::string& key, const std::string& value);
    void finalize();  // resolves defaults (lambda from span_limit) and validates
    std::map<std::string, std::string> to_kv() const;

    static RunConfig from_file(const std::string& path);
    void save(const std::string& path) const;
};

std::string version_string();

}  // namespace adaspan
