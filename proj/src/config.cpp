#include "adaspan/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adaspan {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: " + key + ": expected integer, got '" + v + "'");
    }
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: " + key + ": expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: " + key + ": expected number, got '" + v + "'");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string span_kind_name(SpanKind k) {
    switch (k) {
        case SpanKind::Fixed: return "fixed";
        case SpanKind::Adaptive: return "adaptive";
        case SpanKind::Dynamic: return "dynamic";
    }
    return "?";
}

SpanKind span_kind_from(const std::string& s) {
    if (s == "fixed") return SpanKind::Fixed;
    if (s == "adaptive") return SpanKind::Adaptive;
    if (s == "dynamic") return SpanKind::Dynamic;
    throw std::invalid_argument("config: span_kind: expected fixed|adaptive|dynamic, got '" + s + "'");
}

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("config: layers must be >= 1");
    if (d_h < 1) throw std::invalid_argument("config: d_h must be >= 1");
    if (d_ff < 1) throw std::invalid_argument("config: d_ff must be >= 1");
    if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
    if (d_h % heads != 0) throw std::invalid_argument("config: heads must divide d_h exactly");
    if (span_limit < 1) throw std::invalid_argument("config: span_limit must be >= 1");
    if (ramp < 1) throw std::invalid_argument("config: ramp must be >= 1");
    if (ramp > span_limit) throw std::invalid_argument("config: ramp must not exceed span_limit");
    if (vocab_size < 1) throw std::invalid_argument("config: vocab must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("config: dropout must be in [0,1)");
    if (block < 1) throw std::invalid_argument("config: block must be >= 1");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
}

void OptimConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
    if (warmup_steps < 0) throw std::invalid_argument("config: warmup must be >= 0");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (clip <= 0.0) throw std::invalid_argument("config: clip must be > 0");
    if (adagrad_eps <= 0.0) throw std::invalid_argument("config: adagrad_eps must be > 0");
    if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
    if (log_interval < 1) throw std::invalid_argument("config: log_interval must be >= 1");
    if (finetune_steps < 0) throw std::invalid_argument("config: finetune_steps must be >= 0");
    if (early_stop_evals < 0) throw std::invalid_argument("config: early_stop_evals must be >= 0");
}

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
    if (key == "layers") model.n_layers = parse_int(key, value);
    else if (key == "d_h") model.d_h = parse_int(key, value);
    else if (key == "d_ff") model.d_ff = parse_int(key, value);
    else if (key == "heads") model.heads = parse_int(key, value);
    else if (key == "span_limit") model.span_limit = parse_int(key, value);
    else if (key == "ramp") model.ramp = parse_int(key, value);
    else if (key == "span_kind") model.span_kind = span_kind_from(value);
    else if (key == "vocab") model.vocab_size = parse_int(key, value);
    else if (key == "dropout") model.dropout = parse_double(key, value);
    else if (key == "block") model.block = parse_int(key, value);
    else if (key == "lambda") { model.lambda = parse_double(key, value); lambda_explicit = true; }
    else if (key == "lr") optim.lr = parse_double(key, value);
    else if (key == "warmup") optim.warmup_steps = parse_int(key, value);
    else if (key == "batch") optim.batch = parse_int(key, value);
    else if (key == "clip") optim.clip = parse_double(key, value);
    else if (key == "adagrad_eps") optim.adagrad_eps = parse_double(key, value);
    else if (key == "steps") optim.steps = parse_int(key, value);
    else if (key == "eval_interval") optim.eval_interval = parse_int(key, value);
    else if (key == "log_interval") optim.log_interval = parse_int(key, value);
    else if (key == "finetune_steps") optim.finetune_steps = parse_int(key, value);
    else if (key == "early_stop_evals") optim.early_stop_evals = parse_int(key, value);
    else if (key == "seed") optim.seed = static_cast<uint64_t>(parse_i64(key, value));
    else if (key == "data") data = value;
    else if (key == "data_format") {
        if (value == "text8") format = CorpusFormat::Text8;
        else if (value == "bytes") format = CorpusFormat::Bytes;
        else throw std::invalid_argument("config: data_format: expected text8|bytes, got '" + value + "'");
    }
    else if (key == "data_limit") data_limit = parse_i64(key, value);
    else if (key == "out") out_dir = value;
    else if (key == "precision") {
        if (value != "f32" && value != "f64")
            throw std::invalid_argument("config: precision: expected f32|f64, got '" + value + "'");
        precision = value;
    }
    else if (key == "trace_input") trace_input = value;
    else if (key == "resume") resume = value;
    else if (key == "threads") threads = parse_int(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

void RunConfig::finalize() {
    if (!lambda_explicit) model.lambda = default_lambda(model.span_limit);
    model.validate();
    optim.validate();
    if (data_limit < 0) throw std::invalid_argument("config: data_limit must be >= 0");
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

std::map<std::string, std::string> RunConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["layers"] = std::to_string(model.n_layers);
    kv["d_h"] = std::to_string(model.d_h);
    kv["d_ff"] = std::to_string(model.d_ff);
    kv["heads"] = std::to_string(model.heads);
    kv["span_limit"] = std::to_string(model.span_limit);
    kv["ramp"] = std::to_string(model.ramp);
    kv["span_kind"] = span_kind_name(model.span_kind);
    kv["vocab"] = std::to_string(model.vocab_size);
    kv["dropout"] = fmt_double(model.dropout);
    kv["block"] = std::to_string(model.block);
    kv["lambda"] = fmt_double(model.lambda);
    kv["lr"] = fmt_double(optim.lr);
    kv["warmup"] = std::to_string(optim.warmup_steps);
    kv["batch"] = std::to_string(optim.batch);
    kv["clip"] = fmt_double(optim.clip);
    kv["adagrad_eps"] = fmt_double(optim.adagrad_eps);
    kv["steps"] = std::to_string(optim.steps);
    kv["eval_interval"] = std::to_string(optim.eval_interval);
    kv["log_interval"] = std::to_string(optim.log_interval);
    kv["finetune_steps"] = std::to_string(optim.finetune_steps);
    kv["early_stop_evals"] = std::to_string(optim.early_stop_evals);
    kv["seed"] = std::to_string(optim.seed);
    kv["data"] = data;
    kv["data_format"] = format == CorpusFormat::Bytes ? "bytes" : "text8";
    kv["data_limit"] = std::to_string(data_limit);
    kv["out"] = out_dir;
    kv["precision"] = precision;
    if (!trace_input.empty()) kv["trace_input"] = trace_input;
    if (!resume.empty()) kv["resume"] = resume;
    kv["threads"] = std::to_string(threads);
    kv["version"] = version_string();
    return kv;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) + ": expected key = value");
        cfg.apply_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    for (const auto& [k, v] : to_kv()) out << k << " = " << v << "\n";
}

std::string version_string() {
    return "adaspan 0.1.0 (" __DATE__ ")";
}

}  // namespace adaspan
