#include "adaspan/checkpoint.hpp"

#include <fstream>

namespace adaspan {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ofstream& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t get_u64(std::ifstream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::string get_str(std::ifstream& in) {
    const uint32_t n = get_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("ADSP", 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(data.kv.size()));
    for (const auto& [k, v] : data.kv) {
        put_str(out, k);
        put_str(out, v);
    }
    put_u32(out, static_cast<uint32_t>(data.tensors.size()));
    for (const auto& t : data.tensors) {
        put_str(out, t.name);
        const uint8_t dt = static_cast<uint8_t>(t.dtype);
        out.write(reinterpret_cast<const char*>(&dt), 1);
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) put_u64(out, static_cast<uint64_t>(d));
        out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ADSP", 4) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not an ADSP checkpoint");
    const uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    CheckpointData data;
    const uint32_t nkv = get_u32(in);
    for (uint32_t i = 0; i < nkv; ++i) {
        auto k = get_str(in);
        auto v = get_str(in);
        data.kv.emplace(std::move(k), std::move(v));
    }
    const uint32_t nt = get_u32(in);
    for (uint32_t i = 0; i < nt; ++i) {
        NamedTensorData t;
        t.name = get_str(in);
        uint8_t dt = 0;
        in.read(reinterpret_cast<char*>(&dt), 1);
        t.dtype = dt;
        const uint32_t rank = get_u32(in);
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            t.shape.push_back(static_cast<int64_t>(get_u64(in)));
            numel *= t.shape.back();
        }
        t.bytes.resize(static_cast<size_t>(numel) * static_cast<size_t>(t.dtype));
        in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
        data.tensors.push_back(std::move(t));
    }
    return data;
}

std::map<std::string, std::string> model_config_kv(const ModelConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["layers"] = std::to_string(cfg.n_layers);
    kv["d_h"] = std::to_string(cfg.d_h);
    kv["d_ff"] = std::to_string(cfg.d_ff);
    kv["heads"] = std::to_string(cfg.heads);
    kv["span_limit"] = std::to_string(cfg.span_limit);
    kv["ramp"] = std::to_string(cfg.ramp);
    kv["span_kind"] = span_kind_name(cfg.span_kind);
    kv["vocab"] = std::to_string(cfg.vocab_size);
    kv["block"] = std::to_string(cfg.block);
    std::ostringstream dp, lm;
    dp.precision(17);
    dp << cfg.dropout;
    lm.precision(17);
    lm << cfg.lambda;
    kv["dropout"] = dp.str();
    kv["lambda"] = lm.str();
    return kv;
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("checkpoint: config key missing: " + k);
        return it->second;
    };
    cfg.n_layers = std::stoi(need("layers"));
    cfg.d_h = std::stoi(need("d_h"));
    cfg.d_ff = std::stoi(need("d_ff"));
    cfg.heads = std::stoi(need("heads"));
    cfg.span_limit = std::stoi(need("span_limit"));
    cfg.ramp = std::stoi(need("ramp"));
    cfg.span_kind = span_kind_from(need("span_kind"));
    cfg.vocab_size = std::stoi(need("vocab"));
    cfg.block = std::stoi(need("block"));
    cfg.dropout = std::stod(need("dropout"));
    cfg.lambda = std::stod(need("lambda"));
    cfg.validate();
    return cfg;
}

}  // namespace adaspan
