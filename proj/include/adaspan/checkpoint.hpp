#pragma once

#include <cstring>
#include <map>

#include "adaspan/model.hpp"

namespace adaspan {

// Checkpoint container: magic "ADSP", format version, a key-value config
// block, then named raw tensors. Little-endian throughout; round-trips are
// bit-exact.

struct NamedTensorData {
    std::string name;
    Shape shape;
    int dtype = 4;  // element size: 4 = f32, 8 = f64
    std::vector<unsigned char> bytes;
};

struct CheckpointData {
    std::map<std::string, std::string> kv;
    std::vector<NamedTensorData> tensors;

    const NamedTensorData* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

std::map<std::string, std::string> model_config_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);

template <typename T>
NamedTensorData pack_tensor(const std::string& name, const Tensor<T>& t) {
    NamedTensorData d;
    d.name = name;
    d.shape = t.shape();
    d.dtype = static_cast<int>(sizeof(T));
    d.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(T));
    std::memcpy(d.bytes.data(), t.data(), d.bytes.size());
    return d;
}

template <typename T>
void unpack_tensor(const NamedTensorData& d, Tensor<T>& into) {
    if (d.dtype != static_cast<int>(sizeof(T)))
        throw std::runtime_error("checkpoint: tensor " + d.name + " has element size " + std::to_string(d.dtype) +
                                 ", expected " + std::to_string(sizeof(T)));
    if (d.shape != into.shape())
        throw std::runtime_error("checkpoint: tensor " + d.name + " has shape " + shape_str(d.shape) +
                                 ", expected " + shape_str(into.shape()));
    std::memcpy(into.data(), d.bytes.data(), d.bytes.size());
}

template <typename T>
CheckpointData checkpoint_from_model(TransformerLM<T>& model) {
    CheckpointData data;
    data.kv = model_config_kv(model.config());
    data.kv["precision"] = sizeof(T) == 4 ? "f32" : "f64";
    for (auto& p : model.parameters()) data.tensors.push_back(pack_tensor(p.name, p.tensor));
    return data;
}

template <typename T>
void load_model_params(const CheckpointData& data, TransformerLM<T>& model) {
    for (auto& p : model.parameters()) {
        const auto* t = data.find(p.name);
        if (!t) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        unpack_tensor(*t, p.tensor);
    }
}

template <typename T>
void save_model(const std::string& path, TransformerLM<T>& model) {
    write_checkpoint(path, checkpoint_from_model(model));
}

// Builds the model the checkpoint describes and loads its parameters.
template <typename T>
TransformerLM<T> load_model(const std::string& path) {
    const auto data = read_checkpoint(path);
    const std::string prec = data.kv.count("precision") ? data.kv.at("precision") : "f32";
    const std::string want = sizeof(T) == 4 ? "f32" : "f64";
    if (prec != want)
        throw std::runtime_error("checkpoint: precision is " + prec + ", expected " + want);
    Rng rng(0);
    TransformerLM<T> model(model_config_from_kv(data.kv), rng);
    load_model_params(data, model);
    return model;
}

}  // namespace adaspan
