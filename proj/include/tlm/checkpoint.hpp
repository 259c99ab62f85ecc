#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/model.hpp"

namespace tlm {

constexpr char kCheckpointMagic[8] = {'T', 'L', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCheckpointVersion = 1;

/// Training provenance stored alongside the weights.
struct TrainMeta {
    uint64_t epochs = 0;
    double eta = 0.0;
    double alpha = 0.0;
    uint64_t seed = 0;
    std::string subset_hash;        // hex, empty when no subset was involved
    std::vector<int32_t> sub_vocab;  // reduced-vocab row -> full token id; empty = full vocab
};

inline std::string format_conv_layers(const std::vector<ConvLayerSpec>& layers) {
    if (layers.empty()) return "none";
    std::string s;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(layers[i].filters) + "x" + std::to_string(layers[i].kh) + "x" +
             std::to_string(layers[i].kw);
    }
    return s;
}

inline std::vector<ConvLayerSpec> parse_conv_layers(const std::string& s) {
    std::vector<ConvLayerSpec> out;
    if (s.empty() || s == "none") return out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        ConvLayerSpec c;
        if (std::sscanf(item.c_str(), "%zux%zux%zu", &c.filters, &c.kh, &c.kw) != 3)
            throw DataError("bad conv layer spec '" + item + "' (want FILTERSxKHxKW)");
        out.push_back(c);
    }
    return out;
}

/// Canonical key-value text form of a model config. One "key value" pair
/// per line, fixed key order, so equal configs serialize byte-identically.
inline std::string serialize_model_config(const ModelConfig& cfg) {
    std::string s;
    s += "blocks " + std::to_string(cfg.blocks) + "\n";
    s += "heads " + std::to_string(cfg.heads) + "\n";
    s += "head_dim " + std::to_string(cfg.head_dim) + "\n";
    s += "hidden " + std::to_string(cfg.hidden) + "\n";
    s += "ffn_mult " + std::to_string(cfg.ffn_mult) + "\n";
    s += "conv_layers " + format_conv_layers(cfg.conv_layers) + "\n";
    s += "vocab_size " + std::to_string(cfg.vocab_size) + "\n";
    s += "max_positions " + std::to_string(cfg.max_positions) + "\n";
    s += "num_labels " + std::to_string(cfg.num_labels) + "\n";
    s += "dropout " + format_double(cfg.dropout) + "\n";
    return s;
}

inline std::string serialize_train_meta(const TrainMeta& meta) {
    std::string s;
    s += "meta.epochs " + std::to_string(meta.epochs) + "\n";
    s += "meta.eta " + format_double(meta.eta) + "\n";
    s += "meta.alpha " + format_double(meta.alpha) + "\n";
    s += "meta.seed " + std::to_string(meta.seed) + "\n";
    s += "meta.subset_hash " + (meta.subset_hash.empty() ? std::string("-") : meta.subset_hash) + "\n";
    if (!meta.sub_vocab.empty()) {
        s += "meta.sub_vocab ";
        for (size_t i = 0; i < meta.sub_vocab.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(meta.sub_vocab[i]);
        }
        s += "\n";
    }
    return s;
}

namespace detail {

inline void parse_kv_lines(const std::string& text, ModelConfig& cfg, TrainMeta& meta) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos) throw DataError("bad config line '" + line + "'");
        const std::string key = line.substr(0, sp);
        const std::string val = line.substr(sp + 1);
        if (key == "blocks") cfg.blocks = parse_u64(val, key);
        else if (key == "heads") cfg.heads = parse_u64(val, key);
        else if (key == "head_dim") cfg.head_dim = parse_u64(val, key);
        else if (key == "hidden") cfg.hidden = parse_u64(val, key);
        else if (key == "ffn_mult") cfg.ffn_mult = parse_u64(val, key);
        else if (key == "conv_layers") cfg.conv_layers = parse_conv_layers(val);
        else if (key == "vocab_size") cfg.vocab_size = parse_u64(val, key);
        else if (key == "max_positions") cfg.max_positions = parse_u64(val, key);
        else if (key == "num_labels") cfg.num_labels = parse_u64(val, key);
        else if (key == "dropout") cfg.dropout = parse_double(val, key);
        else if (key == "meta.epochs") meta.epochs = parse_u64(val, key);
        else if (key == "meta.eta") meta.eta = parse_double(val, key);
        else if (key == "meta.alpha") meta.alpha = parse_double(val, key);
        else if (key == "meta.seed") meta.seed = parse_u64(val, key);
        else if (key == "meta.subset_hash") meta.subset_hash = (val == "-") ? "" : val;
        else if (key == "meta.sub_vocab") {
            std::istringstream items(val);
            std::string item;
            while (std::getline(items, item, ','))
                meta.sub_vocab.push_back(static_cast<int32_t>(parse_u64(item, key)));
        }
        else throw DataError("unknown config key '" + key + "'");
    }
}

template <typename T>
constexpr uint8_t dtype_tag() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else if constexpr (std::is_same_v<T, double>) return 1;
    else static_assert(sizeof(T) == 0, "unsupported tensor dtype");
}

template <typename T>
void put_scalar(std::string& out, T v) {
    if constexpr (std::is_same_v<T, float>) put_u32(out, std::bit_cast<uint32_t>(v));
    else put_u64(out, std::bit_cast<uint64_t>(v));
}

template <typename T>
T read_scalar(ByteReader& r) {
    if constexpr (std::is_same_v<T, float>) return std::bit_cast<float>(r.u32());
    else return std::bit_cast<double>(r.u64());
}

}  // namespace detail

template <typename T>
struct LoadedCheckpoint {
    ModelConfig config;
    TrainMeta meta;
    std::vector<NamedTensor<T>> tensors;

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t.tensor;
        return nullptr;
    }
};

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const TrainMeta& meta) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    const std::string header = serialize_model_config(model.config()) + serialize_train_meta(meta);
    put_u32(out, static_cast<uint32_t>(header.size()));
    out += header;
    put_u32(out, static_cast<uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        put_u32(out, static_cast<uint32_t>(p.name.size()));
        out += p.name;
        put_u8(out, detail::dtype_tag<T>());
        put_u32(out, static_cast<uint32_t>(p.tensor.rank()));
        for (size_t d : p.tensor.shape) put_u64(out, d);
        for (T v : p.tensor.data) detail::put_scalar(out, v);
    }
    return out;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const TrainMeta& meta, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint file for writing: " + path);
    const std::string buf = encode_checkpoint(model, meta);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("failed writing checkpoint: " + path);
}

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& buf, const std::string& origin) {
    try {
        ByteReader r(buf);
        char magic[8];
        r.raw(magic, 8);
        if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
            throw DataError("bad magic");
        const uint32_t version = r.u32();
        if (version != kCheckpointVersion)
            throw DataError("unsupported checkpoint version " + std::to_string(version));
        LoadedCheckpoint<T> ckpt;
        const uint32_t header_len = r.u32();
        detail::parse_kv_lines(r.bytes(header_len), ckpt.config, ckpt.meta);
        ckpt.config.validate();
        const uint32_t n = r.u32();
        ckpt.tensors.reserve(n);
        for (uint32_t i = 0; i < n; ++i) {
            NamedTensor<T> t;
            const uint32_t name_len = r.u32();
            t.name = r.bytes(name_len);
            const uint8_t dtype = r.u8();
            if (dtype != detail::dtype_tag<T>())
                throw DataError("tensor '" + t.name + "' has dtype tag " + std::to_string(dtype) +
                                ", expected " + std::to_string(detail::dtype_tag<T>()));
            const uint32_t rank = r.u32();
            std::vector<size_t> shape(rank);
            for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<size_t>(r.u64());
            t.tensor = Tensor<T>(shape);
            for (size_t j = 0; j < t.tensor.size(); ++j) t.tensor.data[j] = detail::read_scalar<T>(r);
            ckpt.tensors.push_back(std::move(t));
        }
        if (!r.done()) throw DataError("trailing bytes after tensor data");
        return ckpt;
    } catch (const DataError& e) {
        throw DataError("corrupt checkpoint " + origin + ": " + e.what());
    }
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint<T>(ss.str(), path);
}

/// Rebuild a full model from a checkpoint: every parameter the config
/// implies must be present with its exact shape.
template <typename T>
Model<T> model_from_checkpoint(const LoadedCheckpoint<T>& ckpt) {
    Model<T> model(ckpt.config, 0);
    for (auto& p : model.params()) {
        const Tensor<T>* src = ckpt.find(p.name);
        if (src == nullptr)
            throw DataError("checkpoint is missing tensor '" + p.name + "'");
        if (!src->same_shape(p.tensor))
            throw DataError("checkpoint tensor '" + p.name + "' has shape " + src->shape_str() +
                            ", model expects " + p.tensor.shape_str());
        p.tensor = *src;
    }
    return model;
}

/// Restore encoder weights into an existing model by tensor-name
/// intersection. Classifier head tensors (cls.*) are never copied, so a
/// freshly initialized head survives the transfer. Returns the number of
/// tensors restored.
template <typename T>
size_t load_encoder(Model<T>& target, const LoadedCheckpoint<T>& ckpt) {
    size_t restored = 0;
    for (auto& p : target.params()) {
        if (p.name.rfind("cls.", 0) == 0) continue;
        const Tensor<T>* src = ckpt.find(p.name);
        if (src == nullptr || !src->same_shape(p.tensor)) continue;
        p.tensor = *src;
        ++restored;
    }
    if (restored == 0) throw DataError("checkpoint shares no encoder tensors with the target model");
    return restored;
}

}  // namespace tlm
