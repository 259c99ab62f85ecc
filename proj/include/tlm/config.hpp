#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tlm/checkpoint.hpp"
#include "tlm/corpus.hpp"
#include "tlm/train.hpp"

namespace tlm {

/// Plain "key value" configuration document. '#' starts a comment, blank
/// lines are ignored, keys may not repeat.
class KvDoc {
  public:
    static KvDoc parse(const std::string& text) {
        KvDoc doc;
        std::istringstream in(text);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            size_t begin = line.find_first_not_of(" \t");
            if (begin == std::string::npos) continue;
            size_t end = line.find_last_not_of(" \t");
            line = line.substr(begin, end - begin + 1);
            const size_t sp = line.find_first_of(" \t");
            if (sp == std::string::npos)
                throw DataError("config line " + std::to_string(lineno) + " has no value: '" + line + "'");
            const std::string key = line.substr(0, sp);
            const std::string value = line.substr(line.find_first_not_of(" \t", sp));
            if (!doc.values_.emplace(key, value).second)
                throw DataError("duplicate config key '" + key + "'");
            doc.order_.push_back(key);
        }
        return doc;
    }

    static KvDoc load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open config file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw DataError("config is missing required key '" + key + "'");
        return it->second;
    }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_u64(it->second, key);
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(it->second, key);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw DataError("bad boolean value for '" + key + "': " + v);
    }
    const std::vector<std::string>& keys() const { return order_; }

  private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// Everything one gap experiment needs: data locations, the subset recipe,
/// the architecture, both training arms and the repetition count.
struct ExperimentSpec {
    std::string corpus_path;
    std::string train_path;
    std::string test_path;
    size_t reduce_train_per_label = 0;  // 0 = keep the full split
    size_t reduce_test_per_label = 0;
    uint64_t reduce_seed = 42;

    SubsetKind subset_kind = SubsetKind::random;
    size_t subset_size = 0;  // random recipe; 0 = no pre-training arm
    uint64_t subset_seed = 42;
    double exclusion_fraction = 0.0;      // inflated recipe
    uint64_t filler_budget = kUnlimitedFiller;

    ModelConfig model;  // vocab_size and num_labels are resolved at run time
    bool reduced_vocab = false;

    TrainConfig pretrain_cfg;
    TrainConfig finetune_cfg;
    TrainConfig scratch_cfg;  // the non-pre-trained arm may use its own hyperparameters
    size_t repetitions = 1;
};

inline ExperimentSpec parse_experiment_spec(const KvDoc& doc) {
    ExperimentSpec s;
    s.corpus_path = doc.get("corpus", "");
    s.train_path = doc.require("train");
    s.test_path = doc.require("test");
    s.reduce_train_per_label = doc.get_u64("reduce.train_per_label", 0);
    s.reduce_test_per_label = doc.get_u64("reduce.test_per_label", 0);
    s.reduce_seed = doc.get_u64("reduce.seed", 42);

    const std::string kind = doc.get("subset.kind", "random");
    if (kind == "random") s.subset_kind = SubsetKind::random;
    else if (kind == "custom") s.subset_kind = SubsetKind::custom;
    else if (kind == "inflated") s.subset_kind = SubsetKind::inflated;
    else throw DataError("unknown subset.kind '" + kind + "'");
    s.subset_size = doc.get_u64("subset.size", 0);
    s.subset_seed = doc.get_u64("subset.seed", 42);
    s.exclusion_fraction = doc.get_double("subset.exclusion_fraction", 0.0);
    const std::string budget = doc.get("subset.filler_budget", "unlimited");
    s.filler_budget = (budget == "unlimited") ? kUnlimitedFiller : parse_u64(budget, "subset.filler_budget");

    s.model.blocks = doc.get_u64("model.blocks", 1);
    s.model.heads = doc.get_u64("model.heads", 12);
    s.model.head_dim = doc.get_u64("model.head_dim", 64);
    s.model.hidden = s.model.heads * s.model.head_dim;
    s.model.ffn_mult = doc.get_u64("model.ffn_mult", 4);
    s.model.conv_layers = parse_conv_layers(doc.get("model.conv", "none"));
    s.model.max_positions = doc.get_u64("model.max_positions", kSeqLen);
    s.model.dropout = doc.get_double("model.dropout", 0.1);
    s.reduced_vocab = doc.get_bool("model.reduced_vocab", false);

    const auto train_cfg = [&](const std::string& prefix, const TrainConfig& base) {
        TrainConfig t = base;
        t.epochs = doc.get_u64(prefix + ".epochs", base.epochs);
        t.batch_size = doc.get_u64(prefix + ".batch", base.batch_size);
        t.eta = doc.get_double(prefix + ".eta", base.eta);
        t.alpha = doc.get_double(prefix + ".alpha", base.alpha);
        t.seed = doc.get_u64(prefix + ".seed", base.seed);
        t.patience = doc.get_u64(prefix + ".patience", base.patience);
        return t;
    };
    TrainConfig pre_default;
    pre_default.epochs = 50;
    pre_default.eta = 5.5e-5;
    pre_default.alpha = 1e-2;
    pre_default.patience = 0;
    TrainConfig ft_default;
    ft_default.epochs = 50;
    ft_default.eta = 1e-4;
    ft_default.alpha = 1e-2;
    ft_default.patience = 10;
    s.pretrain_cfg = train_cfg("pretrain", pre_default);
    s.finetune_cfg = train_cfg("finetune", ft_default);
    s.scratch_cfg = train_cfg("scratch", s.finetune_cfg);

    s.repetitions = doc.get_u64("repetitions", 1);
    if (s.repetitions < 1) throw DataError("repetitions must be >= 1");
    return s;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
    return parse_experiment_spec(KvDoc::load(path));
}

inline std::string serialize_train_config(const std::string& prefix, const TrainConfig& t) {
    std::string s;
    s += prefix + ".epochs " + std::to_string(t.epochs) + "\n";
    s += prefix + ".batch " + std::to_string(t.batch_size) + "\n";
    s += prefix + ".eta " + format_double(t.eta) + "\n";
    s += prefix + ".alpha " + format_double(t.alpha) + "\n";
    s += prefix + ".seed " + std::to_string(t.seed) + "\n";
    s += prefix + ".patience " + std::to_string(t.patience) + "\n";
    return s;
}

/// Canonical text form of an experiment: fixed key order so equal specs
/// hash identically. This string is what the report's config hash covers.
inline std::string serialize_experiment_spec(const ExperimentSpec& s) {
    std::string out;
    if (!s.corpus_path.empty()) out += "corpus " + s.corpus_path + "\n";
    out += "train " + s.train_path + "\n";
    out += "test " + s.test_path + "\n";
    out += "reduce.train_per_label " + std::to_string(s.reduce_train_per_label) + "\n";
    out += "reduce.test_per_label " + std::to_string(s.reduce_test_per_label) + "\n";
    out += "reduce.seed " + std::to_string(s.reduce_seed) + "\n";
    out += "subset.kind " + std::string(subset_kind_name(s.subset_kind)) + "\n";
    out += "subset.size " + std::to_string(s.subset_size) + "\n";
    out += "subset.seed " + std::to_string(s.subset_seed) + "\n";
    out += "subset.exclusion_fraction " + format_double(s.exclusion_fraction) + "\n";
    out += "subset.filler_budget " +
           (s.filler_budget == kUnlimitedFiller ? std::string("unlimited")
                                                : std::to_string(s.filler_budget)) +
           "\n";
    out += "model.blocks " + std::to_string(s.model.blocks) + "\n";
    out += "model.heads " + std::to_string(s.model.heads) + "\n";
    out += "model.head_dim " + std::to_string(s.model.head_dim) + "\n";
    out += "model.ffn_mult " + std::to_string(s.model.ffn_mult) + "\n";
    out += "model.conv " + format_conv_layers(s.model.conv_layers) + "\n";
    out += "model.max_positions " + std::to_string(s.model.max_positions) + "\n";
    out += "model.dropout " + format_double(s.model.dropout) + "\n";
    out += std::string("model.reduced_vocab ") + (s.reduced_vocab ? "true" : "false") + "\n";
    out += serialize_train_config("pretrain", s.pretrain_cfg);
    out += serialize_train_config("finetune", s.finetune_cfg);
    out += serialize_train_config("scratch", s.scratch_cfg);
    out += "repetitions " + std::to_string(s.repetitions) + "\n";
    return out;
}

inline uint64_t experiment_config_hash(const ExperimentSpec& s) {
    return fnv1a64(serialize_experiment_spec(s));
}

}  // namespace tlm
