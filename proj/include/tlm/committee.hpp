#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tlm/checkpoint.hpp"
#include "tlm/train.hpp"

namespace tlm {

/// Soft committee vote over one instance: sum the members' raw logits in
/// member order, then argmax with ties resolved toward the lowest label.
/// Raw (pre-softmax) sums let a strongly confident member outvote several
/// lukewarm ones, unlike majority voting.
inline int32_t committee_predict(const std::vector<std::vector<double>>& member_logits) {
    if (member_logits.empty()) throw std::invalid_argument("committee_predict: no members");
    const size_t n_labels = member_logits.front().size();
    if (n_labels == 0) throw std::invalid_argument("committee_predict: empty logit vector");
    std::vector<double> sum(n_labels, 0.0);
    for (const std::vector<double>& row : member_logits) {
        if (row.size() != n_labels)
            throw std::invalid_argument("committee_predict: members disagree on label count");
        for (size_t l = 0; l < n_labels; ++l) sum[l] += row[l];
    }
    return argmax_label(sum.data(), n_labels);
}

struct CommitteeEval {
    double accuracy = 0.0;
    std::vector<int32_t> predictions;
    std::vector<double> member_accuracy;
};

/// Evaluate a committee on a test split. Every member scores the whole
/// split (through its own vocabulary map); logits are summed per instance
/// in member order.
template <typename T>
CommitteeEval committee_evaluate(std::vector<Model<T>>& members, const std::vector<VocabMap>& vmaps,
                                 const std::vector<Instance>& test, const Vocab& vocab,
                                 size_t batch_size = 32) {
    if (members.empty()) throw std::invalid_argument("committee_evaluate: no members");
    if (vmaps.size() != members.size())
        throw std::invalid_argument("committee_evaluate: need one vocabulary map per member");
    if (test.empty()) throw DataError("committee_evaluate: the test split is empty");
    const size_t n_labels = members.front().config().num_labels;
    for (const Model<T>& m : members)
        if (m.config().num_labels != n_labels)
            throw std::invalid_argument("committee_evaluate: members disagree on num_labels");

    std::vector<std::string> texts;
    texts.reserve(test.size());
    for (const Instance& ins : test) texts.push_back(ins.text);

    const size_t n = test.size();
    Tensor<double> total({n, n_labels}, 0.0);
    CommitteeEval res;
    for (size_t k = 0; k < members.size(); ++k) {
        Model<T>& m = members[k];
        const std::vector<EncodedSeq> encoded =
            encode_texts(texts, vocab, vmaps[k], m.config().max_positions);
        const Tensor<double> logits = classify_all(m, encoded, batch_size);
        size_t hits = 0;
        for (size_t i = 0; i < n; ++i) {
            if (argmax_label(&logits.data[i * n_labels], n_labels) == test[i].label) ++hits;
            for (size_t l = 0; l < n_labels; ++l) total.data[i * n_labels + l] += logits.data[i * n_labels + l];
        }
        res.member_accuracy.push_back(static_cast<double>(hits) / static_cast<double>(n));
    }

    res.predictions.resize(n);
    size_t hits = 0;
    for (size_t i = 0; i < n; ++i) {
        res.predictions[i] = argmax_label(&total.data[i * n_labels], n_labels);
        if (res.predictions[i] == test[i].label) ++hits;
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    return res;
}

// ---------------------------------------------------------------------------
// Committee manifests: an ordered checkpoint list plus the label count the
// members are expected to share. Summation follows the listed order.
// ---------------------------------------------------------------------------

struct CommitteeManifest {
    size_t num_labels = 0;
    std::vector<std::string> checkpoint_paths;
};

inline void write_committee_manifest(const std::string& path, const CommitteeManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write committee manifest: " + path);
    out << "num_labels " << m.num_labels << "\n";
    out << "members " << m.checkpoint_paths.size() << "\n";
    for (const std::string& p : m.checkpoint_paths) out << p << "\n";
}

inline CommitteeManifest load_committee_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open committee manifest: " + path);
    CommitteeManifest m;
    std::string key;
    size_t members = 0;
    if (!(in >> key >> m.num_labels) || key != "num_labels")
        throw DataError("bad committee manifest (want 'num_labels N'): " + path);
    if (!(in >> key >> members) || key != "members")
        throw DataError("bad committee manifest (want 'members K'): " + path);
    in.ignore();
    for (size_t i = 0; i < members; ++i) {
        std::string line;
        if (!std::getline(in, line) || line.empty())
            throw DataError("committee manifest lists fewer checkpoints than declared: " + path);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        m.checkpoint_paths.push_back(line);
    }
    if (m.num_labels < 1) throw DataError("committee manifest: num_labels must be >= 1");
    if (m.checkpoint_paths.empty()) throw DataError("committee manifest lists no members: " + path);
    return m;
}

/// Load every member model named by a manifest, checking each against the
/// declared label count.
template <typename T>
std::vector<Model<T>> load_committee(const CommitteeManifest& manifest) {
    std::vector<Model<T>> members;
    members.reserve(manifest.checkpoint_paths.size());
    for (const std::string& p : manifest.checkpoint_paths) {
        LoadedCheckpoint<T> ck = load_checkpoint<T>(p);
        if (ck.config.num_labels != manifest.num_labels)
            throw DataError("committee member " + p + " has num_labels " +
                            std::to_string(ck.config.num_labels) + ", manifest expects " +
                            std::to_string(manifest.num_labels));
        members.push_back(model_from_checkpoint(ck));
    }
    return members;
}

}  // namespace tlm
