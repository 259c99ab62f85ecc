#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/rng.hpp"
#include "tlm/tokenizer.hpp"

namespace tlm {

/// Set of token ids with optional occurrence counts. `ids` stays sorted and
/// unique; when counts are present their keys equal the set members.
struct TokenSet {
    std::vector<int32_t> ids;
    std::map<int32_t, uint64_t> freq;
    bool has_freq = false;

    bool contains(int32_t id) const {
        return std::binary_search(ids.begin(), ids.end(), id);
    }
    size_t size() const { return ids.size(); }

    static TokenSet from_ids(std::vector<int32_t> raw) {
        TokenSet ts;
        std::sort(raw.begin(), raw.end());
        raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
        ts.ids = std::move(raw);
        return ts;
    }

    void add_occurrences(const std::vector<int32_t>& tokens) {
        for (int32_t t : tokens) ++freq[t];
        has_freq = true;
    }
    void rebuild_ids_from_freq() {
        ids.clear();
        ids.reserve(freq.size());
        for (const auto& [id, _] : freq) ids.push_back(id);
    }

    uint64_t hash() const {
        std::string buf;
        for (int32_t id : ids) put_u32(buf, static_cast<uint32_t>(id));
        return fnv1a64(buf);
    }
};

struct Paragraph {
    std::string text;
    std::vector<int32_t> tokens;  // untruncated ids, sorted (multiset form)
};

struct Corpus {
    std::vector<Paragraph> paragraphs;
    size_t size() const { return paragraphs.size(); }
};

enum class SubsetKind { custom, random, inflated };

inline const char* subset_kind_name(SubsetKind k) {
    switch (k) {
        case SubsetKind::custom: return "custom";
        case SubsetKind::random: return "random";
        default: return "inflated";
    }
}

struct SubsetProvenance {
    SubsetKind kind = SubsetKind::custom;
    uint64_t allowed_hash = 0;   // custom / inflated
    uint64_t seed = 0;           // random
    double exclusion_fraction = 0.0;  // inflated
    uint64_t filler_budget = 0;       // inflated; UINT64_MAX = unlimited
};

struct CorpusSubset {
    std::vector<size_t> indices;  // into the source corpus, selection order
    TokenSet t_w;                 // exact union of member paragraph tokens
    SubsetProvenance provenance;
    bool empty_warning = false;

    size_t w_s() const { return indices.size(); }
};

struct Instance {
    std::string text;
    int32_t label = 0;
};

struct ClassificationDataset {
    std::vector<Instance> train;
    std::vector<Instance> test;
    int32_t n_labels = 0;
};

struct OverlapReport {
    size_t w_s = 0;
    size_t t_w_size = 0;
    size_t t_c_size = 0;
    size_t t_m = 0;                    // |T_C \ T_W|
    std::vector<int32_t> missing;      // sorted members of T_C \ T_W
    double weighted_overlap = 1.0;     // frequency-weighted share of T_C covered
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

inline Corpus ingest_paragraphs(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open paragraph file: " + path);
    Corpus corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        Paragraph p;
        p.tokens = tokenize_ids(line, vocab);
        std::sort(p.tokens.begin(), p.tokens.end());
        p.text = std::move(line);
        corpus.paragraphs.push_back(std::move(p));
    }
    return corpus;
}

/// Reads "label<TAB>text" (or "label,text") records, one instance per line.
/// A non-numeric first field on line one is treated as a header and skipped.
inline std::vector<Instance> load_instances(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<Instance> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t cut = line.find('\t');
        if (cut == std::string::npos) cut = line.find(',');
        if (cut == std::string::npos) {
            if (first) {
                first = false;
                continue;
            }
            throw DataError("malformed dataset record (no delimiter): " + line);
        }
        const std::string head = line.substr(0, cut);
        char* endp = nullptr;
        const long label = std::strtol(head.c_str(), &endp, 10);
        if (endp == head.c_str() || *endp != '\0') {
            if (first) {
                first = false;
                continue;  // header row
            }
            throw DataError("malformed label '" + head + "' in " + path);
        }
        if (label < 0) throw DataError("negative label in " + path);
        out.push_back(Instance{line.substr(cut + 1), static_cast<int32_t>(label)});
        first = false;
    }
    return out;
}

inline ClassificationDataset load_classification_dataset(const std::string& train_path,
                                                         const std::string& test_path) {
    ClassificationDataset ds;
    ds.train = load_instances(train_path);
    ds.test = load_instances(test_path);
    int32_t max_label = -1;
    for (const auto& inst : ds.train) max_label = std::max(max_label, inst.label);
    for (const auto& inst : ds.test) max_label = std::max(max_label, inst.label);
    ds.n_labels = max_label + 1;
    std::vector<char> seen(static_cast<size_t>(ds.n_labels), 0);
    for (const auto& inst : ds.train) seen[static_cast<size_t>(inst.label)] = 1;
    for (const auto& inst : ds.test) seen[static_cast<size_t>(inst.label)] = 1;
    for (int32_t l = 0; l < ds.n_labels; ++l)
        if (!seen[static_cast<size_t>(l)])
            throw DataError("label ids are not dense: label " + std::to_string(l) + " unused");
    return ds;
}

// ---------------------------------------------------------------------------
// Token sets and overlap metrics
// ---------------------------------------------------------------------------

/// Union (with frequencies) over train AND test instance tokens; special
/// tokens, including [UNK], never count.
inline TokenSet extract_token_set(const ClassificationDataset& ds, const Vocab& vocab) {
    TokenSet ts;
    ts.has_freq = true;
    const auto absorb = [&](const std::vector<Instance>& instances) {
        for (const Instance& inst : instances) {
            for (int32_t t : tokenize_ids(inst.text, vocab)) {
                if (vocab.is_special(t)) continue;
                ++ts.freq[t];
            }
        }
    };
    absorb(ds.train);
    absorb(ds.test);
    ts.rebuild_ids_from_freq();
    return ts;
}

/// Token frequencies over a whole corpus (used to rank inflation fillers).
inline std::map<int32_t, uint64_t> corpus_frequencies(const Corpus& corpus) {
    std::map<int32_t, uint64_t> freq;
    for (const Paragraph& p : corpus.paragraphs)
        for (int32_t t : p.tokens) ++freq[t];
    return freq;
}

namespace detail {

inline TokenSet union_of(const Corpus& corpus, const std::vector<size_t>& indices) {
    std::vector<int32_t> all;
    for (size_t i : indices) {
        const auto& toks = corpus.paragraphs[i].tokens;
        all.insert(all.end(), toks.begin(), toks.end());
    }
    return TokenSet::from_ids(std::move(all));
}

inline bool all_in(const std::vector<int32_t>& tokens, const TokenSet& allowed) {
    for (int32_t t : tokens)
        if (!allowed.contains(t)) return false;
    return true;
}

}  // namespace detail

inline OverlapReport compute_overlap_metrics(const CorpusSubset& subset, const TokenSet& tc) {
    OverlapReport r;
    r.w_s = subset.w_s();
    r.t_w_size = subset.t_w.size();
    r.t_c_size = tc.size();
    for (int32_t id : tc.ids)
        if (!subset.t_w.contains(id)) r.missing.push_back(id);
    r.t_m = r.missing.size();
    if (tc.has_freq) {
        uint64_t total = 0, covered = 0;
        for (const auto& [id, n] : tc.freq) {
            total += n;
            if (subset.t_w.contains(id)) covered += n;
        }
        r.weighted_overlap = total == 0 ? 1.0
                                        : static_cast<double>(covered) / static_cast<double>(total);
    } else {
        r.weighted_overlap = tc.size() == 0
                                 ? 1.0
                                 : static_cast<double>(tc.size() - r.t_m) / static_cast<double>(tc.size());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Subset construction
// ---------------------------------------------------------------------------

inline CorpusSubset build_custom_subset(const Corpus& corpus, const TokenSet& allowed) {
    if (allowed.size() == 0) throw std::invalid_argument("build_custom_subset: allowed set is empty");
    CorpusSubset s;
    s.provenance.kind = SubsetKind::custom;
    s.provenance.allowed_hash = allowed.hash();
    for (size_t i = 0; i < corpus.size(); ++i)
        if (detail::all_in(corpus.paragraphs[i].tokens, allowed)) s.indices.push_back(i);
    s.t_w = detail::union_of(corpus, s.indices);
    s.empty_warning = s.indices.empty();
    return s;
}

inline CorpusSubset sample_random_subset(const Corpus& corpus, size_t size, uint64_t seed) {
    CorpusSubset s;
    s.provenance.kind = SubsetKind::random;
    s.provenance.seed = seed;
    Rng rng(seed);
    s.indices = rng.sample_without_replacement(corpus.size(), std::min(size, corpus.size()));
    s.t_w = detail::union_of(corpus, s.indices);
    s.empty_warning = s.indices.empty();
    return s;
}

constexpr uint64_t kUnlimitedFiller = std::numeric_limits<uint64_t>::max();

/// Artificially grows T_M: drop the ceil(fraction·|T_C|) lowest-corpus-
/// frequency members of T_C from the allowed set, fill with non-T_C tokens
/// (optionally only the filler_budget most corpus-frequent ones), then filter
/// like build_custom_subset. Ties break toward lower token id.
inline CorpusSubset build_inflated_tm_subset(const Corpus& corpus, const TokenSet& tc,
                                             double exclusion_fraction,
                                             uint64_t filler_budget = kUnlimitedFiller,
                                             size_t vocab_size = kVocabSize) {
    if (!(exclusion_fraction >= 0.0 && exclusion_fraction <= 1.0))
        throw std::invalid_argument("build_inflated_tm_subset: exclusion_fraction must be in [0,1]");
    const std::map<int32_t, uint64_t> corpus_freq = corpus_frequencies(corpus);
    const auto freq_of = [&](int32_t id) -> uint64_t {
        auto it = corpus_freq.find(id);
        return it == corpus_freq.end() ? 0 : it->second;
    };

    const size_t n_excluded =
        static_cast<size_t>(std::ceil(exclusion_fraction * static_cast<double>(tc.size())));
    std::vector<int32_t> by_freq = tc.ids;
    std::stable_sort(by_freq.begin(), by_freq.end(), [&](int32_t a, int32_t b) {
        const uint64_t fa = freq_of(a), fb = freq_of(b);
        return fa != fb ? fa < fb : a < b;
    });
    std::unordered_set<int32_t> excluded(by_freq.begin(),
                                         by_freq.begin() + static_cast<long>(std::min(n_excluded, by_freq.size())));

    std::vector<int32_t> fillers;
    for (size_t id = 0; id < vocab_size; ++id)
        if (!tc.contains(static_cast<int32_t>(id))) fillers.push_back(static_cast<int32_t>(id));
    if (filler_budget < fillers.size()) {
        std::stable_sort(fillers.begin(), fillers.end(), [&](int32_t a, int32_t b) {
            const uint64_t fa = freq_of(a), fb = freq_of(b);
            return fa != fb ? fa > fb : a < b;
        });
        fillers.resize(static_cast<size_t>(filler_budget));
    }

    std::vector<int32_t> allowed_ids = std::move(fillers);
    for (int32_t id : tc.ids)
        if (!excluded.count(id)) allowed_ids.push_back(id);
    TokenSet allowed = TokenSet::from_ids(std::move(allowed_ids));

    CorpusSubset s;
    s.provenance.kind = SubsetKind::inflated;
    s.provenance.allowed_hash = allowed.hash();
    s.provenance.exclusion_fraction = exclusion_fraction;
    s.provenance.filler_budget = filler_budget;
    for (size_t i = 0; i < corpus.size(); ++i)
        if (detail::all_in(corpus.paragraphs[i].tokens, allowed)) s.indices.push_back(i);
    s.t_w = detail::union_of(corpus, s.indices);
    s.empty_warning = s.indices.empty();
    return s;
}

inline ClassificationDataset reduce_classification_dataset(const ClassificationDataset& ds,
                                                           size_t n_train, size_t n_test,
                                                           uint64_t seed) {
    Rng rng(seed);
    ClassificationDataset out;
    out.n_labels = ds.n_labels;
    const auto pick = [&](const std::vector<Instance>& pool, size_t per_label,
                          std::vector<Instance>& dst, const char* which) {
        for (int32_t label = 0; label < ds.n_labels; ++label) {
            std::vector<size_t> of_label;
            for (size_t i = 0; i < pool.size(); ++i)
                if (pool[i].label == label) of_label.push_back(i);
            if (of_label.size() < per_label)
                throw DataError("label " + std::to_string(label) + " has only " +
                                std::to_string(of_label.size()) + " " + which +
                                " instances, need " + std::to_string(per_label));
            std::vector<size_t> chosen = rng.sample_without_replacement(of_label.size(), per_label);
            std::sort(chosen.begin(), chosen.end());
            for (size_t c : chosen) dst.push_back(pool[of_label[c]]);
        }
    };
    pick(ds.train, n_train, out.train, "train");
    pick(ds.test, n_test, out.test, "test");
    return out;
}

// ---------------------------------------------------------------------------
// Subset manifests: enough to rebuild a subset from the same corpus file.
// Line-oriented text: kind, provenance fields, then the index list.
// ---------------------------------------------------------------------------

inline std::string subset_manifest_text(const CorpusSubset& s) {
    std::string out;
    out += "kind " + std::string(subset_kind_name(s.provenance.kind)) + "\n";
    out += "allowed_hash " + hex64(s.provenance.allowed_hash) + "\n";
    out += "seed " + std::to_string(s.provenance.seed) + "\n";
    out += "exclusion_fraction " + format_double(s.provenance.exclusion_fraction) + "\n";
    out += "filler_budget " + std::to_string(s.provenance.filler_budget) + "\n";
    out += "w_s " + std::to_string(s.indices.size()) + "\n";
    for (size_t i : s.indices) out += std::to_string(i) + "\n";
    return out;
}

inline std::string subset_manifest_hash(const CorpusSubset& s) {
    return hex64(fnv1a64(subset_manifest_text(s)));
}

inline void write_subset_manifest(const std::string& path, const CorpusSubset& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << subset_manifest_text(s);
}

inline CorpusSubset load_subset_manifest(const std::string& path, const Corpus& corpus) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest: " + path);
    CorpusSubset s;
    std::string key, value;
    size_t count = 0;
    for (int field = 0; field < 6; ++field) {
        if (!(in >> key >> value)) throw DataError("truncated manifest: " + path);
        if (key == "kind") {
            if (value == "custom") s.provenance.kind = SubsetKind::custom;
            else if (value == "random") s.provenance.kind = SubsetKind::random;
            else if (value == "inflated") s.provenance.kind = SubsetKind::inflated;
            else throw DataError("unknown subset kind '" + value + "'");
        } else if (key == "allowed_hash") {
            s.provenance.allowed_hash = std::stoull(value, nullptr, 16);
        } else if (key == "seed") {
            s.provenance.seed = std::stoull(value);
        } else if (key == "exclusion_fraction") {
            s.provenance.exclusion_fraction = std::stod(value);
        } else if (key == "filler_budget") {
            s.provenance.filler_budget = std::stoull(value);
        } else if (key == "w_s") {
            count = std::stoull(value);
        } else {
            throw DataError("unknown manifest field '" + key + "'");
        }
    }
    for (size_t i = 0; i < count; ++i) {
        size_t idx;
        if (!(in >> idx)) throw DataError("manifest index list truncated: " + path);
        if (idx >= corpus.size()) throw DataError("manifest index out of range: " + path);
        s.indices.push_back(idx);
    }
    s.t_w = detail::union_of(corpus, s.indices);
    s.empty_warning = s.indices.empty();
    return s;
}

}  // namespace tlm
