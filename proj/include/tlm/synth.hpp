#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tlm/corpus.hpp"
#include "tlm/rng.hpp"
#include "tlm/tokenizer.hpp"

namespace tlm {

/// Synthetic topic-classification benchmark. Paragraphs are first-order
/// Markov word chains over a small generator vocabulary: each of `topics`
/// latent topics owns a block of task words, and a shared pool of
/// background words appears only in pre-training paragraphs. The word
/// after w follows w's block ring with probability `ring`, stays in the
/// block with `block`, jumps to any task word with `drift`, or (corpus
/// only) draws a background word. A paragraph's label is its topic.
struct SynthConfig {
    size_t vocab_words = 200;  // task + background words in total
    size_t topics = 4;
    size_t background_words = 40;  // never appear in labeled instances
    size_t corpus_paragraphs = 4000;
    size_t train_per_label = 32;
    size_t test_per_label = 64;
    size_t min_words = 8;
    size_t max_words = 20;
    double ring = 0.35;    // P(next = successor on the block ring)
    double block = 0.35;   // P(next uniform in the same block)
    double drift = 0.10;   // P(next uniform over all task words)
    double background = 0.20;  // corpus only; labeled data renormalizes without it
    uint64_t seed = 7;

    void validate() const {
        if (topics < 2) throw std::invalid_argument("SynthConfig: need at least 2 topics");
        if (background_words >= vocab_words)
            throw std::invalid_argument("SynthConfig: background_words must leave task words");
        if ((vocab_words - background_words) % topics != 0)
            throw std::invalid_argument("SynthConfig: task words must divide evenly across topics");
        if (min_words < 2 || max_words < min_words)
            throw std::invalid_argument("SynthConfig: bad paragraph length range");
        if (ring < 0 || block < 0 || drift < 0 || background < 0 ||
            ring + block + drift + background > 1.0 + 1e-12)
            throw std::invalid_argument("SynthConfig: transition probabilities exceed 1");
    }
};

struct SynthData {
    std::vector<std::string> words;       // generator vocabulary, task blocks then background
    std::vector<std::string> corpus_lines;
    ClassificationDataset dataset;
};

namespace detail {

/// Stable pick of single-piece, plain-ascii words from the vocabulary so
/// word-level structure survives tokenization one to one.
inline std::vector<std::string> pick_generator_words(const Vocab& vocab, size_t count) {
    std::vector<std::string> out;
    for (size_t id = 0; id < vocab.size() && out.size() < count; ++id) {
        const std::string& tok = vocab.token(static_cast<int32_t>(id));
        if (tok.size() < 3 || tok.size() > 8) continue;
        bool plain = true;
        for (char c : tok)
            if (c < 'a' || c > 'z') { plain = false; break; }
        if (plain) out.push_back(tok);
    }
    if (out.size() < count)
        throw DataError("vocabulary has only " + std::to_string(out.size()) +
                        " plain words, need " + std::to_string(count));
    return out;
}

}  // namespace detail

/// Generate the full benchmark: a pre-training corpus "view" as text lines
/// plus a labeled train/test split. Deterministic in cfg.seed.
inline SynthData generate_synthetic(const SynthConfig& cfg, const Vocab& vocab) {
    cfg.validate();
    SynthData out;
    out.words = detail::pick_generator_words(vocab, cfg.vocab_words);

    const size_t n_task = cfg.vocab_words - cfg.background_words;
    const size_t block_size = n_task / cfg.topics;
    Rng rng(cfg.seed);

    // words[0 .. n_task) are task words in topic-block order; shuffle once so
    // blocks are not tied to vocabulary id order.
    rng.shuffle(out.words);

    const auto gen_paragraph = [&](size_t topic, bool with_background, Rng& r) {
        const size_t len = cfg.min_words + r.next_below(cfg.max_words - cfg.min_words + 1);
        const size_t base = topic * block_size;
        std::string text;
        size_t w = base + r.next_below(block_size);  // current word index
        for (size_t i = 0; i < len; ++i) {
            if (i > 0) {
                const double scale = with_background ? 1.0 : 1.0 - cfg.background;
                const double u = r.next_double() * scale;
                if (u < cfg.ring) {
                    if (w < n_task) {
                        const size_t blk = w / block_size;
                        w = blk * block_size + ((w % block_size) + 1) % block_size;
                    } else {
                        w = base + r.next_below(block_size);
                    }
                } else if (u < cfg.ring + cfg.block) {
                    w = base + r.next_below(block_size);
                } else if (u < cfg.ring + cfg.block + cfg.drift) {
                    w = r.next_below(n_task);
                } else {
                    w = n_task + r.next_below(cfg.background_words);
                }
            }
            if (i > 0) text += ' ';
            text += out.words[w];
        }
        return text;
    };

    Rng corpus_rng = rng.fork(1);
    out.corpus_lines.reserve(cfg.corpus_paragraphs);
    for (size_t i = 0; i < cfg.corpus_paragraphs; ++i) {
        const size_t topic = corpus_rng.next_below(cfg.topics);
        out.corpus_lines.push_back(gen_paragraph(topic, true, corpus_rng));
    }

    Rng data_rng = rng.fork(2);
    out.dataset.n_labels = static_cast<int32_t>(cfg.topics);
    for (size_t t = 0; t < cfg.topics; ++t)
        for (size_t i = 0; i < cfg.train_per_label; ++i)
            out.dataset.train.push_back({gen_paragraph(t, false, data_rng), static_cast<int32_t>(t)});
    for (size_t t = 0; t < cfg.topics; ++t)
        for (size_t i = 0; i < cfg.test_per_label; ++i)
            out.dataset.test.push_back({gen_paragraph(t, false, data_rng), static_cast<int32_t>(t)});
    return out;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    for (const std::string& l : lines) f << l << "\n";
}

inline void write_instances(const std::string& path, const std::vector<Instance>& instances) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    f << "label\ttext\n";
    for (const Instance& ins : instances) f << ins.label << "\t" << ins.text << "\n";
}

}  // namespace tlm
