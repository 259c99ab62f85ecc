#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/unicode.hpp"

namespace tlm {

constexpr size_t kVocabSize = 30522;
constexpr size_t kSeqLen = 128;
constexpr size_t kMaxContentPieces = kSeqLen - 2;  // room for [CLS] and [SEP]
constexpr size_t kMaxWordChars = 100;              // longer words become [UNK]

class Vocab {
  public:
    static Vocab load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open vocabulary file: " + path);
        Vocab v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!v.token_to_id_.emplace(line, static_cast<int32_t>(v.id_to_token_.size())).second)
                throw DataError("duplicate token in vocabulary: '" + line + "'");
            v.id_to_token_.push_back(line);
        }
        if (v.id_to_token_.size() != kVocabSize)
            throw DataError("vocabulary has " + std::to_string(v.id_to_token_.size()) +
                            " entries, expected " + std::to_string(kVocabSize));
        v.pad_id_ = v.require_special("[PAD]");
        v.unk_id_ = v.require_special("[UNK]");
        v.cls_id_ = v.require_special("[CLS]");
        v.sep_id_ = v.require_special("[SEP]");
        v.mask_id_ = v.require_special("[MASK]");
        v.special_ids_ = {v.pad_id_, v.unk_id_, v.cls_id_, v.sep_id_, v.mask_id_};
        return v;
    }

    size_t size() const { return id_to_token_.size(); }
    const std::string& token(int32_t id) const { return id_to_token_.at(static_cast<size_t>(id)); }
    int32_t id_of(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? -1 : it->second;
    }

    int32_t pad_id() const { return pad_id_; }
    int32_t unk_id() const { return unk_id_; }
    int32_t cls_id() const { return cls_id_; }
    int32_t sep_id() const { return sep_id_; }
    int32_t mask_id() const { return mask_id_; }
    const std::array<int32_t, 5>& special_ids() const { return special_ids_; }
    bool is_special(int32_t id) const {
        for (int32_t s : special_ids_)
            if (s == id) return true;
        return false;
    }

  private:
    int32_t require_special(const std::string& tok) const {
        const int32_t id = id_of(tok);
        if (id < 0) throw DataError("vocabulary is missing special token " + tok);
        return id;
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
    int32_t pad_id_ = -1, unk_id_ = -1, cls_id_ = -1, sep_id_ = -1, mask_id_ = -1;
    std::array<int32_t, 5> special_ids_{};
};

struct TokenizedSequence {
    std::array<int32_t, kSeqLen> ids;
    std::array<uint8_t, kSeqLen> attention_mask;  // 1 = real token ([CLS]..[SEP])
    size_t n_real = 0;                            // non-pad count, includes [CLS] and [SEP]
};

namespace detail {

// Greedy longest-prefix WordPiece over one pre-tokenized word.
inline void wordpiece(const Vocab& vocab, const std::vector<uint32_t>& word,
                      std::vector<int32_t>& out) {
    if (word.size() > kMaxWordChars) {
        out.push_back(vocab.unk_id());
        return;
    }
    // byte offset of each code point inside the UTF-8 form of the word
    std::string utf8;
    std::vector<size_t> byte_off;
    byte_off.reserve(word.size() + 1);
    for (uint32_t cp : word) {
        byte_off.push_back(utf8.size());
        uni::append_utf8(utf8, cp);
    }
    byte_off.push_back(utf8.size());

    const size_t first_len = out.size();
    size_t start = 0;
    std::string candidate;
    while (start < word.size()) {
        size_t end = word.size();
        int32_t found = -1;
        while (start < end) {
            candidate.clear();
            if (start > 0) candidate = "##";
            candidate.append(utf8, byte_off[start], byte_off[end] - byte_off[start]);
            found = vocab.id_of(candidate);
            if (found >= 0) break;
            --end;
        }
        if (found < 0) {  // no piece matches: the whole word becomes [UNK]
            out.resize(first_len);
            out.push_back(vocab.unk_id());
            return;
        }
        out.push_back(found);
        start = end;
    }
}

}  // namespace detail

/// Untruncated token ids, no special tokens. This is the form used for
/// token-set computation over whole paragraphs.
inline std::vector<int32_t> tokenize_ids(std::string_view text, const Vocab& vocab) {
    std::vector<int32_t> out;
    const std::vector<uint32_t> norm = uni::normalize_uncased_cps(text);
    for (const std::vector<uint32_t>& word : uni::split_words(norm))
        detail::wordpiece(vocab, word, out);
    return out;
}

/// Token piece strings, e.g. "un ##load ##ing".
inline std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab) {
    std::vector<std::string> out;
    for (int32_t id : tokenize_ids(text, vocab)) out.push_back(vocab.token(id));
    return out;
}

/// Variable-length encoding: [CLS] + first (seq_len - 2) pieces + [SEP],
/// padded with [PAD] to exactly seq_len.
struct EncodedSeq {
    std::vector<int32_t> ids;
    std::vector<uint8_t> attention_mask;
    size_t n_real = 0;
};

inline EncodedSeq encode_len(std::string_view text, const Vocab& vocab, size_t seq_len) {
    if (seq_len < 2) throw std::invalid_argument("encode_len: seq_len must be >= 2");
    std::vector<int32_t> pieces = tokenize_ids(text, vocab);
    if (pieces.size() > seq_len - 2) pieces.resize(seq_len - 2);
    EncodedSeq seq;
    seq.ids.reserve(seq_len);
    seq.ids.push_back(vocab.cls_id());
    seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.end());
    seq.ids.push_back(vocab.sep_id());
    seq.n_real = seq.ids.size();
    seq.ids.resize(seq_len, vocab.pad_id());
    seq.attention_mask.assign(seq_len, 0);
    for (size_t i = 0; i < seq.n_real; ++i) seq.attention_mask[i] = 1;
    return seq;
}

/// [CLS] + first 126 pieces + [SEP], padded with [PAD] to exactly 128.
inline TokenizedSequence encode(std::string_view text, const Vocab& vocab) {
    const EncodedSeq e = encode_len(text, vocab, kSeqLen);
    TokenizedSequence seq;
    seq.n_real = e.n_real;
    for (size_t i = 0; i < kSeqLen; ++i) {
        seq.ids[i] = e.ids[i];
        seq.attention_mask[i] = e.attention_mask[i];
    }
    return seq;
}

}  // namespace tlm
