#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tlm/unicode_data.hpp"

namespace tlm {
namespace uni {

// ---------------------------------------------------------------------------
// UTF-8 codec. Invalid sequences decode to U+FFFD one byte at a time; the
// cleaner drops U+FFFD anyway, which matches reference behavior of rejecting
// malformed input.
// ---------------------------------------------------------------------------

inline void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string encode_utf8(const std::vector<uint32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (uint32_t cp : cps) append_utf8(out, cp);
    return out;
}

inline std::vector<uint32_t> decode_utf8(std::string_view s) {
    std::vector<uint32_t> out;
    out.reserve(s.size());
    size_t i = 0;
    const auto bad = [&]() {
        out.push_back(0xFFFD);
        ++i;
    };
    while (i < s.size()) {
        const uint8_t b0 = static_cast<uint8_t>(s[i]);
        if (b0 < 0x80) {
            out.push_back(b0);
            ++i;
            continue;
        }
        size_t need;
        uint32_t cp;
        if ((b0 & 0xE0) == 0xC0) {
            need = 1;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            need = 2;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            need = 3;
            cp = b0 & 0x07;
        } else {
            bad();
            continue;
        }
        if (i + need >= s.size()) {
            bad();
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k <= need; ++k) {
            const uint8_t bk = static_cast<uint8_t>(s[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
        // reject overlongs, surrogates, and out-of-range values
        if (!ok || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF) ||
            (need == 1 && cp < 0x80) || (need == 2 && cp < 0x800) || (need == 3 && cp < 0x10000)) {
            bad();
            continue;
        }
        out.push_back(cp);
        i += need + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Character classes (binary search over generated tables)
// ---------------------------------------------------------------------------

namespace detail {

template <size_t N>
bool in_ranges(const uint32_t (&ranges)[N], uint32_t cp) {
    size_t lo = 0, hi = N / 2;
    while (lo < hi) {
        const size_t mid = (lo + hi) / 2;
        if (cp < ranges[2 * mid]) {
            hi = mid;
        } else if (cp > ranges[2 * mid + 1]) {
            lo = mid + 1;
        } else {
            return true;
        }
    }
    return false;
}

}  // namespace detail

inline bool is_white_space(uint32_t cp) {
    for (uint32_t w : unicode_data::kWhiteSpace)
        if (w == cp) return true;
    return false;
}

inline bool is_removed_control(uint32_t cp) {
    return detail::in_ranges(unicode_data::kRemovedControlRanges, cp);
}

inline bool is_nonspacing_mark(uint32_t cp) { return detail::in_ranges(unicode_data::kMnRanges, cp); }

inline bool is_cjk_ideograph(uint32_t cp) { return detail::in_ranges(unicode_data::kCjkRanges, cp); }

/// Tokenizer punctuation: every ASCII non-alphanumeric graphic character plus
/// anything in a Unicode P* category.
inline bool is_punctuation(uint32_t cp) {
    if ((cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
        (cp >= 123 && cp <= 126))
        return true;
    return detail::in_ranges(unicode_data::kPunctRanges, cp);
}

inline uint8_t combining_class(uint32_t cp) {
    const uint32_t* begin = unicode_data::kCccCp;
    const uint32_t* end = begin + unicode_data::kCccCount;
    const uint32_t* it = std::lower_bound(begin, end, cp);
    if (it != end && *it == cp) return unicode_data::kCccVal[it - begin];
    return 0;
}

inline uint32_t lowercase_char(uint32_t cp) {
    const uint32_t* begin = unicode_data::kLowerFrom;
    const uint32_t* end = begin + unicode_data::kLowerCount;
    const uint32_t* it = std::lower_bound(begin, end, cp);
    if (it != end && *it == cp) return unicode_data::kLowerTo[it - begin];
    return cp;
}

// ---------------------------------------------------------------------------
// Canonical decomposition (NFD)
// ---------------------------------------------------------------------------

namespace detail {

constexpr uint32_t kHangulSBase = 0xAC00, kHangulLBase = 0x1100, kHangulVBase = 0x1161,
                   kHangulTBase = 0x11A7;
constexpr uint32_t kHangulVCount = 21, kHangulTCount = 28;
constexpr uint32_t kHangulNCount = kHangulVCount * kHangulTCount;  // 588
constexpr uint32_t kHangulSCount = 11172;

inline void decompose_cp(uint32_t cp, std::vector<uint32_t>& out) {
    if (cp >= kHangulSBase && cp < kHangulSBase + kHangulSCount) {
        const uint32_t si = cp - kHangulSBase;
        out.push_back(kHangulLBase + si / kHangulNCount);
        out.push_back(kHangulVBase + (si % kHangulNCount) / kHangulTCount);
        const uint32_t t = si % kHangulTCount;
        if (t) out.push_back(kHangulTBase + t);
        return;
    }
    const uint32_t* begin = unicode_data::kNfdCp;
    const uint32_t* end = begin + unicode_data::kNfdCount;
    const uint32_t* it = std::lower_bound(begin, end, cp);
    if (it != end && *it == cp) {
        const size_t idx = static_cast<size_t>(it - begin);
        for (uint32_t off = unicode_data::kNfdOff[idx]; off < unicode_data::kNfdOff[idx + 1]; ++off)
            out.push_back(unicode_data::kNfdPool[off]);
        return;
    }
    out.push_back(cp);
}

}  // namespace detail

/// Full canonical decomposition with canonical ordering of combining marks.
inline std::vector<uint32_t> nfd(const std::vector<uint32_t>& cps) {
    std::vector<uint32_t> out;
    out.reserve(cps.size() + cps.size() / 4);
    for (uint32_t cp : cps) detail::decompose_cp(cp, out);
    // canonical ordering: stable-sort maximal runs of nonzero-ccc characters
    for (size_t i = 1; i < out.size(); ++i) {
        const uint8_t c = combining_class(out[i]);
        if (c == 0) continue;
        size_t j = i;
        const uint32_t cp = out[i];
        while (j > 0 && combining_class(out[j - 1]) > c) {
            out[j] = out[j - 1];
            --j;
        }
        out[j] = cp;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization pipeline for the uncased tokenizer: clean, isolate CJK
// ideographs, strip accents via NFD, lowercase.
// ---------------------------------------------------------------------------

inline std::vector<uint32_t> normalize_uncased_cps(std::string_view text) {
    std::vector<uint32_t> cps = decode_utf8(text);

    std::vector<uint32_t> cleaned;
    cleaned.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (cp == 0 || cp == 0xFFFD || is_removed_control(cp)) continue;
        cleaned.push_back(is_white_space(cp) ? 0x20 : cp);
    }

    std::vector<uint32_t> padded;
    padded.reserve(cleaned.size());
    for (uint32_t cp : cleaned) {
        if (is_cjk_ideograph(cp)) {
            padded.push_back(0x20);
            padded.push_back(cp);
            padded.push_back(0x20);
        } else {
            padded.push_back(cp);
        }
    }

    std::vector<uint32_t> stripped;
    std::vector<uint32_t> decomposed = nfd(padded);
    stripped.reserve(decomposed.size());
    for (uint32_t cp : decomposed)
        if (!is_nonspacing_mark(cp)) stripped.push_back(cp);

    std::vector<uint32_t> lowered;
    lowered.reserve(stripped.size());
    for (uint32_t cp : stripped) {
        if (cp == 0x0130) {  // the lone one-to-many lowercase mapping
            lowered.push_back(0x69);
            lowered.push_back(0x307);
        } else {
            lowered.push_back(lowercase_char(cp));
        }
    }
    return lowered;
}

inline std::string normalize_uncased(std::string_view text) {
    return encode_utf8(normalize_uncased_cps(text));
}

/// Whitespace split followed by punctuation isolation; returns words as
/// code-point vectors ready for WordPiece.
inline std::vector<std::vector<uint32_t>> split_words(const std::vector<uint32_t>& cps) {
    std::vector<std::vector<uint32_t>> words;
    std::vector<uint32_t> cur;
    const auto flush = [&]() {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (uint32_t cp : cps) {
        if (is_white_space(cp)) {
            flush();
        } else if (is_punctuation(cp)) {
            flush();
            words.push_back({cp});
        } else {
            cur.push_back(cp);
        }
    }
    flush();
    return words;
}

}  // namespace uni
}  // namespace tlm
