#!/usr/bin/env python3
"""Regenerates include/tlm/unicode_data.hpp from Python's unicodedata.

The header feeds the text normalizer: character classes for cleaning and
splitting, canonical (NFD) decompositions, combining classes, and the
single-character lowercase map. Run from the repository root:

    python3 scripts/gen_unicode_tables.py
"""

import sys
import unicodedata

MAX_CP = 0x110000

# White_Space property (PropList.txt); unicodedata has no property API and
# str.isspace() disagrees with the property (it adds U+001C..001F).
WHITE_SPACE = (
    list(range(0x09, 0x0E))
    + [0x20, 0x85, 0xA0, 0x1680]
    + list(range(0x2000, 0x200B))
    + [0x2028, 0x2029, 0x202F, 0x205F, 0x3000]
)

# CJK ideograph blocks that get space-isolated, matching the uncased BERT
# reference tokenizer (which starts Extension E at U+2B920, not U+2B820).
# Must stay sorted for the binary search.
CJK_RANGES = sorted(
    [
        (0x3400, 0x4DBF),
        (0x4E00, 0x9FFF),
        (0xF900, 0xFAFF),
        (0x20000, 0x2A6DF),
        (0x2A700, 0x2B73F),
        (0x2B740, 0x2B81F),
        (0x2B920, 0x2CEAF),
        (0x2F800, 0x2FA1F),
    ]
)


def expand(ranges):
    out = set()
    for lo, hi in ranges:
        out.update(range(lo, hi + 1))
    return out


# The reference tokenizer's category tables predate this interpreter's
# unicodedata, so characters assigned or reclassified since then behave
# per the OLD tables. These alignment sets come from sweeping every
# codepoint against the reference (scripts/check_tokenizer_parity.py).
MN_KEEP = expand([
    (0x07FD, 0x07FD), (0x08D3, 0x08E1), (0x09FE, 0x09FE), (0x0AFA, 0x0AFF),
    (0x0B55, 0x0B55), (0x0C04, 0x0C04), (0x0D00, 0x0D00), (0x0D3B, 0x0D3C),
    (0x0D81, 0x0D81), (0x0EBA, 0x0EBA), (0x1885, 0x1886), (0x1ABF, 0x1AC0),
    (0x1DF6, 0x1DF9), (0x1DFB, 0x1DFB), (0xA82C, 0xA82C), (0xA8C5, 0xA8C5),
    (0xA8FF, 0xA8FF), (0xA9BD, 0xA9BD), (0x10D24, 0x10D27), (0x10EAB, 0x10EAC),
    (0x10F46, 0x10F50), (0x111C9, 0x111C9), (0x111CF, 0x111CF), (0x1123E, 0x1123E),
    (0x1133B, 0x1133B), (0x11438, 0x1143F), (0x11442, 0x11444), (0x11446, 0x11446),
    (0x1145E, 0x1145E), (0x1182F, 0x11837), (0x11839, 0x1183A), (0x1193B, 0x1193C),
    (0x1193E, 0x1193E), (0x11943, 0x11943), (0x119D4, 0x119D7), (0x119DA, 0x119DB),
    (0x119E0, 0x119E0), (0x11A01, 0x11A0A), (0x11A33, 0x11A38), (0x11A3B, 0x11A3E),
    (0x11A47, 0x11A47), (0x11A51, 0x11A56), (0x11A59, 0x11A5B), (0x11A8A, 0x11A96),
    (0x11A98, 0x11A99), (0x11C30, 0x11C36), (0x11C38, 0x11C3D), (0x11C3F, 0x11C3F),
    (0x11C92, 0x11CA7), (0x11CAA, 0x11CB0), (0x11CB2, 0x11CB3), (0x11CB5, 0x11CB6),
    (0x11D31, 0x11D36), (0x11D3A, 0x11D3A), (0x11D3C, 0x11D3D), (0x11D3F, 0x11D45),
    (0x11D47, 0x11D47), (0x11D90, 0x11D91), (0x11D95, 0x11D95), (0x11D97, 0x11D97),
    (0x11EF3, 0x11EF4), (0x16F4F, 0x16F4F), (0x16FE4, 0x16FE4), (0x1E000, 0x1E006),
    (0x1E008, 0x1E018), (0x1E01B, 0x1E021), (0x1E023, 0x1E024), (0x1E026, 0x1E02A),
    (0x1E130, 0x1E136), (0x1E2EC, 0x1E2EF), (0x1E944, 0x1E94A),
])
CONTROL_KEEP = expand([
    (0x08E2, 0x08E2), (0x110CD, 0x110CD), (0x13430, 0x13438),
])
PUNCT_DROP = expand([
    (0x09FD, 0x09FD), (0x0A76, 0x0A76), (0x0C77, 0x0C77), (0x0C84, 0x0C84),
    (0x2E43, 0x2E4F), (0x2E52, 0x2E52), (0x10EAD, 0x10EAD), (0x10F55, 0x10F59),
    (0x1144B, 0x1144F), (0x1145A, 0x1145B), (0x1145D, 0x1145D), (0x11660, 0x1166C),
    (0x1183B, 0x1183B), (0x11944, 0x11946), (0x119E2, 0x119E2), (0x11A3F, 0x11A46),
    (0x11A9A, 0x11A9C), (0x11A9E, 0x11AA2), (0x11C41, 0x11C45), (0x11C70, 0x11C71),
    (0x11EF7, 0x11EF8), (0x11FFF, 0x11FFF), (0x16E97, 0x16E9A), (0x16FE2, 0x16FE2),
    (0x1E95E, 0x1E95F),
])
PUNCT_ADD = {0x166D, 0x111C9}

HANGUL_S_BASE, HANGUL_S_COUNT = 0xAC00, 11172


def to_ranges(cps):
    out = []
    for cp in sorted(cps):
        if out and cp == out[-1][1] + 1:
            out[-1][1] = cp
        else:
            out.append([cp, cp])
    return out


def collect():
    removed_control = []
    mn = []
    punct = []
    for cp in range(MAX_CP):
        cat = unicodedata.category(chr(cp))
        if cat == "Cs":
            continue  # unreachable through valid UTF-8
        if cat == "Cc" and cp not in (0x09, 0x0A, 0x0D):
            removed_control.append(cp)
        elif cat in ("Cf", "Co") and cp not in CONTROL_KEEP:
            removed_control.append(cp)
        if cat == "Mn" and cp not in MN_KEEP:
            mn.append(cp)
        if (cat in ("Pc", "Pd", "Ps", "Pe", "Pi", "Pf", "Po") and cp not in PUNCT_DROP) or cp in PUNCT_ADD:
            punct.append(cp)
    return removed_control, mn, punct


def canonical_decomp_map():
    raw = {}
    for cp in range(MAX_CP):
        if HANGUL_S_BASE <= cp < HANGUL_S_BASE + HANGUL_S_COUNT:
            continue  # algorithmic at runtime
        d = unicodedata.decomposition(chr(cp))
        if d and not d.startswith("<"):
            raw[cp] = [int(h, 16) for h in d.split()]

    expanded = {}

    def expand(cp):
        if cp not in raw:
            return [cp]
        if cp in expanded:
            return expanded[cp]
        out = []
        for c in raw[cp]:
            out.extend(expand(c))
        expanded[cp] = out
        return out

    return {cp: expand(cp) for cp in raw}


def ccc_pairs():
    out = []
    for cp in range(MAX_CP):
        c = unicodedata.combining(chr(cp))
        if c:
            out.append((cp, c))
    return out


def lowercase_pairs():
    pairs = []
    multi = []
    for cp in range(MAX_CP):
        ch = chr(cp)
        lo = ch.lower()
        if lo == ch:
            continue
        if len(lo) == 1:
            pairs.append((cp, ord(lo)))
        else:
            multi.append((cp, [ord(c) for c in lo]))
    # The only unconditional one-to-many lowercase mapping is U+0130; the
    # normalizer special-cases it, so anything else here needs new handling.
    assert multi == [(0x0130, [0x69, 0x307])], multi
    return pairs


def fmt_u32(values, per_line=8):
    lines = []
    for i in range(0, len(values), per_line):
        lines.append("    " + ", ".join(f"0x{v:05X}" for v in values[i : i + per_line]) + ",")
    return "\n".join(lines)


def fmt_ranges(ranges):
    values = []
    for lo, hi in ranges:
        values.extend((lo, hi))
    return fmt_u32(values, per_line=8)


def main():
    removed_control, mn, punct = collect()
    decomp = canonical_decomp_map()
    ccc = ccc_pairs()
    lower = lowercase_pairs()

    rc_ranges = to_ranges(removed_control)
    mn_ranges = to_ranges(mn)
    p_ranges = to_ranges(punct)

    nfd_cps = sorted(decomp)
    pool = []
    offsets = []
    for cp in nfd_cps:
        offsets.append(len(pool))
        pool.extend(decomp[cp])
    offsets.append(len(pool))

    out = sys.stdout if len(sys.argv) > 1 and sys.argv[1] == "-" else open(
        "include/tlm/unicode_data.hpp", "w", encoding="utf-8"
    )

    w = out.write
    w("#pragma once\n\n")
    w("// Generated by scripts/gen_unicode_tables.py (Unicode %s). Do not edit.\n\n"
      % unicodedata.unidata_version)
    w("#include <cstdint>\n#include <cstddef>\n\nnamespace tlm {\nnamespace unicode_data {\n\n")

    w("// White_Space property members.\n")
    w(f"inline constexpr uint32_t kWhiteSpace[{len(WHITE_SPACE)}] = {{\n{fmt_u32(WHITE_SPACE)}\n}};\n\n")

    w("// Inclusive [lo, hi] pairs: Cc (minus tab/newline/cr), Cf, Co.\n")
    w(f"inline constexpr uint32_t kRemovedControlRanges[{2 * len(rc_ranges)}] = {{\n{fmt_ranges(rc_ranges)}\n}};\n\n")

    w("// Inclusive [lo, hi] pairs: category Mn (nonspacing marks).\n")
    w(f"inline constexpr uint32_t kMnRanges[{2 * len(mn_ranges)}] = {{\n{fmt_ranges(mn_ranges)}\n}};\n\n")

    w("// Inclusive [lo, hi] pairs: categories Pc, Pd, Ps, Pe, Pi, Pf, Po.\n")
    w(f"inline constexpr uint32_t kPunctRanges[{2 * len(p_ranges)}] = {{\n{fmt_ranges(p_ranges)}\n}};\n\n")

    cjk_vals = []
    for lo, hi in CJK_RANGES:
        cjk_vals.extend((lo, hi))
    w("// Inclusive [lo, hi] pairs: CJK ideograph blocks (space-isolated).\n")
    w(f"inline constexpr uint32_t kCjkRanges[{len(cjk_vals)}] = {{\n{fmt_u32(cjk_vals)}\n}};\n\n")

    w("// Canonical decompositions, fully expanded, Hangul excluded. Entry i\n")
    w("// decomposes kNfdCp[i] into kNfdPool[kNfdOff[i] .. kNfdOff[i+1]).\n")
    w(f"inline constexpr size_t kNfdCount = {len(nfd_cps)};\n")
    w(f"inline constexpr uint32_t kNfdCp[{len(nfd_cps)}] = {{\n{fmt_u32(nfd_cps)}\n}};\n")
    w(f"inline constexpr uint32_t kNfdOff[{len(offsets)}] = {{\n{fmt_u32(offsets)}\n}};\n")
    w(f"inline constexpr uint32_t kNfdPool[{len(pool)}] = {{\n{fmt_u32(pool)}\n}};\n\n")

    ccc_cps = [cp for cp, _ in ccc]
    ccc_vals = [v for _, v in ccc]
    w("// Nonzero canonical combining classes.\n")
    w(f"inline constexpr size_t kCccCount = {len(ccc)};\n")
    w(f"inline constexpr uint32_t kCccCp[{len(ccc_cps)}] = {{\n{fmt_u32(ccc_cps)}\n}};\n")
    w(f"inline constexpr uint8_t kCccVal[{len(ccc_vals)}] = {{\n{fmt_u32(ccc_vals)}\n}};\n\n")

    lo_from = [a for a, _ in lower]
    lo_to = [b for _, b in lower]
    w("// Single-character lowercase map (U+0130 is handled separately).\n")
    w(f"inline constexpr size_t kLowerCount = {len(lower)};\n")
    w(f"inline constexpr uint32_t kLowerFrom[{len(lo_from)}] = {{\n{fmt_u32(lo_from)}\n}};\n")
    w(f"inline constexpr uint32_t kLowerTo[{len(lo_to)}] = {{\n{fmt_u32(lo_to)}\n}};\n\n")

    w("}  // namespace unicode_data\n}  // namespace tlm\n")
    if out is not sys.stdout:
        out.close()
        print(
            f"wrote include/tlm/unicode_data.hpp: {len(rc_ranges)} control ranges, "
            f"{len(mn_ranges)} Mn ranges, {len(p_ranges)} punct ranges, "
            f"{len(nfd_cps)} decompositions ({len(pool)} pool), {len(ccc)} ccc, "
            f"{len(lower)} lowercase"
        )


if __name__ == "__main__":
    main()
