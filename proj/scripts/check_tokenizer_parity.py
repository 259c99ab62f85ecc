#!/usr/bin/env python3
"""Sweeps the C++ tokenizer against the HuggingFace reference implementation.

Covers every encodable codepoint in small contexts plus a randomized
multi-character stress corpus (combining marks, Hangul, CJK, format
characters, greedy-segmentation torture). Any line where the two disagree is
printed. The per-codepoint alignment sets in gen_unicode_tables.py were
derived from this sweep.

Usage: python3 scripts/check_tokenizer_parity.py <path-to-C++-dump-binary>
where the binary reads paragraphs on stdin and writes space-joined pieces per
line (`tlm tokenize --stdin` does this).
"""

import random
import subprocess
import sys
import tempfile

from tokenizers import BertWordPieceTokenizer

VOCAB = "data/vocab/wordpiece_30522.txt"


def codepoint_lines():
    skip = {0x00, 0x0A, 0x0D}
    for cp in range(0x110000):
        if cp in skip or 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)
        yield f"x{ch}y za{ch}"


def stress_lines():
    rng = random.Random(7)
    pools = [
        list("abcdefghijklmnopqrstuvwxyz0123456789"),
        list("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"),
        ["é", "ü", "Å", "Ω", "K", "İ", "ß", "ẞ"],
        ["́", "̈", "̧", "ְ", "ཱ", "ི", "゙"],
        list("αβΣςΐабА"),
        list("一中国あカ한국"),
        [" ", "\t", " ", "　", " "],
        ["­", "​", "‍", "﻿"],
        ["\U0001f44d", "\U0001f1fa\U0001f1f8", "\U0001f9d1‍\U0001f4bb"],
    ]
    for _ in range(50000):
        n = rng.randint(1, 30)
        line = "".join(rng.choice(rng.choice(pools)) for _ in range(n))
        yield line.replace("\n", "").replace("\r", "")
    for ln in (99, 100, 101, 150):
        yield "a" * ln
        yield "한" * ln


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    dump_cmd = sys.argv[1]
    tok = BertWordPieceTokenizer(VOCAB, lowercase=True)
    lines = list(codepoint_lines()) + list(stress_lines())

    with tempfile.NamedTemporaryFile("w", encoding="utf-8", suffix=".txt", delete=False) as f:
        f.write("\n".join(lines) + "\n")
        inp = f.name
    cpp_out = subprocess.run(
        [dump_cmd, VOCAB], stdin=open(inp, "rb"), capture_output=True, check=True
    ).stdout.decode("utf-8").splitlines()

    bad = 0
    for line, got in zip(lines, cpp_out):
        want = " ".join(tok.encode(line, add_special_tokens=False).tokens)
        if want != got:
            bad += 1
            if bad <= 20:
                print(f"MISMATCH on {line!r}:\n  ref: {want}\n  cpp: {got}")
    print(f"{len(lines)} lines, {bad} mismatches")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
