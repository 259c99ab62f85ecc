#!/usr/bin/env python3
"""Generates the committed tokenizer golden files.

data/golden/golden_corpus.txt: 1,000 paragraphs, one per line, mixing plain
English, Unicode edge cases, and degenerate inputs.
data/golden/golden_tokens.txt: the matching space-joined piece strings,
produced by the HuggingFace reference WordPiece implementation over
data/vocab/wordpiece_30522.txt.

Run from the repository root: python3 scripts/make_golden.py
"""

import os
import random

from tokenizers import BertWordPieceTokenizer

VOCAB = "data/vocab/wordpiece_30522.txt"


def corpus_lines():
    rng = random.Random(42)
    vocab_words = [
        w for w in open(VOCAB, encoding="utf-8").read().splitlines()
        if w.isalpha() and w.isascii() and not w.startswith("##") and len(w) > 1
    ]
    rare = ["serendipitous", "unfathomable", "xylophonist", "counterrevolutionaries",
            "electroencephalography", "zqxjkv", "pseudopseudohypoparathyroidism"]
    accents = ["café", "naïve", "résumé", "über", "piñata",
               "garçon", "smörgåsbord", "İstanbul", "straße",
               "ẞTRASSE", "Ωhm", "20K", "Ångström"]
    cjk = "中国语言模型文字处理日本語"
    kana = "こんにちはカタカナ"
    hangul = "안녕하세요 한국어 문장"
    greek = "αλφα βητα ΣΥΡΙΖΑ σοφός"
    cyrillic = "привет мир язык"
    emoji = "\U0001f600 \U0001f44d\U0001f3fd \U0001f9d1‍\U0001f4bb \U0001f1fa\U0001f1f8"
    formats = "soft­hyphen zero​width joined‍word bom﻿mark"
    spaces = "tab\there nbsp space em space ideo　space line sep"

    lines = []
    for _ in range(700):  # plain-English paragraphs
        n = rng.randint(8, 60)
        ws = [rng.choice(vocab_words) for _ in range(n)]
        for i in range(0, len(ws), rng.randint(5, 9)):
            ws[i] = ws[i].capitalize()
        text = " ".join(ws)
        if rng.random() < 0.5:
            text = text.replace(" ", ", ", 1).replace(" ", ". ", 2) + "."
        lines.append(text)
    for _ in range(120):  # punctuation and numerals
        bits = []
        for _ in range(rng.randint(4, 25)):
            r = rng.random()
            if r < 0.3:
                bits.append(str(rng.randint(0, 99999)))
            elif r < 0.5:
                bits.append(rng.choice("!?\"'():;,.-/$%&*#@[]{}<>=+~^_|\\"))
            else:
                bits.append(rng.choice(vocab_words))
        lines.append(" ".join(bits))
    for _ in range(100):  # mixed scripts and hard cases
        parts = [rng.choice([cjk, kana, hangul, greek, cyrillic, emoji, formats, spaces,
                             " ".join(rng.sample(accents, 4)), " ".join(rng.sample(rare, 3))])
                 for _ in range(rng.randint(1, 4))]
        lines.append(" ".join(parts))
    lines += [
        "",  # empty paragraph
        " \t ",  # whitespace only
        "​­﻿",  # format characters only, tokenizes to nothing
        "a" * 100,
        "b" * 101,  # one char past the per-word limit
        "x" * 99 + "é",
        "[cls] [sep] [mask] [pad] [unk] [unused0]",  # bracket text stays plain text
        "##ing ##s leading continuation",
        "don't can't won't o'clock rock'n'roll",
        "e.g. i.e. etc. vs. U.S.A.",
        "http://example.com/path?q=1&r=2#frag",
        "snake_case camelCase kebab-case dotted.name",
        "3.14159 2,718 1e-9 0xFF 10:30",
        "中国" + "mixed" + "한글" + "words",
        "İıIi İ dotted",
        "Á é ö combining marks applied",
        "Å Å Ω Ω singletons",
    ]
    while len(lines) < 1000:
        lines.append(" ".join(rng.choice(vocab_words) for _ in range(rng.randint(5, 30))))
    assert len(lines) == 1000
    return lines


def main():
    lines = corpus_lines()
    tok = BertWordPieceTokenizer(VOCAB, lowercase=True)
    os.makedirs("data/golden", exist_ok=True)
    with open("data/golden/golden_corpus.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open("data/golden/golden_tokens.txt", "w", encoding="utf-8") as f:
        for line in lines:
            f.write(" ".join(tok.encode(line, add_special_tokens=False).tokens) + "\n")
    print("wrote data/golden/golden_corpus.txt and data/golden/golden_tokens.txt")


if __name__ == "__main__":
    main()
