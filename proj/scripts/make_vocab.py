#!/usr/bin/env python3
"""Builds data/vocab/wordpiece_30522.txt.

Trains an uncased WordPiece vocabulary with the HuggingFace `tokenizers`
trainer over locally available English text (package docs and docstrings),
then rewrites it into the canonical uncased layout: [PAD]=0, [unused0..98],
[UNK]=100, [CLS]=101, [SEP]=102, [MASK]=103, [unused99..993], content from
id 999, total size exactly 30,522.

Run from the repository root: python3 scripts/make_vocab.py
"""

import os
import re
import sys

from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, trainers

TOTAL = 30522
CONTENT_START = 999
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

DOC_ROOTS = [
    "/usr/local/lib/python3.10/dist-packages",
    "/usr/lib/python3.10",
    "/usr/share/doc",
]

TRIPLE = re.compile(r'("""(.*?)"""|\'\'\'(.*?)\'\'\')', re.DOTALL)


def harvest(out_path):
    doc_files = []
    py_files = []
    for root in DOC_ROOTS:
        for dirpath, _dirnames, filenames in os.walk(root):
            for fn in sorted(filenames):
                p = os.path.join(dirpath, fn)
                if fn.endswith((".rst", ".md", ".txt")):
                    doc_files.append(p)
                elif fn.endswith(".py"):
                    py_files.append(p)
    doc_files.sort()
    py_files.sort()

    total = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for p in doc_files:
            try:
                text = open(p, encoding="utf-8", errors="ignore").read(1 << 20)
            except OSError:
                continue
            out.write(text)
            out.write("\n")
            total += len(text)
        for p in py_files:
            try:
                text = open(p, encoding="utf-8", errors="ignore").read(1 << 19)
            except OSError:
                continue
            for m in TRIPLE.finditer(text):
                s = m.group(2) or m.group(3) or ""
                if len(s) > 40:  # skip trivial one-liners
                    out.write(s)
                    out.write("\n")
                    total += len(s)
    return total


def train(corpus_path):
    tok = Tokenizer(models.WordPiece(unk_token="[UNK]"))
    tok.normalizer = normalizers.BertNormalizer(lowercase=True)
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    trainer = trainers.WordPieceTrainer(
        vocab_size=TOTAL,
        special_tokens=SPECIALS,
        continuing_subword_prefix="##",
        min_frequency=2,
    )
    tok.train([corpus_path], trainer)
    vocab = tok.get_vocab()  # token -> id
    by_id = sorted(vocab.items(), key=lambda kv: kv[1])
    return [t for t, _ in by_id if t not in SPECIALS]


def main():
    corpus_path = "/tmp/vocab_corpus.txt"
    n = harvest(corpus_path)
    print(f"harvested {n} chars of training text")
    content = train(corpus_path)
    print(f"trained {len(content)} content pieces")

    content_slots = TOTAL - CONTENT_START
    if len(content) > content_slots:
        content = content[:content_slots]

    lines = ["[PAD]"]
    lines += [f"[unused{i}]" for i in range(99)]
    lines += ["[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    lines += [f"[unused{i}]" for i in range(99, 994)]
    lines += content
    next_unused = 994
    while len(lines) < TOTAL:
        lines.append(f"[unused{next_unused}]")
        next_unused += 1
    assert len(lines) == TOTAL, len(lines)
    assert len(set(lines)) == TOTAL, "duplicate tokens"

    os.makedirs("data/vocab", exist_ok=True)
    with open("data/vocab/wordpiece_30522.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print("wrote data/vocab/wordpiece_30522.txt")


if __name__ == "__main__":
    sys.exit(main())
