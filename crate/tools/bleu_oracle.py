#!/usr/bin/env python3
"""Standalone corpus BLEU by direct n-gram counting, for seeded random corpora.

Conventions: one reference per candidate, uniform weights over orders 1..N,
clipped counts pooled over the corpus, brevity penalty exp(1 - r/c) when
c <= r. An order with no clipped match gets precision 1/(2c), c being the
total candidate length. A corpus whose candidates are all empty scores 0.

Usage: bleu_oracle.py [--seed N] [--count N] [--out PATH]
"""
import argparse
import json
import math
import random
from collections import Counter

MAX_ORDER = 4
WORDS = ["i", "feel", "tired", "sleep", "a", "the", "not", "."]


def grams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n):
    c = sum(len(t) for t in candidates)
    r = sum(len(t) for t in references)
    if c == 0:
        return 0.0
    logs = 0.0
    for order in range(1, n + 1):
        hit = 0
        for cand, ref in zip(candidates, references):
            ref_grams = grams(ref, order)
            for g, k in grams(cand, order).items():
                hit += min(k, ref_grams[g])
        tot = sum(max(0, len(cand) - order + 1) for cand in candidates)
        p = hit / tot if hit > 0 else 1.0 / (2 * c)
        logs += math.log(p)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(logs / n)


def sentence(rng, vocab):
    return [rng.choice(vocab) for _ in range(rng.randint(0, 12))]


def corpus(rng):
    vocab = WORDS[: rng.randint(2, len(WORDS))]
    size = rng.randint(1, 8)
    refs = [sentence(rng, vocab) for _ in range(size)]
    style = rng.random()
    if style < 0.05:
        cands = [[] for _ in range(size)]
    elif style < 0.35:
        # noisy copies of the references
        cands = []
        for ref in refs:
            cand = [w if rng.random() < 0.8 else rng.choice(vocab) for w in ref]
            if cand and rng.random() < 0.3:
                cand = cand[: rng.randint(0, len(cand))]
            cands.append(cand)
    else:
        cands = [sentence(rng, vocab) for _ in range(size)]
    return cands, refs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=8675309)
    ap.add_argument("--count", type=int, default=500)
    ap.add_argument("--out", default="crates/core/tests/fixtures/bleu_oracle.json")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    cases = []
    for _ in range(args.count):
        cands, refs = corpus(rng)
        scores = [bleu(cands, refs, n) for n in range(1, MAX_ORDER + 1)]
        cases.append({"candidates": cands, "references": refs, "bleu": scores})
    with open(args.out, "w") as f:
        json.dump({"seed": args.seed, "max_order": MAX_ORDER, "cases": cases}, f, separators=(",", ":"))
        f.write("\n")


if __name__ == "__main__":
    main()
