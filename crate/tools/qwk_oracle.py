#!/usr/bin/env python3
"""Brute-force quadratic weighted kappa over seeded random instances.

Everything is computed in exact rationals and converted to float at the end,
so the result does not share rounding behaviour with the Rust code.

Usage: qwk_oracle.py [--seed N] [--count N] [--out PATH]
"""
import argparse
import json
import random
from fractions import Fraction


def qwk(y, y_hat, r):
    n = len(y)
    observed = [[0] * r for _ in range(r)]
    for a, b in zip(y, y_hat):
        observed[a][b] += 1
    row = [sum(observed[i]) for i in range(r)]
    col = [sum(observed[i][j] for i in range(r)) for j in range(r)]
    num = Fraction(0)
    den = Fraction(0)
    for i in range(r):
        for j in range(r):
            w = Fraction((i - j) ** 2, (r - 1) ** 2)
            num += w * observed[i][j]
            # expected counts rescaled so they sum to n, like the observed ones
            den += w * Fraction(row[i] * col[j], n)
    if den == 0:
        return 1.0
    return float(1 - num / den)


def instance(rng):
    r = rng.randint(2, 6)
    n = rng.randint(1, 60)
    style = rng.random()
    if style < 0.1:
        v = rng.randrange(r)
        y = [v] * n
        y_hat = list(y) if rng.random() < 0.5 else [rng.randrange(r) for _ in range(n)]
    elif style < 0.4:
        y = [rng.randrange(r) for _ in range(n)]
        y_hat = [min(r - 1, max(0, v + rng.choice([-1, 0, 0, 1]))) for v in y]
    else:
        y = [rng.randrange(r) for _ in range(n)]
        y_hat = [rng.randrange(r) for _ in range(n)]
    return {"r": r, "y": y, "y_hat": y_hat}


HAND = [
    {"r": 4, "y": [0, 1, 2], "y_hat": [1, 1, 2]},
    {"r": 4, "y": [0, 1, 2, 3], "y_hat": [0, 1, 2, 3]},
    {"r": 4, "y": [0, 1, 2, 3], "y_hat": [3, 2, 1, 0]},
    {"r": 4, "y": [2, 2, 2], "y_hat": [2, 2, 2]},
    {"r": 4, "y": [0, 0, 3, 3], "y_hat": [3, 3, 0, 0]},
    {"r": 2, "y": [0, 1], "y_hat": [1, 0]},
    {"r": 4, "y": [0, 0, 0], "y_hat": [3, 3, 3]},
    {"r": 2, "y": [1, 1, 0, 0], "y_hat": [1, 0, 0, 1]},
    {"r": 2, "y": [1, 0, 1, 0, 1], "y_hat": [1, 0, 1, 0, 1]},
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240607)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--out", default="crates/core/tests/fixtures/qwk_oracle.json")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    cases = [dict(c) for c in HAND] + [instance(rng) for _ in range(args.count)]
    for c in cases:
        c["kappa"] = qwk(c["y"], c["y_hat"], c["r"])
    with open(args.out, "w") as f:
        json.dump({"seed": args.seed, "hand_cases": len(HAND), "cases": cases}, f, separators=(",", ":"))
        f.write("\n")


if __name__ == "__main__":
    main()
