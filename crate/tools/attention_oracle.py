#!/usr/bin/env python3
"""Scaled dot-product attention for q = k = I, v = [[1,2],[3,4]], computed
elementwise without numpy so it stays independent of any matrix library."""
import math

q = k = [[1.0, 0.0], [0.0, 1.0]]
v = [[1.0, 2.0], [3.0, 4.0]]
d_k = 2

out = []
for i in range(2):
    scores = [sum(q[i][t] * k[j][t] for t in range(d_k)) / math.sqrt(d_k) for j in range(2)]
    m = max(scores)
    ex = [math.exp(s - m) for s in scores]
    z = sum(ex)
    w = [e / z for e in ex]
    out.append([sum(w[j] * v[j][c] for j in range(2)) for c in range(2)])

for row in out:
    print(" ".join(repr(x) for x in row))
