"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same semantics; the
compiled one is preferred at import time (see ``upl_lab.kernels``).
"""
from __future__ import annotations

import math

import numpy as np

NEG_INF = -math.inf


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def forward_backward(blank: np.ndarray, label: np.ndarray):
    """Return (alpha, beta, log_likelihood) for a (T, U+1) blank grid and a (T, U) label grid."""
    T, U1 = blank.shape
    bl = blank.tolist()
    lb = label.tolist()
    alpha = [[NEG_INF] * U1 for _ in range(T)]
    beta = [[NEG_INF] * U1 for _ in range(T)]
    for t in range(T):
        row = alpha[t]
        prev = alpha[t - 1] if t > 0 else None
        prev_bl = bl[t - 1] if t > 0 else None
        lrow = lb[t]
        for u in range(U1):
            if t == 0 and u == 0:
                row[0] = 0.0
                continue
            a = prev[u] + prev_bl[u] if prev is not None else NEG_INF
            b = row[u - 1] + lrow[u - 1] if u > 0 else NEG_INF
            row[u] = _logaddexp(a, b)
    for t in range(T - 1, -1, -1):
        row = beta[t]
        nxt = beta[t + 1] if t < T - 1 else None
        brow = bl[t]
        lrow = lb[t]
        for u in range(U1 - 1, -1, -1):
            if t == T - 1 and u == U1 - 1:
                row[u] = brow[u]
                continue
            a = nxt[u] + brow[u] if nxt is not None else NEG_INF
            b = row[u + 1] + lrow[u] if u < U1 - 1 else NEG_INF
            row[u] = _logaddexp(a, b)
    ll = alpha[T - 1][U1 - 1] + bl[T - 1][U1 - 1]
    return np.array(alpha, dtype=np.float64), np.array(beta, dtype=np.float64), ll


def edit_distance(ref, hyp):
    """Levenshtein alignment counts (S, D, I); ties prefer fewer insertions, then fewer deletions."""
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    # cell = (total, insertions, deletions, substitutions); tuple order is the tie-break order
    prev = [(j, j, 0, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            sub = 0 if ref[i - 1] == hyp[j - 1] else 1
            d = prev[j - 1]
            best = (d[0] + sub, d[1], d[2], d[3] + sub)
            d = prev[j]
            cand = (d[0] + 1, d[1], d[2] + 1, d[3])
            if cand[:3] < best[:3]:
                best = cand
            d = cur[j - 1]
            cand = (d[0] + 1, d[1] + 1, d[2], d[3])
            if cand[:3] < best[:3]:
                best = cand
            cur.append(best)
        prev = cur
    total, ins, dels, subs = prev[m]
    return subs, dels, ins
