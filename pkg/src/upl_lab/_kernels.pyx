# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled transducer lattice recursions (log space)."""
import numpy as np

from libc.math cimport exp, log1p, INFINITY


cdef inline double _logaddexp(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def forward_backward(double[:, ::1] blank, double[:, ::1] label):
    """Return (alpha, beta, log_likelihood) for a (T, U+1) blank grid and a (T, U) label grid."""
    cdef Py_ssize_t T = blank.shape[0]
    cdef Py_ssize_t U1 = blank.shape[1]
    cdef Py_ssize_t t, u
    cdef double a, b
    alpha_np = np.empty((T, U1), dtype=np.float64)
    beta_np = np.empty((T, U1), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np
    with nogil:
        for t in range(T):
            for u in range(U1):
                if t == 0 and u == 0:
                    alpha[0, 0] = 0.0
                    continue
                a = -INFINITY
                b = -INFINITY
                if t > 0:
                    a = alpha[t - 1, u] + blank[t - 1, u]
                if u > 0:
                    b = alpha[t, u - 1] + label[t, u - 1]
                alpha[t, u] = _logaddexp(a, b)
        for t in range(T - 1, -1, -1):
            for u in range(U1 - 1, -1, -1):
                if t == T - 1 and u == U1 - 1:
                    beta[t, u] = blank[t, u]
                    continue
                a = -INFINITY
                b = -INFINITY
                if t < T - 1:
                    a = beta[t + 1, u] + blank[t, u]
                if u < U1 - 1:
                    b = beta[t, u + 1] + label[t, u]
                beta[t, u] = _logaddexp(a, b)
    ll = alpha[T - 1, U1 - 1] + blank[T - 1, U1 - 1]
    return alpha_np, beta_np, ll


def edit_distance(long[::1] ref, long[::1] hyp):
    """Levenshtein alignment counts (S, D, I); ties prefer fewer insertions, then fewer deletions."""
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j
    cost_np = np.zeros((n + 1, m + 1, 4), dtype=np.int64)
    cdef long[:, :, ::1] c = cost_np
    cdef long bt, bi, bd, bs, ct, ci, cd, cs, sub
    for i in range(1, n + 1):
        c[i, 0, 0] = i
        c[i, 0, 2] = i
    for j in range(1, m + 1):
        c[0, j, 0] = j
        c[0, j, 1] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = 0 if ref[i - 1] == hyp[j - 1] else 1
            # diagonal
            bt = c[i - 1, j - 1, 0] + sub
            bi = c[i - 1, j - 1, 1]
            bd = c[i - 1, j - 1, 2]
            bs = c[i - 1, j - 1, 3] + sub
            # deletion
            ct = c[i - 1, j, 0] + 1
            ci = c[i - 1, j, 1]
            cd = c[i - 1, j, 2] + 1
            cs = c[i - 1, j, 3]
            if ct < bt or (ct == bt and (ci < bi or (ci == bi and cd < bd))):
                bt, bi, bd, bs = ct, ci, cd, cs
            # insertion
            ct = c[i, j - 1, 0] + 1
            ci = c[i, j - 1, 1] + 1
            cd = c[i, j - 1, 2]
            cs = c[i, j - 1, 3]
            if ct < bt or (ct == bt and (ci < bi or (ci == bi and cd < bd))):
                bt, bi, bd, bs = ct, ci, cd, cs
            c[i, j, 0] = bt
            c[i, j, 1] = bi
            c[i, j, 2] = bd
            c[i, j, 3] = bs
    return int(c[n, m, 3]), int(c[n, m, 2]), int(c[n, m, 1])
