# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled grid-search kernel (see ``_kernels_py`` for the reference version)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p

cnp.import_array()


cdef inline double _softplus(double t) nogil:
    if t > 0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


def grid_search(const double[:, ::1] X, const long long[::1] labels, const double[:, ::1] W,
                const long long[:, ::1] exponents, bint include_bias, const double[::1] offsets):
    cdef Py_ssize_t n = X.shape[0], rows = W.shape[0], m = exponents.shape[0]
    cdef Py_ssize_t r = offsets.shape[0], deg = 0
    cdef Py_ssize_t e, i, j, a, c, k, off = 1 if include_bias else 0
    cdef double x0, x1, s, loss, best, mx, acc, y
    cdef long long lab
    for e in range(m):
        if exponents[e, 0] + exponents[e, 1] > deg:
            deg = exponents[e, 0] + exponents[e, 1]
    cdef double[::1] p0 = np.empty(deg + 1)
    cdef double[::1] p1 = np.empty(deg + 1)
    cdef double[::1] feat = np.empty(m + off)
    cdef double[::1] sc = np.empty(rows)
    out_idx = np.empty((n, 2), dtype=np.int64)
    out_loss = np.empty(n)
    cdef long long[:, ::1] oi = out_idx
    cdef double[::1] ol = out_loss
    with nogil:
        if off:
            feat[0] = 1.0
        for k in range(n):
            lab = labels[k]
            y = 2.0 * lab - 1.0
            best = -1.0
            oi[k, 0] = 0
            oi[k, 1] = 0
            for i in range(r):
                x0 = X[k, 0] + offsets[i]
                for j in range(r):
                    x1 = X[k, 1] + offsets[j]
                    p0[0] = 1.0
                    p1[0] = 1.0
                    for a in range(1, deg + 1):
                        p0[a] = p0[a - 1] * x0
                        p1[a] = p1[a - 1] * x1
                    for e in range(m):
                        feat[off + e] = p0[exponents[e, 0]] * p1[exponents[e, 1]]
                    for c in range(rows):
                        s = 0.0
                        for e in range(m + off):
                            s += W[c, e] * feat[e]
                        sc[c] = s
                    if rows == 1:
                        loss = _softplus(-y * sc[0])
                    else:
                        mx = sc[0]
                        for c in range(1, rows):
                            if sc[c] > mx:
                                mx = sc[c]
                        acc = 0.0
                        for c in range(rows):
                            acc += exp(sc[c] - mx)
                        loss = mx + log(acc) - sc[lab]
                    if loss > best:
                        best = loss
                        oi[k, 0] = i
                        oi[k, 1] = j
            ol[k] = best
    return out_idx, out_loss
