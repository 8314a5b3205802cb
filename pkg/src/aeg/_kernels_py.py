"""Pure-numpy reference for the compiled kernels in ``_kernels.pyx``."""
import numpy as np
from scipy.special import logsumexp

_CHUNK = 1 << 18  # grid points evaluated per batch


def _features(P, exponents, include_bias, deg):
    # P: (N, 2); same repeated-multiplication order as the compiled kernel
    p0 = [np.ones(P.shape[0])]
    p1 = [np.ones(P.shape[0])]
    for _ in range(deg):
        p0.append(p0[-1] * P[:, 0])
        p1.append(p1[-1] * P[:, 1])
    cols = [np.ones(P.shape[0])] if include_bias else []
    cols += [p0[a] * p1[b] for a, b in exponents]
    return np.column_stack(cols)


def grid_search(X, labels, W, exponents, include_bias, offsets):
    """For each row of ``X`` find the grid offset maximizing the loss.

    Grid node ``(i, j)`` is ``x + (offsets[i], offsets[j])``.  Returns the
    first maximizer in row-major ``(i, j)`` order and its loss.
    """
    n = X.shape[0]
    r = offsets.shape[0]
    deg = int(exponents.sum(axis=1).max())
    dx = np.repeat(offsets, r)
    dy = np.tile(offsets, r)
    per = max(1, _CHUNK // (r * r))
    out_idx = np.empty((n, 2), dtype=np.int64)
    out_loss = np.empty(n)
    for lo in range(0, n, per):
        hi = min(n, lo + per)
        P = np.empty(((hi - lo) * r * r, 2))
        P[:, 0] = (X[lo:hi, 0][:, None] + dx[None, :]).ravel()
        P[:, 1] = (X[lo:hi, 1][:, None] + dy[None, :]).ravel()
        S = _features(P, exponents, include_bias, deg) @ W.T
        lab = np.repeat(labels[lo:hi], r * r)
        if W.shape[0] == 1:
            L = np.logaddexp(0.0, -(2.0 * lab - 1.0) * S[:, 0])
        else:
            L = logsumexp(S, axis=1) - S[np.arange(S.shape[0]), lab]
        L = L.reshape(hi - lo, r * r)
        k = np.argmax(L, axis=1)
        out_idx[lo:hi, 0] = k // r
        out_idx[lo:hi, 1] = k % r
        out_loss[lo:hi] = L[np.arange(hi - lo), k]
    return out_idx, out_loss
