"""Linear classifiers over fixed features.

Binary problems (``num_classes == 2``) store a single weight row ``w`` and
score ``s = w . psi(x)``; label 1 is the positive class (``y = +1``) and
label 0 the negative one.  Multiclass problems store a ``K x p`` matrix and
use the softmax cross-entropy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.special import expit, logsumexp, softmax

from .data import LabeledDataset
from .errors import InvalidArgument, NumericalFailure, UnboundedMinimizer
from .features import FeatureMap


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    feature_map: FeatureMap
    weights: np.ndarray
    num_classes: int = 2
    l2_reg: float = 0.0
    trained_with: dict = field(default_factory=dict)
    # "pool-target" marks members of a NoBox target pool
    role: str = "model"
    source_id: str = ""

    def __post_init__(self):
        W = np.atleast_2d(np.array(self.weights, dtype=float, copy=True))
        rows = 1 if self.num_classes == 2 else self.num_classes
        if self.num_classes < 2:
            raise InvalidArgument("num_classes must be >= 2")
        if W.shape != (rows, self.feature_map.output_dim):
            raise InvalidArgument(
                f"weights must have shape {(rows, self.feature_map.output_dim)}, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise InvalidArgument("weights must be finite")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @classmethod
    def zeros(cls, feature_map, num_classes=2, **kw):
        rows = 1 if num_classes == 2 else num_classes
        return cls(feature_map, np.zeros((rows, feature_map.output_dim)), num_classes, **kw)

    @property
    def binary(self):
        return self.num_classes == 2

    @property
    def w(self):
        """Binary weight vector."""
        if not self.binary:
            raise InvalidArgument("w is only defined for binary classifiers")
        return self.weights[0]

    def scores(self, X):
        Psi = self.feature_map.transform(np.atleast_2d(X))
        return Psi @ self.weights.T

    def with_weights(self, W, **kw):
        return replace(self, weights=np.asarray(W, dtype=float).reshape(self.weights.shape), **kw)

    # -- serialization ---------------------------------------------------------

    def to_dict(self):
        d = {
            "feature_map": self.feature_map.to_dict(),
            "num_classes": self.num_classes,
            "weights": [float(v) for v in self.weights.ravel()],
            "l2_reg": float(self.l2_reg),
            "trained_with": dict(self.trained_with),
        }
        if self.source_id:
            d["source_id"] = self.source_id
        if self.role != "model":
            d["role"] = self.role
        return d

    @classmethod
    def from_dict(cls, d):
        fmap = FeatureMap.from_dict(d["feature_map"])
        k = int(d["num_classes"])
        rows = 1 if k == 2 else k
        W = np.array(d["weights"], dtype=float).reshape(rows, fmap.output_dim)
        return cls(fmap, W, k, float(d.get("l2_reg", 0.0)), dict(d.get("trained_with", {})),
                   d.get("role", "model"), d.get("source_id", ""))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainReport:
    final_objective: float
    iterations: int
    grad_norm_or_subgrad_gap: float
    converged: bool
    algorithm: str = ""
    best_objective: float = math.nan
    message: str = ""


# -- losses -------------------------------------------------------------------

def _check_compatible(f, ds):
    if ds.dim != f.feature_map.input_dim:
        raise InvalidArgument(
            f"dataset dimension {ds.dim} != feature map input dimension {f.feature_map.input_dim}")
    if ds.num_classes != f.num_classes:
        raise InvalidArgument("dataset and classifier disagree on num_classes")


def _check_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgument("example weights must be a probability vector over the dataset")
    return w


def losses_from_scores(S, labels, binary):
    """Per-example cross-entropy from a score matrix ``(n, rows)``."""
    if binary:
        y = 2.0 * labels - 1.0
        return np.logaddexp(0.0, -y * S[:, 0])
    return logsumexp(S, axis=1) - S[np.arange(S.shape[0]), labels]


def per_example_losses(f, X, labels):
    return losses_from_scores(f.scores(X), np.asarray(labels), f.binary)


def cross_entropy(f, ds, weights=None):
    """(Weighted) mean cross-entropy of ``f`` on ``ds``."""
    _check_compatible(f, ds)
    losses = per_example_losses(f, ds.points, ds.labels)
    if weights is None:
        return float(losses.mean())
    return float(_check_weights(weights, len(ds)) @ losses)


def _score_residual(S, labels, binary):
    """d(loss_i)/d(score_i), shape ``(n, rows)``."""
    if binary:
        y = 2.0 * labels - 1.0
        return (-y * expit(-y * S[:, 0]))[:, None]
    P = softmax(S, axis=1)
    P[np.arange(S.shape[0]), labels] -= 1.0
    return P


def input_gradient(f, X, labels):
    """Per-example gradient of the loss with respect to the input, ``(n, d)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).reshape(-1)
    R = _score_residual(f.scores(X), labels, f.binary)       # (n, rows)
    dpsi = R @ f.weights                                      # (n, p)
    J = f.feature_map.jacobian(X)                             # (n, p, d)
    return np.einsum("np,npd->nd", dpsi, J)


def loss_gradient(f, ds, weights=None, wrt_inputs=False):
    """Gradient of :func:`cross_entropy` in the weights.

    With ``wrt_inputs=True`` also returns the per-example input gradients.
    """
    _check_compatible(f, ds)
    w = _check_weights(weights, len(ds))
    Psi = f.feature_map.transform(ds.points)
    R = _score_residual(Psi @ f.weights.T, ds.labels, f.binary)
    G = (R * w[:, None]).T @ Psi
    if wrt_inputs:
        return G, input_gradient(f, ds.points, ds.labels)
    return G


def predict(f, x):
    """Class index; a zero binary score (or a tie) goes to the smaller index."""
    S = f.scores(x)
    if f.binary:
        out = (S[:, 0] > 0).astype(np.int64)
    else:
        out = np.argmax(S, axis=1)
    return int(out[0]) if np.ndim(x) == 1 else out


def error_rate(f, ds):
    _check_compatible(f, ds)
    return float(np.mean(predict(f, ds.points) != ds.labels))


# -- plain (ridge) logistic regression -----------------------------------------

class _Objective:
    """Weighted cross-entropy + (l2/2)||W||^2 over a fixed design matrix."""

    def __init__(self, Psi, labels, weights, l2, rows):
        self.Psi, self.labels, self.wts, self.l2, self.rows = Psi, labels, weights, l2, rows
        self.binary = rows == 1

    def value(self, W):
        S = self.Psi @ W.T
        return float(self.wts @ losses_from_scores(S, self.labels, self.binary)
                     + 0.5 * self.l2 * np.sum(W * W))

    def data_value(self, W):
        return float(self.wts @ losses_from_scores(self.Psi @ W.T, self.labels, self.binary))

    def grad(self, W):
        R = _score_residual(self.Psi @ W.T, self.labels, self.binary)
        return (R * self.wts[:, None]).T @ self.Psi + self.l2 * W

    def hessian(self, W):
        Psi, p = self.Psi, self.Psi.shape[1]
        S = Psi @ W.T
        if self.binary:
            s = expit(S[:, 0])
            c = self.wts * s * (1.0 - s)
            H = (Psi * c[:, None]).T @ Psi
        else:
            P = softmax(S, axis=1)
            K = self.rows
            H = np.empty((K * p, K * p))
            for a in range(K):
                for b in range(a, K):
                    c = self.wts * P[:, a] * ((a == b) - P[:, b])
                    blk = (Psi * c[:, None]).T @ Psi
                    H[a * p:(a + 1) * p, b * p:(b + 1) * p] = blk
                    H[b * p:(b + 1) * p, a * p:(a + 1) * p] = blk.T
        return H + self.l2 * np.eye(H.shape[0])


def _newton_direction(obj, W, G):
    H = obj.hessian(W)
    g = G.ravel()
    jitter = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
    try:
        d = -np.linalg.solve(H + jitter * np.eye(H.shape[0]), g)
    except np.linalg.LinAlgError:
        d = -np.linalg.lstsq(H, g, rcond=None)[0]
    if not np.all(np.isfinite(d)) or d @ g >= 0:
        d = -g
    return d.reshape(W.shape)


def minimize_logistic(Psi, labels, rows, l2_reg=0.0, sample_weights=None, init=None,
                      max_iter=200, tol=1e-8, step=1.0, method="newton"):
    """Descent with Armijo backtracking; returns ``(W, TrainReport)``.

    ``method="gd"`` uses the negative gradient, ``"newton"`` the Newton
    direction (falling back to the gradient when that is not a descent
    direction).  Accepted steps never increase the objective.
    """
    n = Psi.shape[0]
    wts = _check_weights(sample_weights, n)
    obj = _Objective(Psi, np.asarray(labels), wts, float(l2_reg), rows)
    W = np.zeros((rows, Psi.shape[1])) if init is None else np.array(init, dtype=float).reshape(rows, -1)
    fval = obj.value(W)
    if not math.isfinite(fval):
        raise NumericalFailure("non-finite training objective", 0)
    t_gd = step
    it = 0
    msg = "max_iter reached"
    G = obj.grad(W)
    gnorm = float(np.linalg.norm(G))
    while it < max_iter:
        if gnorm <= tol:
            msg = "gradient tolerance reached"
            break
        if method == "newton":
            D, t = _newton_direction(obj, W, G), 1.0
        elif method == "gd":
            D, t = -G, t_gd
        else:
            raise InvalidArgument(f"unknown method {method!r}")
        slope = float(np.sum(G * D))
        accepted = False
        for _ in range(60):
            Wn = W + t * D
            fn = obj.value(Wn)
            if not math.isfinite(fn):
                raise NumericalFailure("non-finite training objective", it + 1)
            if fn <= fval + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted or fn >= fval:
            # no representable decrease left along D
            if accepted and fn == fval:
                W = Wn
            msg = "line search stalled"
            break
        W, fval = Wn, fn
        if method == "gd":
            t_gd = min(2.0 * t, 1e6)
        G = obj.grad(W)
        gnorm = float(np.linalg.norm(G))
    else:
        if gnorm <= tol:
            msg = "gradient tolerance reached"
    return W, TrainReport(fval, it, gnorm, gnorm <= tol, f"logreg-{method}", fval, msg), obj


def train_logreg(fmap, ds, l2_reg=0.0, max_iter=200, tol=1e-8, step=1.0, method="newton",
                 sample_weights=None, init=None, seed=None):
    """Fit a (ridge) logistic / softmax regression over ``fmap`` features.

    Minimizes ``weighted mean cross-entropy + l2_reg/2 * ||W||_F^2`` from
    ``init`` (zeros by default).  Deterministic.
    """
    if l2_reg < 0:
        raise InvalidArgument("l2_reg must be >= 0")
    if ds.dim != fmap.input_dim:
        raise InvalidArgument("dataset dimension does not match the feature map")
    rows = 1 if ds.num_classes == 2 else ds.num_classes
    Psi = fmap.transform(ds.points)
    W, report, _ = minimize_logistic(Psi, ds.labels, rows, l2_reg, sample_weights, init,
                                     max_iter, tol, step, method)
    clf = LinearClassifier(fmap, W, ds.num_classes, float(l2_reg),
                           {"algorithm": report.algorithm, "seed": seed})
    return clf, report


# -- l1-robust logistic regression -------------------------------------------

def _robust_parts(Psi, y, eps, mask):
    def value(w, l2):
        m = -y * (Psi @ w) + eps * np.abs(w[mask]).sum()
        return float(np.mean(np.logaddexp(0.0, m)) + 0.5 * l2 * (w @ w))

    def smooth_parts(w):
        m = -y * (Psi @ w) + eps * np.abs(w[mask]).sum()
        s = expit(m)
        a = (s * -y) @ Psi / Psi.shape[0]
        return a, float(s.mean())

    return value, smooth_parts


def robust_objective(w, ds, eps, include_bias=True, l2_reg=0.0):
    """Mean ``log(1 + exp(-y w.psi(x) + eps ||w_nonbias||_1))`` + ridge."""
    fmap = FeatureMap.linear(ds.dim, include_bias)
    Psi = fmap.transform(ds.points)
    mask = np.arange(fmap.output_dim) >= fmap.bias_offset
    value, _ = _robust_parts(Psi, ds.signs, eps, mask)
    return value(np.asarray(w, dtype=float).reshape(-1), l2_reg)


def _min_norm_subgradient(w, a, b, eps, l2, mask):
    g = a + l2 * w
    out = g.copy()
    nb = mask & (w != 0)
    out[nb] += eps * b * np.sign(w[nb])
    zero = mask & (w == 0)
    out[zero] = np.maximum(0.0, np.abs(g[zero]) - eps * b)
    return float(np.linalg.norm(out))


def _robustly_separable(Psi, y, eps, mask):
    """True when some direction v has y v.psi - eps||v||_1 > 0 on every example."""
    n, p = Psi.shape
    k = int(mask.sum())
    # variables: v (p), t (abs bound on masked v, k), margin r; maximize r
    c = np.zeros(p + k + 1)
    c[-1] = -1.0
    A, bnd = [], []
    for i in range(n):
        row = np.zeros(p + k + 1)
        row[:p] = -y[i] * Psi[i]
        row[p:p + k] = eps
        row[-1] = 1.0
        A.append(row)
        bnd.append(0.0)
    idx = np.flatnonzero(mask)
    for j, col in enumerate(idx):
        for sgn in (1.0, -1.0):
            row = np.zeros(p + k + 1)
            row[col] = sgn
            row[p + j] = -1.0
            A.append(row)
            bnd.append(0.0)
    bounds = [(-1, 1)] * p + [(0, 1)] * k + [(None, 1)]
    res = optimize.linprog(c, A_ub=np.array(A), b_ub=np.array(bnd), bounds=bounds,
                           method="highs")
    return res.status == 0 and -res.fun > 1e-9


def train_robust_logreg_l1(ds, eps, max_iter=20000, step=0.5, l2_reg=0.0, include_bias=True,
                           polish=True, seed=None):
    """l1-robust logistic regression (the optimal classifier of the linear game).

    Minimizes ``mean log(1 + exp(-y w.x + eps ||w||_1)) + l2/2 ||w||^2`` with
    the bias excluded from the l1 term.  The main solver is subgradient
    descent with step ``step / sqrt(t)`` returning the running average of the
    iterates.  With ``polish`` the average is then refined by L-BFGS-B on the
    equivalent smooth split ``w = w_plus - w_minus`` (kept only if it lowers
    the objective), which lands exactly on zero coordinates when the optimum
    has them.
    """
    if ds.num_classes != 2:
        raise InvalidArgument("robust logistic regression needs binary labels")
    if eps < 0 or not math.isfinite(eps):
        raise InvalidArgument("eps must be finite and >= 0")
    if l2_reg < 0:
        raise InvalidArgument("l2_reg must be >= 0")
    fmap = FeatureMap.linear(ds.dim, include_bias)
    Psi = fmap.transform(ds.points)
    y = ds.signs
    p = fmap.output_dim
    mask = np.arange(p) >= fmap.bias_offset
    value, smooth_parts = _robust_parts(Psi, y, eps, mask)

    if l2_reg == 0 and _robustly_separable(Psi, y, eps, mask):
        raise UnboundedMinimizer(
            "data is separable with margin > eps: the objective has no finite minimizer; "
            "use l2_reg > 0 or less separable data")

    w = np.zeros(p)
    avg = np.zeros(p)
    best = value(w, l2_reg)
    for t in range(1, max_iter + 1):
        a, b = smooth_parts(w)
        g = a + eps * b * np.where(mask, np.sign(w), 0.0) + l2_reg * w
        w = w - step / math.sqrt(t) * g
        avg += (w - avg) / t
        if not np.all(np.isfinite(w)):
            raise NumericalFailure("non-finite iterate", t)
        if np.linalg.norm(w) > 1e6:
            raise UnboundedMinimizer(
                "iterates diverged past 1e6: no finite minimizer detected; "
                "use l2_reg > 0 or less separable data", t)
        if t % 100 == 0 or t == max_iter:
            best = min(best, value(avg, l2_reg))
    w_out = avg
    algo = "subgradient-avg"
    if polish:
        w_pol = _polish(Psi, y, eps, l2_reg, mask, avg)
        if value(w_pol, l2_reg) <= value(avg, l2_reg):
            w_out, algo = w_pol, "subgradient-avg+lbfgsb-polish"
    fval = value(w_out, l2_reg)
    best = min(best, fval)
    a, b = smooth_parts(w_out)
    gap = _min_norm_subgradient(w_out, a, b, eps, l2_reg, mask)
    clf = LinearClassifier(fmap, w_out.reshape(1, -1), 2, float(l2_reg),
                           {"algorithm": algo, "epsilon": float(eps), "seed": seed})
    return clf, TrainReport(fval, max_iter, gap, gap <= 1e-6, algo, best,
                            "min-norm subgradient reported")


def _polish(Psi, y, eps, l2, mask, w0):
    p = Psi.shape[1]
    free = ~mask
    n = Psi.shape[0]

    def unpack(z):
        return z[:p] - z[p:]

    def fun(z):
        w = unpack(z)
        m = -y * (Psi @ w) + eps * z[p:][mask].sum() + eps * z[:p][mask].sum()
        s = expit(m)
        val = np.mean(np.logaddexp(0.0, m)) + 0.5 * l2 * (w @ w)
        a = (s * -y) @ Psi / n + l2 * w
        b = s.mean()
        gp = a + eps * b * mask
        gm = -a + eps * b * mask
        return val, np.concatenate([gp, gm])

    z0 = np.concatenate([np.maximum(w0, 0), np.maximum(-w0, 0)])
    # bias lives in the plus block only
    z0[p:][free] = 0.0
    z0[:p][free] = w0[free]
    bounds = [(None, None) if free[j] else (0, None) for j in range(p)]
    bounds += [(0, 0) if free[j] else (0, None) for j in range(p)]
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 2000, "ftol": 0.0, "gtol": 1e-13})
    return unpack(res.x)
