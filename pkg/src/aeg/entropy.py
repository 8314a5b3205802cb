"""F-entropy: the best expected cross-entropy reachable inside a hypothesis class.

For a class F of linear classifiers over a fixed feature map,
``H_F(p) = min_{f in F} E_p loss(f(x), y)``.  Numerically the minimum is
replaced by a converged training run, so every value here is an upper
bound that tightens with the training tolerance.  Larger (nested) classes
can only lower it, and it never drops below the expected conditional
entropy ``E_x H(p(.|x))``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import entr

from .classifier import cross_entropy, train_logreg
from .data import LabeledDataset
from .errors import InvalidArgument, Unsupported
from .features import embed_weights
from .game import TrainOptions, mixture_dataset
from .generator import AdversarialDataset


def _as_dataset(ds):
    return ds.adversarial if isinstance(ds, AdversarialDataset) else ds


def f_entropy_fit(ds, fmap, opts=None, weights=None, init=None):
    """Train to convergence and return ``(H_F, classifier, report)``."""
    opts = opts or TrainOptions()
    ds = _as_dataset(ds)
    f, rep = train_logreg(fmap, ds, opts.l2_reg, opts.max_iter, opts.tol, method=opts.method,
                          sample_weights=weights, init=init)
    return cross_entropy(f, ds, weights), f, rep


def f_entropy(ds, fmap, opts=None, weights=None):
    return f_entropy_fit(ds, fmap, opts, weights)[0]


def mixture_f_entropy(adv, ref, lam, fmap, opts=None):
    """F-entropy of ``p_g/(1+lam) + lam/(1+lam) D_ref``.

    ``(1 + lam)`` times this value is the minimized regularized payoff.
    """
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    adv_ds = _as_dataset(adv)
    mix, wts = mixture_dataset(adv_ds.points, adv_ds, ref, lam)
    return f_entropy(mix, fmap, opts, wts)


@dataclass
class EntropyEntry:
    name: str
    value: float
    iterations: int
    converged: bool
    report: object = None


@dataclass
class EntropyReport:
    entries: list = field(default_factory=list)
    conditional_entropy: float | None = None
    provenance: str = ""

    def values(self):
        return [e.value for e in self.entries]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "H_F", "iterations", "converged"])
        for e in self.entries:
            w.writerow([e.name, repr(float(e.value)), e.iterations, str(bool(e.converged)).lower()])
        return buf.getvalue()


def entropy_chain(ds, fmaps, opts=None, weights=None, provenance=""):
    """H_F for nested feature maps, smallest first.

    Each larger class is warm-started from the zero-padded solution of the
    previous one; since training never increases its objective, the computed
    values are non-increasing along the chain (exactly so when ``l2_reg=0``
    and up to the ridge when it is not).
    """
    fmaps = sorted(fmaps, key=lambda m: m.degree)
    report = EntropyReport(provenance=provenance)
    prev_f = None
    for fm in fmaps:
        init = None if prev_f is None else embed_weights(prev_f.weights, prev_f.feature_map, fm)
        h, f, rep = f_entropy_fit(ds, fm, opts, weights, init)
        report.entries.append(EntropyEntry(fm.name, h, rep.iterations, rep.converged, rep))
        prev_f = f
    return report


# -- discrete distributions ----------------------------------------------------

def conditional_entropy(dist):
    """``E_x H(p(.|x))`` in nats, with ``0 ln 0 = 0``."""
    return float(dist.marginal @ entr(dist.conditional).sum(axis=1))


def simplex_grid(num_classes, resolution):
    """All probability vectors with entries in ``{0, 1/R, ..., 1}``."""
    def counts(k, r):
        if k == 1:
            return np.array([[r]], dtype=np.int64)
        parts = []
        for a in range(r + 1):
            rest = counts(k - 1, r - a)
            parts.append(np.column_stack([np.full(rest.shape[0], a, dtype=np.int64), rest]))
        return np.vstack(parts)
    return counts(num_classes, resolution) / resolution


@dataclass
class CEMinimizerResult:
    probabilities: np.ndarray
    value: float
    per_point_values: np.ndarray
    grid_spacing: float


def brute_force_ce_minimizer(dist, grid_resolution=200):
    """Exhaustive search over a simplex grid for the per-point prediction
    minimizing the expected cross-entropy.

    Uses exact logarithms with ``0 ln 0 = 0``: a grid point that puts zero
    mass on a class of positive probability costs ``+inf`` and is never
    chosen, so the value is never below :func:`conditional_entropy`.
    """
    K = dist.num_classes
    if K > 4:
        raise Unsupported("brute-force search supports at most 4 classes")
    if int(grid_resolution) != grid_resolution or grid_resolution < 50:
        raise InvalidArgument("grid_resolution must be an integer >= 50")
    R = int(grid_resolution)
    Q = simplex_grid(K, R)
    with np.errstate(divide="ignore"):
        logQ = np.log(Q)
    out = np.empty((dist.conditional.shape[0], K))
    vals = np.empty(dist.conditional.shape[0])
    for i, p in enumerate(dist.conditional):
        pos = p > 0
        ce = -(logQ[:, pos] @ p[pos])
        k = int(np.argmin(ce))
        out[i] = Q[k]
        vals[i] = ce[k]
    return CEMinimizerResult(out, float(dist.marginal @ vals), vals, 1.0 / R)
