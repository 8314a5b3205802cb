"""Datasets, NoBox splits and CSV I/O.

All randomness in the package goes through :func:`make_rng`, which wraps
numpy's ``PCG64`` bit generator seeded through ``SeedSequence``.  Every
stochastic function takes either an integer seed or an existing
``numpy.random.Generator``; nothing touches global state.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ParseError


def make_rng(seed):
    """Return a ``numpy.random.Generator`` (PCG64) for ``seed``.

    A Generator passed in is returned unchanged so helpers can share a stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise InvalidArgument("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(int(seed)))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise InvalidArgument("points must be a nonempty (n, d) array with d >= 1")
        raw = np.asarray(self.labels)
        if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
            raise InvalidArgument("labels must be integers")
        labels = raw.astype(np.int64).reshape(-1)
        if labels.shape[0] != pts.shape[0]:
            raise InvalidArgument(
                f"{pts.shape[0]} points but {labels.shape[0]} labels")
        k = int(self.num_classes)
        if k < 2:
            raise InvalidArgument("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= k:
            raise InvalidArgument(f"labels must lie in 0..{k - 1}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("points must be finite")
        object.__setattr__(self, "points", _frozen(pts, float))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "num_classes", k)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def signs(self):
        """Binary labels mapped to -1/+1 (class 1 is +1)."""
        if self.num_classes != 2:
            raise InvalidArgument("signs are only defined for binary datasets")
        return 2.0 * self.labels - 1.0

    def subset(self, idx):
        idx = np.asarray(idx)
        return LabeledDataset(self.points[idx], self.labels[idx], self.num_classes)

    def with_points(self, points):
        return LabeledDataset(points, self.labels, self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash((self.points.tobytes(), self.labels.tobytes(), self.num_classes))


@dataclass(frozen=True, eq=False)
class SplitPlan:
    num_splits: int
    seed: int
    assignment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "assignment", _frozen(self.assignment, np.int64))

    def indices(self, i):
        return np.flatnonzero(self.assignment == i)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.num_splits)

    def __eq__(self, other):
        return (isinstance(other, SplitPlan) and self.num_splits == other.num_splits
                and self.seed == other.seed
                and np.array_equal(self.assignment, other.assignment))


@dataclass(frozen=True, eq=False)
class DiscreteJointDistribution:
    """Finite-support joint law: marginal over support points times p(y|x)."""

    support_points: np.ndarray
    conditional: np.ndarray
    marginal: np.ndarray

    def __post_init__(self):
        cond = np.asarray(self.conditional, dtype=float)
        marg = np.asarray(self.marginal, dtype=float).reshape(-1)
        pts = np.asarray(self.support_points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if cond.ndim != 2 or cond.shape[0] != marg.shape[0] or pts.shape[0] != marg.shape[0]:
            raise InvalidArgument("support, conditional and marginal sizes disagree")
        if np.any(cond < 0) or np.any(marg < 0):
            raise InvalidArgument("probabilities must be nonnegative")
        if np.any(np.abs(cond.sum(axis=1) - 1.0) > 1e-12) or abs(marg.sum() - 1.0) > 1e-12:
            raise InvalidArgument("probability vectors must sum to 1 (tolerance 1e-12)")
        object.__setattr__(self, "support_points", _frozen(pts, float))
        object.__setattr__(self, "conditional", _frozen(cond, float))
        object.__setattr__(self, "marginal", _frozen(marg, float))

    @property
    def num_classes(self):
        return self.conditional.shape[1]


def _check_even(n):
    if int(n) != n or n < 2 or n % 2:
        raise InvalidArgument(f"n must be an even integer >= 2, got {n}")
    return int(n)


def make_two_moons(n=200, noise=0.1, seed=0):
    """Two interleaving half circles.

    Class 0 lies on ``(cos t, sin t)`` and class 1 on
    ``(1 - cos t, 0.5 - sin t)`` with ``t ~ U[0, pi]``; isotropic Gaussian
    noise of std ``noise`` is added.  Class 0 rows come first.
    """
    n = _check_even(n)
    if not math.isfinite(noise) or noise < 0:
        raise InvalidArgument("noise must be finite and >= 0")
    rng = make_rng(seed)
    half = n // 2
    t = rng.uniform(0.0, math.pi, size=n)
    t0, t1 = t[:half], t[half:]
    pts = np.concatenate([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    labels = np.repeat([0, 1], half)
    return LabeledDataset(pts, labels, 2)


def make_gaussian_pair(n=400, mean_separation=1.0, sigma=1.0, dim=2, seed=0):
    """Balanced binary data: class 0 ~ N(-mu e1, s^2 I), class 1 ~ N(+mu e1, s^2 I)."""
    n = _check_even(n)
    if not (sigma > 0) or not math.isfinite(sigma):
        raise InvalidArgument("sigma must be > 0")
    if int(dim) != dim or dim < 1:
        raise InvalidArgument("dim must be >= 1")
    rng = make_rng(seed)
    half = n // 2
    mean = np.zeros(int(dim))
    mean[0] = mean_separation
    noise = sigma * rng.standard_normal((n, int(dim)))
    pts = np.concatenate([noise[:half] - mean, noise[half:] + mean])
    return LabeledDataset(pts, np.repeat([0, 1], half), 2)


def split(ds, k, seed=0):
    """Random, size-balanced partition of ``ds`` into ``k`` disjoint splits."""
    n = len(ds)
    if int(k) != k or k < 2:
        raise InvalidArgument("k must be an integer >= 2")
    if k > n:
        raise InvalidArgument(f"cannot split {n} examples into {k} splits")
    perm = make_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % int(k)
    return SplitPlan(int(k), int(seed), assignment)


# -- CSV ----------------------------------------------------------------------

def dataset_to_csv(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(ds.dim)] + ["y"])
    for x, y in zip(ds.points, ds.labels):
        w.writerow([repr(float(v)) for v in x] + [str(int(y))])
    return buf.getvalue()


def write_text_atomic(path, text):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_csv(ds, path):
    write_text_atomic(path, dataset_to_csv(ds))


def _parse_float(tok, line):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line)
    return v


def _parse_label(tok, line):
    tok = tok.strip()
    try:
        return int(tok, 10)
    except ValueError:
        raise ParseError(f"label must be a base-10 integer, got {tok!r}", line) from None


def parse_csv_rows(text):
    """Return ``(header, rows)`` from CSV text, rejecting ragged rows."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", lineno)
        body.append((lineno, row))
    return header, body


def load_csv(path, num_classes=None):
    """Read a dataset written by :func:`save_csv`.

    ``num_classes`` defaults to ``max(label) + 1`` (at least 2); when given,
    labels outside ``0..num_classes-1`` are a parse error.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    header, body = parse_csv_rows(text)
    d = len(header) - 1
    if d < 1 or header[-1] != "y" or header[:-1] != [f"x{j}" for j in range(d)]:
        raise ParseError("header must be x0,...,x{d-1},y", 1)
    if not body:
        raise ParseError("no data rows", 2)
    pts = np.empty((len(body), d))
    labels = np.empty(len(body), dtype=np.int64)
    for i, (lineno, row) in enumerate(body):
        pts[i] = [_parse_float(t, lineno) for t in row[:-1]]
        labels[i] = _parse_label(row[-1], lineno)
        if labels[i] < 0 or (num_classes is not None and labels[i] >= num_classes):
            raise ParseError(f"label {labels[i]} outside 0..{(num_classes or 0) - 1}", lineno)
    k = num_classes if num_classes is not None else max(2, int(labels.max()) + 1)
    return LabeledDataset(pts, labels, k)
