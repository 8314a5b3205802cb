"""Fixed polynomial feature maps.

Monomials are listed in graded lexicographic order, so the features of a
degree-``g1`` map are a prefix of those of any degree ``g2 >= g1`` map with
the same input dimension and bias setting.  A classifier over the smaller
map is reproduced over the larger one by zero-padding its weights
(:func:`embed_weights`).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument


def monomial_exponents(input_dim, degree):
    """Exponent table, one row per monomial of total degree 1..degree."""
    rows = []
    for k in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(input_dim), k):
            e = [0] * input_dim
            for j in combo:
                e[j] += 1
            rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, input_dim)


@dataclass(frozen=True)
class FeatureMap:
    input_dim: int
    degree: int = 1
    include_bias: bool = True
    kind: str = field(default="", compare=False)

    def __post_init__(self):
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise InvalidArgument("input_dim must be >= 1")
        if int(self.degree) != self.degree or self.degree < 1:
            raise InvalidArgument("degree must be >= 1")
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "include_bias", bool(self.include_bias))
        object.__setattr__(self, "kind", "linear" if self.degree == 1 else "polynomial")

    @classmethod
    def linear(cls, input_dim, include_bias=True):
        return cls(input_dim, 1, include_bias)

    @classmethod
    def polynomial(cls, input_dim, degree, include_bias=True):
        return cls(input_dim, degree, include_bias)

    @cached_property
    def exponents(self):
        e = monomial_exponents(self.input_dim, self.degree)
        e.setflags(write=False)
        return e

    @property
    def output_dim(self):
        return self.exponents.shape[0] + int(self.include_bias)

    @property
    def bias_offset(self):
        """Column index of the first non-constant feature."""
        return int(self.include_bias)

    @property
    def name(self):
        return "Linear" if self.degree == 1 else f"Poly{self.degree}"

    def to_dict(self):
        return {"kind": self.kind, "degree": self.degree,
                "input_dim": self.input_dim, "include_bias": self.include_bias}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "polynomial")
        degree = int(d.get("degree", 1))
        if kind == "linear" and degree != 1:
            raise InvalidArgument("a linear feature map has degree 1")
        return cls(int(d["input_dim"]), degree, bool(d.get("include_bias", True)))

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.ndim != 2 or X2.shape[1] != self.input_dim:
            raise InvalidArgument(
                f"expected inputs of dimension {self.input_dim}, got shape {X.shape}")
        return X2, single

    def _powers(self, X):
        # powers[a] = X**a by repeated multiplication, a = 0..degree
        pw = [np.ones_like(X)]
        for _ in range(self.degree):
            pw.append(pw[-1] * X)
        return pw

    def transform(self, X):
        """Features of one point ``(d,)`` or a batch ``(n, d)``."""
        X, single = self._check(X)
        pw = self._powers(X)
        n = X.shape[0]
        out = np.empty((n, self.output_dim))
        off = self.bias_offset
        if off:
            out[:, 0] = 1.0
        for m, e in enumerate(self.exponents):
            v = pw[e[0]][:, 0].copy()
            for k in range(1, self.input_dim):
                if e[k]:
                    v *= pw[e[k]][:, k]
            out[:, off + m] = v
        return out[0] if single else out

    def jacobian(self, X):
        """Exact d(feature)/d(input): ``(p, d)`` for one point, ``(n, p, d)`` for a batch."""
        X, single = self._check(X)
        pw = self._powers(X)
        n, d = X.shape
        jac = np.zeros((n, self.output_dim, d))
        off = self.bias_offset
        for m, e in enumerate(self.exponents):
            for j in range(d):
                if e[j] == 0:
                    continue
                v = e[j] * pw[e[j] - 1][:, j]
                for k in range(d):
                    if k != j and e[k]:
                        v = v * pw[e[k]][:, k]
                jac[:, off + m, j] = v
        return jac[0] if single else jac


def featurize(fmap, x):
    return fmap.transform(x)


def feature_jacobian(fmap, x):
    return fmap.jacobian(x)


def embed_weights(weights, small, large):
    """Zero-pad a weight matrix over ``small`` features into ``large`` features."""
    if (small.input_dim != large.input_dim or small.include_bias != large.include_bias
            or small.degree > large.degree):
        raise InvalidArgument("feature maps are not nested")
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    out = np.zeros((W.shape[0], large.output_dim))
    out[:, :small.output_dim] = W
    return out


def standardizer(X):
    """Per-coordinate affine map ``x -> (x - mean) / std`` fitted on ``X``.

    Applied to inputs before featurization it keeps every polynomial class
    closed (an affine change of variables preserves total degree).
    """
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return lambda Z: (np.asarray(Z, dtype=float) - mean) / std
