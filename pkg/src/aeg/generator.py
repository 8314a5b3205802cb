"""Budget-constrained attack generators (l-infinity ball of radius eps).

Every generator exposes ``perturb(X, labels, rng) -> X_adv`` on a batch
with integer labels; :func:`attack_dataset` wraps the result in an
:class:`AdversarialDataset` after checking feasibility.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from . import kernels
from .classifier import LinearClassifier, input_gradient, per_example_losses
from .data import LabeledDataset, make_rng, parse_csv_rows, write_text_atomic
from .errors import ContractViolation, InternalError, InvalidArgument, ParseError

FEASIBILITY_SLACK = 1e-12
# tanh pre-activations are clipped here so eps * tanh(a) stays strictly below eps
_TANH_CLIP = 15.0


@dataclass(frozen=True)
class AttackBudget:
    epsilon: float
    norm: str = "linf"

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidArgument("epsilon must be finite and >= 0")
        if self.norm != "linf":
            raise InvalidArgument("only the l-infinity budget is supported")


def _budget(b):
    return b if isinstance(b, AttackBudget) else AttackBudget(float(b))


def ensure_attack_source(f):
    """Refuse to build an attack from a NoBox pool member."""
    if f is not None and getattr(f, "role", "") == "pool-target":
        raise ContractViolation(
            f"attack construction received pool target {f.source_id!r}; "
            "NoBox attacks may only use the representative classifier")
    return f


# -- closed form and the dual-norm identity ----------------------------------

def _nonbias(w, include_bias=False):
    if isinstance(w, LinearClassifier):
        if not w.binary or w.feature_map.degree != 1:
            raise InvalidArgument("closed-form attacks need a binary linear classifier")
        return w.w[w.feature_map.bias_offset:]
    w = np.asarray(w, dtype=float).reshape(-1)
    return w[1:] if include_bias else w


def closed_form_attack(w, budget, x, y):
    """Optimal l-inf attack on a binary linear model: ``x - y * eps * sign(w)``.

    ``y`` is +1/-1 and ``w`` holds the non-bias weights; ``sign(0) = 0``.
    """
    w = _nonbias(w)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.shape[0]:
        raise InvalidArgument("weight and input dimensions differ")
    y = np.asarray(y, dtype=float)
    if np.ndim(x) == 2:
        y = y.reshape(-1, 1)
    return x - y * _budget(budget).epsilon * np.sign(w)


def inner_max_value(w, budget):
    """``max y w.delta`` over ``||delta||_inf <= eps``, i.e. ``eps * ||w||_1``."""
    return _budget(budget).epsilon * float(np.abs(_nonbias(w)).sum())


# -- search-based maximizers --------------------------------------------------

def grid_offsets(eps, resolution):
    if int(resolution) != resolution or resolution < 3 or resolution % 2 == 0:
        raise InvalidArgument("resolution must be an odd integer >= 3")
    h = (int(resolution) - 1) // 2
    return eps * (np.arange(-h, h + 1) / h)


def grid_attack_batch(f, budget, X, labels, resolution=41, backend=None):
    """Vectorized :func:`grid_attack`; returns ``(X_adv, losses)``."""
    eps = _budget(budget).epsilon
    fm = f.feature_map
    if fm.input_dim != 2:
        raise InvalidArgument("grid search needs 2D inputs")
    offs = grid_offsets(eps, resolution)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    idx, losses = kernels.grid_search(X, np.asarray(labels).reshape(-1), f.weights,
                                      fm.exponents, fm.include_bias, offs, backend=backend)
    return X + np.column_stack([offs[idx[:, 0]], offs[idx[:, 1]]]), losses


def grid_attack(f, budget, x, y, resolution=41):
    """Best point of the ``resolution x resolution`` grid over the eps-box.

    Nodes are ``x + eps * (i/h, j/h)`` for ``i, j in -h..h``; the clean point
    is a node, so the result is never worse than ``x``.  Ties go to the
    smallest ``(i, j)``.
    """
    x_adv, _ = grid_attack_batch(f, budget, np.asarray(x, dtype=float).reshape(1, -1),
                                 [y], resolution)
    return x_adv[0]


def _sign_ascent(f, X, start, labels, eps, steps, step_size):
    cur = start.copy()
    cur_loss = per_example_losses(f, cur, labels)
    step = np.full(X.shape[0], eps if step_size is None else float(step_size))
    for _ in range(int(steps)):
        g = np.sign(input_gradient(f, cur, labels))
        cand = np.clip(cur + step[:, None] * g, X - eps, X + eps)
        cand_loss = per_example_losses(f, cand, labels)
        better = cand_loss > cur_loss
        cur[better] = cand[better]
        cur_loss[better] = cand_loss[better]
        step[~better] *= 0.5
    return cur, cur_loss


def gradient_attack_batch(f, budget, X, labels, steps=50, step_size=None, corner_starts=None):
    """Vectorized :func:`gradient_attack`; returns ``(X_adv, losses)``."""
    eps = _budget(budget).epsilon
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).reshape(-1)
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    best, best_loss = _sign_ascent(f, X, X, labels, eps, steps, step_size)
    if eps == 0:
        return best, best_loss
    d = X.shape[1]
    if corner_starts is None:
        corner_starts = d <= 4
    if corner_starts:
        for corner in itertools.product((-1.0, 1.0), repeat=d):
            cand, cand_loss = _sign_ascent(f, X, X + eps * np.array(corner), labels,
                                           eps, steps, step_size)
            better = cand_loss > best_loss
            best[better] = cand[better]
            best_loss[better] = cand_loss[better]
    return best, best_loss


def gradient_attack(f, budget, x, y, steps=50, step_size=None, corner_starts=None):
    """Sign-gradient ascent projected on the eps-box.

    A step is kept only if it raises the loss, otherwise the step size is
    halved, so the result never has lower loss than ``x``.  For inputs of
    dimension <= 4 (or ``corner_starts=True``) the ascent is also restarted
    from every corner of the box and the best end point wins.
    """
    out, _ = gradient_attack_batch(f, budget, np.asarray(x, dtype=float).reshape(1, -1),
                                   [y], steps, step_size, corner_starts)
    return out[0]


# -- generators ---------------------------------------------------------------

class IdentityGenerator:
    kind = "identity"
    stochastic = False

    def __init__(self, budget=0.0):
        self.budget = _budget(budget)

    @property
    def generator_id(self):
        return "identity"

    def perturb(self, X, labels, rng=None):
        return np.array(X, dtype=float, copy=True)

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon}


class ClosedFormGenerator:
    """``g*(x, y) = x - y eps sign(w)`` for fixed non-bias weights ``w``."""

    kind = "closed-form"
    stochastic = False

    def __init__(self, w, budget, source_id=""):
        self.w = np.array(_nonbias(w), dtype=float)
        self.budget = _budget(budget)
        self.source_id = source_id

    @classmethod
    def from_classifier(cls, f, budget):
        ensure_attack_source(f)
        return cls(_nonbias(f), budget, f.source_id or "representative")

    @property
    def generator_id(self):
        return f"closed-form:eps={self.budget.epsilon!r}:src={self.source_id}"

    def perturb(self, X, labels, rng=None):
        y = 2.0 * np.asarray(labels) - 1.0
        return closed_form_attack(self.w, self.budget, np.atleast_2d(X), y)

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon,
                "weights": [float(v) for v in self.w], "source_id": self.source_id}


class GridGenerator:
    """Per-example grid-search best response to a fixed target classifier."""

    kind = "grid"
    stochastic = False

    def __init__(self, budget, target=None, resolution=41):
        self.budget = _budget(budget)
        self.target = ensure_attack_source(target)
        grid_offsets(self.budget.epsilon, resolution)
        self.resolution = int(resolution)

    def bind(self, f):
        return GridGenerator(self.budget, f, self.resolution)

    @property
    def generator_id(self):
        src = self.target.source_id if self.target is not None else ""
        return f"grid:eps={self.budget.epsilon!r}:r={self.resolution}:src={src or 'representative'}"

    def perturb(self, X, labels, rng=None):
        if self.target is None:
            raise InvalidArgument("grid generator has no target classifier")
        return grid_attack_batch(self.target, self.budget, X, labels, self.resolution)[0]

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon, "resolution": self.resolution,
                "target": None if self.target is None else self.target.to_dict()}


class GradientGenerator:
    kind = "gradient"
    stochastic = False

    def __init__(self, budget, target=None, steps=50, step_size=None):
        self.budget = _budget(budget)
        self.target = ensure_attack_source(target)
        self.steps = int(steps)
        self.step_size = step_size

    def bind(self, f):
        return GradientGenerator(self.budget, f, self.steps, self.step_size)

    @property
    def generator_id(self):
        src = self.target.source_id if self.target is not None else ""
        return f"gradient:eps={self.budget.epsilon!r}:steps={self.steps}:src={src or 'representative'}"

    def perturb(self, X, labels, rng=None):
        if self.target is None:
            raise InvalidArgument("gradient generator has no target classifier")
        return gradient_attack_batch(self.target, self.budget, X, labels,
                                     self.steps, self.step_size)[0]

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon, "steps": self.steps,
                "step_size": self.step_size,
                "target": None if self.target is None else self.target.to_dict()}


class FixedGenerator:
    """Deterministic generator given by a table of perturbations on known inputs."""

    kind = "fixed"
    stochastic = False

    def __init__(self, clean_points, perturbed_points, budget, name="fixed"):
        self.clean = np.asarray(clean_points, dtype=float)
        self.delta = np.asarray(perturbed_points, dtype=float) - self.clean
        self.budget = _budget(budget)
        self.name = name
        if self.delta.size and np.max(np.abs(self.delta)) > self.budget.epsilon + FEASIBILITY_SLACK:
            raise InvalidArgument("perturbation table exceeds the budget")

    @classmethod
    def from_adversarial(cls, adv):
        return cls(adv.clean.points, adv.perturbed_points, adv.epsilon, adv.generator_id)

    @property
    def generator_id(self):
        return self.name

    def perturb(self, X, labels, rng=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape != self.clean.shape or not np.array_equal(X, self.clean):
            raise InvalidArgument("fixed generator applied to inputs it was not built for")
        return X + self.delta

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon, "name": self.name,
                "delta": self.delta.tolist()}


class NoiseGenerator:
    """Control condition: i.i.d. uniform signs times eps on every coordinate."""

    kind = "noise"
    stochastic = True

    def __init__(self, budget):
        self.budget = _budget(budget)

    @property
    def generator_id(self):
        return f"noise:eps={self.budget.epsilon!r}"

    def perturb(self, X, labels, rng=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rng = make_rng(rng)
        signs = rng.integers(0, 2, size=X.shape) * 2.0 - 1.0
        return X + self.budget.epsilon * signs

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon}


class ParametricGenerator:
    """Stochastic generator with a class-conditional categorical latent.

    For label ``y`` the latent ``z`` is drawn from ``softmax(latent_logits[y])``
    and the perturbation is ``eps * tanh(shift[y, z])``.  The relaxed path
    replaces the one-hot ``z`` by a Gumbel-softmax weight vector ``s`` and
    uses ``eps * tanh(sum_z s_z shift[y, z])``.
    """

    kind = "parametric"
    stochastic = True

    def __init__(self, budget, latent_logits, shift, tau=1.0):
        self.budget = _budget(budget)
        self.latent_logits = np.array(latent_logits, dtype=float)
        self.shift = np.array(shift, dtype=float)
        if self.latent_logits.ndim != 2 or self.shift.ndim != 3 \
                or self.shift.shape[:2] != self.latent_logits.shape:
            raise InvalidArgument("latent_logits must be (K, m) and shift (K, m, d)")
        if not (tau > 0):
            raise InvalidArgument("temperature must be > 0")
        self.tau = float(tau)

    @classmethod
    def init(cls, budget, num_classes, num_latent, input_dim, tau=1.0, scale=0.0, seed=0):
        rng = make_rng(seed)
        logits = np.zeros((num_classes, num_latent))
        shift = scale * rng.standard_normal((num_classes, num_latent, input_dim))
        return cls(budget, logits, shift, tau)

    @property
    def num_latent(self):
        return self.latent_logits.shape[1]

    @property
    def generator_id(self):
        return f"parametric:eps={self.budget.epsilon!r}:m={self.num_latent}"

    def with_params(self, latent_logits, shift):
        return ParametricGenerator(self.budget, latent_logits, shift, self.tau)

    def latent_probs(self, label):
        return softmax(self.latent_logits[label])

    def gumbel(self, n, rng):
        return make_rng(rng).gumbel(size=(n, self.num_latent))

    def hard(self, X, labels, gumbel_noise):
        # Gumbel-max: argmax(logits + g) ~ Categorical(softmax(logits))
        labels = np.asarray(labels)
        z = np.argmax(self.latent_logits[labels] + gumbel_noise, axis=1)
        a = np.clip(self.shift[labels, z], -_TANH_CLIP, _TANH_CLIP)
        return np.atleast_2d(X) + self.budget.epsilon * np.tanh(a), z

    def perturb(self, X, labels, rng=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.hard(X, labels, self.gumbel(X.shape[0], rng))[0]

    def relaxed(self, X, labels, gumbel_noise):
        """Relaxed forward pass; returns ``(X_adv, s, a)``."""
        labels = np.asarray(labels)
        s = softmax((self.latent_logits[labels] + gumbel_noise) / self.tau, axis=1)
        a = np.einsum("nz,nzd->nd", s, self.shift[labels])
        ac = np.clip(a, -_TANH_CLIP, _TANH_CLIP)
        return np.atleast_2d(X) + self.budget.epsilon * np.tanh(ac), s, a

    def relaxed_backward(self, X, labels, gumbel_noise, grad_out, cache=None):
        """Pull ``dL/dX_adv`` back to ``(dL/dlatent_logits, dL/dshift)``.

        ``cache`` may hold the ``(s, a)`` returned by :meth:`relaxed` for the
        same inputs and noise.
        """
        labels = np.asarray(labels)
        s, a = cache if cache is not None else self.relaxed(X, labels, gumbel_noise)[1:]
        sech2 = np.where(np.abs(a) < _TANH_CLIP, 1.0 - np.tanh(a) ** 2, 0.0)
        ga = self.budget.epsilon * sech2 * grad_out                 # dL/da, (n, d)
        U = self.shift[labels]                                       # (n, m, d)
        g_logit = s * (np.einsum("nzd,nd->nz", U, ga) - np.sum(a * ga, axis=1)[:, None]) / self.tau
        G_logits = np.zeros_like(self.latent_logits)
        G_shift = np.zeros_like(self.shift)
        for c in range(self.latent_logits.shape[0]):
            sel = labels == c
            if np.any(sel):
                G_logits[c] = g_logit[sel].sum(axis=0)
                G_shift[c] = s[sel].T @ ga[sel]
        return G_logits, G_shift

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.budget.epsilon, "tau": self.tau,
                "m": self.num_latent, "logits": self.latent_logits.tolist(),
                "u": self.shift.tolist()}


def parametric_sample(gen, x, y, seed):
    """Hard sample ``x + eps * tanh(u[y, z])`` with ``z ~ softmax(logits[y])``."""
    return gen.perturb(np.asarray(x, dtype=float).reshape(1, -1), [y], seed)[0]


def parametric_relaxed(gen, x, y, gumbel_noise):
    """Relaxed sample and its exact Jacobians.

    Returns ``(x_adv, jac_logits, jac_u)`` with ``jac_logits[k, z]`` the
    derivative of ``x_adv[k]`` in ``latent_logits[y, z]`` and
    ``jac_u[k, z, j]`` the derivative of ``x_adv[k]`` in ``shift[y, z, j]``.
    """
    if not (gen.tau > 0):
        raise InvalidArgument("temperature must be > 0")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    g = np.asarray(gumbel_noise, dtype=float).reshape(1, -1)
    x_adv, s, a = gen.relaxed(x, [y], g)
    s, a = s[0], a[0]
    sech2 = np.where(np.abs(a) < _TANH_CLIP, 1.0 - np.tanh(a) ** 2, 0.0)
    scale = gen.budget.epsilon * sech2                                # (d,)
    U = gen.shift[y]                                                  # (m, d)
    jac_logits = scale[:, None] * s[None, :] * (U.T - a[:, None]) / gen.tau
    d, m = x.shape[1], gen.num_latent
    jac_u = np.zeros((d, m, d))
    for k in range(d):
        jac_u[k, :, k] = scale[k] * s
    return x_adv[0], jac_logits, jac_u


def generator_from_dict(d):
    kind = d["kind"]
    eps = float(d["epsilon"])
    if kind == "identity":
        return IdentityGenerator(eps)
    if kind == "closed-form":
        return ClosedFormGenerator(d["weights"], eps, d.get("source_id", ""))
    if kind == "grid":
        t = d.get("target")
        return GridGenerator(eps, None if t is None else LinearClassifier.from_dict(t),
                             d.get("resolution", 41))
    if kind == "gradient":
        t = d.get("target")
        return GradientGenerator(eps, None if t is None else LinearClassifier.from_dict(t),
                                 d.get("steps", 50), d.get("step_size"))
    if kind == "noise":
        return NoiseGenerator(eps)
    if kind == "parametric":
        return ParametricGenerator(eps, d["logits"], d["u"], d.get("tau", 1.0))
    raise InvalidArgument(f"unknown generator kind {kind!r}")


def generator_to_json(gen):
    return json.dumps(gen.to_dict(), indent=2, sort_keys=True) + "\n"


# -- adversarial datasets -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdversarialDataset:
    clean: LabeledDataset
    perturbed_points: np.ndarray
    generator_id: str
    epsilon: float

    def __post_init__(self):
        P = np.array(self.perturbed_points, dtype=float, copy=True)
        if P.shape != self.clean.points.shape:
            raise InvalidArgument("perturbed points must align with the clean points")
        if not np.all(np.isfinite(P)):
            raise InternalError("generator produced non-finite points")
        gap = float(np.max(np.abs(P - self.clean.points))) if P.size else 0.0
        if gap > self.epsilon + FEASIBILITY_SLACK:
            raise InternalError(
                f"budget breach: max |x' - x| = {gap!r} > eps = {self.epsilon!r}")
        P.setflags(write=False)
        object.__setattr__(self, "perturbed_points", P)

    @property
    def adversarial(self):
        """The perturbed points with the original labels."""
        return self.clean.with_points(self.perturbed_points)

    @property
    def labels(self):
        return self.clean.labels

    def __len__(self):
        return len(self.clean)


def attack_dataset(gen, ds, f=None, seed=None):
    """Apply ``gen`` to every example of ``ds``.

    Generators that search against a classifier (grid, gradient) use their
    bound target, or ``f`` when they have none.  Stochastic generators need
    ``seed``.
    """
    if f is not None and getattr(gen, "target", "absent") is None:
        gen = gen.bind(f)
    rng = make_rng(seed) if getattr(gen, "stochastic", False) else None
    P = gen.perturb(ds.points, ds.labels, rng)
    return AdversarialDataset(ds, P, gen.generator_id, gen.budget.epsilon)


def random_noise_baseline(budget, ds, seed):
    """Uniform vertex noise in ``{-eps, +eps}`` per coordinate."""
    return attack_dataset(NoiseGenerator(budget), ds, seed=seed)


def adversarial_to_csv(adv):
    d = adv.clean.dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(d)] + ["y"] + [f"adv_x{j}" for j in range(d)])
    for x, y, xa in zip(adv.clean.points, adv.labels, adv.perturbed_points):
        w.writerow([repr(float(v)) for v in x] + [str(int(y))] + [repr(float(v)) for v in xa])
    return buf.getvalue()


def save_adversarial_csv(adv, path):
    write_text_atomic(path, adversarial_to_csv(adv))


def load_adversarial_csv(path, epsilon, generator_id="file", num_classes=None):
    with open(path, newline="") as fh:
        header, body = parse_csv_rows(fh.read())
    if "y" not in header:
        raise ParseError("missing y column", 1)
    d = header.index("y")
    expect = [f"x{j}" for j in range(d)] + ["y"] + [f"adv_x{j}" for j in range(d)]
    if header != expect:
        raise ParseError("header must be x0..,y,adv_x0..", 1)
    if not body:
        raise ParseError("no data rows", 2)
    rows = []
    for lineno, row in body:
        try:
            vals = [float(t) for t in row[:d]] + [float(t) for t in row[d + 1:]]
            lab = int(row[d], 10)
        except ValueError:
            raise ParseError("malformed row", lineno) from None
        rows.append((vals, lab))
    A = np.array([r[0] for r in rows])
    labels = np.array([r[1] for r in rows])
    k = num_classes if num_classes is not None else max(2, int(labels.max()) + 1)
    clean = LabeledDataset(A[:, :d], labels, k)
    try:
        return AdversarialDataset(clean, A[:, d:], generator_id, float(epsilon))
    except InternalError as exc:
        raise ParseError(str(exc)) from None
