"""Payoffs, game solvers and equilibrium checks.

The payoff of a classifier ``f`` against a generator ``g`` is

    phi(f, g)        = E_{(x,y)~D, z} loss(f(g(x, y, z)), y)
    phi_lambda(f, g) = phi(f, g) + lambda * E_{(x,y)~D_ref} loss(f(x), y)

The classifier minimizes, the generator maximizes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import (LinearClassifier, cross_entropy, input_gradient, loss_gradient,
                         per_example_losses, train_logreg, train_robust_logreg_l1)
from .data import LabeledDataset, make_rng
from .errors import DivergenceError, InvalidArgument
from .features import FeatureMap
from .generator import (AdversarialDataset, AttackBudget, ClosedFormGenerator, FixedGenerator,
                        GradientGenerator, GridGenerator, ParametricGenerator,
                        attack_dataset, gradient_attack_batch, grid_attack_batch)


@dataclass(frozen=True)
class TrainOptions:
    l2_reg: float = 0.0
    max_iter: int = 200
    tol: float = 1e-8
    method: str = "newton"


@dataclass(frozen=True)
class BestResponse:
    iters: int = 10
    generator: str = "grid"          # "grid" (2D inputs) or "gradient"
    resolution: int = 41
    steps: int = 50


@dataclass(frozen=True)
class ExtraGradient:
    steps: int = 500
    lr_f: float = 0.01
    lr_g: float = 0.01
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    gen_inner_cap: int = 20
    num_latent: int = 4
    tau: float = 1.0
    init_scale: float = 0.1
    batch_size: int | None = None
    record_every: int = 1


@dataclass(frozen=True)
class GameConfig:
    budget: AttackBudget
    target_data: LabeledDataset
    feature_map: FeatureMap
    lam: float = 0.0
    reference_data: LabeledDataset | None = None
    solver: BestResponse | ExtraGradient = field(default_factory=BestResponse)
    train: TrainOptions = field(default_factory=TrainOptions)
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.budget, AttackBudget):
            object.__setattr__(self, "budget", AttackBudget(float(self.budget)))
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InvalidArgument("lambda must be finite and >= 0")
        if self.target_data.dim != self.feature_map.input_dim:
            raise InvalidArgument("target data dimension does not match the feature map")
        ref = self.reference_data
        if ref is not None and (ref.dim != self.target_data.dim
                                or ref.num_classes != self.target_data.num_classes):
            raise InvalidArgument("reference data is not compatible with the target data")
        if ref is None and self.lam > 0:
            raise InvalidArgument("lambda > 0 needs reference data")

    @property
    def ref(self):
        return self.reference_data if self.reference_data is not None else self.target_data

    def to_dict(self):
        s = self.solver
        solver = {"kind": "best-response" if isinstance(s, BestResponse) else "extragradient"}
        solver.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(s).items()})
        return {"epsilon": self.budget.epsilon, "lambda": self.lam,
                "feature_map": self.feature_map.to_dict(), "solver": solver,
                "train": vars(self.train).copy(), "seed": self.seed,
                "n_target": len(self.target_data),
                "n_reference": 0 if self.reference_data is None else len(self.reference_data)}


@dataclass(frozen=True)
class PayoffReport:
    phi: float
    ref_term: float
    lam: float
    phi_lambda: float
    per_example: np.ndarray | None = None


def _as_generator(g):
    if isinstance(g, AdversarialDataset):
        return FixedGenerator.from_adversarial(g)
    return g


def payoff(f, g, cfg, num_z_samples=1, keep_per_example=False):
    """Evaluate ``phi`` and ``phi_lambda`` of ``(f, g)`` on the config's data.

    Stochastic generators are averaged over ``num_z_samples`` latent draws
    seeded by ``cfg.seed``; deterministic ones are applied once.
    """
    if num_z_samples < 1:
        raise InvalidArgument("num_z_samples must be >= 1")
    g = _as_generator(g)
    D = cfg.target_data
    if getattr(g, "stochastic", False):
        rng = make_rng(cfg.seed)
        per = np.zeros(len(D))
        for _ in range(num_z_samples):
            per += per_example_losses(f, g.perturb(D.points, D.labels, rng), D.labels)
        per /= num_z_samples
    else:
        per = per_example_losses(f, g.perturb(D.points, D.labels), D.labels)
    phi = float(per.mean())
    ref_term = cross_entropy(f, cfg.ref)
    return PayoffReport(phi, ref_term, cfg.lam, phi + cfg.lam * ref_term,
                        per if keep_per_example else None)


# -- traces -------------------------------------------------------------------

@dataclass
class TraceRecord:
    iteration: int
    phi_after_min: float
    phi_after_max: float
    phi_lambda_after_min: float
    phi_lambda_after_max: float
    f_entropy: float
    classifier: LinearClassifier | None = None
    generator: object = None


TRACE_COLUMNS = ["iter", "phi_after_min", "phi_after_max", "phi_lambda_after_min",
                 "phi_lambda_after_max", "f_entropy"]


@dataclass
class GameTrace:
    records: list = field(default_factory=list)
    label: str = ""

    def append(self, rec):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise InvalidArgument("trace iterations must increase")
        self.records.append(rec)

    def column(self, name):
        key = {"iter": "iteration"}.get(name, name)
        return np.array([getattr(r, key) for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.iteration] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, label=""):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != TRACE_COLUMNS:
            raise InvalidArgument("not a game trace CSV")
        tr = cls(label=label)
        for row in rows[1:]:
            if row:
                tr.append(TraceRecord(int(row[0]), *[float(v) for v in row[1:]]))
        return tr


# -- best-response dynamics -----------------------------------------------------

def mixture_weights(n_adv, n_ref, lam):
    """Example weights of the mixture ``p_g/(1+lam) + lam D_ref/(1+lam)``."""
    return np.concatenate([np.full(n_adv, 1.0 / ((1.0 + lam) * n_adv)),
                           np.full(n_ref, lam / ((1.0 + lam) * n_ref))])


def mixture_dataset(adv_points, D, ref, lam):
    mix = LabeledDataset(np.vstack([adv_points, ref.points]),
                         np.concatenate([D.labels, ref.labels]), D.num_classes)
    return mix, mixture_weights(len(D), len(ref), lam)


def fit_mixture(fmap, adv_points, D, ref, lam, opts, init=None):
    """Min step: train on the weighted mixture; returns ``(f, H_F, report)``.

    ``H_F`` is the weighted mixture cross-entropy without the ridge term, so
    ``(1 + lam) * H_F`` is the minimized ``phi_lambda``.
    """
    mix, wts = mixture_dataset(adv_points, D, ref, lam)
    f, rep = train_logreg(fmap, mix, opts.l2_reg, opts.max_iter, opts.tol,
                          method=opts.method, sample_weights=wts, init=init)
    return f, cross_entropy(f, mix, wts), rep


def _max_step(f, cfg):
    s, D = cfg.solver, cfg.target_data
    eps = cfg.budget.epsilon
    if s.generator == "grid":
        return grid_attack_batch(f, eps, D.points, D.labels, s.resolution)[0]
    if s.generator == "gradient":
        return gradient_attack_batch(f, eps, D.points, D.labels, s.steps)[0]
    raise InvalidArgument(f"unknown best-response generator {s.generator!r}")


def best_response_solve(cfg):
    """Alternate full minimization and full per-example maximization.

    Iteration ``t`` trains the classifier (from zero) on the mixture of the
    current adversarial set and ``D_ref``, records ``phi_lambda`` and the
    mixture F-entropy, then rebuilds the adversarial set as the per-example
    best response to the new classifier.  Starts from the clean data.
    """
    if not isinstance(cfg.solver, BestResponse):
        raise InvalidArgument("best_response_solve needs a BestResponse solver config")
    D, ref, lam = cfg.target_data, cfg.ref, cfg.lam
    trace = GameTrace(label=cfg.feature_map.name)
    adv = D.points
    for t in range(1, cfg.solver.iters + 1):
        f, h, _ = fit_mixture(cfg.feature_map, adv, D, ref, lam, cfg.train)
        ref_term = cross_entropy(f, ref)
        phi_min = float(per_example_losses(f, adv, D.labels).mean())
        adv = _max_step(f, cfg)
        phi_max = float(per_example_losses(f, adv, D.labels).mean())
        snapshot = AdversarialDataset(D, adv, f"best-response:{cfg.solver.generator}:iter={t}",
                                      cfg.budget.epsilon)
        trace.append(TraceRecord(t, phi_min, phi_max, phi_min + lam * ref_term,
                                 phi_max + lam * ref_term, h, f, snapshot))
    return trace


# -- extrapolated moment descent-ascent ---------------------------------------

class ExtraAdam:
    """Extragradient with Adam moment scaling on a list of numpy arrays.

    ``extrapolate`` saves the current point and takes a look-ahead step;
    ``update`` takes the real step from the saved point using gradients
    evaluated at the look-ahead point.  Both calls advance the moment
    estimates.  With ``adam=False`` the steps are plain gradient steps.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, adam=True):
        self.params = [np.array(p, dtype=float) for p in params]
        self.lr, self.betas, self.eps, self.adam = lr, betas, eps, adam
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0
        self._saved = None

    def _direction(self, grads):
        if not self.adam:
            return [g for g in grads]
        self.t += 1
        b1, b2 = self.betas
        out = []
        for i, g in enumerate(grads):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            out.append(mhat / (np.sqrt(vhat) + self.eps))
        return out

    def extrapolate(self, grads):
        self._saved = [p.copy() for p in self.params]
        self.params = [p - self.lr * d for p, d in zip(self.params, self._direction(grads))]
        return self.params

    def update(self, grads):
        if self._saved is None:
            raise InvalidArgument("update() called without a preceding extrapolate()")
        self.params = [p - self.lr * d for p, d in zip(self._saved, self._direction(grads))]
        self._saved = None
        return self.params


def extragradient_step(grad_fn, point, lr):
    """One plain extragradient step for a min (first) / max (second) pair.

    ``grad_fn(u, v) -> (dphi/du, dphi/dv)``; ``u`` descends and ``v`` ascends.
    """
    u, v = point
    gu, gv = grad_fn(u, v)
    uh, vh = u - lr * gu, v + lr * gv
    gu, gv = grad_fn(uh, vh)
    return u - lr * gu, v + lr * gv


def gda_step(grad_fn, point, lr):
    u, v = point
    gu, gv = grad_fn(u, v)
    return u - lr * gu, v + lr * gv


def bilinear_grad(u, v):
    """Gradients of ``phi(u, v) = u * v``."""
    return v, u


def run_bilinear(method, steps, lr, start=(1.0, 1.0)):
    """Iterates of extragradient (``"eg"``) or simultaneous GDA on ``u * v``."""
    step = {"eg": extragradient_step, "gda": gda_step}[method]
    pts = [tuple(map(float, start))]
    for _ in range(steps):
        pts.append(step(bilinear_grad, pts[-1], lr))
    return np.array(pts)


class _AEGObjective:
    """phi_lambda on the relaxed generator path, with gradients."""

    def __init__(self, cfg, fmap, X, labels, ref, lam, rows):
        self.cfg, self.fmap, self.X, self.labels = cfg, fmap, X, labels
        self.ref, self.lam, self.rows = ref, lam, rows
        self.K = cfg.target_data.num_classes

    def clf(self, W):
        return LinearClassifier(self.fmap, W, self.K)

    def value_and_grads(self, W, gen, noise, want_f=True, want_g=True):
        f = self.clf(W)
        Xa, sw, pre = gen.relaxed(self.X, self.labels, noise)
        adv = LabeledDataset(Xa, self.labels, self.K)
        phi = cross_entropy(f, adv)
        ref_term = cross_entropy(f, self.ref)
        gW = gl = gu = None
        if want_f:
            gW = loss_gradient(f, adv) + self.lam * loss_gradient(f, self.ref)
        if want_g:
            dX = input_gradient(f, Xa, self.labels) / len(self.labels)
            gl, gu = gen.relaxed_backward(self.X, self.labels, noise, dX, (sw, pre))
        return phi + self.lam * ref_term, phi, gW, gl, gu


def extragradient_solve(cfg, init_classifier=None, init_generator=None):
    """Simultaneous descent-ascent with ExtraAdam on (classifier, generator).

    Each outer step is one joint extragradient step (look-ahead for both
    players, then the real step from look-ahead gradients).  The generator
    then keeps ascending alone, up to ``gen_inner_cap`` steps in total,
    until its relaxed mean loss exceeds ``ln K``.  Full batch unless
    ``batch_size`` is set (seeded shuffling).  Returns
    ``(trace, classifier, generator)``.
    """
    s = cfg.solver
    if not isinstance(s, ExtraGradient):
        raise InvalidArgument("extragradient_solve needs an ExtraGradient solver config")
    D, ref, lam = cfg.target_data, cfg.ref, cfg.lam
    K = D.num_classes
    rows = 1 if K == 2 else K
    rng = make_rng(cfg.seed)
    gen = init_generator or ParametricGenerator.init(
        cfg.budget, K, s.num_latent, D.dim, s.tau, s.init_scale, rng)
    W0 = (init_classifier.weights if init_classifier is not None
          else np.zeros((rows, cfg.feature_map.output_dim)))
    opt_f = ExtraAdam([W0], s.lr_f, s.betas, s.adam_eps)
    opt_g = ExtraAdam([gen.latent_logits, gen.shift], s.lr_g, s.betas, s.adam_eps)
    fool = math.log(K)
    trace = GameTrace(label=f"extragradient:{cfg.feature_map.name}")

    def batch():
        if s.batch_size is None or s.batch_size >= len(D):
            return D.points, D.labels
        idx = rng.permutation(len(D))[:s.batch_size]
        return D.points[idx], D.labels[idx]

    def objective(Xb, yb):
        return _AEGObjective(cfg, cfg.feature_map, Xb, yb, ref, lam, rows)

    full = objective(D.points, D.labels)
    init_val = full.value_and_grads(W0, gen, gen.gumbel(len(D), rng), False, False)[0]
    for step in range(1, s.steps + 1):
        Xb, yb = batch()
        obj = objective(Xb, yb)
        # joint extragradient step
        W = opt_f.params[0]
        _, _, gW, gl, gu = obj.value_and_grads(W, gen, gen.gumbel(len(yb), rng))
        (Wh,) = opt_f.extrapolate([gW])
        lh, uh = opt_g.extrapolate([-gl, -gu])
        gen_h = gen.with_params(lh, uh)
        _, _, gW, gl, gu = obj.value_and_grads(Wh, gen_h, gen.gumbel(len(yb), rng))
        (W,) = opt_f.update([gW])
        lg, ug = opt_g.update([-gl, -gu])
        gen = gen.with_params(lg, ug)
        val_min, phi_min = full.value_and_grads(W, gen, gen.gumbel(len(D), rng), False, False)[:2]
        # extra generator-only ascent until the critic is fooled; the stopping
        # test uses the relaxed loss of the batch at the current point
        val_max, phi_max = val_min, phi_min
        inner = 1
        while inner < s.gen_inner_cap:
            _, phi_b, _, gl, gu = obj.value_and_grads(W, gen, gen.gumbel(len(yb), rng), False)
            if phi_b > fool:
                break
            lh, uh = opt_g.extrapolate([-gl, -gu])
            _, _, _, gl, gu = obj.value_and_grads(W, gen.with_params(lh, uh),
                                                  gen.gumbel(len(yb), rng), False)
            lg, ug = opt_g.update([-gl, -gu])
            gen = gen.with_params(lg, ug)
            inner += 1
        if inner > 1:
            val_max, phi_max = full.value_and_grads(W, gen, gen.gumbel(len(D), rng),
                                                    False, False)[:2]
        if step % s.record_every == 0 or step == s.steps:
            trace.append(TraceRecord(step, phi_min, phi_max, val_min, val_max, math.nan,
                                     full.clf(W), gen))
        if not (val_max <= 10.0 * init_val):
            raise DivergenceError(
                f"phi_lambda {val_max!r} exceeded 10x its initial value {init_val!r}",
                step, trace)
    return trace, full.clf(W), gen


# -- equilibrium checks -----------------------------------------------------------

def best_attack_value(f, cfg, inner="auto", resolution=201, steps=100):
    """``max_g phi_lambda(f, g)`` by a per-example inner maximizer.

    ``inner``: ``"vertex"`` (exact, binary linear), ``"grid"`` (2D inputs),
    ``"gradient"``; ``"auto"`` picks the first applicable.
    """
    D, eps = cfg.target_data, cfg.budget.epsilon
    fm = f.feature_map
    if inner == "auto":
        if f.binary and fm.degree == 1:
            inner = "vertex"
        elif fm.input_dim == 2:
            inner = "grid"
        else:
            inner = "gradient"
    if inner == "vertex":
        gen = ClosedFormGenerator(f.w[fm.bias_offset:], eps)
        X = gen.perturb(D.points, D.labels)
    elif inner == "grid":
        X = grid_attack_batch(f, eps, D.points, D.labels, resolution)[0]
    elif inner == "gradient":
        X = gradient_attack_batch(f, eps, D.points, D.labels, steps)[0]
    else:
        raise InvalidArgument(f"unknown inner maximizer {inner!r}")
    phi = float(per_example_losses(f, X, D.labels).mean())
    return phi + cfg.lam * cross_entropy(f, cfg.ref)


def best_classifier_value(g, cfg, num_z_samples=1, opts=None):
    """``min_f phi_lambda(f, g)`` by retraining on the generated mixture."""
    g = _as_generator(g)
    D, ref, lam = cfg.target_data, cfg.ref, cfg.lam
    opts = opts or cfg.train
    if getattr(g, "stochastic", False):
        rng = make_rng(cfg.seed)
        draws = [g.perturb(D.points, D.labels, rng) for _ in range(num_z_samples)]
        X = np.vstack(draws)
        labels = np.tile(D.labels, num_z_samples)
    else:
        X, labels = g.perturb(D.points, D.labels), D.labels
    n = X.shape[0]
    mix = LabeledDataset(np.vstack([X, ref.points]), np.concatenate([labels, ref.labels]),
                         D.num_classes)
    wts = mixture_weights(n, len(ref), lam)
    f, _ = train_logreg(cfg.feature_map, mix, opts.l2_reg, opts.max_iter, opts.tol,
                        method=opts.method, sample_weights=wts)
    return (1.0 + lam) * cross_entropy(f, mix, wts), f


def duality_gap(f, g, cfg, inner="auto", num_z_samples=1, opts=None, details=False):
    """``max_g' phi_lambda(f, g') - min_f' phi_lambda(f', g)``.

    Nonnegative up to inner-solver accuracy and zero exactly at an
    equilibrium.  With restricted inner solvers a small gap is evidence of
    an approximate equilibrium, not a proof.
    """
    upper = best_attack_value(f, cfg, inner)
    lower, _ = best_classifier_value(g, cfg, num_z_samples, opts)
    gap = upper - lower
    return (gap, upper, lower) if details else gap


@dataclass
class NashReport:
    passed: bool
    inconclusive: bool
    worst_violation: float
    worst_generator_violation: float
    worst_classifier_violation: float
    tolerance: float
    phi_star: float
    duality_gap: float
    classifier: LinearClassifier
    generator: ClosedFormGenerator
    message: str = ""


def random_feasible_deltas(shape, eps, rng):
    """Per-example perturbations: half on random vertices, half uniform inside."""
    rng = make_rng(rng)
    vert = eps * (rng.integers(0, 2, size=shape) * 2.0 - 1.0)
    inside = rng.uniform(-eps, eps, size=shape)
    pick = rng.random(shape[0]) < 0.5
    return np.where(pick[:, None], vert, inside)


def generator_violation(f, g_dev, g_star, cfg):
    """``phi(f, g') - phi(f, g*)``; positive means ``g'`` beats ``g*``."""
    return payoff(f, g_dev, cfg).phi_lambda - payoff(f, g_star, cfg).phi_lambda


def classifier_violation(f_star, f_dev, g_star, cfg):
    """``phi(f*, g*) - phi(f', g*)``; positive means ``f'`` beats ``f*``."""
    return payoff(f_star, g_star, cfg).phi_lambda - payoff(f_dev, g_star, cfg).phi_lambda


def verify_linear_nash(ds, eps, num_deviations=200, seed=0, l2_reg=0.0, include_bias=True,
                      robust_opts=None):
    """Check that the l1-robust logistic solution and its closed-form attack
    form a Nash equilibrium of the binary linear game.

    Samples ``num_deviations`` random feasible deterministic generators and
    as many perturbed classifiers ``w* + eta`` (scales log-spaced in
    [1e-3, 1]) and reports the largest gain either side could make.  The
    tolerance is ``1e-6`` plus the trainer's min-norm subgradient.  If ``w*``
    has a coordinate with ``|w_i| < 1e-8`` the check is inconclusive.
    """
    robust_opts = dict(robust_opts or {})
    f_star, rep = train_robust_logreg_l1(ds, eps, l2_reg=l2_reg, include_bias=include_bias,
                                         seed=seed, **robust_opts)
    fm = f_star.feature_map
    g_star = ClosedFormGenerator.from_classifier(f_star, eps)
    cfg = GameConfig(AttackBudget(eps), ds, fm, seed=seed)
    tol = 1e-6 + rep.grad_norm_or_subgrad_gap
    phi_star = payoff(f_star, g_star, cfg).phi
    w_nb = f_star.w[fm.bias_offset:]
    if np.any(np.abs(w_nb) < 1e-8):
        return NashReport(False, True, math.nan, math.nan, math.nan, tol, phi_star, math.nan,
                          f_star, g_star, "w* has a (near-)zero coordinate: inconclusive")
    rng = make_rng(seed)
    clean = ds.points
    worst_g = -math.inf
    for _ in range(num_deviations):
        dev = FixedGenerator(clean, clean + random_feasible_deltas(clean.shape, eps, rng), eps)
        worst_g = max(worst_g, generator_violation(f_star, dev, g_star, cfg))
    worst_f = -math.inf
    scales = np.logspace(-3, 0, num_deviations) if num_deviations > 1 else np.array([1e-3])
    for sc in scales:
        eta = sc * rng.standard_normal(f_star.weights.shape)
        worst_f = max(worst_f, classifier_violation(
            f_star, f_star.with_weights(f_star.weights + eta), g_star, cfg))
    gap = duality_gap(f_star, g_star, cfg, inner="vertex")
    worst = max(worst_g, worst_f)
    passed = worst <= tol
    return NashReport(passed, False, worst, worst_g, worst_f, tol, phi_star, gap, f_star, g_star,
                      "equilibrium verified" if passed else "a deviation improved on the pair")
