"""NoBox transfer harness.

Targets are trained on disjoint splits and never shown to the attacker:
pool members carry ``role="pool-target"`` and every attack constructor
refuses them (:func:`aeg.generator.ensure_attack_source`).  Attacks are
scored by the error rate they induce on each target.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import error_rate, train_logreg, train_robust_logreg_l1
from .errors import ContractViolation, InvalidArgument, NumericalFailure
from .game import TrainOptions
from .generator import (ClosedFormGenerator, IdentityGenerator, attack_dataset,
                        random_noise_baseline)

__all__ = ["TargetPool", "TransferReport", "train_pool", "evaluate_transfer",
           "combine_sources", "random_noise_baseline", "transfer_experiment"]


@dataclass
class TargetPool:
    targets: list
    descriptor: dict
    pool_id: str

    def __len__(self):
        return len(self.targets)

    @property
    def target_ids(self):
        return [t.source_id for t in self.targets]


def _pool_id(plan, fmap):
    h = hashlib.sha256()
    h.update(plan.assignment.tobytes())
    h.update(json.dumps(fmap.to_dict(), sort_keys=True).encode())
    return h.hexdigest()[:10]


def train_pool(ds, plan, fmap, seeds=None, opts=None, splits=None):
    """Train one target per split (on that split only)."""
    if plan.assignment.shape[0] != len(ds):
        raise InvalidArgument("split plan does not match the dataset")
    opts = opts or TrainOptions()
    splits = list(range(plan.num_splits)) if splits is None else list(splits)
    seeds = list(seeds) if seeds is not None else [plan.seed] * len(splits)
    if len(seeds) != len(splits):
        raise InvalidArgument("need one seed per trained split")
    pid = _pool_id(plan, fmap)
    targets = []
    for i, seed in zip(splits, seeds):
        part = ds.subset(plan.indices(i))
        try:
            f, _ = train_logreg(fmap, part, opts.l2_reg, opts.max_iter, opts.tol,
                                method=opts.method, seed=seed)
        except NumericalFailure as exc:
            raise NumericalFailure(f"training target on split {i} failed: {exc}") from exc
        targets.append(replace(f, role="pool-target", source_id=f"pool-{pid}/split-{i}",
                               trained_with={**f.trained_with, "split": i}))
    return TargetPool(targets, {"feature_map": fmap.to_dict(), "splits": splits}, pid)


def _two_sigma(x):
    x = np.asarray(x, dtype=float)
    return 0.0 if x.size < 2 else float(2.0 * x.std())


@dataclass
class TransferReport:
    target_ids: list
    clean_err: np.ndarray
    adv_err: np.ndarray
    generator_id: str
    source: str = ""

    @property
    def macro_clean(self):
        return float(np.mean(self.clean_err))

    @property
    def macro_adv(self):
        return float(np.mean(self.adv_err))

    @property
    def two_sigma(self):
        """Twice the (population) standard deviation of the adversarial errors."""
        return _two_sigma(self.adv_err)

    @property
    def two_sigma_clean(self):
        return _two_sigma(self.clean_err)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target_id", "clean_err", "adv_err"])
        for t, c, a in zip(self.target_ids, self.clean_err, self.adv_err):
            w.writerow([t, repr(float(c)), repr(float(a))])
        return buf.getvalue()

    def summary(self):
        return {"macro_clean": self.macro_clean, "macro_adv": self.macro_adv,
                "two_sigma": self.two_sigma, "source": self.source,
                "generator_id": self.generator_id}


def evaluate_transfer(adv, pool, clean_eval=None):
    """Clean and adversarial error of every pool target on the same examples.

    The adversarial set must name a non-pool source in its ``generator_id``.
    """
    gid = adv.generator_id or ""
    if not gid:
        raise ContractViolation("adversarial set carries no provenance")
    for tid in pool.target_ids:
        if tid in gid:
            raise ContractViolation(f"adversarial set was built from pool target {tid!r}")
    clean = adv.clean if clean_eval is None else clean_eval
    if clean != adv.clean:
        raise InvalidArgument("clean evaluation set must be the attacked examples")
    adv_ds = adv.adversarial
    ce = np.array([error_rate(t, clean) for t in pool.targets])
    ae = np.array([error_rate(t, adv_ds) for t in pool.targets])
    return TransferReport(pool.target_ids, ce, ae, gid, gid.rsplit("src=", 1)[-1])


@dataclass
class SourceSummary:
    per_source_adv: list = field(default_factory=list)
    macro_clean: float = 0.0
    macro_adv: float = 0.0
    two_sigma: float = 0.0


def combine_sources(reports):
    """Macro-average over every (source, target) evaluation."""
    if not reports:
        raise InvalidArgument("no reports to combine")
    adv = np.concatenate([r.adv_err for r in reports])
    clean = np.concatenate([r.clean_err for r in reports])
    return SourceSummary([r.macro_adv for r in reports], float(clean.mean()),
                         float(adv.mean()), _two_sigma(adv))


@dataclass
class TransferExperiment:
    closed_form: TransferReport
    noise: TransferReport
    identity: TransferReport
    representative: object
    pool: TargetPool


def transfer_experiment(ds, fmap, eps, num_targets=5, seed=0, representative="robust",
                        opts=None):
    """Held-out representative vs split-trained targets (one split each).

    Split 0 trains the representative and supplies the attacked examples;
    splits ``1..num_targets`` train the pool.  Compares the closed-form
    attack built from the representative with vertex noise and no attack.
    """
    from .data import split

    if fmap.degree != 1 or ds.num_classes != 2:
        raise InvalidArgument("the closed-form transfer experiment needs binary linear models")
    plan = split(ds, num_targets + 1, seed)
    attacker = ds.subset(plan.indices(0))
    pool = train_pool(ds, plan, fmap, opts=opts, splits=range(1, num_targets + 1))
    if representative == "robust":
        rep, _ = train_robust_logreg_l1(attacker, eps, include_bias=fmap.include_bias,
                                        l2_reg=1e-6, seed=seed)
    elif representative == "plain":
        o = opts or TrainOptions()
        rep, _ = train_logreg(fmap, attacker, o.l2_reg, o.max_iter, o.tol, method=o.method)
    else:
        raise InvalidArgument(f"unknown representative {representative!r}")
    rep = replace(rep, source_id=f"representative-{representative}")
    cf = evaluate_transfer(attack_dataset(ClosedFormGenerator.from_classifier(rep, eps),
                                          attacker), pool)
    nz = evaluate_transfer(random_noise_baseline(eps, attacker, seed), pool)
    ident = evaluate_transfer(attack_dataset(IdentityGenerator(), attacker), pool)
    return TransferExperiment(cf, nz, ident, rep, pool)
