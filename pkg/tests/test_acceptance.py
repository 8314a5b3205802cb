"""Acceptance suite: one test per criterion, each emitting a PASS/FAIL line.

Tolerances are the contract values and are not to be relaxed.  Criterion
5's extragradient norm bound is known not to hold for plain extragradient
at this step size; it lives in its own test so the rest of the criterion is
still reported.
"""
import itertools
import json
import math
import shutil
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from aeg import cli
from aeg.classifier import (LinearClassifier, cross_entropy, input_gradient, loss_gradient,
                            per_example_losses)
from aeg.data import DiscreteJointDistribution, make_gaussian_pair, make_rng, make_two_moons
from aeg.entropy import brute_force_ce_minimizer, conditional_entropy, entropy_chain
from aeg.evaluation import evaluate_transfer, transfer_experiment
from aeg.features import FeatureMap
from aeg.game import (BestResponse, GameConfig, TrainOptions, best_response_solve,
                      bilinear_grad, extragradient_step, gda_step, run_bilinear)
from aeg.generator import (AttackBudget, ClosedFormGenerator, ParametricGenerator,
                           attack_dataset, gradient_attack_batch, grid_attack_batch,
                           grid_offsets, inner_max_value, parametric_relaxed)

from conftest import central_diff, rel_err

mp = mpmath.mp.clone()
mp.dps = 40


# -- 1 -------------------------------------------------------------------------

def test_c1_nash_end_to_end(tmp_path, capsys, record):
    t0 = time.perf_counter()
    assert cli.main(["gen-data", "--kind", "gaussian-pair", "--n", "400",
                     "--mean-separation", "1", "--sigma", "1", "--dim", "1", "--seed", "3",
                     "--out-dir", str(tmp_path), "--out", "g.csv"]) == 0
    code = cli.main(["verify-nash", "--data", str(tmp_path / "g.csv"), "--eps", "0.3",
                     "--deviations", "200", "--seed", "1", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    rep = json.loads((tmp_path / "nash.json").read_text())
    ok = (code == 0 and "PASS gap<=" in out and rep["passed"]
          and rep["worst_violation"] <= 1e-3 and rep["duality_gap"] <= 1e-3 and elapsed <= 30)
    record("1", ok, f"verify-nash exit={code} worst_violation={rep['worst_violation']:.3g} "
                    f"duality_gap={rep['duality_gap']:.3g} runtime={elapsed:.1f}s")
    assert ok


# -- 2 -------------------------------------------------------------------------

def test_c2_dual_norm_identity(record):
    rng = make_rng(2)
    vertices = {d: np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
                for d in range(1, 13)}
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 13))
        w = rng.standard_normal(d) * rng.choice([1e-3, 1.0, 100.0])
        eps = float(rng.uniform(0, 2))
        brute = float(np.max(vertices[d] @ w) * eps)
        worst = max(worst, abs(inner_max_value(w, eps) - brute))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed <= 5
    record("2", ok, f"max |closed form - vertex max| = {worst:.2e} over 1000 draws, "
                    f"runtime={elapsed:.2f}s")
    assert ok


# -- 3 -------------------------------------------------------------------------

def test_c3_entropy_chain_along_best_response(record):
    ds = make_two_moons(200, 0.1, seed=7)
    t0 = time.perf_counter()
    maps = [FeatureMap(2, g) for g in (1, 3, 5)]
    traces = {}
    for fm in maps:
        cfg = GameConfig(AttackBudget(0.3), ds, fm, solver=BestResponse(iters=10),
                         train=TrainOptions(), seed=7)
        traces[fm.name] = best_response_solve(cfg)
    slack = 1e-6
    bad = []
    H = {k: tr.column("f_entropy") for k, tr in traces.items()}
    for t in range(10):
        if not (H["Linear"][t] >= H["Poly3"][t] - slack >= H["Poly5"][t] - 2 * slack):
            bad.append(f"trace iter {t + 1}")
    # same adversarial data, warm-started nested fits
    for name, tr in traces.items():
        for rec in tr.records:
            vals = entropy_chain(rec.generator, maps).values()
            if not (vals[0] >= vals[1] - slack and vals[1] >= vals[2] - slack):
                bad.append(f"{name} data iter {rec.iteration}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 120
    record("3", ok, f"H_Linear >= H_Poly3 >= H_Poly5 at 10 iterations and on 30 recorded "
                    f"adversarial sets; violations={bad or 'none'} runtime={elapsed:.1f}s")
    assert ok


# -- 4 -------------------------------------------------------------------------

def _random_distributions(seed, count=20):
    # conditionals are kept at least 0.1/K away from the simplex boundary
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        K = int(rng.integers(2, 4))
        m = int(rng.integers(1, 6))
        cond = 0.9 * rng.dirichlet(np.ones(K), size=m) + 0.1 / K
        out.append(DiscreteJointDistribution(np.arange(m, dtype=float).reshape(-1, 1), cond,
                                             rng.dirichlet(np.ones(m))))
    return out


def test_c4_cross_entropy_minimizer_grid_search(record):
    t0 = time.perf_counter()
    worst_p = worst_v = 0.0
    for dist in _random_distributions(4):
        res = brute_force_ce_minimizer(dist, 200)
        worst_p = max(worst_p, float(np.abs(res.probabilities - dist.conditional).max()))
        worst_v = max(worst_v, abs(res.value - conditional_entropy(dist)))
    elapsed = time.perf_counter() - t0
    ok = worst_p <= 1 / 200 + 1e-12 and worst_v <= 1e-3 and elapsed <= 30
    record("4", ok, f"max per-x deviation {worst_p * 200:.3f} spacings, max value error "
                    f"{worst_v:.2e}, runtime={elapsed:.1f}s")
    assert ok


# -- 5 -------------------------------------------------------------------------

def test_c5_one_step_values(record):
    eta = 0.1
    eg = extragradient_step(bilinear_grad, np.array([1.0, 1.0]), eta)
    gda = gda_step(bilinear_grad, np.array([1.0, 1.0]), eta)
    # by hand: look-ahead (1 - eta, 1 + eta), then u - eta * v_half, v + eta * u_half
    eg_hand = (1.0 - eta * (1.0 + eta), 1.0 + eta * (1.0 - eta))
    ok = (tuple(eg) == eg_hand and tuple(gda) == (1.0 - eta, 1.0 + eta)
          and np.allclose(eg, [0.89, 1.09], rtol=0, atol=1e-15)
          and np.allclose(gda, [0.9, 1.1], rtol=0, atol=1e-15))
    record("5a", ok, f"one step: extragradient {tuple(map(float, eg))}, descent-ascent {tuple(map(float, gda))}")
    assert ok


def test_c5_gda_diverges(record):
    norm = float(np.linalg.norm(run_bilinear("gda", 100, 0.1)[-1]))
    ok = norm >= 2.0
    record("5b", ok, f"descent-ascent iterate norm after 100 steps = {norm:.4f} (need >= 2.0)")
    assert ok


def test_c5_extragradient_contracts(record):
    norm = float(np.linalg.norm(run_bilinear("eg", 100, 0.1)[-1]))
    ok = norm <= 0.5
    record("5c", ok, f"extragradient iterate norm after 100 steps = {norm:.4f} (need <= 0.5); "
                     f"plain extragradient contracts by sqrt(1 - lr^2 + lr^4) per step")
    assert ok


# -- 6 -------------------------------------------------------------------------

def _brute_grid(f, X, labels, eps, r):
    offs = eps * (np.arange(-(r // 2), r // 2 + 1) / (r // 2))
    best = X.copy()
    for n in range(X.shape[0]):
        cand = np.array([[X[n, 0] + a, X[n, 1] + b] for a in offs for b in offs])
        loss = per_example_losses(f, cand, np.full(len(cand), labels[n]))
        best[n] = cand[int(np.argmax(loss))]
    return best


def test_c6_grid_attack_optimality(record):
    rng = make_rng(6)
    mismatches = 0
    worst_short = -math.inf
    for _ in range(50):
        fm = FeatureMap(2, int(rng.integers(2, 6)))
        K = int(rng.choice([2, 3]))
        rows = 1 if K == 2 else K
        f = LinearClassifier(fm, rng.standard_normal((rows, fm.output_dim)), K)
        X = rng.uniform(-1, 1, size=(8, 2))
        y = rng.integers(0, K, size=8)
        eps = float(rng.uniform(0.05, 0.5))
        for backend in ("python", None):
            fast, _ = grid_attack_batch(f, eps, X, y, 41, backend=backend)
            mismatches += int(not np.array_equal(fast, _brute_grid(f, X, y, eps, 41)))
        _, fine = grid_attack_batch(f, eps, X, y, 201)
        _, grad = gradient_attack_batch(f, eps, X, y, steps=50)
        worst_short = max(worst_short, float(np.max(fine - grad)))
    ok = mismatches == 0 and worst_short <= 1e-3
    record("6", ok, f"grid r=41 vs brute force mismatches={mismatches}/100; gradient attack "
                    f"shortfall vs r=201 grid <= {worst_short:.2e}")
    assert ok


# -- 7 -------------------------------------------------------------------------

def _check_weights(rng):
    fm = FeatureMap(2, int(rng.integers(1, 4)))
    K = int(rng.choice([2, 3]))
    rows = 1 if K == 2 else K
    f = LinearClassifier(fm, rng.standard_normal((rows, fm.output_dim)), K)
    from aeg.data import LabeledDataset
    ds = LabeledDataset(rng.uniform(-1.5, 1.5, (12, 2)), rng.integers(0, K, 12), K)
    g = loss_gradient(f, ds)
    fd = central_diff(lambda W: cross_entropy(f.with_weights(W), ds), f.weights)
    return rel_err(g, fd)


def _check_inputs(rng):
    fm = FeatureMap(2, int(rng.integers(1, 5)))
    K = int(rng.choice([2, 3]))
    rows = 1 if K == 2 else K
    f = LinearClassifier(fm, rng.standard_normal((rows, fm.output_dim)), K)
    X = rng.uniform(-1.5, 1.5, (5, 2))
    y = rng.integers(0, K, 5)
    g = input_gradient(f, X, y)
    fd = np.stack([central_diff(lambda x: per_example_losses(f, x[None], [y[i]])[0], X[i])
                   for i in range(len(X))])
    return rel_err(g, fd)


def _mp_relaxed(logits, shift, x, noise, tau, eps):
    """Relaxed sample of one example, in 40-digit arithmetic."""
    e = [mp.exp((mp.mpf(l) + mp.mpf(g)) / mp.mpf(tau)) for l, g in zip(logits, noise)]
    tot = mp.fsum(e)
    s = [v / tot for v in e]
    out = []
    for k in range(len(x)):
        a = mp.fsum(s[z] * mp.mpf(shift[z][k]) for z in range(len(s)))
        a = min(max(a, -15), 15)
        out.append(mp.mpf(x[k]) + mp.mpf(eps) * mp.tanh(a))
    return out


def _mp_central_diff(fn, params, h=mp.mpf("1e-15")):
    """Central differences of ``fn(list of mpf) -> list of mpf`` in each parameter."""
    base = [mp.mpf(float(v)) for v in np.ravel(params)]
    cols = []
    for i in range(len(base)):
        up, dn = list(base), list(base)
        up[i] += h
        dn[i] -= h
        cols.append([(a - b) / (2 * h) for a, b in zip(fn(up), fn(dn))])
    return np.array(cols, dtype=float).T      # (outputs, params)


def _check_parametric(rng):
    # float64 differences cannot resolve derivatives of nearly one-hot
    # relaxed samples (they sit ~1e-8 below the output's scale), so the
    # differences are taken in extended precision
    K, m, d = int(rng.integers(2, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
    gen = ParametricGenerator.init(0.3, K, m, d, tau=float(rng.uniform(0.3, 2.0)), scale=1.0,
                                   seed=int(rng.integers(1 << 30)))
    gen = gen.with_params(rng.standard_normal((K, m)), gen.shift)
    eps, tau = gen.budget.epsilon, gen.tau
    x, y = rng.standard_normal(d), int(rng.integers(K))
    noise = rng.gumbel(size=m)
    _, jl, ju = parametric_relaxed(gen, x, y, noise)
    U = gen.shift[y]
    fd_l = _mp_central_diff(lambda L: _mp_relaxed(L, U, x, noise, tau, eps), gen.latent_logits[y])
    fd_u = _mp_central_diff(
        lambda F: _mp_relaxed(gen.latent_logits[y], np.reshape(F, (m, d)), x, noise, tau, eps),
        U)
    errs = [rel_err(jl, fd_l), rel_err(ju.reshape(d, m * d), fd_u)]
    # batched backward pass: gradient of sum(G * X_adv)
    n = 6
    X, labels = rng.standard_normal((n, d)), rng.integers(0, K, n)
    N, G = rng.gumbel(size=(n, m)), rng.standard_normal((n, d))
    gl, gu = gen.relaxed_backward(X, labels, N, G)
    for c in range(K):
        rows = np.flatnonzero(labels == c)

        def total_l(L, c=c, rows=rows):
            return [mp.fsum(mp.mpf(G[i, k]) * v for i in rows
                            for k, v in enumerate(_mp_relaxed(L, gen.shift[c], X[i], N[i],
                                                              tau, eps)))]

        def total_u(F, c=c, rows=rows):
            F = np.reshape(F, (m, d))
            return [mp.fsum(mp.mpf(G[i, k]) * v for i in rows
                            for k, v in enumerate(_mp_relaxed(gen.latent_logits[c], F, X[i],
                                                              N[i], tau, eps)))]

        errs.append(rel_err(gl[c], _mp_central_diff(total_l, gen.latent_logits[c])[0]))
        errs.append(rel_err(gu[c].ravel(), _mp_central_diff(total_u, gen.shift[c])[0]))
    return max(errs)


def _check_jacobian(rng):
    d = int(rng.integers(1, 4))
    fm = FeatureMap(d, int(rng.integers(1, 6)), bool(rng.integers(2)))
    x = rng.uniform(-1.5, 1.5, d)
    return rel_err(fm.jacobian(x), central_diff(fm.transform, x))


def test_c7_gradient_checks(record):
    rng = make_rng(7)
    worst = {}
    for name, check in (("weights", _check_weights), ("inputs", _check_inputs),
                        ("parametric generator", _check_parametric),
                        ("feature jacobian", _check_jacobian)):
        worst[name] = max(check(rng) for _ in range(100))
    ok = all(v <= 1e-5 for v in worst.values())
    record("7", ok, "max relative error vs central differences: "
                    + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# -- 8 -------------------------------------------------------------------------

def test_c8_transfer(record):
    rows, identity_exact = [], True
    for seed in range(10):
        ds = make_gaussian_pair(600, 1.0, 1.0, 2, seed=seed)
        exp = transfer_experiment(ds, FeatureMap(2, 1), 0.3, num_targets=5, seed=seed)
        cf, nz = exp.closed_form, exp.noise
        rows.append((cf.macro_adv, cf.macro_clean, nz.macro_adv))
        # eps = 0 on the attacked examples must leave every error unchanged
        zero = attack_dataset(ClosedFormGenerator.from_classifier(exp.representative, 0.0),
                              _attacker_split(ds, seed))
        rep0 = evaluate_transfer(zero, exp.pool)
        identity_exact &= np.array_equal(rep0.adv_err, rep0.clean_err)
        identity_exact &= np.array_equal(rep0.clean_err, exp.identity.clean_err)
    strict = all(a > c and a > n for a, c, n in rows)
    ok = strict and identity_exact
    summary = "; ".join(f"{a:.3f}/{c:.3f}/{n:.3f}" for a, c, n in rows)
    record("8", ok, f"closed-form adv / clean / noise adv per seed: {summary}; "
                    f"eps=0 reproduces clean error exactly: {identity_exact}")
    assert ok


def _attacker_split(ds, seed):
    from aeg.data import split
    return ds.subset(split(ds, 6, seed).indices(0))


# -- 9 -------------------------------------------------------------------------

def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c9_manifest_replay(tmp_path, monkeypatch, record):
    monkeypatch.chdir(tmp_path)
    runs = {
        "a": ["gen-data", "--kind", "two-moons", "--seed", "7", "--out", "d.csv"],
        "b": ["gen-data", "--kind", "gaussian-pair", "--n", "400", "--dim", "1", "--seed", "3",
              "--out", "g.csv"],
        "c": ["train", "--data", "a/d.csv", "--degree", "3"],
        "d": ["train-robust", "--data", "b/g.csv"],
        "e": ["attack", "--data", "a/d.csv", "--model", "c/model.json"],
        "e2": ["attack", "--data", "a/d.csv", "--model", "c/model.json", "--generator",
               "noise", "--seed", "4"],
        "e3": ["attack", "--data", "a/d.csv", "--model", "c/model.json", "--generator",
               "gradient"],
        "f": ["solve-game", "--data", "a/d.csv", "--degree", "3", "--iters", "4"],
        "f2": ["solve-game", "--data", "a/d.csv", "--ref", "a/d.csv", "--lam", "1", "--solver",
               "extragradient", "--iters", "20", "--generator-out", "gen.json"],
        "g": ["entropy", "--data", "a/d.csv"],
        "h": ["verify-nash", "--data", "b/g.csv", "--deviations", "20"],
        "i": ["plot-trace", "--in", "f/trace.csv", "--out", "fig.svg"],
        "j": ["gen-data", "--kind", "gaussian-pair", "--n", "600", "--out", "p.csv"],
        "k": ["eval-transfer", "--data", "j/p.csv"],
    }
    for name, argv in runs.items():
        assert cli.main(argv + ["--out-dir", name]) == 0, name
    before = _snapshot(tmp_path)
    # wipe every output but keep the manifests, then replay from another cwd
    manifests = {n: (tmp_path / n / "run.json").read_text() for n in runs}
    for name in runs:
        shutil.rmtree(tmp_path / name)
    replay_dir = tmp_path / "_manifests"
    replay_dir.mkdir()
    for name, text in manifests.items():
        (replay_dir / f"{name}.json").write_text(text)
    monkeypatch.chdir(replay_dir)
    codes = {}
    for name in runs:  # order matters: later commands read earlier outputs
        cmd = json.loads(manifests[name])["command"]
        codes[name] = cli.main([cmd, "--config", f"{name}.json"])
    shutil.rmtree(replay_dir)
    after = _snapshot(tmp_path)
    diff = sorted(k for k in before.keys() | after.keys() if before.get(k) != after.get(k))
    ok = not diff and all(c == 0 for c in codes.values())
    record("9", ok, f"{len(before)} files from {len(runs)} commands replayed from run.json; "
                    f"differing files: {diff or 'none'}")
    assert ok
