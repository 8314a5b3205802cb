import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from aeg import kernels
from aeg.classifier import LinearClassifier, per_example_losses
from aeg.data import LabeledDataset, make_gaussian_pair, make_two_moons
from aeg.errors import ContractViolation, InternalError, InvalidArgument, ParseError
from aeg.features import FeatureMap
from aeg.generator import (AdversarialDataset, AttackBudget, ClosedFormGenerator,
                           FixedGenerator, GradientGenerator, GridGenerator, IdentityGenerator,
                           NoiseGenerator, ParametricGenerator, attack_dataset,
                           closed_form_attack, generator_from_dict, gradient_attack,
                           gradient_attack_batch, grid_attack, grid_attack_batch, grid_offsets,
                           inner_max_value, load_adversarial_csv, random_noise_baseline,
                           save_adversarial_csv)


def test_closed_form_by_hand():
    np.testing.assert_allclose(closed_form_attack([2.0, -1.0, 0.0], 0.1, [0.0, 0.0, 5.0], 1),
                               [-0.1, 0.1, 5.0])
    np.testing.assert_allclose(closed_form_attack([2.0, -1.0], 0.1, [[0.0, 0.0]], [-1]),
                               [[0.1, -0.1]])


def test_inner_max_by_hand():
    assert inner_max_value([1.0, -2.0, 0.5], 0.2) == pytest.approx(0.7, abs=1e-15)
    f = LinearClassifier(FeatureMap(3), [[100.0, 1.0, -2.0, 0.5]])
    assert inner_max_value(f, 0.2) == pytest.approx(0.7, abs=1e-15)
    assert inner_max_value([3.0, 4.0], 0.0) == 0.0


def test_budget_validation():
    for bad in (-0.1, math.inf, math.nan):
        with pytest.raises(InvalidArgument):
            AttackBudget(bad)
    with pytest.raises(InvalidArgument):
        AttackBudget(0.1, norm="l2")


def test_grid_offsets():
    np.testing.assert_array_equal(grid_offsets(1.0, 5), [-1.0, -0.5, 0.0, 0.5, 1.0])
    for r in (4, 1, 2.5):
        with pytest.raises(InvalidArgument):
            grid_offsets(1.0, r)


def test_grid_attack_ties_go_to_first_node():
    f = LinearClassifier.zeros(FeatureMap(2, 3))
    np.testing.assert_array_equal(grid_attack(f, 0.2, [1.0, 1.0], 0), [0.8, 0.8])


def test_grid_attack_needs_2d():
    with pytest.raises(InvalidArgument):
        grid_attack(LinearClassifier.zeros(FeatureMap(3)), 0.1, np.zeros(3), 0)


def test_grid_on_linear_model_finds_the_vertex():
    ds = make_gaussian_pair(50, seed=1)
    f = LinearClassifier(FeatureMap(2), [[0.2, 1.5, -0.7]])
    adv, _ = grid_attack_batch(f, 0.3, ds.points, ds.labels, 41)
    np.testing.assert_allclose(adv, closed_form_attack(f.w[1:], 0.3, ds.points, ds.signs),
                               atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), degree=st.integers(1, 5), eps=st.floats(0.0, 0.6))
def test_attacks_are_feasible_and_never_hurt(seed, degree, eps):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(2, degree)
    f = LinearClassifier(fm, rng.standard_normal((1, fm.output_dim)))
    X = rng.uniform(-1, 1, (5, 2))
    y = rng.integers(0, 2, 5)
    clean = per_example_losses(f, X, y)
    for adv, loss in (grid_attack_batch(f, eps, X, y, 21), gradient_attack_batch(f, eps, X, y)):
        assert np.max(np.abs(adv - X)) <= eps + 1e-12
        assert np.all(loss >= clean - 1e-12)
        np.testing.assert_allclose(loss, per_example_losses(f, adv, y), rtol=1e-12)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree_bitwise():
    rng = np.random.default_rng(3)
    for degree, k in ((1, 2), (3, 2), (5, 3)):
        fm = FeatureMap(2, degree)
        f = LinearClassifier(fm, rng.standard_normal((1 if k == 2 else k, fm.output_dim)), k)
        X = rng.uniform(-1, 1, (40, 2))
        y = rng.integers(0, k, 40)
        a = grid_attack_batch(f, 0.3, X, y, 41, backend="python")
        b = grid_attack_batch(f, 0.3, X, y, 41, backend="cython")
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_allclose(a[1], b[1], rtol=1e-13)


def test_gradient_attack_single_point():
    f = LinearClassifier(FeatureMap(2), [[0.0, 1.0, 1.0]])
    np.testing.assert_allclose(gradient_attack(f, 0.25, [0.5, 0.5], 1), [0.25, 0.25])


def test_budget_breach_is_internal_error():
    ds = make_two_moons(4, seed=0)
    with pytest.raises(InternalError):
        AdversarialDataset(ds, ds.points + 0.2, "x", 0.1)
    AdversarialDataset(ds, ds.points + 0.1, "x", 0.1)


def test_pool_targets_are_refused():
    f = LinearClassifier.zeros(FeatureMap(2), role="pool-target", source_id="pool/split-1")
    for build in (lambda: GridGenerator(0.1, f), lambda: GradientGenerator(0.1, f),
                  lambda: ClosedFormGenerator.from_classifier(f, 0.1),
                  lambda: attack_dataset(GridGenerator(0.1), make_two_moons(4, seed=0), f)):
        with pytest.raises(ContractViolation):
            build()


def test_noise_baseline():
    ds = make_gaussian_pair(400, seed=0)
    for seed in range(5):
        adv = random_noise_baseline(0.3, ds, seed)
        delta = adv.perturbed_points - ds.points
        np.testing.assert_allclose(np.abs(delta), 0.3, rtol=1e-12)
        assert np.all(np.abs(delta.mean(axis=0)) <= 3 * 0.3 / math.sqrt(len(ds)))
    assert np.array_equal(random_noise_baseline(0.0, ds, 1).perturbed_points, ds.points)


def test_parametric_latent_frequencies():
    gen = ParametricGenerator(0.5, [[0.0, 1.0, -1.0]], np.zeros((1, 3, 1)))
    noise = gen.gumbel(40_000, 0)
    _, z = gen.hard(np.zeros((40_000, 1)), np.zeros(40_000, int), noise)
    p = np.exp([0.0, 1.0, -1.0])
    np.testing.assert_allclose(np.bincount(z, minlength=3) / 40_000, p / p.sum(), atol=0.01)


def test_parametric_stays_inside_and_relaxes_to_hard():
    gen = ParametricGenerator.init(0.3, 2, 4, 2, tau=1e-3, scale=50.0, seed=1)
    X = np.random.default_rng(0).standard_normal((30, 2))
    y = np.arange(30) % 2
    noise = gen.gumbel(30, 2)
    hard, _ = gen.hard(X, y, noise)
    soft, _, _ = gen.relaxed(X, y, noise)
    assert np.all(np.abs(hard - X) < 0.3)
    np.testing.assert_allclose(soft, hard, atol=1e-9)


def test_generator_dict_roundtrip():
    f = LinearClassifier(FeatureMap(2), [[0.1, 0.2, 0.3]], source_id="rep")
    ds = make_two_moons(6, seed=2)
    gens = [IdentityGenerator(), ClosedFormGenerator.from_classifier(f, 0.2),
            GridGenerator(0.2, f, 11), GradientGenerator(0.2, f, 7), NoiseGenerator(0.2),
            ParametricGenerator.init(0.2, 2, 3, 2, scale=0.5, seed=1)]
    for g in gens:
        h = generator_from_dict(g.to_dict())
        assert h.generator_id == g.generator_id
        a = attack_dataset(g, ds, seed=4).perturbed_points
        b = attack_dataset(h, ds, seed=4).perturbed_points
        np.testing.assert_array_equal(a, b)


def test_fixed_generator_replays():
    ds = make_two_moons(6, seed=2)
    adv = random_noise_baseline(0.1, ds, 3)
    g = FixedGenerator.from_adversarial(adv)
    np.testing.assert_array_equal(g.perturb(ds.points, ds.labels), adv.perturbed_points)


def test_adversarial_csv_roundtrip(tmp_path):
    ds = make_two_moons(20, seed=5)
    adv = random_noise_baseline(0.25, ds, 1)
    p = tmp_path / "adv.csv"
    save_adversarial_csv(adv, p)
    back = load_adversarial_csv(p, 0.25)
    assert back.clean == ds
    np.testing.assert_array_equal(back.perturbed_points, adv.perturbed_points)
    with pytest.raises(ParseError):
        load_adversarial_csv(p, 0.1)
