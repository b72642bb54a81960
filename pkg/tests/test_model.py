import numpy as np
import pytest

from ldplab.model import (Box, Modulus, dini_classify,
                          drift_family_limit_gap, parse_field, probe_ellipticity,
                          probe_lipschitz, probe_modulus, probe_slow_variation)
from ldplab.problems import build_field, load_problem


# ---------------------------------------------------------------------------
# Boxes

def test_box_contains_and_sample(rng):
    box = Box.of([-1.0, 0.0], [1.0, 2.0])
    pts = box.sample(rng, 100)
    assert np.all(box.contains(pts))
    assert not box.contains(np.array([2.0, 1.0]))[0]


def test_box_shrink():
    box = Box.cube(1, 5.0)
    inner = box.shrink(0.2)
    assert inner.lo[0] == pytest.approx(-4.0)
    assert inner.hi[0] == pytest.approx(4.0)


def test_box_rejects_empty():
    with pytest.raises(ValueError):
        Box.of([1.0], [1.0])


# ---------------------------------------------------------------------------
# Moduli

def test_modulus_values():
    m = Modulus.dini_log(2.0)
    assert m.phi(0.0) == 0.0
    t = 0.1
    assert m.phi(t) == pytest.approx(np.log1p(1 / t) ** -2)
    assert Modulus.holder(0.5).phi(0.25) == pytest.approx(0.5)
    assert Modulus.lipschitz(3.0).phi(0.2) == pytest.approx(0.6)


def test_modulus_monotone_check():
    assert Modulus.dini_log(1.5).check_monotone()
    assert Modulus.holder(0.3).check_monotone()
    decreasing = Modulus.from_expression("1 - t/2")
    assert decreasing.check_monotone() is False


def test_expression_modulus_negative_rejected():
    m = Modulus.from_expression("t - 1")
    with pytest.raises(Exception):
        m.phi(0.5)


@pytest.mark.parametrize("beta,finite", [(0.5, False), (1.0, False), (1.5, True),
                                         (2.0, True), (3.0, True)])
def test_dini_classification_log_family(beta, finite):
    v = dini_classify(Modulus.dini_log(beta))
    assert v.finite == finite


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_dini_holder_exact_value(alpha):
    v = dini_classify(Modulus.holder(alpha))
    assert v.finite
    assert v.value == pytest.approx(1.0 / alpha, rel=1e-3)


def test_dini_lipschitz_finite():
    v = dini_classify(Modulus.lipschitz(2.0))
    assert v.finite
    assert v.value == pytest.approx(2.0, rel=1e-3)


def test_slow_variation_log_modulus():
    ok, worst = probe_slow_variation(Modulus.dini_log(2.0))
    assert ok
    ok_h, worst_h = probe_slow_variation(Modulus.holder(0.5))
    assert not ok_h  # t^alpha is not slowly varying


# ---------------------------------------------------------------------------
# Vector fields

def test_parse_field_and_round_trip():
    f = parse_field("x1 + x2; x1 * x2", 2, 2)
    out = f(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(out, [[3.0, 2.0], [7.0, 12.0]])
    f2 = parse_field(f.text(), 2, 2)
    pts = np.random.default_rng(0).normal(size=(10, 2))
    assert np.allclose(f(pts), f2(pts))


def test_field_shape_validation():
    f = parse_field("x1", 1, 1)
    with pytest.raises(ValueError):
        f(np.zeros((3, 2)))


def test_probe_lipschitz_linear():
    f = parse_field("2 * x1", 1, 1)
    probed = probe_lipschitz(f, Box.cube(1), n_pairs=500, seed=3)
    assert probed == pytest.approx(2.0, rel=1e-9)
    assert probed <= 2.0 + 1e-9  # sampled value is a lower bound


def test_probe_ellipticity_pass_and_fail():
    eye = build_field("identity_matrix", m=2)
    assert probe_ellipticity(eye, 2.0, Box.cube(2)).passed
    skew = build_field("identity_matrix", m=2, scale=3.0)
    res = probe_ellipticity(skew, 2.0, Box.cube(2))
    assert not res.passed
    assert res.witness is not None
    assert res.value == pytest.approx(9.0)  # eigenvalue of (3I)(3I)^T


def test_probe_modulus_holder_field():
    f = build_field("holder_root", alpha=0.5, bound=10.0)
    res = probe_modulus(f, Modulus.holder(0.5), Box.cube(1))
    assert res.passed  # sqrt concavity: ||x|^0.5 - |y|^0.5| <= |x-y|^0.5


def test_probe_modulus_detects_violation():
    f = parse_field("2 * x1", 1, 1)  # Lipschitz 2 violates phi(t) = t
    res = probe_modulus(f, Modulus.lipschitz(1.0), Box.cube(1))
    assert not res.passed
    assert res.witness is not None


def test_registry_tanhlog_respects_declared_modulus():
    f = build_field("tanhlog_dini", beta=2, gain=3)
    res = probe_modulus(f, f.declared_modulus, Box.cube(1, 6.0), n_pairs=4000)
    assert res.passed


def test_drift_gap_halves_for_linear_family():
    problem = load_problem("ou-1d")
    gaps = [drift_family_limit_gap(problem, eps) for eps in (0.5, 0.25, 0.125)]
    assert gaps[0] == pytest.approx(2 * gaps[1], rel=1e-9)
    assert gaps[1] == pytest.approx(2 * gaps[2], rel=1e-9)


def test_drift_family_at_eps():
    problem = load_problem("ou-1d")
    x = np.array([[0.7]])
    b0 = problem.drift.at(0.0)(x)
    b_half = problem.drift.at(0.5)(x)
    assert np.allclose(b_half - b0, 0.5 * np.tanh(0.7))
