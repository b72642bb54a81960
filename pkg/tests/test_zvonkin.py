import numpy as np
import pytest

from ldplab.model import Box, DriftFamily, Modulus, SdeProblem, VectorField
from ldplab.problems import build_field, load_problem
from ldplab.zvonkin import (SolveFailure, find_lambda0, load_map, save_map,
                            solve_resolvent, theta, theta_inv, transform)


def _problem_with_singular(func, bound, name="synthetic"):
    singular = VectorField(in_dim=1, out_dim=1, func=func,
                           declared_modulus=Modulus.lipschitz(10.0),
                           declared_bound=bound, name=name)
    zero = VectorField(in_dim=1, out_dim=1,
                       func=lambda x: np.zeros((x.shape[0], 1)), name="zero")
    return SdeProblem(name=name, layout="nondegenerate", horizon_T=1.0,
                      ellipticity_K=2.0, lipschitz_L=1.0,
                      working_box=Box.cube(1, 6.0), start=np.zeros(1),
                      drift=DriftFamily(limit=zero), singular_drift=singular,
                      diffusion=build_field("identity_matrix", m=1), dims=(1,))


def test_zero_perturbation_gives_zero_map():
    problem = load_problem("brownian-1d")
    zmap = solve_resolvent(problem, 1.0, resolution=65)
    assert zmap.norms == (0.0, 0.0, 0.0)
    assert zmap.certified


def test_constant_closed_form():
    problem = _problem_with_singular(lambda x: np.full((x.shape[0], 1), 0.75), 0.75)
    zmap = solve_resolvent(problem, 3.0, resolution=65)
    assert np.max(np.abs(zmap.u.values - 0.25)) <= 1e-9


def test_lambda_ladder_monotone_tanh():
    problem = _problem_with_singular(lambda x: np.tanh(x), 1.0, "tanh")
    res = find_lambda0(problem, resolution=129)
    sums = [s for _, _, s in res.trail]
    assert all(b <= a + 1e-12 for a, b in zip(sums, sums[1:]))
    assert res.map.certified


def test_lambda_cap_reports_trajectory():
    problem = _problem_with_singular(lambda x: np.tanh(x), 1.0, "tanh")
    with pytest.raises(SolveFailure) as info:
        find_lambda0(problem, resolution=65, max_doublings=1)
    assert "trajectory" in str(info.value)


def test_theta_lower_lipschitz(dini_map, rng):
    """A certified map contracts by at most 1/2: |theta(x)-theta(y)| >= |x-y|/2."""
    pts = dini_map.interior_box().sample(rng, 400)
    x, y = pts[:200], pts[200:]
    num = np.linalg.norm(theta(dini_map, x) - theta(dini_map, y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1)
    keep = den > 1e-9
    assert np.all(num[keep] >= 0.5 * den[keep] * (1 - 1e-9))


def test_theta_inv_requires_certificate():
    problem = _problem_with_singular(lambda x: np.tanh(x), 1.0, "tanh")
    zmap = solve_resolvent(problem, 1.0, resolution=65)
    assert not zmap.certified
    with pytest.raises(SolveFailure):
        theta_inv(zmap, np.zeros(1))


def test_transform_drift_is_lipschitz(dini_problem, dini_map):
    """The composed limit drift must be Lipschitz even though b2 is not."""
    tsde = transform(dini_problem, dini_map)
    drift = tsde.drift_limit()
    box = dini_map.interior_box()
    rng = np.random.Generator(np.random.Philox(key=5))
    pts = box.sample(rng, 500)
    qts = box.sample(rng, 500)
    num = np.linalg.norm(np.atleast_2d(drift(pts)) - np.atleast_2d(drift(qts)), axis=-1)
    den = np.linalg.norm(pts - qts, axis=-1)
    keep = den > 1e-9
    # chain-rule bound: ||grad theta|| <= 3/2, ||grad theta^-1|| <= 2
    allowed = 1.5 * dini_problem.lipschitz_L * 2.0 + dini_map.lam * sum(dini_map.norms)
    assert np.max(num[keep] / den[keep]) <= allowed


def test_transform_start_maps_through_theta(dini_problem, dini_map):
    tsde = transform(dini_problem, dini_map)
    assert np.allclose(tsde.start(), theta(dini_map, dini_problem.start))


def test_save_load_round_trip(dini_map, tmp_path):
    header = tmp_path / "map.json"
    values = tmp_path / "map.csv"
    save_map(dini_map, header, values)
    loaded = load_map(header, values)
    assert loaded.lam == dini_map.lam
    assert loaded.certified == dini_map.certified
    pts = np.linspace(-4, 4, 17)[:, None]
    assert np.allclose(theta(loaded, pts), theta(dini_map, pts))


def test_resolvent_rejects_bad_lambda():
    problem = load_problem("brownian-1d")
    with pytest.raises(ValueError):
        solve_resolvent(problem, 0.0)


def test_interior_residual_small(dini_map):
    assert dini_map.residual <= 1e-8
