import numpy as np
import pytest

from ldplab.problems import (build_field, list_problems, load_problem,
                             parse_field_spec)


def test_bundled_suite_loads():
    for name in list_problems():
        problem = load_problem(name)
        assert problem.name == name
        assert problem.state_dim >= 1


def test_registry_field_params():
    f = build_field("linear", matrix=[[2.0]])
    assert np.allclose(f(np.array([[3.0]])), [[6.0]])
    assert f.lipschitz_const == pytest.approx(2.0)


def test_registry_unknown_name():
    with pytest.raises(KeyError):
        build_field("nope")


def test_parse_field_spec_expr_and_registry():
    f = parse_field_spec("expr: x1 ^ 2", 1, 1)
    assert np.allclose(f(np.array([[3.0]])), [[9.0]])
    g = parse_field_spec("registry: holder_root(alpha=0.5, bound=2.0)", 1, 1)
    assert np.allclose(g(np.array([[4.0]])), [[2.0]])


def test_parse_field_spec_rejects_garbage():
    with pytest.raises(ValueError):
        parse_field_spec("something: x1", 1, 1)


def test_problem_text_degenerate_layout():
    problem = load_problem("hamiltonian-2d")
    assert problem.layout == "degenerate"
    assert problem.dims == (1, 2) or problem.dims == (1, 1)
    assert problem.noisy_dim == 1
    z = np.array([[0.5, 0.3]])
    assert np.allclose(problem.bbar.limit(z), [[0.3]])


def test_problem_file_from_path(tmp_path):
    text = load_problem("brownian-1d")  # bundled load works
    path = tmp_path / "custom.ini"
    path.write_text("""
[problem]
name = custom
layout = nondegenerate
dims = 2
horizon = 2.0
start = 0.5
ellipticity_K = 2.0

[drift]
limit = expr: -x1; -x2

[diffusion]
field = registry: identity_matrix
""")
    problem = load_problem(str(path))
    assert problem.state_dim == 2
    assert problem.horizon_T == 2.0
    assert np.allclose(problem.start, [0.5, 0.5])


def test_singular_without_modulus_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("""
[problem]
name = bad
dims = 1

[drift]
limit = expr: 0

[singular]
field = expr: x1

[diffusion]
field = registry: identity_matrix
""")
    with pytest.raises(ValueError):
        load_problem(str(path))
