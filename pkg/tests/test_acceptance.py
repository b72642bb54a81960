"""Acceptance suite: one gate per criterion, one pass/fail line each.

The expensive Monte Carlo ladders are computed once per session (see the
``monte_carlo_gates`` fixture) and shared with the bound-check criterion.
"""


from ldplab.verify import (gate_constant_resolvent, gate_dini_classification,
                           gate_homeomorphism_roundtrip, gate_ito_conjugacy,
                           gate_norm_certificate, gate_rate_oracles,
                           gate_transform_rate_identity, gate_bound_checks)


def _check(report):
    print(report.line())
    assert report.passed, report.line()


def test_criterion_01_constant_resolvent_exactness():
    _check(gate_constant_resolvent())


def test_criterion_02_norm_certificate():
    _check(gate_norm_certificate())


def test_criterion_03_homeomorphism_roundtrip():
    _check(gate_homeomorphism_roundtrip())


def test_criterion_04_ito_conjugacy():
    _check(gate_ito_conjugacy())


def test_criterion_05_rate_oracles():
    _check(gate_rate_oracles())


def test_criterion_06_transform_rate_identity():
    _check(gate_transform_rate_identity())


def test_criterion_07_gaussian_slope(monte_carlo_gates):
    report, _ = monte_carlo_gates["gaussian"]
    _check(report)


def test_criterion_08_singular_insensitivity(monte_carlo_gates):
    report = monte_carlo_gates["singular"][0]
    _check(report)


def test_criterion_09_degenerate_slope(monte_carlo_gates):
    report = monte_carlo_gates["degenerate"][0]
    _check(report)


def test_criterion_10_dini_classification():
    _check(gate_dini_classification())


def test_criterion_11_bound_checks(monte_carlo_gates):
    _, gauss_est = monte_carlo_gates["gaussian"]
    with_b2 = monte_carlo_gates["singular"][1]
    _, degen_est, degen_rate = monte_carlo_gates["degenerate"]
    report = gate_bound_checks(ladders=[
        (gauss_est, 0.5), (with_b2, 0.5), (degen_est, degen_rate.value)])
    _check(report)
