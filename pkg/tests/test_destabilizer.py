from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polystab.destabilizer import (
    SolverOptions,
    brute_force_oracle,
    certificate_check,
    cone_qp,
    crease_search,
    extension_value,
    secondary_lp,
    semistability_test,
    solve_optimal_destabilizer,
)
from polystab.convexcone import SimpleCrease, is_convex_extendable
from polystab.functionals import AffineFunction, eval_L, extremal_affine, project_affine
from polystab.geometry import build_quadrature, interval, scalar_summary, trapezium

from .conftest import l2, load_shipped


def test_p1_is_stable_with_zero_destabiliser(p1):
    r = solve_optimal_destabilizer(p1, resolution=32)
    assert r.verdict == "stable"
    assert r.norm <= 1e-7 * 2
    assert r.certificates.passed


def test_weighted_interval_destabiliser(w01):
    q = build_quadrature(w01, 32)
    r = solve_optimal_destabilizer(w01, q)
    x = q.mesh_nodes[:, 0]
    assert r.verdict == "unstable"
    assert l2(r.phi.values - (3 - 6 * x), q) <= 1e-6
    assert r.norm**2 == pytest.approx(3, abs=1e-6)
    assert eval_L(1.0, r.phi.values, q).value == pytest.approx(-3, abs=1e-6)
    assert np.allclose(r.b_density, 6 * x - 2, atol=1e-6)
    p = project_affine(r.phi.values, q)
    assert p.gradient[0] == pytest.approx(-6, abs=1e-6)
    assert p.constant == pytest.approx(3, abs=1e-6)


def test_weighted_interval_is_relatively_stable(w01):
    r = semistability_test(w01, resolution=32)
    assert r.verdict == "stable"
    assert r.secondary["value"] > 0


def test_hirzebruch_absolute_destabiliser_is_futaki_direction():
    mp, _ = load_shipped("hirzebruch_f1")
    q = build_quadrature(mp, 8)
    r = solve_optimal_destabilizer(mp, q)
    A = extremal_affine(mp)
    s_hat = float(scalar_summary(mp).s_hat)
    assert r.verdict == "unstable"
    assert l2(r.phi.values - (s_hat - A(q.mesh_nodes)), q) <= 1e-6
    rel = semistability_test(mp, q)
    assert rel.verdict == "stable"


def test_parallelogram_is_strictly_semistable():
    r = semistability_test(trapezium(1), resolution=8)
    assert r.verdict == "semistable_strict"
    assert abs(r.secondary["crease_min"]) <= 1e-8


def test_trapezium_discrete_minimiser_is_flagged_as_artifact(trap2):
    r = semistability_test(trap2, resolution=8)
    assert r.verdict == "semistable_strict"
    assert "discrete_artifact" in r.secondary
    assert r.secondary["discrete_artifact"]["extension_L"] > 0


def test_phi_is_in_the_cone(trap2):
    q = build_quadrature(trap2, 6)
    f, s, info = cone_qp(q, extremal_affine(trap2))
    ok, _ = is_convex_extendable(f, q.mesh_nodes, tol=1e-7)
    assert ok
    assert info["rounds"] >= 1


@pytest.mark.parametrize("init", ["zero", "random", "unconstrained"])
def test_restarts_agree(w01, init):
    q = build_quadrature(w01, 16)
    base = solve_optimal_destabilizer(w01, q, check=False)
    other = solve_optimal_destabilizer(w01, q, SolverOptions(init=init, seed=7), check=False)
    assert l2(base.phi.values - other.phi.values, q) <= 1e-6 * base.norm


def test_certificates_catch_a_wrong_minimiser(w01):
    q = build_quadrature(w01, 16)
    r = solve_optimal_destabilizer(w01, q)
    r.phi = r.phi.scaled(0.9)
    r.b_density = 1.0 - r.phi.values
    cert = certificate_check(r, w01, q)
    assert not cert.passed
    assert cert.scaling_residual > 1e-3


def test_oracle_agrees_on_tiny_meshes(w01, p1, square):
    q = build_quadrature(w01, 4)
    r = solve_optimal_destabilizer(w01, q, check=False)
    assert l2(brute_force_oracle(w01, q).values - r.phi.values, q) <= 1e-6
    q = build_quadrature(p1, 4)
    assert np.max(np.abs(brute_force_oracle(p1, q).values)) <= 1e-10
    q = build_quadrature(square, 2)
    r = solve_optimal_destabilizer(square, q, check=False)
    assert l2(brute_force_oracle(square, q).values - r.phi.values, q) <= 1e-5


def test_crease_search_finds_zero_on_parallelogram():
    mp = trapezium(1)
    cs = crease_search(mp, extremal_affine(mp))
    assert cs["value"] == pytest.approx(0, abs=1e-8)
    assert crease_search(load_shipped("p1")[0], AffineFunction((0,), 2))["value"] > 0


def test_secondary_lp_normalisation(w01):
    q = build_quadrature(w01, 16)
    lp = secondary_lp(q, extremal_affine(w01))
    assert lp["value"] > 0
    assert float(q.canonical_boundary_load @ lp["minimizer"]) == pytest.approx(1, abs=1e-9)


def test_extension_value_matches_crease_functional(trap2):
    q = build_quadrature(trap2, 4)
    A = extremal_affine(trap2)
    h = AffineFunction((Fraction(1), Fraction(-1, 2)), Fraction(-1, 4))
    g = SimpleCrease(h.as_float()).on_nodes(q.mesh_nodes, np.zeros(2))
    from polystab.functionals import crease_functional

    assert extension_value(trap2, A, g)["L"] == pytest.approx(float(crease_functional(trap2, A, h)),
                                                              abs=1e-10)


@settings(max_examples=8, deadline=None)
@given(st.fractions(min_value=Fraction(1, 10), max_value=1, max_denominator=10))
def test_weighted_intervals_destabilise_along_futaki(a):
    mp = interval(0, 1, (a, 1))
    q = build_quadrature(mp, 24)
    r = solve_optimal_destabilizer(mp, q)
    expected = float(scalar_summary(mp).s_hat) - extremal_affine(mp)(q.mesh_nodes)
    assert l2(r.phi.values - expected, q) <= 1e-6 * max(1.0, l2(expected, q))
    assert r.certificates.passed
