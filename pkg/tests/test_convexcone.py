import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polystab.convexcone import (
    ConvexGridFunction,
    SimpleCrease,
    is_convex_extendable,
    norm_ratio,
    normalize,
    sample_cone,
    supporting_violation,
)
from polystab.errors import DegenerateNodeSet
from polystab.functionals import AffineFunction
from polystab.geometry import build_quadrature


def _grid(k):
    return np.linspace(0, 1, k)[:, None]


def test_affine_values_are_extendable_with_constant_gradient():
    x = _grid(7)
    ok, subs = is_convex_extendable(2 * x[:, 0] - 1, x)
    assert ok
    assert np.allclose(subs[:, 0], 2)


def test_square_values_recover_derivative():
    x = np.sort(np.random.default_rng(0).uniform(0, 1, 9))[:, None]
    x[0], x[-1] = 0, 1
    ok, subs = is_convex_extendable(x[:, 0] ** 2, x)
    assert ok
    # interior subgradients lie between the neighbouring chord slopes
    chords = np.diff(x[:, 0] ** 2) / np.diff(x[:, 0])
    assert np.all(subs[1:-1, 0] >= chords[:-1] - 1e-9)
    assert np.all(subs[1:-1, 0] <= chords[1:] + 1e-9)


def test_midpoint_violation_reports_middle_node():
    ok, witness = is_convex_extendable(np.array([0.0, 1.0, 0.0]), _grid(3))
    assert not ok
    assert 1 in witness


def test_degenerate_nodes_rejected():
    with pytest.raises(DegenerateNodeSet):
        is_convex_extendable(np.zeros(3), np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_normalize_examples():
    x = _grid(5)
    base = np.array([0.5])
    g = ConvexGridFunction(3 * x[:, 0] + 1, np.full((5, 1), 3.0), x, base)
    assert np.allclose(normalize(g).values, 0)
    crease = SimpleCrease(AffineFunction((2.0,), -1.0)).on_nodes(x, base)
    assert np.allclose(normalize(crease).values, crease.values)
    sq = ConvexGridFunction(x[:, 0] ** 2, 2 * x, x, base)
    assert np.allclose(normalize(sq).values, (x[:, 0] - 0.5) ** 2)


def test_norm_ratio(w01):
    q = build_quadrature(w01, 16)
    x = q.mesh_nodes[:, 0]
    assert norm_ratio(2 * x + 1, q) == np.inf
    assert 1 < norm_ratio(np.maximum(x - 0.5, 0), q) < np.inf


def test_battery_reproducible(square):
    a = sample_cone(square, 1, seed=3, resolution=4)
    b = sample_cone(square, 1, seed=3, resolution=4)
    assert len(a) == 1 and a[0].kind == "crease"
    assert np.array_equal(a[0].values, b[0].values)


def test_battery_members_are_in_the_cone(square):
    q = build_quadrature(square, 4)
    for g in sample_cone(square, 30, seed=1, quad=q):
        assert g.violation() >= -1e-12
        ok, _ = is_convex_extendable(g.values, q.mesh_nodes)
        assert ok
        assert np.min(g.values) >= 0


def test_p1_battery_contains_both_crease_orientations(p1):
    q = build_quadrature(p1, 32)
    x = q.mesh_nodes[:, 0]
    ups = downs = 0
    for g in sample_cone(p1, 60, seed=0, quad=q):
        if g.kind != "crease":
            continue
        zero = np.isclose(g.values, 0, atol=1e-14)
        if zero[np.argmin(x)] and not zero[np.argmax(x)]:
            ups += 1
        if zero[np.argmax(x)] and not zero[np.argmin(x)]:
            downs += 1
    assert ups > 0 and downs > 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1)),
                min_size=1, max_size=5))
def test_max_of_affines_always_feasible(planes):
    rng = np.random.default_rng(len(planes))
    nodes = rng.uniform(0, 1, size=(25, 2))
    g = np.array([p[:2] for p in planes])
    c = np.array([p[2] for p in planes])
    vals = nodes @ g.T + c
    arg = np.argmax(vals, axis=1)
    assert supporting_violation(vals.max(axis=1), g[arg], nodes) >= -1e-12
    ok, _ = is_convex_extendable(vals.max(axis=1), nodes)
    assert ok


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.2, 3.0))
def test_concave_bump_is_never_extendable(centre, height):
    x = _grid(11)
    vals = -height * np.exp(-20 * (x[:, 0] - centre) ** 2)
    ok, _ = is_convex_extendable(vals, x)
    assert not ok
