from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from polystab.errors import NodeEvaluationFailure
from polystab.functionals import (
    AffineFunction,
    crease_functional,
    eval_L,
    extremal_affine,
    l2_norm,
    max_affine_functional,
    pl_functional,
    project_affine,
    s_hat,
)
from polystab.geometry import build_quadrature, interval, moments, trapezium

from .conftest import SHIPPED, load_shipped


def _L_affine_exact(mp, A, f):
    """Rational ``L_A(f)`` for affine ``A`` and ``f`` from exact moments."""
    mt = moments(mp, 2)
    n = mp.dim
    e = [tuple(int(k == i) for k in range(n)) for i in range(n)]
    z = (0,) * n

    bdy = f.constant * mt.boundary[z] + sum(g * mt.boundary[e[i]] for i, g in enumerate(f.gradient))
    inner = A.constant * f.constant * mt.interior[z]
    for i in range(n):
        inner += (A.constant * f.gradient[i] + f.constant * A.gradient[i]) * mt.interior[e[i]]
        for j in range(n):
            key = tuple(a + b for a, b in zip(e[i], e[j]))
            inner += A.gradient[i] * f.gradient[j] * mt.interior[key]
    return bdy - inner


def test_p1_crease_value(p1):
    q = build_quadrature(p1, 16)
    f = np.maximum(2 * q.mesh_nodes[:, 0] - 1, 0)
    assert eval_L(2.0, f, q).value == pytest.approx(0.5, abs=1e-14)


def test_eval_L_rejects_bad_input(p1):
    q = build_quadrature(p1, 4)
    with pytest.raises(NodeEvaluationFailure):
        eval_L(2.0, np.ones(3), q)
    with pytest.raises(NodeEvaluationFailure):
        eval_L(2.0, lambda x: np.full(len(x), np.nan), q)


def test_extremal_weighted_interval(w01):
    A = extremal_affine(w01)
    assert A.gradient == (6,) and A.constant == -2


@pytest.mark.parametrize("name", SHIPPED)
def test_extremal_annihilates_affine_exactly(name):
    mp, _ = load_shipped(name)
    A = extremal_affine(mp)
    assert A.is_exact
    n = mp.dim
    for g in [(0,) * n] + [tuple(int(k == i) for k in range(n)) for i in range(n)]:
        assert _L_affine_exact(mp, A, AffineFunction(g, Fraction(1))) == 0


@pytest.mark.parametrize("name", ["p1", "p2", "square"])
def test_symmetric_polytopes_have_constant_extremal(name):
    mp, _ = load_shipped(name)
    A = extremal_affine(mp)
    assert all(g == 0 for g in A.gradient)
    assert A.constant == s_hat(mp)


@settings(max_examples=30, deadline=None)
@given(st.fractions(min_value=Fraction(1, 10), max_value=10, max_denominator=20))
def test_trapezium_extremal_closed_form(l):
    A = extremal_affine(trapezium(l))
    den = l * l + 4 * l + 1
    assert A.gradient == (12 * (l * l - 1) / den, 0)
    assert A.constant == -6 * (l * l - 2 * l - 1) / den


def test_projection_identities(w01):
    q = build_quadrature(w01, 64)
    x = q.mesh_nodes[:, 0]
    p = project_affine(3 * x - 1, q)
    assert p.gradient[0] == pytest.approx(3) and p.constant == pytest.approx(-1)
    p = project_affine(lambda pts: pts[:, 0] ** 2, q)
    assert p.gradient[0] == pytest.approx(1, abs=1e-12)
    assert p.constant == pytest.approx(-1 / 6, abs=1e-12)


@pytest.mark.parametrize("t", [Fraction(k, 10) for k in range(11)])
def test_interval_crease_values(w01, t):
    A = extremal_affine(w01)
    up = crease_functional(w01, A, AffineFunction((1,), -t))
    down = crease_functional(w01, A, AffineFunction((-1,), t))
    expected = t * t * (1 - t)
    assert up == expected and down == expected
    quad_up = 1 - t - integrate.quad(lambda x: (6 * x - 2) * max(x - float(t), 0), 0, 1,
                                     points=[float(t)])[0]
    assert float(expected) == pytest.approx(quad_up, abs=1e-12)


def test_crease_functional_float_and_exact_agree(trap2):
    A = extremal_affine(trap2)
    h = AffineFunction((Fraction(-1, 3), Fraction(1)), Fraction(-1, 2))
    exact = crease_functional(trap2, A, h)
    approx = crease_functional(trap2, A, h, exact=False)
    assert isinstance(exact, Fraction)
    assert float(exact) == pytest.approx(approx, abs=1e-12)


def test_crease_functional_matches_fine_mesh(trap2):
    A = extremal_affine(trap2)
    h = AffineFunction((0.7, -0.4), -0.2)
    exact = crease_functional(trap2, A, h, exact=False)
    vals = []
    for N in (16, 32):
        q = build_quadrature(trap2, N)
        vals.append(eval_L(A, lambda x: np.maximum(h(x), 0), q).value)
    # P1 interpolation error is O(h^2)
    assert abs(vals[1] - exact) < abs(vals[0] - exact)
    assert vals[1] == pytest.approx(exact, abs=2e-3)


def test_max_affine_agrees_with_pl_functional(trap2):
    A = extremal_affine(trap2)
    grads = np.array([[0.5, -0.2], [-0.3, 0.4], [0.0, 0.0]])
    consts = np.array([-0.1, 0.05, 0.2])
    direct = max_affine_functional(trap2, A, grads, consts).value
    pieces = [AffineFunction(tuple(g), c) for g, c in zip(grads, consts)]
    assert direct == pytest.approx(pl_functional(trap2, A, pieces), abs=1e-10)


def test_max_affine_one_plane_is_affine_value(trap2):
    A = extremal_affine(trap2)
    val = max_affine_functional(trap2, A, [[0.3, -0.7]], [0.25]).value
    assert val == pytest.approx(0.0, abs=1e-12)


def test_l2_norm_of_affine(w01):
    q = build_quadrature(w01, 8)
    x = q.mesh_nodes[:, 0]
    assert l2_norm(3 - 6 * x, q) == pytest.approx(np.sqrt(3), abs=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.fractions(min_value=Fraction(1, 20), max_value=Fraction(19, 20), max_denominator=40))
def test_p1_creases_are_nonnegative(t):
    mp = interval(0, 1, (1, 1))
    v = crease_functional(mp, 2, AffineFunction((1,), -t))
    assert v == t * (1 - t) and v > 0
